#pragma once

#include "kdstm/config.hpp"
#include "kdstm/corpus.hpp"
#include "kdstm/embedding.hpp"
#include "kdstm/model.hpp"
#include "kdstm/optim.hpp"

#include <chrono>
#include <optional>
#include <ostream>
#include <vector>

// Three-stage training: (1) reconstruction + KL until the epoch budget is
// exhausted, then the direction parameters are frozen; (2) add the optimal
// transport loss over the seed groups; (3) add knowledge distillation
// against the frozen similarity teachers.

namespace kdstm {

struct TelemetryRow {
    int stage = 0;
    int epoch = 0;
    double recon = 0.0, kl = 0.0, ot = 0.0, kd = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;

    double total(const LossWeights& w) const {
        return w.recon * recon + w.kl * kl + w.ot * ot + w.kd * kd;
    }
};

inline void write_telemetry_csv(const std::vector<TelemetryRow>& rows, std::ostream& os) {
    os << "stage,epoch,recon,kl,ot,kd,lr,wall_ms\n";
    os.precision(10);
    for (const auto& r : rows) {
        os << r.stage << "," << r.epoch << "," << r.recon << "," << r.kl << "," << r.ot << ","
           << r.kd << "," << r.lr << "," << r.wall_ms << "\n";
    }
}

class TrainAbort : public Error {
public:
    explicit TrainAbort(const std::string& msg) : Error(msg) {}
};

struct TrainState {
    int stage = 0; // last completed stage
    Model model;
    Adam opt;
    Rng rng{0};

    Mat frozen_mu; // per-document direction parameters at the end of stage 1
    bool mu_frozen = false;

    LabeledSeeds seeds;           // set when stage 2 starts
    SimilarityMatrix sim;         // built from frozen_mu when stage 2 starts
    std::vector<int> group2topic; // from the stage-2 final plan
    std::vector<int> alignment;   // topic -> group, fixed at stage-3 entry

    std::vector<TelemetryRow> telemetry;
    double wall_ms_embed = 0.0;
    double wall_ms_stage[4] = {0, 0, 0, 0}; // index by stage number

    ModelParams last_good; // parameters at the last completed epoch
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

inline Mat all_direction_params(const Model& model, const Corpus& corpus) {
    Mat mu(corpus.num_docs(), model.num_topics);
    for (int32_t i = 0; i < corpus.num_docs(); ++i) {
        mu.row(i) = encode(model, corpus.documents[i], false, nullptr).mu.transpose();
    }
    return mu;
}

inline CostMatrix seed_cost_matrix(const Model& model, const Corpus& corpus,
                                   const LabeledSeeds& seeds) {
    std::vector<std::vector<Vec>> dists(seeds.num_groups());
    int g = 0;
    for (const auto& [label, idx] : seeds.groups) {
        for (int32_t i : idx) {
            dists[g].push_back(topic_distribution(model, corpus.documents[i], false));
        }
        ++g;
    }
    return build_cost_matrix(dists);
}

} // namespace detail

// One pass over the corpus: shuffled batches, Adam step per batch.
// Loss weights select the stage; the transport plan, similarity matrix and
// alignment come in through `ctx`. Throws TrainAbort on a non-finite loss
// after restoring the last good parameters.
inline TelemetryRow run_epoch(TrainState& state, const Corpus& corpus, BatchContext ctx,
                              double lr, int batch_size, int stage, int epoch) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<int32_t> order(corpus.num_docs());
    for (int32_t i = 0; i < corpus.num_docs(); ++i) order[i] = i;
    state.rng.shuffle(order);

    RngNoise noise(state.rng);
    ctx.corpus = &corpus;

    TelemetryRow row;
    row.stage = stage;
    row.epoch = epoch;
    row.lr = lr;
    int batches = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += batch_size) {
        std::vector<int32_t> batch(
            order.begin() + b0,
            order.begin() + std::min(order.size(), b0 + batch_size));
        BatchResult res = compute_batch(state.model, batch, ctx, &noise);
        double total = res.weighted_total(ctx.weights);
        if (!std::isfinite(total)) {
            state.model.params = state.last_good;
            throw TrainAbort("non-finite loss in stage " + std::to_string(stage) + " epoch " +
                             std::to_string(epoch) + "; restored last good parameters");
        }
        state.opt.step(state.model.params, res.grads, lr);
        row.recon += res.recon;
        row.kl += res.kl;
        row.ot += res.ot;
        row.kd += res.kd;
        ++batches;
    }
    row.recon /= batches;
    row.kl /= batches;
    row.ot /= batches;
    row.kd /= batches;
    row.wall_ms = detail::ms_since(t0);
    state.last_good = state.model.params;
    return row;
}

// Stage 1: reconstruction + KL with the one-cycle schedule; freezes the
// per-document direction parameters at the end.
inline TrainState train_stage1(const Corpus& corpus, const EmbeddingMatrix& emb,
                               const TrainConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    int topics = cfg.num_topics;
    if (topics == 0) topics = static_cast<int>(corpus.labels().size());
    if (topics < 2) throw Error("train_stage1: need num_topics >= 2 (or a labeled corpus)");

    TrainState state;
    Vec freq(corpus.vocabulary.size());
    for (int32_t i = 0; i < freq.size(); ++i) freq[i] = static_cast<double>(corpus.vocabulary.counts[i]);
    state.model = init_model(emb, freq, topics, cfg.rng_seed, cfg.hidden1, cfg.hidden2,
                             cfg.dropout);
    state.opt = Adam(state.model);
    state.rng = Rng(cfg.rng_seed + 0x9e3779b97f4a7c15ull);
    state.last_good = state.model.params;

    OneCycleSchedule sched;
    sched.base_lr = cfg.lr;
    sched.max_lr = cfg.max_lr;
    sched.final_lr = cfg.lr / 10.0;
    sched.total_steps = cfg.stage1_epochs;

    BatchContext ctx;
    ctx.weights = {1.0, 1.0, 0.0, 0.0};
    ctx.sampled = true;
    ctx.dropout = cfg.dropout > 0.0;
    for (int epoch = 0; epoch < cfg.stage1_epochs; ++epoch) {
        state.telemetry.push_back(
            run_epoch(state, corpus, ctx, sched.lr_at(epoch), cfg.batch, 1, epoch));
    }

    state.frozen_mu = detail::all_direction_params(state.model, corpus);
    state.mu_frozen = true;
    state.stage = 1;
    state.wall_ms_stage[1] = detail::ms_since(t0);
    return state;
}

// Stage 2: adds the transport loss; the plan is rebuilt once per epoch from
// the seeds' deterministic topic distributions and held fixed in between.
inline void train_stage2(TrainState& state, const Corpus& corpus, const LabeledSeeds& seeds,
                         const TrainConfig& cfg) {
    if (state.stage != 1) throw Error("train_stage2: stage 1 must be complete");
    if (!state.mu_frozen) throw Error("train_stage2: direction parameters were never frozen");
    auto t0 = std::chrono::steady_clock::now();

    state.seeds = seeds;
    state.sim = build_similarity(state.frozen_mu, seeds);

    BatchContext ctx;
    ctx.weights = {1.0, 1.0, cfg.alpha, 0.0};
    ctx.sampled = true;
    ctx.dropout = cfg.dropout > 0.0;
    ctx.seeds = &state.seeds;
    ctx.lambda = cfg.lambda;

    TransportPlan plan;
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        plan = sinkhorn_plan(detail::seed_cost_matrix(state.model, corpus, state.seeds),
                             cfg.lambda);
        ctx.fixed_plan = &plan;
        state.telemetry.push_back(run_epoch(state, corpus, ctx, cfg.lr, cfg.batch, 2, epoch));
    }

    plan = sinkhorn_plan(detail::seed_cost_matrix(state.model, corpus, state.seeds), cfg.lambda);
    state.group2topic = group_to_topic(plan);
    state.stage = 2;
    state.wall_ms_stage[2] = detail::ms_since(t0);
}

// Stage 3: adds knowledge distillation with the alignment fixed from the
// stage-2 final plan; rejects a non-injective alignment up front.
inline void train_stage3(TrainState& state, const Corpus& corpus, const TrainConfig& cfg) {
    if (state.stage != 2) throw Error("train_stage3: stage 2 must be complete");
    auto t0 = std::chrono::steady_clock::now();

    state.alignment = topic_to_group(state.group2topic, state.model.num_topics);

    BatchContext ctx;
    ctx.weights = {1.0, 1.0, cfg.alpha, cfg.beta};
    ctx.sampled = true;
    ctx.dropout = cfg.dropout > 0.0;
    ctx.seeds = &state.seeds;
    ctx.lambda = cfg.lambda;
    ctx.sim = &state.sim;
    ctx.alignment = &state.alignment;
    ctx.tau = cfg.tau;
    ctx.thresh = cfg.thresh;

    TransportPlan plan;
    for (int epoch = 0; epoch < cfg.stage3_epochs; ++epoch) {
        plan = sinkhorn_plan(detail::seed_cost_matrix(state.model, corpus, state.seeds),
                             cfg.lambda);
        ctx.fixed_plan = &plan;
        state.telemetry.push_back(run_epoch(state, corpus, ctx, cfg.lr, cfg.batch, 3, epoch));
    }
    state.stage = 3;
    state.wall_ms_stage[3] = detail::ms_since(t0);
}

struct TrainedPipeline {
    Corpus corpus;
    EmbeddingMatrix embeddings;
    TrainState state;
};

// embed -> stage 1 -> stage 2 -> stage 3 over an already-built corpus
inline TrainedPipeline run_training(Corpus corpus, const TrainConfig& cfg,
                                    std::optional<LabeledSeeds> seeds = std::nullopt) {
    cfg.validate();
    TrainedPipeline out;
    out.corpus = std::move(corpus);

    auto t0 = std::chrono::steady_clock::now();
    SgnsConfig sgns;
    sgns.dim = cfg.embed_dim;
    sgns.window = cfg.embed_window;
    sgns.negatives = cfg.embed_negatives;
    sgns.epochs = cfg.embed_epochs;
    sgns.lr = cfg.embed_lr;
    sgns.rng_seed = cfg.rng_seed;
    out.embeddings = train_word_embeddings(out.corpus, sgns);
    double embed_ms = detail::ms_since(t0);

    if (!seeds) seeds = sample_seeds(out.corpus, cfg.seed_k, cfg.rng_seed);
    out.state = train_stage1(out.corpus, out.embeddings, cfg);
    out.state.wall_ms_embed = embed_ms;
    train_stage2(out.state, out.corpus, *seeds, cfg);
    train_stage3(out.state, out.corpus, cfg);
    return out;
}

} // namespace kdstm
