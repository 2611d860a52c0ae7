#pragma once

#include "kdstm/checkpoint.hpp"
#include "kdstm/trainer.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

// Classification inference, metrics (accuracy, micro-F1, one-vs-rest AUC)
// and the repeated-run benchmark protocol: resample seeds, retrain, score
// the held-out labeled documents.

namespace kdstm {

struct PredictionSet {
    Mat scores;                  // n x |G|, each row sums to 1
    std::vector<int> predicted;  // argmax group (lowest index wins ties)
    std::vector<int32_t> doc_index;
};

// deterministic decision rule: aggregate aligned topic mass per group,
// renormalize when unaligned topics hold some of it
inline PredictionSet predict(const Model& model, const std::vector<int>& alignment,
                             int num_groups, const Corpus& corpus,
                             const std::vector<int32_t>& docs) {
    PredictionSet out;
    out.scores = Mat::Zero(docs.size(), num_groups);
    out.doc_index = docs;
    out.predicted.resize(docs.size());
    for (size_t i = 0; i < docs.size(); ++i) {
        Vec t = topic_distribution(model, corpus.documents[docs[i]], false);
        Vec q = student_group_probs(t, alignment, num_groups);
        double total = q.sum();
        if (total <= 0.0) throw Error("predict: no topic mass reaches any group");
        q /= total;
        out.scores.row(i) = q.transpose();
        int best = 0;
        for (int g = 1; g < num_groups; ++g)
            if (q[g] > q[best]) best = g;
        out.predicted[i] = best;
    }
    return out;
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& golds) {
    if (preds.size() != golds.size() || preds.empty()) throw Error("accuracy: bad inputs");
    int correct = 0;
    for (size_t i = 0; i < preds.size(); ++i) correct += preds[i] == golds[i];
    return static_cast<double>(correct) / preds.size();
}

// F1 from true/false positives pooled over classes; equals accuracy for
// single-label multiclass predictions
inline double micro_f1(const std::vector<int>& preds, const std::vector<int>& golds,
                       int num_classes) {
    if (preds.size() != golds.size() || preds.empty()) throw Error("micro_f1: bad inputs");
    int64_t tp = 0, fp = 0, fn = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (size_t i = 0; i < preds.size(); ++i) {
            bool p = preds[i] == c, g = golds[i] == c;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
    }
    double denom = tp + 0.5 * (fp + fn);
    return denom == 0.0 ? 0.0 : tp / denom;
}

// one-vs-rest AUC for a single class via the rank statistic; tied scores
// contribute 0.5 per pair through midranks
inline double auc_binary(const Vec& scores, const std::vector<char>& positive) {
    const size_t n = positive.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double mid = 0.5 * (i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    int64_t pos = 0;
    for (size_t k = 0; k < n; ++k) {
        if (positive[k]) {
            rank_sum += rank[k];
            ++pos;
        }
    }
    int64_t neg = static_cast<int64_t>(n) - pos;
    if (pos == 0 || neg == 0) return std::numeric_limits<double>::quiet_NaN();
    return (rank_sum - 0.5 * pos * (pos + 1.0)) / (static_cast<double>(pos) * neg);
}

// macro average over classes; classes missing from the golds (or without
// negatives) are skipped with a warning
inline double auc_roc(const Mat& scores, const std::vector<int>& golds, int num_classes,
                      std::vector<std::string>* warnings = nullptr) {
    double total = 0.0;
    int used = 0;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<char> pos(golds.size());
        int64_t npos = 0;
        for (size_t i = 0; i < golds.size(); ++i) {
            pos[i] = golds[i] == c;
            npos += pos[i];
        }
        if (npos == 0 || npos == static_cast<int64_t>(golds.size())) {
            std::string w = "auc: class " + std::to_string(c) +
                            (npos == 0 ? " absent from golds, skipped" : " has no negatives, skipped");
            if (warnings) warnings->push_back(w);
            else std::cerr << "warning: " << w << "\n";
            continue;
        }
        total += auc_binary(scores.col(c), pos);
        ++used;
    }
    if (used == 0) throw Error("auc_roc: no class was scorable");
    return total / used;
}

struct MetricsReport {
    double accuracy = 0.0;
    double micro_f1 = 0.0;
    double auc = 0.0;
    struct PerClass {
        double precision = 0.0, recall = 0.0, f1 = 0.0;
        int support = 0;
    };
    std::map<std::string, PerClass> per_class;
    std::map<std::string, double> wall_ms_per_stage;
    std::vector<std::string> warnings;

    nlohmann::ordered_json to_json(bool include_wall = true) const {
        nlohmann::ordered_json j;
        j["accuracy"] = accuracy;
        j["micro_f1"] = micro_f1;
        j["auc"] = auc;
        j["per_class"] = nlohmann::ordered_json::object();
        for (const auto& [label, pc] : per_class) {
            j["per_class"][label] = {{"precision", pc.precision},
                                     {"recall", pc.recall},
                                     {"f1", pc.f1},
                                     {"support", pc.support}};
        }
        if (include_wall) {
            j["wall_ms_per_stage"] = nlohmann::ordered_json::object();
            for (const auto& [k, v] : wall_ms_per_stage) j["wall_ms_per_stage"][k] = v;
        }
        return j;
    }
};

// score every non-seed labeled document against its gold class
inline MetricsReport evaluate(const TrainState& state, const Corpus& corpus) {
    if (state.stage < 2) throw Error("evaluate: needs a stage-2+ state with an alignment");
    std::vector<int> alignment =
        state.alignment.empty() ? topic_to_group(state.group2topic, state.model.num_topics)
                                : state.alignment;
    auto labels = state.seeds.group_labels();
    std::map<std::string, int> group_of;
    for (size_t g = 0; g < labels.size(); ++g) group_of[labels[g]] = static_cast<int>(g);

    auto mask = state.seeds.seed_mask(corpus.num_docs());
    std::vector<int32_t> docs;
    std::vector<int> golds;
    MetricsReport rep;
    for (int32_t i = 0; i < corpus.num_docs(); ++i) {
        if (mask[i] || !corpus.documents[i].label) continue;
        auto it = group_of.find(*corpus.documents[i].label);
        if (it == group_of.end()) {
            rep.warnings.push_back("evaluate: label '" + *corpus.documents[i].label +
                                   "' has no seed group, document skipped");
            continue;
        }
        docs.push_back(i);
        golds.push_back(it->second);
    }
    if (docs.empty()) throw Error("evaluate: empty evaluation set");

    PredictionSet preds =
        predict(state.model, alignment, static_cast<int>(labels.size()), corpus, docs);
    rep.accuracy = accuracy(preds.predicted, golds);
    rep.micro_f1 = micro_f1(preds.predicted, golds, static_cast<int>(labels.size()));
    rep.auc = auc_roc(preds.scores, golds, static_cast<int>(labels.size()), &rep.warnings);

    for (size_t g = 0; g < labels.size(); ++g) {
        int tp = 0, fp = 0, fn = 0, support = 0;
        for (size_t i = 0; i < golds.size(); ++i) {
            bool p = preds.predicted[i] == static_cast<int>(g);
            bool t = golds[i] == static_cast<int>(g);
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
            support += t;
        }
        MetricsReport::PerClass pc;
        pc.support = support;
        pc.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
        pc.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
        pc.f1 = pc.precision + pc.recall == 0.0
                    ? 0.0
                    : 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall);
        rep.per_class[labels[g]] = pc;
    }
    return rep;
}

struct PipelineResult {
    TrainedPipeline trained;
    MetricsReport metrics;
};

// embed -> stages 1..3 -> evaluate, with per-stage wall times in the report
inline PipelineResult full_pipeline(Corpus corpus, const TrainConfig& cfg,
                                    std::optional<LabeledSeeds> seeds = std::nullopt) {
    PipelineResult out;
    out.trained = run_training(std::move(corpus), cfg, std::move(seeds));
    out.metrics = evaluate(out.trained.state, out.trained.corpus);
    out.metrics.wall_ms_per_stage["embed"] = out.trained.state.wall_ms_embed;
    out.metrics.wall_ms_per_stage["stage1"] = out.trained.state.wall_ms_stage[1];
    out.metrics.wall_ms_per_stage["stage2"] = out.trained.state.wall_ms_stage[2];
    out.metrics.wall_ms_per_stage["stage3"] = out.trained.state.wall_ms_stage[3];
    return out;
}

struct BenchmarkReport {
    std::vector<MetricsReport> runs;
    std::vector<std::string> failures; // one entry per failed run
    bool partial = false;

    double mean(double MetricsReport::* field) const {
        double acc = 0.0;
        for (const auto& r : runs) acc += r.*field;
        return runs.empty() ? 0.0 : acc / runs.size();
    }
    double min(double MetricsReport::* field) const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& r : runs) m = std::min(m, r.*field);
        return m;
    }
    double max(double MetricsReport::* field) const {
        double m = -std::numeric_limits<double>::infinity();
        for (const auto& r : runs) m = std::max(m, r.*field);
        return m;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["runs"] = nlohmann::ordered_json::array();
        for (const auto& r : runs) j["runs"].push_back(r.to_json());
        j["mean"] = {{"accuracy", mean(&MetricsReport::accuracy)},
                     {"micro_f1", mean(&MetricsReport::micro_f1)},
                     {"auc", mean(&MetricsReport::auc)}};
        j["min"] = {{"accuracy", min(&MetricsReport::accuracy)},
                    {"micro_f1", min(&MetricsReport::micro_f1)},
                    {"auc", min(&MetricsReport::auc)}};
        j["max"] = {{"accuracy", max(&MetricsReport::accuracy)},
                    {"micro_f1", max(&MetricsReport::micro_f1)},
                    {"auc", max(&MetricsReport::auc)}};
        j["partial"] = partial;
        j["failures"] = failures;
        return j;
    }
};

// for each run: reseed, resample seeds, retrain from scratch, evaluate
inline BenchmarkReport benchmark(const Corpus& corpus, const TrainConfig& cfg, int runs) {
    BenchmarkReport rep;
    for (int r = 0; r < runs; ++r) {
        TrainConfig run_cfg = cfg;
        run_cfg.rng_seed = cfg.rng_seed + static_cast<uint64_t>(r);
        try {
            rep.runs.push_back(full_pipeline(corpus, run_cfg).metrics);
        } catch (const std::exception& e) {
            rep.failures.push_back("run " + std::to_string(r) + ": " + e.what());
            rep.partial = true;
        }
    }
    return rep;
}

struct TauSweepRow {
    double tau = 0.0;
    double accuracy = 0.0;
    double micro_f1 = 0.0;
    double auc = 0.0;
};

// stages 1-2 are shared; stage 3 reruns from the stage-2 snapshot per tau
inline std::vector<TauSweepRow> tau_sweep(Corpus corpus, const TrainConfig& cfg,
                                          const std::vector<double>& taus) {
    for (double t : taus)
        if (t <= 0.0) throw Error("tau_sweep: tau values must be positive");

    TrainedPipeline base;
    base.corpus = std::move(corpus);
    SgnsConfig sgns;
    sgns.dim = cfg.embed_dim;
    sgns.window = cfg.embed_window;
    sgns.negatives = cfg.embed_negatives;
    sgns.epochs = cfg.embed_epochs;
    sgns.lr = cfg.embed_lr;
    sgns.rng_seed = cfg.rng_seed;
    base.embeddings = train_word_embeddings(base.corpus, sgns);
    LabeledSeeds seeds = sample_seeds(base.corpus, cfg.seed_k, cfg.rng_seed);
    base.state = train_stage1(base.corpus, base.embeddings, cfg);
    train_stage2(base.state, base.corpus, seeds, cfg);

    std::vector<TauSweepRow> rows;
    for (double tau : taus) {
        TrainState snapshot = base.state;
        TrainConfig run_cfg = cfg;
        run_cfg.tau = tau;
        train_stage3(snapshot, base.corpus, run_cfg);
        MetricsReport m = evaluate(snapshot, base.corpus);
        rows.push_back({tau, m.accuracy, m.micro_f1, m.auc});
    }
    return rows;
}

inline void write_tau_sweep_csv(const std::vector<TauSweepRow>& rows, std::ostream& os) {
    os << "tau,accuracy,micro_f1,auc\n";
    os.precision(10);
    for (const auto& r : rows) {
        os << r.tau << "," << r.accuracy << "," << r.micro_f1 << "," << r.auc << "\n";
    }
}

} // namespace kdstm
