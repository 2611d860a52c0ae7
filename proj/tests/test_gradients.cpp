#include "kdstm/model.hpp"
#include "kdstm/optim.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <vector>

// Finite-difference validation of every analytic gradient on a tiny model
// (|V|=20, |T|=3, hidden [8,4]): reconstruction, KL, OT and KD losses,
// dropout off, fixed sampling noise.

using namespace kdstm;

namespace {

struct GradSetup {
    Corpus corpus;
    Model model;
    LabeledSeeds seeds;
    SimilarityMatrix sim;
    std::vector<int> alignment;
    std::vector<int32_t> batch;
    std::vector<vmf::VmfNoise> noise;
};

GradSetup make_setup(uint64_t seed) {
    GradSetup s;
    Rng rng(seed);

    const int32_t v = 20;
    const int topics = 3;

    // synthetic corpus of 9 documents over 20 words
    std::vector<RawDocument> raw;
    for (int d = 0; d < 9; ++d) {
        RawDocument r;
        r.id = "d" + std::to_string(d);
        int len = 6 + static_cast<int>(rng.below(6));
        for (int t = 0; t < len; ++t) r.text += "tok" + std::to_string(rng.below(v)) + " ";
        r.label = "g" + std::to_string(d % 3);
        raw.push_back(r);
    }
    s.corpus = build_corpus(raw, FilterRules::builtin(), 1);

    EmbeddingMatrix emb;
    emb.vectors = Mat(s.corpus.vocabulary.size(), 7);
    for (int32_t i = 0; i < emb.vectors.rows(); ++i) {
        for (int j = 0; j < 7; ++j) emb.vectors(i, j) = rng.normal();
        emb.vectors.row(i).normalize();
    }
    Vec freq = Vec::Ones(s.corpus.vocabulary.size());
    s.model = init_model(emb, freq, topics, seed + 1, 8, 4, 0.0);

    s.seeds = sample_seeds(s.corpus, 2, seed + 2);

    // frozen similarity rows: fixed random cosines, half straddle thresh=0
    Mat mu_all(s.corpus.num_docs(), topics);
    for (int32_t i = 0; i < s.corpus.num_docs(); ++i) {
        Vec m(topics);
        for (int j = 0; j < topics; ++j) m[j] = rng.normal();
        mu_all.row(i) = (m / m.norm()).transpose();
    }
    s.sim = build_similarity(mu_all, s.seeds);

    s.alignment = {1, 2, 0};

    for (int32_t i = 0; i < s.corpus.num_docs(); ++i) s.batch.push_back(i);
    for (size_t i = 0; i < s.batch.size(); ++i) s.noise.push_back(vmf::draw_noise(topics, rng));
    return s;
}

BatchContext make_ctx(const GradSetup& s, LossWeights w) {
    BatchContext ctx;
    ctx.corpus = &s.corpus;
    ctx.weights = w;
    ctx.sampled = true;
    ctx.dropout = false;
    ctx.seeds = &s.seeds;
    ctx.lambda = 50.0;
    ctx.ot_max_iter = 200000;
    ctx.ot_tol = 1e-13;
    ctx.sim = &s.sim;
    ctx.alignment = &s.alignment;
    ctx.tau = 1.0;
    ctx.thresh = 0.0;
    return ctx;
}

// collect flat views over all parameters
std::vector<double*> param_slots(ModelParams& p) {
    std::vector<double*> out;
    for_each_param(p, [&](auto& field) {
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, double>) {
            out.push_back(&field);
        } else {
            for (Eigen::Index i = 0; i < field.size(); ++i) out.push_back(field.data() + i);
        }
    });
    return out;
}

void check_loss_gradients(const char* name, GradSetup& s, LossWeights w,
                          double pick_fraction = 1.0) {
    INFO(name);
    FixedNoise noise(s.noise);
    BatchContext ctx = make_ctx(s, w);
    noise.reset();
    BatchResult base = compute_batch(s.model, s.batch, ctx, &noise);

    auto value = [&]() {
        noise.reset();
        return compute_batch(s.model, s.batch, ctx, &noise).weighted_total(w);
    };

    std::vector<double*> params = param_slots(s.model.params);
    ModelParams grads_copy = base.grads;
    std::vector<double*> grads = param_slots(grads_copy);
    REQUIRE(params.size() == grads.size());

    Rng pick(99);
    int checked = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        if (pick_fraction < 1.0 && pick.uniform() > pick_fraction) continue;
        double orig = *params[i];
        double h = 1e-5 * std::max(1.0, std::fabs(orig));
        *params[i] = orig + h;
        double up = value();
        *params[i] = orig - h;
        double down = value();
        *params[i] = orig;
        double fd = (up - down) / (2.0 * h);
        double analytic = *grads[i];
        double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-6});
        INFO("param slot " << i << " analytic " << analytic << " fd " << fd);
        REQUIRE(std::fabs(analytic - fd) / denom < 1e-4);
        ++checked;
    }
    REQUIRE(checked > 50);
}

} // namespace

TEST_CASE("reconstruction loss gradients match finite differences") {
    GradSetup s = make_setup(2001);
    check_loss_gradients("recon", s, {1, 0, 0, 0});
}

TEST_CASE("kl loss gradients match finite differences") {
    GradSetup s = make_setup(2002);
    check_loss_gradients("kl", s, {0, 1, 0, 0});
}

TEST_CASE("ot loss gradients match finite differences") {
    GradSetup s = make_setup(2003);
    check_loss_gradients("ot", s, {0, 0, 1, 0});
}

TEST_CASE("kd loss gradients match finite differences") {
    GradSetup s = make_setup(2004);
    check_loss_gradients("kd", s, {0, 0, 0, 1});
}

TEST_CASE("combined stage-3 objective gradients match finite differences") {
    GradSetup s = make_setup(2005);
    check_loss_gradients("combined", s, {1, 1, 10, 10}, 0.5);
}

TEST_CASE("adam applies bias-corrected updates") {
    GradSetup s = make_setup(2006);
    Adam opt(s.model);
    ModelParams grads = zero_like(s.model);
    grads.enc.b_mu[0] = 1.0;
    double before = s.model.params.enc.b_mu[0];
    opt.step(s.model.params, grads, 0.1);
    // first step moves by exactly lr in the gradient direction
    REQUIRE(s.model.params.enc.b_mu[0] ==
            Catch::Approx(before - 0.1).epsilon(1e-6));
    REQUIRE(opt.steps() == 1);
}

TEST_CASE("one-cycle schedule shape") {
    OneCycleSchedule sched;
    sched.base_lr = 0.002;
    sched.max_lr = 0.01;
    sched.final_lr = 0.0002;
    sched.total_steps = 50;
    REQUIRE(sched.lr_at(0) == Catch::Approx(0.002));
    double peak = 0.0;
    for (int i = 0; i < 50; ++i) peak = std::max(peak, sched.lr_at(i));
    REQUIRE(peak == Catch::Approx(0.01));
    REQUIRE(sched.lr_at(49) < 0.002);
    REQUIRE(sched.lr_at(49) >= sched.final_lr - 1e-12);
}
