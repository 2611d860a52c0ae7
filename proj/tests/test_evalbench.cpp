#include "kdstm/evalbench.hpp"

#include "fixtures.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace kdstm;

namespace {

TrainConfig fast_config() {
    TrainConfig cfg;
    cfg.min_count = 1;
    cfg.seed_k = 5;
    cfg.rng_seed = 77;
    cfg.embed_dim = 16;
    cfg.embed_epochs = 2;
    cfg.hidden1 = 48;
    cfg.hidden2 = 24;
    cfg.batch = 128;
    cfg.stage1_epochs = 6;
    cfg.stage2_epochs = 3;
    cfg.stage3_epochs = 3;
    return cfg;
}

const PipelineResult& trained_fixture() {
    static PipelineResult res = [] {
        Corpus corpus = build_corpus(fixtures::four_class_corpus(9), FilterRules::builtin(), 1);
        return full_pipeline(std::move(corpus), fast_config());
    }();
    return res;
}

} // namespace

TEST_CASE("hand-counted accuracy") {
    // golds (A,A,B,B), preds (A,B,B,B)
    std::vector<int> golds = {0, 0, 1, 1};
    std::vector<int> preds = {0, 1, 1, 1};
    REQUIRE(accuracy(preds, golds) == Catch::Approx(0.75));
    REQUIRE(micro_f1(preds, golds, 2) == Catch::Approx(0.75));
}

TEST_CASE("micro f1 equals accuracy on random single-label predictions") {
    Rng rng(31415);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 2 + static_cast<int>(rng.below(40));
        int classes = 2 + static_cast<int>(rng.below(6));
        std::vector<int> preds(n), golds(n);
        for (int i = 0; i < n; ++i) {
            preds[i] = static_cast<int>(rng.below(classes));
            golds[i] = static_cast<int>(rng.below(classes));
        }
        REQUIRE(micro_f1(preds, golds, classes) == accuracy(preds, golds));
    }
}

TEST_CASE("auc extremes and tie handling") {
    // perfect ranking
    Vec s(4);
    s << 0.9, 0.8, 0.2, 0.1;
    std::vector<char> pos = {1, 1, 0, 0};
    REQUIRE(auc_binary(s, pos) == Catch::Approx(1.0));
    // inverted
    std::vector<char> neg = {0, 0, 1, 1};
    REQUIRE(auc_binary(s, neg) == Catch::Approx(0.0));
    // all scores tied: every pair counts 0.5
    Vec tied = Vec::Constant(4, 0.5);
    REQUIRE(auc_binary(tied, pos) == Catch::Approx(0.5));
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(999);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 10 + static_cast<int>(rng.below(30));
        Vec s(n);
        std::vector<char> pos(n);
        int npos = 0;
        for (int i = 0; i < n; ++i) {
            s[i] = rng.uniform();
            pos[i] = rng.below(2) == 0;
            npos += pos[i];
        }
        if (npos == 0 || npos == n) continue;
        Vec warped = (3.0 * s.array() + 1.0).exp().matrix();
        REQUIRE(auc_binary(s, pos) == Catch::Approx(auc_binary(warped, pos)).epsilon(1e-12));
    }
}

TEST_CASE("macro auc skips classes missing from the golds") {
    Mat scores(4, 3);
    scores << 0.8, 0.1, 0.1, //
        0.7, 0.2, 0.1,       //
        0.2, 0.7, 0.1,       //
        0.1, 0.8, 0.1;
    std::vector<int> golds = {0, 0, 1, 1}; // class 2 absent
    std::vector<std::string> warnings;
    double auc = auc_roc(scores, golds, 3, &warnings);
    REQUIRE(auc == Catch::Approx(1.0));
    REQUIRE(warnings.size() == 1);
    REQUIRE(warnings[0].find("class 2") != std::string::npos);
}

TEST_CASE("predict is deterministic and excludes nothing by itself") {
    const PipelineResult& res = trained_fixture();
    std::vector<int32_t> docs;
    for (int32_t i = 0; i < 30; ++i) docs.push_back(i);
    auto alignment = res.trained.state.alignment;
    PredictionSet a = predict(res.trained.state.model, alignment, 4, res.trained.corpus, docs);
    PredictionSet b = predict(res.trained.state.model, alignment, 4, res.trained.corpus, docs);
    REQUIRE(a.scores == b.scores);
    REQUIRE(a.predicted == b.predicted);
    for (size_t i = 0; i < docs.size(); ++i) {
        REQUIRE(a.scores.row(i).sum() == Catch::Approx(1.0).margin(1e-6));
        REQUIRE(a.scores.row(i).maxCoeff() ==
                Catch::Approx(a.scores(i, a.predicted[i])).margin(1e-12));
    }
}

TEST_CASE("bijective alignment makes the scores equal the topic distribution") {
    const PipelineResult& res = trained_fixture();
    const auto& st = res.trained.state;
    std::vector<int32_t> docs = {3, 50, 250};
    PredictionSet p = predict(st.model, st.alignment, 4, res.trained.corpus, docs);
    for (size_t i = 0; i < docs.size(); ++i) {
        Vec t = topic_distribution(st.model, res.trained.corpus.documents[docs[i]], false);
        for (int g = 0; g < 4; ++g) {
            int topic = st.group2topic[g];
            REQUIRE(p.scores(i, g) == Catch::Approx(t[topic]).margin(1e-9));
        }
    }
}

TEST_CASE("evaluation excludes the seed documents") {
    const PipelineResult& res = trained_fixture();
    MetricsReport m = evaluate(res.trained.state, res.trained.corpus);
    int support = 0;
    for (const auto& [label, pc] : m.per_class) support += pc.support;
    REQUIRE(support == res.trained.corpus.num_docs() - 4 * res.trained.state.seeds.k_per_group);
}

TEST_CASE("metrics report carries the full schema") {
    const PipelineResult& res = trained_fixture();
    auto j = res.metrics.to_json();
    REQUIRE(j.contains("accuracy"));
    REQUIRE(j.contains("micro_f1"));
    REQUIRE(j.contains("auc"));
    REQUIRE(j.contains("per_class"));
    REQUIRE(j.contains("wall_ms_per_stage"));
    REQUIRE(j["per_class"].size() == 4);
    REQUIRE(j["wall_ms_per_stage"].size() == 4);
    auto no_wall = res.metrics.to_json(false);
    REQUIRE(!no_wall.contains("wall_ms_per_stage"));
}

TEST_CASE("single-run benchmark mean equals the run") {
    Corpus corpus = build_corpus(fixtures::four_class_corpus(9), FilterRules::builtin(), 1);
    TrainConfig cfg = fast_config();
    cfg.stage1_epochs = 3;
    cfg.stage2_epochs = 2;
    cfg.stage3_epochs = 2;
    BenchmarkReport rep = benchmark(corpus, cfg, 1);
    REQUIRE(rep.runs.size() == 1);
    REQUIRE(!rep.partial);
    REQUIRE(rep.mean(&MetricsReport::accuracy) == rep.runs[0].accuracy);
    auto j = rep.to_json();
    REQUIRE(j["mean"].contains("accuracy"));
    REQUIRE(j["mean"].contains("micro_f1"));
    REQUIRE(j["mean"].contains("auc"));
    REQUIRE(j["min"]["accuracy"].get<double>() <= j["max"]["accuracy"].get<double>());
}

TEST_CASE("failed benchmark runs are recorded and the report marked partial") {
    Corpus corpus = build_corpus(fixtures::four_class_corpus(9), FilterRules::builtin(), 1);
    TrainConfig cfg = fast_config();
    cfg.seed_k = 1000; // cannot sample: every run fails
    BenchmarkReport rep = benchmark(corpus, cfg, 2);
    REQUIRE(rep.partial);
    REQUIRE(rep.failures.size() == 2);
    REQUIRE(rep.runs.empty());
}

TEST_CASE("tau sweep shares stages 1-2 and matches a plain run at equal tau") {
    Corpus corpus = build_corpus(fixtures::four_class_corpus(9), FilterRules::builtin(), 1);
    TrainConfig cfg = fast_config();
    cfg.stage1_epochs = 4;
    cfg.stage2_epochs = 2;
    cfg.stage3_epochs = 2;

    auto rows = tau_sweep(corpus, cfg, {cfg.tau, 0.5, 2.0});
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        REQUIRE(std::isfinite(r.accuracy));
        REQUIRE(std::isfinite(r.micro_f1));
        REQUIRE(std::isfinite(r.auc));
    }

    PipelineResult plain = full_pipeline(corpus, cfg);
    REQUIRE(rows[0].accuracy == plain.metrics.accuracy);
    REQUIRE(rows[0].micro_f1 == plain.metrics.micro_f1);
    REQUIRE(rows[0].auc == plain.metrics.auc);

    std::ostringstream csv;
    write_tau_sweep_csv(rows, csv);
    REQUIRE(csv.str().rfind("tau,accuracy,micro_f1,auc", 0) == 0);

    REQUIRE_THROWS_AS(tau_sweep(corpus, cfg, {0.0}), Error);
}
