// kdstm: train, finetune, evaluate and inspect the semi-supervised topic
// model from the command line. Input corpora are JSONL files with one
// {"id", "text", "label"?} object per line.

#include "kdstm/kdstm.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace kdstm;

FilterRules rules_for(const TrainConfig& cfg) {
    return cfg.stopword_file.empty() ? FilterRules::builtin()
                                     : FilterRules::from_file(cfg.stopword_file);
}

Corpus corpus_for(const TrainConfig& cfg, const std::string& data_path) {
    return build_corpus(load_jsonl(data_path), rules_for(cfg), cfg.min_count);
}

// seeds file: {"k": 5, "groups": {"label": ["doc_id", ...], ...}}
LabeledSeeds load_seeds_file(const std::string& path, const Corpus& corpus) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open seeds file: " + path);
    nlohmann::json j;
    in >> j;
    std::map<std::string, int32_t> by_id;
    for (int32_t i = 0; i < corpus.num_docs(); ++i) by_id[corpus.documents[i].doc_id] = i;

    LabeledSeeds seeds;
    seeds.k_per_group = j.at("k").get<int>();
    for (const auto& [label, ids] : j.at("groups").items()) {
        std::vector<int32_t> idx;
        for (const auto& id : ids) {
            auto it = by_id.find(id.get<std::string>());
            if (it == by_id.end()) {
                throw Error("seeds file: document id '" + id.get<std::string>() +
                            "' not present in the corpus");
            }
            idx.push_back(it->second);
        }
        if (static_cast<int>(idx.size()) != seeds.k_per_group) {
            throw Error("seeds file: group '" + label + "' does not have k documents");
        }
        std::sort(idx.begin(), idx.end());
        seeds.groups.emplace(label, std::move(idx));
    }
    return seeds;
}

void write_json(const nlohmann::ordered_json& j, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot open output file: " + path);
    out << j.dump(2) << "\n";
}

// rebuild the corpus a checkpoint was trained on and verify the vocabulary
Corpus corpus_matching_checkpoint(const Checkpoint& ck, const std::string& data_path) {
    Corpus corpus = corpus_for(ck.config, data_path);
    if (corpus.vocabulary.id_to_token != ck.vocab.id_to_token) {
        throw Error("data file does not reproduce the checkpoint vocabulary; "
                    "pass the training corpus");
    }
    return corpus;
}

TrainState state_from_checkpoint(const Checkpoint& ck, const Corpus& corpus) {
    TrainState state;
    state.stage = ck.stage;
    state.model = ck.model;
    state.group2topic = ck.group2topic;
    state.rng = Rng(ck.config.rng_seed + 0x51ed270b0a5177c5ull);
    state.opt = Adam(state.model);
    state.last_good = state.model.params;

    std::map<std::string, int32_t> by_id;
    for (int32_t i = 0; i < corpus.num_docs(); ++i) by_id[corpus.documents[i].doc_id] = i;
    state.seeds.k_per_group = ck.config.seed_k;
    for (const auto& [label, entries] : ck.seed_mu) {
        std::vector<int32_t> idx;
        for (const auto& [doc_id, mu] : entries) {
            auto it = by_id.find(doc_id);
            if (it == by_id.end()) throw Error("checkpoint seed document '" + doc_id +
                                               "' missing from the corpus");
            idx.push_back(it->second);
        }
        std::sort(idx.begin(), idx.end());
        state.seeds.groups.emplace(label, std::move(idx));
    }
    if (ck.stage >= 2 && alignment_injective(ck.group2topic)) {
        state.alignment = topic_to_group(ck.group2topic, ck.model.num_topics);
    }
    return state;
}

void attach_wall(MetricsReport& m, const TrainState& state) {
    m.wall_ms_per_stage["embed"] = state.wall_ms_embed;
    m.wall_ms_per_stage["stage1"] = state.wall_ms_stage[1];
    m.wall_ms_per_stage["stage2"] = state.wall_ms_stage[2];
    m.wall_ms_per_stage["stage3"] = state.wall_ms_stage[3];
}

int cmd_embed(const std::string& data, const std::string& out, const std::string& config_path,
              int dim) {
    TrainConfig cfg = config_path.empty() ? TrainConfig() : load_config(config_path);
    if (dim > 0) cfg.embed_dim = dim;
    Corpus corpus = corpus_for(cfg, data);
    SgnsConfig sgns;
    sgns.dim = cfg.embed_dim;
    sgns.window = cfg.embed_window;
    sgns.negatives = cfg.embed_negatives;
    sgns.epochs = cfg.embed_epochs;
    sgns.lr = cfg.embed_lr;
    sgns.rng_seed = cfg.rng_seed;
    EmbeddingMatrix emb = train_word_embeddings(corpus, sgns);
    save_embeddings(emb, corpus.vocabulary, out);
    std::cout << "wrote " << corpus.vocabulary.size() << " x " << emb.dim()
              << " embeddings to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out,
              const std::string& metrics_path, const std::string& telemetry_path,
              const std::string& embeddings_path, const std::string& seeds_path,
              bool stage1_only) {
    TrainConfig cfg = load_config(config_path);
    Corpus corpus = corpus_for(cfg, data);

    if (stage1_only) {
        EmbeddingMatrix emb;
        if (!embeddings_path.empty()) {
            emb = load_embeddings(embeddings_path, corpus.vocabulary);
        } else {
            SgnsConfig sgns;
            sgns.dim = cfg.embed_dim;
            sgns.window = cfg.embed_window;
            sgns.negatives = cfg.embed_negatives;
            sgns.epochs = cfg.embed_epochs;
            sgns.lr = cfg.embed_lr;
            sgns.rng_seed = cfg.rng_seed;
            emb = train_word_embeddings(corpus, sgns);
        }
        TrainState state = train_stage1(corpus, emb, cfg);
        save_checkpoint(state, corpus, cfg, out);
        if (!telemetry_path.empty()) {
            std::ofstream t(telemetry_path);
            write_telemetry_csv(state.telemetry, t);
        }
        std::cout << "stage-1 checkpoint written to " << out << "\n";
        return 0;
    }

    std::optional<LabeledSeeds> seeds;
    if (!seeds_path.empty()) seeds = load_seeds_file(seeds_path, corpus);
    PipelineResult res = full_pipeline(std::move(corpus), cfg, std::move(seeds));
    save_checkpoint(res.trained.state, res.trained.corpus, cfg, out);
    if (!telemetry_path.empty()) {
        std::ofstream t(telemetry_path);
        write_telemetry_csv(res.trained.state.telemetry, t);
    }
    write_json(res.metrics.to_json(), metrics_path);
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_finetune(const std::string& ck_path, const std::string& data,
                 const std::string& seeds_path, const std::string& out,
                 const std::string& metrics_path) {
    Checkpoint ck = load_checkpoint(ck_path);
    Corpus corpus = corpus_matching_checkpoint(ck, data);
    TrainState state = state_from_checkpoint(ck, corpus);
    if (state.stage < 1) throw Error("finetune: checkpoint has no completed stage 1");
    state.stage = 1;

    // the loaded encoder is the stage-1 encoder, so recomputing the
    // directions reproduces the frozen values exactly
    state.frozen_mu = detail::all_direction_params(state.model, corpus);
    state.mu_frozen = true;

    LabeledSeeds seeds = seeds_path.empty()
                             ? sample_seeds(corpus, ck.config.seed_k, ck.config.rng_seed)
                             : load_seeds_file(seeds_path, corpus);
    auto t0 = std::chrono::steady_clock::now();
    train_stage2(state, corpus, seeds, ck.config);
    train_stage3(state, corpus, ck.config);
    double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    save_checkpoint(state, corpus, ck.config, out);
    MetricsReport m = evaluate(state, corpus);
    attach_wall(m, state);
    write_json(m.to_json(), metrics_path);
    std::cout << "finetune (stages 2+3) took " << ms << " ms; checkpoint written to " << out
              << "\n";
    return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& data,
             const std::string& metrics_path) {
    Checkpoint ck = load_checkpoint(ck_path);
    if (ck.stage < 2) throw Error("eval: checkpoint has no topic-group alignment yet");
    Corpus corpus = corpus_matching_checkpoint(ck, data);
    TrainState state = state_from_checkpoint(ck, corpus);
    MetricsReport m = evaluate(state, corpus);
    write_json(m.to_json(false), metrics_path);
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& data, int runs,
              const std::string& out) {
    TrainConfig cfg = load_config(config_path);
    Corpus corpus = corpus_for(cfg, data);
    BenchmarkReport rep = benchmark(corpus, cfg, runs);
    write_json(rep.to_json(), out);
    std::cerr << "mean accuracy " << rep.mean(&MetricsReport::accuracy) << " over "
              << rep.runs.size() << " runs" << (rep.partial ? " (partial)" : "") << "\n";
    return rep.partial ? 1 : 0;
}

int cmd_sweep_tau(const std::string& config_path, const std::string& data,
                  const std::string& values, const std::string& out) {
    TrainConfig cfg = load_config(config_path);
    std::vector<double> taus;
    std::stringstream ss(values);
    std::string item;
    while (std::getline(ss, item, ',')) taus.push_back(std::stod(item));
    if (taus.empty()) throw Error("sweep-tau: no tau values given");
    Corpus corpus = corpus_for(cfg, data);
    auto rows = tau_sweep(std::move(corpus), cfg, taus);
    if (out.empty() || out == "-") {
        write_tau_sweep_csv(rows, std::cout);
    } else {
        std::ofstream f(out);
        write_tau_sweep_csv(rows, f);
    }
    return 0;
}

int cmd_topics(const std::string& ck_path, int n) {
    Checkpoint ck = load_checkpoint(ck_path);
    for (int t = 0; t < ck.model.num_topics; ++t) {
        std::cout << "topic " << t;
        for (size_t g = 0; g < ck.group2topic.size(); ++g) {
            if (ck.group2topic[g] == t && g < ck.group_labels.size()) {
                std::cout << " [" << ck.group_labels[g] << "]";
            }
        }
        std::cout << ":";
        for (auto [w, p] : top_words(ck.model, t, n)) {
            std::cout << " " << ck.vocab.id_to_token[w];
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_ot_solve(const std::string& matrix_path, double lambda) {
    std::ifstream in(matrix_path);
    if (!in) throw Error("cannot open matrix file: " + matrix_path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        double x;
        while (ls >> x) row.push_back(x);
        if (!row.empty()) rows.push_back(row);
    }
    if (rows.empty()) throw Error("ot-solve: empty matrix");
    CostMatrix cost;
    cost.m = Mat(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw Error("ot-solve: ragged matrix");
        for (size_t j = 0; j < rows[i].size(); ++j) cost.m(i, j) = rows[i][j];
    }
    OtResult res = ot_loss_and_gradient(cost, lambda, 400000);
    std::cout << "plan (topics x groups):\n";
    std::cout.precision(6);
    for (int t = 0; t < res.plan.p.rows(); ++t) {
        for (int g = 0; g < res.plan.p.cols(); ++g) {
            std::cout << (g ? " " : "") << res.plan.p(t, g);
        }
        std::cout << "\n";
    }
    std::cout << "loss " << res.loss << ", iterations " << res.plan.iterations_used
              << (res.plan.converged ? "" : " (not converged)") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised topic modeling with OT alignment and distillation"};
    app.require_subcommand(1);

    std::string data, out, config_path, metrics_path, telemetry_path, embeddings_path;
    std::string ck_path, seeds_path, values, matrix_path;
    int dim = 0, runs = 10, topn = 10;
    double lambda = 50.0;
    bool stage1_only = false;

    auto* embed = app.add_subcommand("embed", "train spherical word embeddings");
    embed->add_option("--corpus", data, "JSONL corpus")->required();
    embed->add_option("--out", out, "output embedding file")->required();
    embed->add_option("--config", config_path, "config file");
    embed->add_option("--dim", dim, "embedding dimension override");

    auto* train = app.add_subcommand("train", "run the full three-stage pipeline");
    train->add_option("--config", config_path, "config file")->required();
    train->add_option("--data", data, "JSONL corpus")->required();
    train->add_option("--out", out, "checkpoint path")->required();
    train->add_option("--metrics", metrics_path, "metrics JSON path ('-' = stdout)");
    train->add_option("--telemetry", telemetry_path, "telemetry CSV path");
    train->add_option("--embeddings", embeddings_path, "pre-trained embedding file");
    train->add_option("--seeds", seeds_path, "explicit seeds JSON file");
    train->add_flag("--stage1-only", stage1_only, "stop after stage 1");

    auto* finetune = app.add_subcommand("finetune", "stages 2-3 from a stage-1 checkpoint");
    finetune->add_option("--checkpoint", ck_path, "input checkpoint")->required();
    finetune->add_option("--data", data, "JSONL corpus")->required();
    finetune->add_option("--seeds", seeds_path, "seeds JSON file");
    finetune->add_option("--out", out, "output checkpoint")->required();
    finetune->add_option("--metrics", metrics_path, "metrics JSON path");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", ck_path, "checkpoint")->required();
    eval->add_option("--data", data, "JSONL corpus")->required();
    eval->add_option("--metrics", metrics_path, "metrics JSON path ('-' = stdout)");

    auto* bench = app.add_subcommand("bench", "repeated-run benchmark");
    bench->add_option("--config", config_path, "config file")->required();
    bench->add_option("--data", data, "JSONL corpus")->required();
    bench->add_option("--runs", runs, "number of runs");
    bench->add_option("--out", out, "report JSON path ('-' = stdout)");

    auto* sweep = app.add_subcommand("sweep-tau", "rerun stage 3 over a tau grid");
    sweep->add_option("--config", config_path, "config file")->required();
    sweep->add_option("--data", data, "JSONL corpus")->required();
    sweep->add_option("--values", values, "comma-separated tau values")->required();
    sweep->add_option("--out", out, "CSV path ('-' = stdout)");

    auto* topics = app.add_subcommand("topics", "print top words per topic");
    topics->add_option("--checkpoint", ck_path, "checkpoint")->required();
    topics->add_option("-n", topn, "words per topic");

    auto* ot = app.add_subcommand("ot-solve", "solve one transport problem from a matrix file");
    ot->add_option("--matrix", matrix_path, "whitespace matrix file (groups x topics)")
        ->required();
    ot->add_option("--lambda", lambda, "entropy weight");

    CLI11_PARSE(app, argc, argv);

    try {
        if (embed->parsed()) return cmd_embed(data, out, config_path, dim);
        if (train->parsed())
            return cmd_train(config_path, data, out, metrics_path, telemetry_path,
                             embeddings_path, seeds_path, stage1_only);
        if (finetune->parsed()) return cmd_finetune(ck_path, data, seeds_path, out, metrics_path);
        if (eval->parsed()) return cmd_eval(ck_path, data, metrics_path);
        if (bench->parsed()) return cmd_bench(config_path, data, runs, out);
        if (sweep->parsed()) return cmd_sweep_tau(config_path, data, values, out);
        if (topics->parsed()) return cmd_topics(ck_path, topn);
        if (ot->parsed()) return cmd_ot_solve(matrix_path, lambda);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
