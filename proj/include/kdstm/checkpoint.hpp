#pragma once

#include "kdstm/config.hpp"
#include "kdstm/corpus.hpp"
#include "kdstm/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

// Single-file model checkpoint, versioned, plain text with 17-digit
// decimals so values round-trip bit-exactly. Field list (in order):
// config echo, group labels, vocabulary, word embeddings e_W, topic
// embeddings e_T, encoder weights, group->topic alignment, frozen seed
// direction vectors, completed stage.

namespace kdstm {

inline constexpr const char* kCheckpointMagic = "kdstm-checkpoint 1";

struct Checkpoint {
    TrainConfig config;
    std::vector<std::string> group_labels;
    Vocabulary vocab;
    Model model;
    std::vector<int> group2topic;                     // empty before stage 2
    std::map<std::string, std::vector<std::pair<std::string, Vec>>> seed_mu;
    int stage = 0;
};

namespace detail {

inline void write_value(std::ostream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

inline void write_matrix(std::ostream& os, const char* name, const Mat& m) {
    os << "[" << name << "] " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << " ";
            write_value(os, m(i, j));
        }
        os << "\n";
    }
}

inline void write_vector(std::ostream& os, const char* name, const Vec& v) {
    os << "[" << name << "] " << v.size() << "\n";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) os << " ";
        write_value(os, v[i]);
    }
    os << "\n";
}

inline void expect_section(std::istream& in, const std::string& name) {
    std::string tag;
    if (!(in >> tag) || tag != "[" + name + "]") {
        throw Error("checkpoint: expected section [" + name + "], found '" + tag + "'");
    }
}

inline Mat read_matrix(std::istream& in, const std::string& name) {
    expect_section(in, name);
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> rows >> cols)) throw Error("checkpoint: bad matrix header in " + name);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            if (!(in >> m(i, j))) throw Error("checkpoint: truncated matrix " + name);
    return m;
}

inline Vec read_vector(std::istream& in, const std::string& name) {
    expect_section(in, name);
    Eigen::Index n = 0;
    if (!(in >> n)) throw Error("checkpoint: bad vector header in " + name);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (!(in >> v[i])) throw Error("checkpoint: truncated vector " + name);
    return v;
}

} // namespace detail

inline void save_checkpoint(const TrainState& state, const Corpus& corpus,
                            const TrainConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("save_checkpoint: cannot open " + path);
    os << kCheckpointMagic << "\n";

    std::ostringstream cfg_text;
    write_config(cfg, cfg_text);
    std::string cfg_str = cfg_text.str();
    os << "[config] " << std::count(cfg_str.begin(), cfg_str.end(), '\n') << "\n" << cfg_str;

    auto labels = state.seeds.group_labels();
    os << "[labels] " << labels.size() << "\n";
    for (const auto& l : labels) os << l << "\n";

    os << "[vocabulary] " << corpus.vocabulary.size() << "\n";
    for (int32_t i = 0; i < corpus.vocabulary.size(); ++i) {
        os << corpus.vocabulary.id_to_token[i] << " " << corpus.vocabulary.counts[i] << "\n";
    }

    detail::write_matrix(os, "word_embeddings", state.model.word_emb);
    detail::write_matrix(os, "topic_embeddings", state.model.params.topic_emb);

    os << "[encoder] " << state.model.vocab_size() << " " << state.model.hidden1 << " "
       << state.model.hidden2 << " " << state.model.num_topics << " ";
    detail::write_value(os, state.model.dropout_rate);
    os << "\n";
    detail::write_matrix(os, "w1", state.model.params.enc.w1);
    detail::write_vector(os, "b1", state.model.params.enc.b1);
    detail::write_matrix(os, "w2", state.model.params.enc.w2);
    detail::write_vector(os, "b2", state.model.params.enc.b2);
    detail::write_matrix(os, "w_mu", state.model.params.enc.w_mu);
    detail::write_vector(os, "b_mu", state.model.params.enc.b_mu);
    detail::write_vector(os, "w_kappa", state.model.params.enc.w_kappa);
    os << "[b_kappa] ";
    detail::write_value(os, state.model.params.enc.b_kappa);
    os << "\n";

    os << "[alignment] " << state.group2topic.size() << "\n";
    for (size_t i = 0; i < state.group2topic.size(); ++i) {
        if (i) os << " ";
        os << state.group2topic[i];
    }
    os << "\n";

    os << "[seed_mu] " << state.seeds.groups.size() << " " << state.seeds.k_per_group << " "
       << state.model.num_topics << "\n";
    if (!state.seeds.groups.empty()) {
        if (!state.mu_frozen) throw Error("save_checkpoint: seeds without frozen directions");
        for (const auto& [label, idx] : state.seeds.groups) {
            os << label << "\n";
            for (int32_t i : idx) {
                os << corpus.documents[i].doc_id;
                for (int t = 0; t < state.model.num_topics; ++t) {
                    os << " ";
                    detail::write_value(os, state.frozen_mu(i, t));
                }
                os << "\n";
            }
        }
    }

    os << "[stage] " << state.stage << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_checkpoint: cannot open " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != kCheckpointMagic) throw Error("load_checkpoint: bad or unsupported header");

    Checkpoint ck;
    detail::expect_section(in, "config");
    int cfg_lines = 0;
    in >> cfg_lines;
    in.ignore();
    std::ostringstream cfg_text;
    std::string line;
    for (int i = 0; i < cfg_lines; ++i) {
        std::getline(in, line);
        cfg_text << line << "\n";
    }
    std::istringstream cfg_in(cfg_text.str());
    ck.config = parse_config(cfg_in);

    detail::expect_section(in, "labels");
    int n_labels = 0;
    in >> n_labels;
    for (int i = 0; i < n_labels; ++i) {
        std::string l;
        in >> l;
        ck.group_labels.push_back(l);
    }

    detail::expect_section(in, "vocabulary");
    int32_t v = 0;
    in >> v;
    for (int32_t i = 0; i < v; ++i) {
        std::string tok;
        int64_t cnt;
        if (!(in >> tok >> cnt)) throw Error("load_checkpoint: truncated vocabulary");
        ck.vocab.token_to_id.emplace(tok, i);
        ck.vocab.id_to_token.push_back(tok);
        ck.vocab.counts.push_back(cnt);
    }

    ck.model.word_emb = detail::read_matrix(in, "word_embeddings");
    ck.model.params.topic_emb = detail::read_matrix(in, "topic_embeddings");

    detail::expect_section(in, "encoder");
    int32_t enc_v = 0;
    in >> enc_v >> ck.model.hidden1 >> ck.model.hidden2 >> ck.model.num_topics >>
        ck.model.dropout_rate;
    if (enc_v != v) throw Error("load_checkpoint: encoder/vocabulary size mismatch");
    ck.model.params.enc.w1 = detail::read_matrix(in, "w1");
    ck.model.params.enc.b1 = detail::read_vector(in, "b1");
    ck.model.params.enc.w2 = detail::read_matrix(in, "w2");
    ck.model.params.enc.b2 = detail::read_vector(in, "b2");
    ck.model.params.enc.w_mu = detail::read_matrix(in, "w_mu");
    ck.model.params.enc.b_mu = detail::read_vector(in, "b_mu");
    ck.model.params.enc.w_kappa = detail::read_vector(in, "w_kappa");
    detail::expect_section(in, "b_kappa");
    in >> ck.model.params.enc.b_kappa;

    detail::expect_section(in, "alignment");
    int align_n = 0;
    in >> align_n;
    for (int i = 0; i < align_n; ++i) {
        int g;
        in >> g;
        ck.group2topic.push_back(g);
    }

    detail::expect_section(in, "seed_mu");
    int n_groups = 0, k = 0, topics = 0;
    in >> n_groups >> k >> topics;
    for (int g = 0; g < n_groups; ++g) {
        std::string label;
        in >> label;
        auto& entries = ck.seed_mu[label];
        for (int j = 0; j < k; ++j) {
            std::string doc_id;
            in >> doc_id;
            Vec mu(topics);
            for (int t = 0; t < topics; ++t) in >> mu[t];
            entries.emplace_back(doc_id, mu);
        }
    }

    detail::expect_section(in, "stage");
    in >> ck.stage;
    if (!in) throw Error("load_checkpoint: truncated file");
    return ck;
}

} // namespace kdstm
