#pragma once

#include "kdstm/common.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace kdstm {

// Every knob of the pipeline in one flat struct; the on-disk form is a
// flat key-value file with these exact names.
struct TrainConfig {
    // corpus
    int min_count = 20;
    std::string stopword_file; // empty = builtin en-v1 list
    int seed_k = 5;
    uint64_t rng_seed = 1;

    // word embeddings
    int embed_dim = 100;
    int embed_window = 5;
    int embed_negatives = 5;
    int embed_epochs = 10;
    double embed_lr = 0.025;

    // model
    int num_topics = 0; // 0: one topic per labeled class
    int hidden1 = 256;
    int hidden2 = 64;
    double dropout = 0.5;

    // objective coefficients
    double lambda = 50.0;
    double alpha = 10.0;
    double beta = 10.0;
    double thresh = 0.0;
    double tau = 1.0;

    // optimization
    double lr = 0.002;
    int batch = 256;
    double max_lr = 0.01;
    int stage1_epochs = 50;
    int stage2_epochs = 10;
    int stage3_epochs = 10;

    void validate() const {
        if (min_count < 1 || seed_k < 1 || batch < 1) throw Error("config: counts must be positive");
        if (lambda <= 0.0 || tau <= 0.0) throw Error("config: lambda and tau must be positive");
        if (thresh < -1.0 || thresh > 1.0) throw Error("config: thresh must lie in [-1, 1]");
        if (alpha < 0.0 || beta < 0.0) throw Error("config: alpha and beta must be nonnegative");
        if (lr <= 0.0 || max_lr <= 0.0 || embed_lr <= 0.0) throw Error("config: learning rates must be positive");
        if (stage1_epochs < 1 || stage2_epochs < 0 || stage3_epochs < 0) throw Error("config: bad epoch counts");
        if (embed_dim < 2 || hidden1 < 1 || hidden2 < 1) throw Error("config: bad layer sizes");
    }
};

namespace detail {

template <typename F>
void for_each_config_key(TrainConfig& c, F&& f) {
    f("min_count", c.min_count);
    f("stopword_file", c.stopword_file);
    f("seed_k", c.seed_k);
    f("rng_seed", c.rng_seed);
    f("embed_dim", c.embed_dim);
    f("embed_window", c.embed_window);
    f("embed_negatives", c.embed_negatives);
    f("embed_epochs", c.embed_epochs);
    f("embed_lr", c.embed_lr);
    f("num_topics", c.num_topics);
    f("hidden1", c.hidden1);
    f("hidden2", c.hidden2);
    f("dropout", c.dropout);
    f("lambda", c.lambda);
    f("alpha", c.alpha);
    f("beta", c.beta);
    f("thresh", c.thresh);
    f("tau", c.tau);
    f("lr", c.lr);
    f("batch", c.batch);
    f("max_lr", c.max_lr);
    f("stage1_epochs", c.stage1_epochs);
    f("stage2_epochs", c.stage2_epochs);
    f("stage3_epochs", c.stage3_epochs);
}

inline void parse_config_value(const std::string& raw, int& out) { out = std::stoi(raw); }
inline void parse_config_value(const std::string& raw, uint64_t& out) { out = std::stoull(raw); }
inline void parse_config_value(const std::string& raw, double& out) { out = std::stod(raw); }
inline void parse_config_value(const std::string& raw, std::string& out) { out = raw; }

} // namespace detail

inline TrainConfig parse_config(std::istream& in) {
    TrainConfig cfg;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                throw Error("config line " + std::to_string(line_no) + ": expected key = value");
            }
            continue;
        }
        auto strip = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = strip(line.substr(0, eq));
        std::string value = strip(line.substr(eq + 1));
        bool matched = false;
        try {
            detail::for_each_config_key(cfg, [&](const char* name, auto& field) {
                if (key == name) {
                    detail::parse_config_value(value, field);
                    matched = true;
                }
            });
        } catch (const std::exception&) {
            throw Error("config line " + std::to_string(line_no) + ": bad value for " + key);
        }
        if (!matched) throw Error("config line " + std::to_string(line_no) + ": unknown key " + key);
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    return parse_config(in);
}

inline void write_config(const TrainConfig& cfg, std::ostream& os) {
    TrainConfig copy = cfg;
    detail::for_each_config_key(copy, [&](const char* name, auto& field) {
        std::ostringstream val;
        val.precision(17);
        val << field;
        os << name << " = " << val.str() << "\n";
    });
}

} // namespace kdstm
