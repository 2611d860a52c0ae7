#pragma once

#include "kdstm/common.hpp"
#include "kdstm/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

// Spherical word embeddings trained on the corpus itself: skip-gram with
// negative sampling, each updated input row re-projected onto the unit
// sphere. The finished matrix is the fixed decoder vocabulary e_W.

namespace kdstm {

struct EmbeddingMatrix {
    Mat vectors; // |V| x d, unit-norm rows

    int dim() const { return static_cast<int>(vectors.cols()); }
    int32_t vocab_size() const { return static_cast<int32_t>(vectors.rows()); }
};

struct SgnsConfig {
    int dim = 100;
    int window = 5;
    int negatives = 5;
    int epochs = 10;
    double lr = 0.025; // linearly decayed to lr * 1e-4
    uint64_t rng_seed = 1;
};

namespace detail {

// cumulative unigram^(3/4) table for negative sampling
struct NegativeTable {
    std::vector<double> cdf;

    explicit NegativeTable(const Vocabulary& vocab) {
        cdf.resize(vocab.size());
        double acc = 0.0;
        for (int32_t i = 0; i < vocab.size(); ++i) {
            acc += std::pow(static_cast<double>(vocab.counts[i]), 0.75);
            cdf[i] = acc;
        }
        for (double& x : cdf) x /= acc;
    }

    int32_t draw(Rng& rng) const {
        double u = rng.uniform();
        auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        return static_cast<int32_t>(std::min<size_t>(it - cdf.begin(), cdf.size() - 1));
    }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

inline EmbeddingMatrix train_word_embeddings(const Corpus& corpus, const SgnsConfig& cfg) {
    const int32_t v = corpus.vocabulary.size();
    if (v == 0) throw Error("train_word_embeddings: empty corpus");
    if (cfg.dim < 2) throw Error("train_word_embeddings: dim must be >= 2");
    if (v < cfg.negatives + 1) {
        throw Error("train_word_embeddings: vocabulary smaller than negatives+1");
    }

    Rng rng(cfg.rng_seed);
    Mat syn0(v, cfg.dim);
    for (int32_t i = 0; i < v; ++i) {
        for (int d = 0; d < cfg.dim; ++d) syn0(i, d) = (rng.uniform() - 0.5) / cfg.dim;
        syn0.row(i).normalize();
    }
    Mat syn1 = Mat::Zero(v, cfg.dim);
    detail::NegativeTable table(corpus.vocabulary);

    int64_t total_centers = 0;
    for (const auto& d : corpus.documents) total_centers += d.token_ids.size();
    total_centers *= cfg.epochs;

    Vec accum(cfg.dim);
    int64_t seen = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& doc : corpus.documents) {
            const auto& ids = doc.token_ids;
            const int n = static_cast<int>(ids.size());
            for (int i = 0; i < n; ++i) {
                double progress = static_cast<double>(seen++) / total_centers;
                double lr = std::max(cfg.lr * (1.0 - progress), cfg.lr * 1e-4);
                int32_t center = ids[i];
                int lo = std::max(0, i - cfg.window);
                int hi = std::min(n - 1, i + cfg.window);
                for (int j = lo; j <= hi; ++j) {
                    if (j == i) continue;
                    int32_t context = ids[j];
                    accum.setZero();
                    // positive pair plus sampled negatives
                    for (int s = 0; s < cfg.negatives + 1; ++s) {
                        int32_t target;
                        double label;
                        if (s == 0) {
                            target = context;
                            label = 1.0;
                        } else {
                            target = table.draw(rng);
                            if (target == context) continue;
                            label = 0.0;
                        }
                        double g = detail::sigmoid(syn0.row(center).dot(syn1.row(target))) - label;
                        accum += g * syn1.row(target).transpose();
                        syn1.row(target) -= lr * g * syn0.row(center);
                    }
                    syn0.row(center) -= lr * accum.transpose();
                    syn0.row(center).normalize();
                }
            }
        }
    }

    EmbeddingMatrix emb;
    emb.vectors = std::move(syn0);
    return emb;
}

// top-k neighbours by cosine, query excluded, descending
inline std::vector<std::pair<int32_t, double>> nearest_neighbors(const EmbeddingMatrix& emb,
                                                                 int32_t word_index, int k) {
    const int32_t v = emb.vocab_size();
    if (word_index < 0 || word_index >= v) throw Error("nearest_neighbors: index out of range");
    if (k >= v) throw Error("nearest_neighbors: k must be smaller than the vocabulary");
    std::vector<std::pair<int32_t, double>> scored;
    scored.reserve(v - 1);
    for (int32_t i = 0; i < v; ++i) {
        if (i == word_index) continue;
        double c = clamp(emb.vectors.row(word_index).dot(emb.vectors.row(i)), -1.0, 1.0);
        scored.emplace_back(i, c);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    scored.resize(k);
    return scored;
}

// checkpoint format: "dim |V|" header, then one line per word:
// token followed by d decimal floats
inline void save_embeddings(const EmbeddingMatrix& emb, const Vocabulary& vocab,
                            const std::string& path) {
    if (emb.vocab_size() != vocab.size()) throw Error("save_embeddings: size mismatch");
    std::ofstream out(path);
    if (!out) throw Error("save_embeddings: cannot open " + path);
    out << emb.dim() << " " << emb.vocab_size() << "\n";
    char buf[64];
    for (int32_t i = 0; i < vocab.size(); ++i) {
        out << vocab.id_to_token[i];
        for (int d = 0; d < emb.dim(); ++d) {
            std::snprintf(buf, sizeof(buf), " %.17g", emb.vectors(i, d));
            out << buf;
        }
        out << "\n";
    }
}

// returns vectors in the order of `vocab`; every token must be present
inline EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw Error("load_embeddings: cannot open " + path);
    int dim = 0;
    int32_t count = 0;
    if (!(in >> dim >> count)) throw Error("load_embeddings: bad header");
    if (count != vocab.size()) throw Error("load_embeddings: vocabulary size mismatch");
    EmbeddingMatrix emb;
    emb.vectors = Mat::Zero(count, dim);
    std::vector<bool> seen(count, false);
    std::string token;
    for (int32_t row = 0; row < count; ++row) {
        if (!(in >> token)) throw Error("load_embeddings: truncated file");
        int32_t id = vocab.lookup(token);
        if (id < 0) throw Error("load_embeddings: unknown token " + token);
        for (int d = 0; d < dim; ++d) {
            if (!(in >> emb.vectors(id, d))) throw Error("load_embeddings: truncated row");
        }
        seen[id] = true;
    }
    for (int32_t i = 0; i < count; ++i) {
        if (!seen[i]) throw Error("load_embeddings: missing token " + vocab.id_to_token[i]);
    }
    return emb;
}

} // namespace kdstm
