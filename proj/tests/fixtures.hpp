#pragma once

#include "kdstm/common.hpp"
#include "kdstm/corpus.hpp"

#include <fstream>
#include <string>
#include <vector>

// Deterministic synthetic corpora used across the test suites.

namespace fixtures {

using kdstm::RawDocument;
using kdstm::Rng;

// draw from a zipf-ish distribution over [0, n)
inline int zipf_draw(Rng& rng, const std::vector<double>& cdf) {
    double u = rng.uniform();
    auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
    int i = static_cast<int>(it - cdf.begin());
    return std::min(i, static_cast<int>(cdf.size()) - 1);
}

inline std::vector<double> zipf_cdf(int n) {
    std::vector<double> cdf(n);
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += 1.0 / (i + 1.0);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += 1.0 / ((i + 1.0) * z);
        cdf[i] = acc;
    }
    return cdf;
}

// 4 classes x 100 docs from disjoint 50-word vocabularies
inline std::vector<RawDocument> four_class_corpus(uint64_t seed) {
    Rng rng(seed);
    auto cdf = zipf_cdf(50);
    std::vector<RawDocument> docs;
    const char* classes[4] = {"earth", "fire", "water", "wind"};
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 100; ++i) {
            int len = 15 + static_cast<int>(rng.below(25));
            std::string text;
            for (int t = 0; t < len; ++t) {
                int w = c * 50 + zipf_draw(rng, cdf);
                text += "w" + std::to_string(1000 + w) + " ";
            }
            RawDocument d;
            d.id = std::string(classes[c]) + "-" + std::to_string(i);
            d.text = text;
            d.label = classes[c];
            docs.push_back(std::move(d));
        }
    }
    return docs;
}

// Stand-in for the 4-category newsgroup selection: class sizes 689/521/836/856,
// average length ~55 tokens, 400 class-specific words per class plus a shared
// pool so the vocabulary needs a frequency floor to stay clean.
inline std::vector<RawDocument> newsgroup_corpus(uint64_t seed) {
    Rng rng(seed);
    struct Cls {
        const char* name;
        int count;
    };
    const Cls classes[4] = {
        {"atheism", 689}, {"graphics", 836}, {"religion", 521}, {"space", 856}};
    auto class_cdf = zipf_cdf(400);
    auto shared_cdf = zipf_cdf(300);
    std::vector<RawDocument> docs;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < classes[c].count; ++i) {
            int len = 30 + static_cast<int>(rng.below(52)); // mean ~55.5
            std::string text;
            for (int t = 0; t < len; ++t) {
                // about a third of tokens come from the shared pool
                if (rng.below(3) == 0) {
                    text += "common" + std::to_string(100 + zipf_draw(rng, shared_cdf)) + " ";
                } else {
                    int w = zipf_draw(rng, class_cdf);
                    text += std::string(classes[c].name).substr(0, 3) +
                            std::to_string(1000 + w) + " ";
                }
            }
            RawDocument d;
            d.id = std::string(classes[c].name) + "-" + std::to_string(i);
            d.text = text;
            d.label = classes[c].name;
            docs.push_back(std::move(d));
        }
    }
    return docs;
}

// two halves with disjoint co-occurrence vocabularies, for embedding tests
inline std::vector<RawDocument> two_cluster_corpus(uint64_t seed, int docs_per_cluster = 60) {
    Rng rng(seed);
    std::vector<RawDocument> docs;
    for (int c = 0; c < 2; ++c) {
        for (int i = 0; i < docs_per_cluster; ++i) {
            int len = 12 + static_cast<int>(rng.below(10));
            std::string text;
            for (int t = 0; t < len; ++t) {
                text += (c == 0 ? "left" : "right") + std::to_string(rng.below(20)) + " ";
            }
            RawDocument d;
            d.id = (c == 0 ? "l" : "r") + std::to_string(i);
            d.text = text;
            docs.push_back(std::move(d));
        }
    }
    return docs;
}

inline void write_jsonl(const std::vector<RawDocument>& docs, const std::string& path) {
    std::ofstream out(path);
    for (const auto& d : docs) {
        nlohmann::json j;
        j["id"] = d.id;
        j["text"] = d.text;
        if (d.label) j["label"] = *d.label;
        out << j.dump() << "\n";
    }
}

} // namespace fixtures
