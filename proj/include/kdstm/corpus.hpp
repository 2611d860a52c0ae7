#pragma once

#include "kdstm/common.hpp"
#include "kdstm/stopwords.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

namespace kdstm {

struct FilterRules {
    std::unordered_set<std::string> stopwords;

    static FilterRules builtin() {
        FilterRules r;
        for (auto w : kBuiltinStopwords) r.stopwords.emplace(w);
        return r;
    }

    static FilterRules from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open stopword file: " + path);
        FilterRules r;
        std::string line;
        while (std::getline(in, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
            if (!line.empty()) r.stopwords.insert(line);
        }
        return r;
    }
};

namespace detail {

inline bool is_alnum(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

inline bool is_pure_digits(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

// colon-separated digit runs: 3:00, 12:30:15, ...
inline bool is_time_like(const std::string& s) {
    bool saw_colon = false, in_digits = false;
    if (s.empty()) return false;
    for (size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (std::isdigit(static_cast<unsigned char>(c))) {
            in_digits = true;
        } else if (c == ':') {
            if (!in_digits) return false; // needs digits before every colon
            saw_colon = true;
            in_digits = false;
        } else {
            return false;
        }
    }
    return saw_colon && in_digits;
}

} // namespace detail

// Lowercase, split on whitespace, strip surrounding punctuation, drop
// time-like pieces, then split on remaining non-alphanumeric runs and
// drop stop words, digit strings and symbol-only fragments.
inline std::vector<std::string> tokenize_and_filter(const std::string& raw_text,
                                                    const FilterRules& rules) {
    std::vector<std::string> out;
    std::string piece;
    std::istringstream stream(raw_text);
    while (stream >> piece) {
        for (char& c : piece) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        size_t b = 0, e = piece.size();
        while (b < e && !detail::is_alnum(piece[b])) ++b;
        while (e > b && !detail::is_alnum(piece[e - 1])) --e;
        if (b >= e) continue;
        std::string trimmed = piece.substr(b, e - b);
        if (detail::is_time_like(trimmed)) continue;
        size_t i = 0;
        while (i < trimmed.size()) {
            while (i < trimmed.size() && !detail::is_alnum(trimmed[i])) ++i;
            size_t j = i;
            while (j < trimmed.size() && detail::is_alnum(trimmed[j])) ++j;
            if (j > i) {
                std::string tok = trimmed.substr(i, j - i);
                if (!detail::is_pure_digits(tok) && !rules.stopwords.count(tok)) {
                    out.push_back(std::move(tok));
                }
            }
            i = j;
        }
    }
    return out;
}

struct Vocabulary {
    std::unordered_map<std::string, int32_t> token_to_id;
    std::vector<std::string> id_to_token;
    std::vector<int64_t> counts; // corpus frequency per id

    int32_t size() const { return static_cast<int32_t>(id_to_token.size()); }

    int32_t lookup(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? -1 : it->second;
    }
};

// indices by descending frequency, ties broken lexicographically
inline Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& token_docs,
                                   int min_count) {
    if (min_count < 1) throw Error("build_vocabulary: min_count must be >= 1");
    std::unordered_map<std::string, int64_t> freq;
    for (const auto& doc : token_docs)
        for (const auto& tok : doc) ++freq[tok];

    std::vector<std::pair<std::string, int64_t>> kept;
    for (const auto& [tok, n] : freq)
        if (n >= min_count) kept.emplace_back(tok, n);
    if (kept.empty()) throw Error("build_vocabulary: no token reaches min_count");

    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    v.id_to_token.reserve(kept.size());
    v.counts.reserve(kept.size());
    for (const auto& [tok, n] : kept) {
        v.token_to_id.emplace(tok, static_cast<int32_t>(v.id_to_token.size()));
        v.id_to_token.push_back(tok);
        v.counts.push_back(n);
    }
    return v;
}

struct BowDocument {
    std::string doc_id;
    std::vector<std::pair<int32_t, int32_t>> counts; // (vocab index, count), index-sorted
    int32_t token_total = 0;                         // sum of counts
    std::optional<std::string> label;
    std::vector<int32_t> token_ids; // in-vocabulary token sequence (feeds skip-gram)
};

// nullopt = dropped (fewer than 2 in-vocabulary tokens)
inline std::optional<BowDocument> vectorize(const std::vector<std::string>& tokens,
                                            const Vocabulary& vocab) {
    BowDocument doc;
    std::map<int32_t, int32_t> acc;
    for (const auto& tok : tokens) {
        int32_t id = vocab.lookup(tok);
        if (id < 0) continue;
        ++acc[id];
        doc.token_ids.push_back(id);
        ++doc.token_total;
    }
    if (doc.token_total < 2) return std::nullopt;
    doc.counts.assign(acc.begin(), acc.end());
    return doc;
}

struct Corpus {
    std::vector<BowDocument> documents;
    Vocabulary vocabulary;

    int32_t num_docs() const { return static_cast<int32_t>(documents.size()); }

    // sorted distinct labels; group index = position in this list
    std::vector<std::string> labels() const {
        std::map<std::string, int> seen;
        for (const auto& d : documents)
            if (d.label) seen[*d.label] = 1;
        std::vector<std::string> out;
        for (const auto& [l, _] : seen) out.push_back(l);
        return out;
    }

    void serialize(std::ostream& os) const {
        os << "corpus " << vocabulary.size() << " " << documents.size() << "\n";
        for (int32_t i = 0; i < vocabulary.size(); ++i) {
            os << vocabulary.id_to_token[i] << " " << vocabulary.counts[i] << "\n";
        }
        for (const auto& d : documents) {
            os << d.doc_id << "\t" << (d.label ? *d.label : "") << "\t";
            for (auto [id, n] : d.counts) os << id << ":" << n << " ";
            os << "\n";
        }
    }
};

struct RawDocument {
    std::string id;
    std::string text;
    std::optional<std::string> label;
};

// one JSON object per line: {"id": ..., "text": ..., "label": optional}
inline std::vector<RawDocument> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus file: " + path);
    std::vector<RawDocument> docs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error("bad JSON at " + path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        RawDocument d;
        d.id = j.at("id").get<std::string>();
        d.text = j.at("text").get<std::string>();
        if (j.contains("label") && !j["label"].is_null()) {
            d.label = j["label"].get<std::string>();
        }
        docs.push_back(std::move(d));
    }
    return docs;
}

inline Corpus build_corpus(const std::vector<RawDocument>& raw, const FilterRules& rules,
                           int min_count) {
    std::vector<std::vector<std::string>> token_docs;
    token_docs.reserve(raw.size());
    for (const auto& r : raw) token_docs.push_back(tokenize_and_filter(r.text, rules));

    Corpus corpus;
    corpus.vocabulary = build_vocabulary(token_docs, min_count);
    for (size_t i = 0; i < raw.size(); ++i) {
        auto doc = vectorize(token_docs[i], corpus.vocabulary);
        if (!doc) continue;
        doc->doc_id = raw[i].id;
        doc->label = raw[i].label;
        corpus.documents.push_back(std::move(*doc));
    }
    return corpus;
}

struct LabeledSeeds {
    std::map<std::string, std::vector<int32_t>> groups; // label -> doc indices, sorted
    int k_per_group = 0;

    std::vector<std::string> group_labels() const {
        std::vector<std::string> out;
        for (const auto& [l, _] : groups) out.push_back(l);
        return out;
    }

    int num_groups() const { return static_cast<int>(groups.size()); }

    std::vector<uint8_t> seed_mask(int32_t num_docs) const {
        std::vector<uint8_t> mask(num_docs, 0);
        for (const auto& [_, idx] : groups)
            for (int32_t i : idx) mask[i] = 1;
        return mask;
    }

    // flattened in group order; pairs with the similarity-matrix columns
    std::vector<int32_t> flat_indices() const {
        std::vector<int32_t> out;
        for (const auto& [_, idx] : groups) out.insert(out.end(), idx.begin(), idx.end());
        return out;
    }
};

// deterministic k-per-class sample of labeled documents
inline LabeledSeeds sample_seeds(const Corpus& corpus, int k, uint64_t rng_seed) {
    std::map<std::string, std::vector<int32_t>> by_label;
    for (int32_t i = 0; i < corpus.num_docs(); ++i) {
        const auto& d = corpus.documents[i];
        if (d.label) by_label[*d.label].push_back(i);
    }
    if (by_label.empty()) throw Error("sample_seeds: corpus has no labeled documents");

    Rng rng(rng_seed);
    LabeledSeeds seeds;
    seeds.k_per_group = k;
    for (auto& [label, idx] : by_label) {
        if (static_cast<int>(idx.size()) < k) {
            throw Error("sample_seeds: class '" + label + "' has only " +
                        std::to_string(idx.size()) + " documents, need " + std::to_string(k));
        }
        // partial Fisher-Yates: first k slots
        for (int j = 0; j < k; ++j) {
            size_t pick = j + rng.below(idx.size() - j);
            std::swap(idx[j], idx[pick]);
        }
        std::vector<int32_t> chosen(idx.begin(), idx.begin() + k);
        std::sort(chosen.begin(), chosen.end());
        seeds.groups.emplace(label, std::move(chosen));
    }
    return seeds;
}

} // namespace kdstm
