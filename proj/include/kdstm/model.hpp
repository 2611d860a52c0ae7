#pragma once

#include "kdstm/common.hpp"
#include "kdstm/corpus.hpp"
#include "kdstm/embedding.hpp"
#include "kdstm/sinkhorn.hpp"
#include "kdstm/vmf.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

// The neural topic model: a BoW encoder producing vMF parameters, an
// embedding-product decoder, and the four loss terms (reconstruction,
// KL to the uniform sphere, optimal transport, knowledge distillation).
// All gradients are computed analytically; the finite-difference suite
// in the tests checks every parameter.

namespace kdstm {

struct EncoderParams {
    Mat w1; // h1 x V
    Vec b1;
    Mat w2; // h2 x h1
    Vec b2;
    Mat w_mu; // T x h2
    Vec b_mu;
    Vec w_kappa; // h2
    double b_kappa = 0.0;
};

struct ModelParams {
    EncoderParams enc;
    Mat topic_emb; // T x d

    void set_zero() {
        enc.w1.setZero();
        enc.b1.setZero();
        enc.w2.setZero();
        enc.b2.setZero();
        enc.w_mu.setZero();
        enc.b_mu.setZero();
        enc.w_kappa.setZero();
        enc.b_kappa = 0.0;
        topic_emb.setZero();
    }
};

// apply f to every parameter tensor of one/two/three mirrored structs
template <typename F>
void for_each_param(ModelParams& p, F&& f) {
    f(p.enc.w1);
    f(p.enc.b1);
    f(p.enc.w2);
    f(p.enc.b2);
    f(p.enc.w_mu);
    f(p.enc.b_mu);
    f(p.enc.w_kappa);
    f(p.enc.b_kappa);
    f(p.topic_emb);
}

template <typename F>
void for_each_param_pair(ModelParams& a, const ModelParams& b, F&& f) {
    f(a.enc.w1, b.enc.w1);
    f(a.enc.b1, b.enc.b1);
    f(a.enc.w2, b.enc.w2);
    f(a.enc.b2, b.enc.b2);
    f(a.enc.w_mu, b.enc.w_mu);
    f(a.enc.b_mu, b.enc.b_mu);
    f(a.enc.w_kappa, b.enc.w_kappa);
    f(a.enc.b_kappa, b.enc.b_kappa);
    f(a.topic_emb, b.topic_emb);
}

struct Model {
    int num_topics = 0;
    int hidden1 = 256;
    int hidden2 = 64;
    double dropout_rate = 0.5;
    Mat word_emb; // V x d, fixed after embedding training
    ModelParams params;

    int32_t vocab_size() const { return static_cast<int32_t>(word_emb.rows()); }
    int emb_dim() const { return static_cast<int>(word_emb.cols()); }
};

inline ModelParams zero_like(const Model& m) {
    ModelParams g;
    g.enc.w1 = Mat::Zero(m.hidden1, m.vocab_size());
    g.enc.b1 = Vec::Zero(m.hidden1);
    g.enc.w2 = Mat::Zero(m.hidden2, m.hidden1);
    g.enc.b2 = Vec::Zero(m.hidden2);
    g.enc.w_mu = Mat::Zero(m.num_topics, m.hidden2);
    g.enc.b_mu = Vec::Zero(m.num_topics);
    g.enc.w_kappa = Vec::Zero(m.hidden2);
    g.enc.b_kappa = 0.0;
    g.topic_emb = Mat::Zero(m.num_topics, m.emb_dim());
    return g;
}

namespace detail {

inline Mat xavier(int rows, int cols, Rng& rng) {
    double s = std::sqrt(2.0 / (rows + cols));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = s * rng.normal();
    return m;
}

// k-means++-style seeding: pick topic anchors among word vectors,
// frequency-weighted, spread out in cosine distance
inline Mat seed_topic_embeddings(const Mat& word_emb, const Vec& word_freq, int topics,
                                 Rng& rng) {
    const int32_t v = static_cast<int32_t>(word_emb.rows());
    Vec probs = word_freq / word_freq.sum();
    auto draw = [&](const Vec& w) {
        double u = rng.uniform() * w.sum();
        double acc = 0.0;
        for (int32_t i = 0; i < v; ++i) {
            acc += w[i];
            if (u <= acc) return i;
        }
        return v - 1;
    };
    std::vector<int32_t> chosen;
    chosen.push_back(draw(probs));
    while (static_cast<int>(chosen.size()) < topics) {
        Vec d2 = Vec::Constant(v, 2.0);
        for (int32_t r : chosen) {
            Vec cosdist = (1.0 - (word_emb * word_emb.row(r).transpose()).array()).matrix();
            d2 = d2.cwiseMin(cosdist);
        }
        Vec w = probs.array() * d2.array().max(0.0).square();
        if (w.sum() <= 0.0) w = probs;
        chosen.push_back(draw(w));
    }
    Mat out(topics, word_emb.cols());
    for (int t = 0; t < topics; ++t) out.row(t) = word_emb.row(chosen[t]);
    return out;
}

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Vec softmax(const Vec& v) {
    Vec e = (v.array() - v.maxCoeff()).exp();
    return e / e.sum();
}

} // namespace detail

inline Model init_model(const EmbeddingMatrix& emb, const Vec& word_freq, int num_topics,
                        uint64_t rng_seed, int hidden1 = 256, int hidden2 = 64,
                        double dropout = 0.5) {
    if (num_topics < 2) throw Error("init_model: need at least 2 topics");
    Model m;
    m.num_topics = num_topics;
    m.hidden1 = hidden1;
    m.hidden2 = hidden2;
    m.dropout_rate = dropout;
    m.word_emb = emb.vectors;

    Rng rng(rng_seed);
    const int32_t v = m.vocab_size();
    m.params.enc.w1 = detail::xavier(hidden1, v, rng);
    m.params.enc.b1 = Vec::Zero(hidden1);
    m.params.enc.w2 = detail::xavier(hidden2, hidden1, rng);
    m.params.enc.b2 = Vec::Zero(hidden2);
    m.params.enc.w_mu = detail::xavier(num_topics, hidden2, rng);
    // nonzero bias keeps the direction head away from zero even when a
    // document deactivates the whole hidden layer
    m.params.enc.b_mu = Vec(num_topics);
    for (int i = 0; i < num_topics; ++i) m.params.enc.b_mu[i] = 0.1 * rng.normal();
    m.params.enc.w_kappa = Vec(hidden2);
    for (int i = 0; i < hidden2; ++i) m.params.enc.w_kappa[i] = 0.1 * rng.normal();
    m.params.enc.b_kappa = 1.0; // kappa starts near softplus(1) ~ 1.31
    m.params.topic_emb = detail::seed_topic_embeddings(m.word_emb, word_freq, num_topics, rng);
    return m;
}

// ---------------------------------------------------------------------------
// forward passes

struct EncoderForward {
    const BowDocument* doc = nullptr;
    Vec input_probs_sparse; // values aligned with doc->counts
    Vec h1_pre, h2_pre;     // pre-activation
    Vec h1, h2;             // post relu + dropout
    Vec mask1, mask2;       // dropout multipliers
    Vec a_mu;
    double a_norm = 0.0;
    Vec mu;
    double kappa_pre = 0.0;
    double kappa_raw = 0.0;
    double kappa = 0.0;
};

// noise for one batch pass: vMF draws in slot order, uniforms for dropout
class NoiseSource {
public:
    virtual ~NoiseSource() = default;
    virtual vmf::VmfNoise vmf_noise(int m) = 0;
    virtual double uniform() = 0;
};

class RngNoise : public NoiseSource {
public:
    explicit RngNoise(Rng& rng) : rng_(rng) {}
    vmf::VmfNoise vmf_noise(int m) override { return vmf::draw_noise(m, rng_); }
    double uniform() override { return rng_.uniform(); }

private:
    Rng& rng_;
};

class FixedNoise : public NoiseSource {
public:
    explicit FixedNoise(std::vector<vmf::VmfNoise> draws) : draws_(std::move(draws)) {}
    vmf::VmfNoise vmf_noise(int) override {
        if (next_ >= draws_.size()) throw Error("FixedNoise: ran out of draws");
        return draws_[next_++];
    }
    double uniform() override { throw Error("FixedNoise: dropout must be disabled"); }
    void reset() { next_ = 0; }

private:
    std::vector<vmf::VmfNoise> draws_;
    size_t next_ = 0;
};

inline EncoderForward encode(const Model& m, const BowDocument& doc, bool dropout,
                             NoiseSource* noise) {
    if (doc.token_total <= 0) throw Error("encode: document has an all-zero input vector");
    EncoderForward f;
    f.doc = &doc;
    f.input_probs_sparse = Vec(doc.counts.size());
    for (size_t i = 0; i < doc.counts.size(); ++i) {
        f.input_probs_sparse[i] = static_cast<double>(doc.counts[i].second) / doc.token_total;
    }

    f.h1_pre = m.params.enc.b1;
    for (size_t i = 0; i < doc.counts.size(); ++i) {
        f.h1_pre += m.params.enc.w1.col(doc.counts[i].first) * f.input_probs_sparse[i];
    }
    const double keep = 1.0 - m.dropout_rate;
    auto make_mask = [&](int n) {
        Vec mask = Vec::Ones(n);
        if (dropout) {
            if (!noise) throw Error("encode: dropout requires a noise source");
            for (int i = 0; i < n; ++i) mask[i] = noise->uniform() < keep ? 1.0 / keep : 0.0;
        }
        return mask;
    };
    f.mask1 = make_mask(m.hidden1);
    f.h1 = f.h1_pre.cwiseMax(0.0).cwiseProduct(f.mask1);

    f.h2_pre = m.params.enc.w2 * f.h1 + m.params.enc.b2;
    f.mask2 = make_mask(m.hidden2);
    f.h2 = f.h2_pre.cwiseMax(0.0).cwiseProduct(f.mask2);

    f.a_mu = m.params.enc.w_mu * f.h2 + m.params.enc.b_mu;
    f.a_norm = f.a_mu.norm();
    if (f.a_norm < 1e-12) throw Error("encode: degenerate direction head");
    f.mu = f.a_mu / f.a_norm;

    f.kappa_pre = m.params.enc.w_kappa.dot(f.h2) + m.params.enc.b_kappa;
    f.kappa_raw = detail::softplus(f.kappa_pre);
    f.kappa = clamp(f.kappa_raw, vmf::kKappaMin, vmf::kKappaMax);
    return f;
}

// bounded sharpness used by both topic-distribution modes
inline double kappa_bar(double kappa) { return std::min(kappa, 10.0); }

struct DocForward {
    EncoderForward enc;
    bool sampled = false;
    vmf::ReparamSample sample; // valid when sampled
    Vec latent;                // z (sampled) or mu (deterministic)
    Vec t;                     // topic distribution, softmax(kappa_bar * latent)
};

inline DocForward forward_doc(const Model& m, const BowDocument& doc, bool sampled,
                              bool dropout, NoiseSource* noise) {
    DocForward f;
    f.enc = encode(m, doc, dropout, noise);
    f.sampled = sampled;
    if (sampled) {
        if (!noise) throw Error("forward_doc: sampled mode requires a noise source");
        vmf::VmfParams params(f.enc.mu, f.enc.kappa);
        f.sample = vmf::sample_reparameterized(params, noise->vmf_noise(m.num_topics));
        f.latent = f.sample.z;
    } else {
        f.latent = f.enc.mu;
    }
    f.t = detail::softmax(kappa_bar(f.enc.kappa) * f.latent);
    return f;
}

// convenience wrapper for callers that only need t_d
inline Vec topic_distribution(const Model& m, const BowDocument& doc, bool sampled,
                              NoiseSource* noise = nullptr) {
    return forward_doc(m, doc, sampled, false, noise).t;
}

// row-stochastic decoder matrix B = rowwise-softmax(e_T e_W^T)
inline Mat decoder_rows(const Model& m) {
    Mat logits = m.params.topic_emb * m.word_emb.transpose();
    for (int t = 0; t < logits.rows(); ++t) {
        Vec row = logits.row(t).transpose();
        logits.row(t) = detail::softmax(row).transpose();
    }
    return logits;
}

inline Vec decode(const Vec& t, const Mat& decoder) {
    if (t.size() != decoder.rows()) throw Error("decode: dimension mismatch");
    return decoder.transpose() * t;
}

inline double reconstruction_loss(const BowDocument& doc, const Vec& word_dist) {
    double loss = 0.0;
    for (auto [w, n] : doc.counts) loss -= n * std::log(word_dist[w] + kLogEps);
    return loss;
}

// ---------------------------------------------------------------------------
// similarity, teacher, alignment

struct SimilarityMatrix {
    Mat s;                           // rows: non-seed docs, cols: seeds in flat group order
    std::vector<int32_t> row_of_doc; // corpus doc index -> row, -1 for seeds
    std::vector<int> group_of_col;   // seed column -> group index
    int num_groups = 0;
    bool frozen = false;
};

// raw op: cosine similarities between unit-norm direction rows
inline Mat compute_similarity(const Mat& unlabeled_mus, const Mat& seed_mus) {
    return unlabeled_mus * seed_mus.transpose();
}

inline SimilarityMatrix build_similarity(const Mat& frozen_mu_all, const LabeledSeeds& seeds) {
    const int32_t n = static_cast<int32_t>(frozen_mu_all.rows());
    SimilarityMatrix sim;
    sim.num_groups = seeds.num_groups();
    auto flat = seeds.flat_indices();
    auto mask = seeds.seed_mask(n);
    Mat seed_mu(flat.size(), frozen_mu_all.cols());
    for (size_t c = 0; c < flat.size(); ++c) seed_mu.row(c) = frozen_mu_all.row(flat[c]);
    int g = 0;
    for (const auto& [label, idx] : seeds.groups) {
        for (size_t j = 0; j < idx.size(); ++j) sim.group_of_col.push_back(g);
        ++g;
    }
    sim.row_of_doc.assign(n, -1);
    int32_t rows = 0;
    for (int32_t i = 0; i < n; ++i)
        if (!mask[i]) sim.row_of_doc[i] = rows++;
    Mat unl(rows, frozen_mu_all.cols());
    for (int32_t i = 0; i < n; ++i)
        if (sim.row_of_doc[i] >= 0) unl.row(sim.row_of_doc[i]) = frozen_mu_all.row(i);
    sim.s = compute_similarity(unl, seed_mu);
    sim.frozen = true;
    return sim;
}

// per-group maxima of one similarity row
inline Vec group_maxima(const Vec& s_row, const std::vector<int>& group_of_col,
                        int num_groups) {
    Vec smax = Vec::Constant(num_groups, -std::numeric_limits<double>::infinity());
    for (int c = 0; c < s_row.size(); ++c) {
        smax[group_of_col[c]] = std::max(smax[group_of_col[c]], s_row[c]);
    }
    return smax;
}

// teacher: temperature softmax over the per-group max similarities
inline Vec teacher_distribution(const Vec& s_row, const std::vector<int>& group_of_col,
                                int num_groups, double tau) {
    if (tau <= 0.0) throw Error("teacher_distribution: tau must be positive");
    Vec smax = group_maxima(s_row, group_of_col, num_groups);
    return detail::softmax(smax / tau);
}

// alignment: for each group, the most-loaded topic of the converged plan
inline std::vector<int> group_to_topic(const TransportPlan& plan) {
    std::vector<int> map(plan.p.cols());
    for (int g = 0; g < plan.p.cols(); ++g) {
        int best = 0;
        for (int t = 1; t < plan.p.rows(); ++t)
            if (plan.p(t, g) > plan.p(best, g)) best = t;
        map[g] = best;
    }
    return map;
}

inline bool alignment_injective(const std::vector<int>& g2t) {
    std::vector<int> seen;
    for (int t : g2t) {
        if (std::find(seen.begin(), seen.end(), t) != seen.end()) return false;
        seen.push_back(t);
    }
    return true;
}

// invert to topic -> group (-1 for unaligned topics); throws on collision
inline std::vector<int> topic_to_group(const std::vector<int>& g2t, int num_topics) {
    std::vector<int> map(num_topics, -1);
    for (int g = 0; g < static_cast<int>(g2t.size()); ++g) {
        if (g2t[g] < 0 || g2t[g] >= num_topics) throw Error("alignment: topic out of range");
        if (map[g2t[g]] != -1) throw Error("alignment: not injective over groups");
        map[g2t[g]] = g;
    }
    return map;
}

// student's group probability: mass of the topics aligned to each group
inline Vec student_group_probs(const Vec& t, const std::vector<int>& alignment,
                               int num_groups) {
    Vec q = Vec::Zero(num_groups);
    for (int k = 0; k < t.size(); ++k)
        if (alignment[k] >= 0) q[alignment[k]] += t[k];
    return q;
}

// standalone KD loss over a set of documents' topic distributions; the
// training path reuses the same quantities with gradients
inline double kd_loss(const std::vector<Vec>& topic_dists, const std::vector<Vec>& sim_rows,
                      const std::vector<int>& alignment, const std::vector<int>& group_of_col,
                      int num_groups, double tau, double thresh) {
    if (topic_dists.size() != sim_rows.size()) throw Error("kd_loss: size mismatch");
    // alignment must cover every group
    std::vector<bool> covered(num_groups, false);
    for (int g : alignment)
        if (g >= 0 && g < num_groups) covered[g] = true;
    for (bool c : covered)
        if (!c) throw Error("kd_loss: alignment is not onto the groups");

    double total = 0.0;
    int active_docs = 0;
    for (size_t d = 0; d < topic_dists.size(); ++d) {
        Vec smax = group_maxima(sim_rows[d], group_of_col, num_groups);
        bool any = (smax.array() >= thresh).any();
        if (!any) continue;
        ++active_docs;
        Vec teacher = detail::softmax(smax / tau);
        Vec q = student_group_probs(topic_dists[d], alignment, num_groups);
        for (int g = 0; g < num_groups; ++g) {
            if (smax[g] < thresh) continue;
            total -= tau * tau * teacher[g] * std::log(std::max(q[g], kLogEps));
        }
    }
    return active_docs == 0 ? 0.0 : total / active_docs;
}

// top-n vocabulary indices for one decoder row, probability-descending
inline std::vector<std::pair<int32_t, double>> top_words(const Model& m, int topic, int n) {
    if (topic < 0 || topic >= m.num_topics) throw Error("top_words: topic out of range");
    if (n > m.vocab_size()) throw Error("top_words: n exceeds the vocabulary");
    Mat decoder = decoder_rows(m);
    std::vector<std::pair<int32_t, double>> scored(m.vocab_size());
    for (int32_t w = 0; w < m.vocab_size(); ++w) scored[w] = {w, decoder(topic, w)};
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    scored.resize(n);
    return scored;
}

// ---------------------------------------------------------------------------
// batch loss + gradients

struct LossWeights {
    double recon = 1.0;
    double kl = 1.0;
    double ot = 0.0; // alpha
    double kd = 0.0; // beta
};

struct BatchContext {
    const Corpus* corpus = nullptr;
    LossWeights weights;
    bool sampled = true;
    bool dropout = false;

    // optimal transport (stages 2-3)
    const LabeledSeeds* seeds = nullptr;
    double lambda = 50.0;
    int ot_max_iter = 1000;
    double ot_tol = 1e-6;
    // plan held fixed for the epoch; when null the plan is re-solved in place
    const TransportPlan* fixed_plan = nullptr;

    // knowledge distillation (stage 3)
    const SimilarityMatrix* sim = nullptr;
    const std::vector<int>* alignment = nullptr; // topic -> group
    double tau = 1.0;
    double thresh = 0.0;
};

struct BatchResult {
    double recon = 0.0;
    double kl = 0.0;
    double ot = 0.0;
    double kd = 0.0;
    ModelParams grads;

    double weighted_total(const LossWeights& w) const {
        return w.recon * recon + w.kl * kl + w.ot * ot + w.kd * kd;
    }
};

namespace detail {

// backprop through t = softmax(kappa_bar * latent); returns gradients on
// the latent vector and (via the kappa_bar clamp) on kappa
inline void softmax_scale_backward(const Vec& t, const Vec& latent, double kappa,
                                   const Vec& grad_t, Vec& grad_latent, double& grad_kappa) {
    double kb = kappa_bar(kappa);
    Vec dlogits = t.cwiseProduct(grad_t - Vec::Constant(t.size(), grad_t.dot(t)));
    grad_latent = kb * dlogits;
    grad_kappa = kappa < 10.0 ? dlogits.dot(latent) : 0.0;
}

// accumulate encoder gradients for a document given gradients on mu and kappa
inline void encoder_backward(const Model& m, const EncoderForward& f, const Vec& grad_mu,
                             double grad_kappa, ModelParams& grads) {
    // mu = a / |a|
    Vec da = (grad_mu - f.mu.dot(grad_mu) * f.mu) / f.a_norm;
    grads.enc.w_mu += da * f.h2.transpose();
    grads.enc.b_mu += da;

    double dpre = 0.0;
    if (f.kappa_raw > vmf::kKappaMin && f.kappa_raw < vmf::kKappaMax) {
        dpre = grad_kappa * sigmoid(f.kappa_pre);
    }
    grads.enc.w_kappa += dpre * f.h2;
    grads.enc.b_kappa += dpre;

    Vec dh2 = m.params.enc.w_mu.transpose() * da + dpre * m.params.enc.w_kappa;
    dh2 = dh2.cwiseProduct(f.mask2);
    for (int i = 0; i < dh2.size(); ++i)
        if (f.h2_pre[i] <= 0.0) dh2[i] = 0.0;
    grads.enc.w2 += dh2 * f.h1.transpose();
    grads.enc.b2 += dh2;

    Vec dh1 = m.params.enc.w2.transpose() * dh2;
    dh1 = dh1.cwiseProduct(f.mask1);
    for (int i = 0; i < dh1.size(); ++i)
        if (f.h1_pre[i] <= 0.0) dh1[i] = 0.0;
    for (size_t i = 0; i < f.doc->counts.size(); ++i) {
        grads.enc.w1.col(f.doc->counts[i].first) += dh1 * f.input_probs_sparse[i];
    }
    grads.enc.b1 += dh1;
}

// full latent backward: softmax scaling plus (in sampled mode) the
// reparameterized path back to mu and kappa
inline void doc_backward(const Model& m, const DocForward& f, const Vec& grad_t,
                         ModelParams& grads) {
    Vec grad_latent;
    double grad_kappa = 0.0;
    softmax_scale_backward(f.t, f.latent, f.enc.kappa, grad_t, grad_latent, grad_kappa);
    Vec grad_mu;
    if (f.sampled) {
        double gk_from_z = 0.0;
        vmf::reparam_backward(f.sample, grad_latent, grad_mu, gk_from_z);
        grad_kappa += gk_from_z;
    } else {
        grad_mu = grad_latent;
    }
    encoder_backward(m, f.enc, grad_mu, grad_kappa, grads);
}

} // namespace detail

inline BatchResult compute_batch(const Model& m, const std::vector<int32_t>& batch,
                                 const BatchContext& ctx, NoiseSource* noise) {
    if (!ctx.corpus) throw Error("compute_batch: missing corpus");
    BatchResult res;
    res.grads = zero_like(m);
    const int nb = static_cast<int>(batch.size());
    if (nb == 0) throw Error("compute_batch: empty batch");

    const Mat decoder = decoder_rows(m);
    Mat d_decoder = Mat::Zero(decoder.rows(), decoder.cols());

    // count of KD-active documents, needed for the batch average
    const bool kd_on = ctx.weights.kd != 0.0;
    int kd_active = 0;
    if (kd_on) {
        if (!ctx.sim || !ctx.alignment) throw Error("compute_batch: KD context incomplete");
        if (!ctx.sim->frozen) throw Error("compute_batch: similarity matrix is not frozen");
        for (int32_t doc_idx : batch) {
            int32_t row = ctx.sim->row_of_doc[doc_idx];
            if (row < 0) continue;
            Vec smax = group_maxima(ctx.sim->s.row(row).transpose(), ctx.sim->group_of_col,
                                    ctx.sim->num_groups);
            if ((smax.array() >= ctx.thresh).any()) ++kd_active;
        }
    }

    for (int32_t doc_idx : batch) {
        const BowDocument& doc = ctx.corpus->documents[doc_idx];
        DocForward f = forward_doc(m, doc, ctx.sampled, ctx.dropout, noise);

        Vec grad_t = Vec::Zero(m.num_topics);

        // reconstruction
        Vec word_dist_sparse(doc.counts.size());
        double recon = 0.0;
        for (size_t i = 0; i < doc.counts.size(); ++i) {
            int32_t w = doc.counts[i].first;
            double p = decoder.col(w).dot(f.t);
            word_dist_sparse[i] = p;
            recon -= doc.counts[i].second * std::log(p + kLogEps);
        }
        res.recon += recon / nb;
        double recon_scale = ctx.weights.recon / nb;
        if (recon_scale != 0.0) {
            for (size_t i = 0; i < doc.counts.size(); ++i) {
                int32_t w = doc.counts[i].first;
                double dd = -doc.counts[i].second / (word_dist_sparse[i] + kLogEps);
                grad_t += recon_scale * dd * decoder.col(w);
                d_decoder.col(w) += recon_scale * dd * f.t;
            }
        }

        // KL to the uniform sphere
        res.kl += vmf::kl_to_uniform(f.enc.kappa, m.num_topics) / nb;
        double gkappa_kl =
            ctx.weights.kl / nb * vmf::kl_to_uniform_grad(f.enc.kappa, m.num_topics);

        // knowledge distillation
        if (kd_on && kd_active > 0) {
            int32_t row = ctx.sim->row_of_doc[doc_idx];
            if (row >= 0) {
                Vec s_row = ctx.sim->s.row(row).transpose();
                Vec smax = group_maxima(s_row, ctx.sim->group_of_col, ctx.sim->num_groups);
                if ((smax.array() >= ctx.thresh).any()) {
                    Vec teacher = detail::softmax(smax / ctx.tau);
                    Vec q = student_group_probs(f.t, *ctx.alignment, ctx.sim->num_groups);
                    double kd = 0.0;
                    Vec dq = Vec::Zero(ctx.sim->num_groups);
                    for (int g = 0; g < ctx.sim->num_groups; ++g) {
                        if (smax[g] < ctx.thresh) continue;
                        double qg = std::max(q[g], kLogEps);
                        kd -= ctx.tau * ctx.tau * teacher[g] * std::log(qg);
                        if (q[g] >= kLogEps) {
                            dq[g] = -ctx.tau * ctx.tau * teacher[g] / qg;
                        }
                    }
                    res.kd += kd / kd_active;
                    double kd_scale = ctx.weights.kd / kd_active;
                    for (int k = 0; k < m.num_topics; ++k) {
                        int g = (*ctx.alignment)[k];
                        if (g >= 0) grad_t[k] += kd_scale * dq[g];
                    }
                }
            }
        }

        detail::doc_backward(m, f, grad_t, res.grads);
        if (gkappa_kl != 0.0) {
            detail::encoder_backward(m, f.enc, Vec::Zero(m.num_topics), gkappa_kl, res.grads);
        }
    }

    // decoder backward: through each row's softmax into the topic embeddings
    for (int t = 0; t < decoder.rows(); ++t) {
        Vec row = decoder.row(t).transpose();
        Vec g = d_decoder.row(t).transpose();
        Vec dlogits = row.cwiseProduct(g - Vec::Constant(g.size(), g.dot(row)));
        res.grads.topic_emb.row(t) += (m.word_emb.transpose() * dlogits).transpose();
    }

    // optimal transport on the seed groups, deterministic forwards
    if (ctx.weights.ot != 0.0 || (ctx.seeds && ctx.fixed_plan)) {
        if (!ctx.seeds) throw Error("compute_batch: OT requires seeds");
        std::vector<std::vector<DocForward>> fwd(ctx.seeds->num_groups());
        std::vector<std::vector<Vec>> dists(ctx.seeds->num_groups());
        int g = 0;
        for (const auto& [label, idx] : ctx.seeds->groups) {
            for (int32_t i : idx) {
                fwd[g].push_back(
                    forward_doc(m, ctx.corpus->documents[i], false, false, nullptr));
                dists[g].push_back(fwd[g].back().t);
            }
            ++g;
        }
        CostMatrix cost = build_cost_matrix(dists);
        const Mat topic_major = cost.m.transpose();
        TransportPlan local;
        const TransportPlan* plan = ctx.fixed_plan;
        if (!plan) {
            local = sinkhorn_plan(cost, ctx.lambda, ctx.ot_max_iter, ctx.ot_tol);
            plan = &local;
        }
        double transport = (plan->p.array() * topic_major.array()).sum();
        double entropy = -(plan->p.array() * (plan->p.array() + 1e-300).log()).sum();
        res.ot = transport - entropy / ctx.lambda;
        if (ctx.weights.ot != 0.0) {
            for (g = 0; g < ctx.seeds->num_groups(); ++g) {
                double inv = 1.0 / static_cast<double>(fwd[g].size());
                for (auto& f : fwd[g]) {
                    Vec grad_t = -ctx.weights.ot * inv * plan->p.col(g);
                    detail::doc_backward(m, f, grad_t, res.grads);
                }
            }
        }
    }

    return res;
}

} // namespace kdstm
