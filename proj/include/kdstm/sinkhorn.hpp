#pragma once

#include "kdstm/common.hpp"

#include <cmath>
#include <vector>

// Entropy-regularized optimal transport between topics and labeled
// groups: objective <P, M> - (1/lambda) h(P) over couplings with uniform
// marginals, solved by alternating diagonal scaling of K = exp(-lambda M).

namespace kdstm {

// group-major cost: m(g, t) = 1 - mean over the group's seeds of phi_t
struct CostMatrix {
    Mat m; // |G| x |T|

    int groups() const { return static_cast<int>(m.rows()); }
    int topics() const { return static_cast<int>(m.cols()); }
};

struct TransportPlan {
    Mat p;            // |T| x |G|, strictly positive
    Vec row_marginal; // length |T|
    Vec col_marginal; // length |G|
    int iterations_used = 0;
    bool converged = false;
};

inline CostMatrix build_cost_matrix(const std::vector<std::vector<Vec>>& seed_topic_dists) {
    if (seed_topic_dists.empty()) throw Error("build_cost_matrix: no groups");
    const int groups = static_cast<int>(seed_topic_dists.size());
    const int topics = static_cast<int>(seed_topic_dists[0].empty()
                                            ? 0
                                            : seed_topic_dists[0][0].size());
    CostMatrix cost;
    cost.m = Mat::Zero(groups, topics);
    for (int g = 0; g < groups; ++g) {
        const auto& dists = seed_topic_dists[g];
        if (dists.empty()) throw Error("build_cost_matrix: empty group");
        Vec mean = Vec::Zero(topics);
        for (const Vec& d : dists) {
            if (d.size() != topics) throw Error("build_cost_matrix: ragged distributions");
            if (std::fabs(d.sum() - 1.0) > 1e-6) {
                throw Error("build_cost_matrix: distribution does not sum to 1");
            }
            mean += d;
        }
        mean /= static_cast<double>(dists.size());
        cost.m.row(g) = (1.0 - mean.array()).matrix().transpose();
    }
    return cost;
}

namespace detail {

inline double marginal_violation(const Mat& p, const Vec& r, const Vec& c) {
    double v = (p.rowwise().sum() - r).cwiseAbs().maxCoeff();
    return std::max(v, (p.colwise().sum().transpose() - c).cwiseAbs().maxCoeff());
}

// standard scaling iterations on K = exp(-lambda M)
inline TransportPlan sinkhorn_scaling(const Mat& cost, double lambda, const Vec& r,
                                      const Vec& c, int max_iter, double tol) {
    const Mat k = (-lambda * cost.array()).exp().matrix();
    Vec u = Vec::Ones(cost.rows());
    Vec v = Vec::Ones(cost.cols());
    Vec kv = k * v;
    Vec ktu(cost.cols());
    TransportPlan plan;
    for (int it = 1; it <= max_iter; ++it) {
        if ((kv.array() <= 0.0).any() || !kv.allFinite()) {
            throw Error("sinkhorn: kernel row collapsed to zero");
        }
        u = r.array() / kv.array();
        ktu.noalias() = k.transpose() * u;
        if ((ktu.array() <= 0.0).any() || !ktu.allFinite()) {
            throw Error("sinkhorn: kernel column collapsed to zero");
        }
        v = c.array() / ktu.array();
        kv.noalias() = k * v;
        plan.iterations_used = it;
        // columns are exact after the v update, so only rows can violate
        if ((u.array() * kv.array() - r.array()).abs().maxCoeff() < tol) {
            plan.converged = true;
            break;
        }
    }
    plan.p = u.asDiagonal() * k * v.asDiagonal();
    return plan;
}

// log-domain iterations for large lambda * max(M)
inline TransportPlan sinkhorn_log_domain(const Mat& cost, double lambda, const Vec& r,
                                         const Vec& c, int max_iter, double tol) {
    const Mat neg = -lambda * cost;
    Vec f = Vec::Zero(cost.rows());
    Vec g = Vec::Zero(cost.cols());
    auto lse_rows = [&](const Mat& a) -> Vec { // log sum exp over each row
        Vec m = a.rowwise().maxCoeff();
        return (m.array() +
                ((a.colwise() - m).array().exp().rowwise().sum()).log())
            .matrix();
    };
    TransportPlan plan;
    for (int it = 1; it <= max_iter; ++it) {
        Mat t = (neg.colwise() + f).rowwise() + g.transpose();
        f += (r.array().log() - lse_rows(t).array()).matrix();
        t = (neg.colwise() + f).rowwise() + g.transpose();
        g += (c.array().log() - lse_rows(t.transpose()).array()).matrix();
        t = (neg.colwise() + f).rowwise() + g.transpose();
        plan.p = t.array().exp().matrix();
        plan.iterations_used = it;
        if (!plan.p.allFinite()) throw Error("sinkhorn: log-domain iteration diverged");
        if (marginal_violation(plan.p, r, c) < tol) {
            plan.converged = true;
            break;
        }
    }
    return plan;
}

} // namespace detail

// Solve for the plan over topics x groups with uniform marginals
// r = 1/|T|, c = 1/|G|. `cost` is group-major and transposed internally.
inline TransportPlan sinkhorn_plan(const CostMatrix& cost, double lambda,
                                   int max_iter = 1000, double tol = 1e-6) {
    if (lambda <= 0.0) throw Error("sinkhorn_plan: lambda must be positive");
    if (!cost.m.allFinite()) throw Error("sinkhorn_plan: cost matrix has non-finite entries");
    const int topics = cost.topics();
    const int groups = cost.groups();
    Mat topic_major = cost.m.transpose();
    Vec r = Vec::Constant(topics, 1.0 / topics);
    Vec c = Vec::Constant(groups, 1.0 / groups);

    TransportPlan plan;
    if (lambda * topic_major.maxCoeff() > 200.0) {
        plan = detail::sinkhorn_log_domain(topic_major, lambda, r, c, max_iter, tol);
    } else {
        plan = detail::sinkhorn_scaling(topic_major, lambda, r, c, max_iter, tol);
    }
    plan.row_marginal = r;
    plan.col_marginal = c;
    return plan;
}

struct OtResult {
    double loss = 0.0;
    Mat grad_cost; // |G| x |T|, d loss / d M_{g,t}; equals the plan transposed
    TransportPlan plan;
};

// L_OT = <P*, M> - (1/lambda) h(P*). The converged plan is the
// envelope-theorem gradient of the loss with respect to the cost.
inline OtResult ot_loss_and_gradient(const CostMatrix& cost, double lambda,
                                     int max_iter = 1000, double tol = 1e-6) {
    OtResult res;
    res.plan = sinkhorn_plan(cost, lambda, max_iter, tol);
    const Mat topic_major = cost.m.transpose();
    double transport = (res.plan.p.array() * topic_major.array()).sum();
    double entropy = -(res.plan.p.array() * (res.plan.p.array() + 1e-300).log()).sum();
    res.loss = transport - entropy / lambda;
    res.grad_cost = res.plan.p.transpose();
    return res;
}

} // namespace kdstm
