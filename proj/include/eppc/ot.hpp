#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <deque>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "eppc/core.hpp"
#include "eppc/ontology.hpp"

namespace eppc {

/// Hidden-state vector exported for one example.
struct representation_vector {
    std::vector<double> values;
    std::string example_id;
};

struct neighborhood_distribution {
    std::vector<double> probs;

    std::size_t size() const { return probs.size(); }
    bool valid(double tol = 1e-9) const {
        double s = 0.0;
        for (double p : probs) {
            if (!(p >= 0.0)) return false;
            s += p;
        }
        return std::fabs(s - 1.0) <= tol;
    }
};

/// Parameters of the alignment objective. Positivity is checked by
/// validate(); the defaults are the reference configuration.
struct alignment_config {
    double tau = 0.1;            // softmax temperature for representation neighborhoods
    double sinkhorn_reg = 0.01;  // entropic regularization strength
    double eps0 = 1e-8;          // numerical floor in the ontology normalization
    double lambda_ont = 0.5;     // weight of the alignment term in the total loss
    // Final-stage iteration budget; a few hundred bank-sized neighborhoods
    // need roughly 400 total iterations at the default regularization.
    std::size_t max_iters = 1000;
    double tolerance = 1e-6;
    // Online (non-frozen) banks contribute to the loss only once at least
    // this fraction of their capacity is filled.
    double min_fill_fraction = 0.1;

    void validate() const {
        if (!(tau > 0.0)) throw std::invalid_argument("alignment_config: tau must be > 0");
        if (!(sinkhorn_reg > 0.0))
            throw std::invalid_argument("alignment_config: sinkhorn_reg must be > 0");
        if (!(eps0 > 0.0)) throw std::invalid_argument("alignment_config: eps0 must be > 0");
        if (!(lambda_ont >= 0.0))
            throw std::invalid_argument("alignment_config: lambda_ont must be >= 0");
        if (max_iters == 0) throw std::invalid_argument("alignment_config: max_iters must be > 0");
        if (!(tolerance > 0.0))
            throw std::invalid_argument("alignment_config: tolerance must be > 0");
    }
};

/// Store of (representation, ontology vector) pairs used as the comparison
/// population for neighborhood alignment. The reference configuration is a
/// bank prefilled with the whole training set and then frozen; the online
/// variant appends FIFO up to its capacity.
class memory_bank {
public:
    struct entry {
        representation_vector rep;
        ontology_vector ont;
    };

    static memory_bank prefill(std::vector<entry> entries) {
        if (entries.empty()) throw std::invalid_argument("memory_bank: prefill with no entries");
        memory_bank bank(entries.size(), true);
        for (auto& e : entries) bank.push_checked(std::move(e));
        return bank;
    }

    static memory_bank online(std::size_t capacity) {
        if (capacity == 0) throw std::invalid_argument("memory_bank: zero capacity");
        return memory_bank(capacity, false);
    }

    void append(entry e) {
        if (frozen_) throw std::logic_error("memory_bank: cannot append to a frozen bank");
        if (entries_.size() == capacity_) entries_.pop_front();
        push_checked(std::move(e));
    }

    bool frozen() const { return frozen_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    const entry& at(std::size_t i) const { return entries_[i]; }
    std::size_t rep_dimension() const { return rep_dim_; }
    std::size_t ont_dimension() const { return ont_dim_; }

private:
    memory_bank(std::size_t capacity, bool frozen) : capacity_(capacity), frozen_(frozen) {}

    void push_checked(entry e) {
        if (!all_finite(e.rep.values) || l2_norm(e.rep.values) == 0.0)
            throw std::invalid_argument("memory_bank: representation '" + e.rep.example_id +
                                        "' must be finite with nonzero norm");
        if (entries_.empty() && rep_dim_ == 0) {
            rep_dim_ = e.rep.values.size();
            ont_dim_ = e.ont.dimension();
        }
        if (e.rep.values.size() != rep_dim_ || e.ont.dimension() != ont_dim_)
            throw std::invalid_argument("memory_bank: dimension mismatch for '" +
                                        e.rep.example_id + "'");
        entries_.push_back(std::move(e));
    }

    std::size_t capacity_;
    bool frozen_;
    std::size_t rep_dim_ = 0;
    std::size_t ont_dim_ = 0;
    std::deque<entry> entries_;
};

inline memory_bank prefill_bank(std::vector<memory_bank::entry> entries) {
    return memory_bank::prefill(std::move(entries));
}

inline double representation_similarity(const representation_vector& a,
                                        const representation_vector& b) {
    if (a.values.size() != b.values.size())
        throw std::invalid_argument("representation_similarity: dimension mismatch");
    double na = l2_norm(a.values);
    double nb = l2_norm(b.values);
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("representation_similarity: zero-norm vector");
    return dot(a.values, b.values) / (na * nb);
}

/// Softmax over cosine similarities to every bank entry, at temperature tau.
inline neighborhood_distribution rep_neighborhood(const representation_vector& h,
                                                  const memory_bank& bank, double tau) {
    if (bank.size() == 0) throw std::invalid_argument("rep_neighborhood: empty bank");
    if (!(tau > 0.0)) throw std::invalid_argument("rep_neighborhood: tau must be > 0");
    const std::size_t m = bank.size();
    std::vector<double> logits(m);
    for (std::size_t j = 0; j < m; ++j)
        logits[j] = representation_similarity(h, bank.at(j).rep) / tau;
    double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        denom += l;
    }
    neighborhood_distribution d;
    d.probs.resize(m);
    for (std::size_t j = 0; j < m; ++j) d.probs[j] = logits[j] / denom;
    return d;
}

/// Target similarities to every bank entry, normalized to a distribution.
/// When every similarity is zero there is no usable neighborhood signal and
/// the distribution falls back to uniform.
inline neighborhood_distribution ont_neighborhood(const ontology_vector& o,
                                                  const memory_bank& bank,
                                                  const prior_matrix& prior, double eps0) {
    if (bank.size() == 0) throw std::invalid_argument("ont_neighborhood: empty bank");
    const std::size_t m = bank.size();
    neighborhood_distribution d;
    d.probs.resize(m);
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        d.probs[j] = target_similarity(o, bank.at(j).ont, prior);
        total += d.probs[j];
    }
    if (total == 0.0) {
        std::fill(d.probs.begin(), d.probs.end(), 1.0 / static_cast<double>(m));
        return d;
    }
    double renorm = 0.0;
    for (double& p : d.probs) {
        p /= total + eps0;
        renorm += p;
    }
    for (double& p : d.probs) p /= renorm;
    return d;
}

/// Pairwise transport cost over bank entries: one minus target similarity.
inline matrix transport_cost(const memory_bank& bank, const prior_matrix& prior) {
    if (bank.size() == 0) throw std::invalid_argument("transport_cost: empty bank");
    const std::size_t m = bank.size();
    matrix c(m, m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t k = j; k < m; ++k) {
            double t = target_similarity(bank.at(j).ont, bank.at(k).ont, prior);
            c(j, k) = 1.0 - t;
            c(k, j) = 1.0 - t;
        }
    }
    return c;
}

struct transport_problem {
    neighborhood_distribution p;
    neighborhood_distribution q;
    matrix cost;
};

struct sinkhorn_result {
    double cost = 0.0;  // sharp transport value <plan, cost>, entropy term excluded
    matrix plan;
    std::vector<double> f;  // dual potential on the p side
    std::vector<double> g;  // dual potential on the q side
    std::size_t iterations = 0;
    double residual = 0.0;
};

class sinkhorn_error : public std::runtime_error {
public:
    sinkhorn_error(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

namespace detail {

inline void check_transport_inputs(const transport_problem& prob, double reg) {
    const std::size_t n = prob.p.size(), m = prob.q.size();
    if (n == 0 || m == 0) throw std::invalid_argument("sinkhorn: empty marginal");
    if (prob.cost.rows() != n || prob.cost.cols() != m)
        throw std::invalid_argument("sinkhorn: cost shape does not match marginals");
    if (!(reg > 0.0)) throw std::invalid_argument("sinkhorn: regularization must be > 0");
    if (!all_finite(prob.p.probs) || !all_finite(prob.q.probs) || !all_finite(prob.cost.data()))
        throw std::invalid_argument("sinkhorn: non-finite input");
    if (!prob.p.valid(1e-6) || !prob.q.valid(1e-6))
        throw std::invalid_argument("sinkhorn: marginals must be nonnegative and sum to 1");
}

// One stage of log-domain iterations at a fixed regularization. Updates f
// and g in place; returns the column-marginal residual (row marginals are
// exact after each f-update by construction).
inline double sinkhorn_stage(const transport_problem& prob, double reg, std::size_t max_iters,
                             double tolerance, std::vector<double>& f, std::vector<double>& g,
                             std::size_t& iters_done) {
    const std::size_t n = prob.p.size(), m = prob.q.size();
    const double neg_inf = -std::numeric_limits<double>::infinity();
    std::vector<double> lp(n), lq(m), terms;
    for (std::size_t i = 0; i < n; ++i)
        lp[i] = prob.p.probs[i] > 0.0 ? std::log(prob.p.probs[i]) : neg_inf;
    for (std::size_t j = 0; j < m; ++j)
        lq[j] = prob.q.probs[j] > 0.0 ? std::log(prob.q.probs[j]) : neg_inf;

    double residual = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < max_iters; ++it) {
        ++iters_done;
        terms.assign(n, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < n; ++i) terms[i] = (f[i] - prob.cost(i, j)) / reg;
            double lse = log_sum_exp(terms);
            g[j] = std::isfinite(lq[j]) ? reg * (lq[j] - lse) : neg_inf;
        }
        terms.assign(m, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) terms[j] = (g[j] - prob.cost(i, j)) / reg;
            double lse = log_sum_exp(terms);
            f[i] = std::isfinite(lp[i]) ? reg * (lp[i] - lse) : neg_inf;
        }
        residual = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double e = f[i] + g[j] - prob.cost(i, j);
                if (std::isfinite(e)) col += std::exp(e / reg);
            }
            residual = std::max(residual, std::fabs(col - prob.q.probs[j]));
        }
        if (residual <= tolerance) break;
    }
    return residual;
}

}  // namespace detail

/// Entropically regularized optimal transport between p and q under the
/// given cost. Runs stabilized log-domain iterations; for small
/// regularization the duals are warmed up with a short geometric
/// eps-scaling schedule before the final stage, which is bounded by
/// max_iters. The reported cost is the sharp value <plan, cost>.
inline sinkhorn_result sinkhorn(const transport_problem& prob, double reg,
                                std::size_t max_iters = 200, double tolerance = 1e-6) {
    detail::check_transport_inputs(prob, reg);
    const std::size_t n = prob.p.size(), m = prob.q.size();

    sinkhorn_result res;
    res.f.assign(n, 0.0);
    res.g.assign(m, 0.0);

    if (reg < 0.05) {
        double stage_reg = 0.5;
        while (stage_reg > reg) {
            detail::sinkhorn_stage(prob, stage_reg, 200, tolerance, res.f, res.g,
                                   res.iterations);
            stage_reg *= 0.7;
        }
    }
    res.residual =
        detail::sinkhorn_stage(prob, reg, max_iters, tolerance, res.f, res.g, res.iterations);
    if (!(res.residual <= tolerance))
        throw sinkhorn_error("sinkhorn: no convergence after " + std::to_string(res.iterations) +
                                 " iterations (residual " + std::to_string(res.residual) + ")",
                             res.residual);

    res.plan = matrix(n, m, 0.0);
    double sharp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double e = res.f[i] + res.g[j] - prob.cost(i, j);
            if (std::isfinite(e)) {
                double t = std::exp(e / reg);
                res.plan(i, j) = t;
                sharp += t * prob.cost(i, j);
            }
        }
    }
    res.cost = sharp;
    return res;
}

/// Gradient of the sharp transport cost with respect to p, obtained by
/// implicit differentiation of the converged plan through the marginal
/// constraints, then centered onto the zero-sum tangent space of the
/// simplex. Requires strictly positive p (softmax neighborhoods always
/// satisfy this).
inline std::vector<double> sinkhorn_gradient(const transport_problem& prob, double reg,
                                             std::size_t max_iters = 200,
                                             double tolerance = 1e-6) {
    sinkhorn_result res = sinkhorn(prob, reg, max_iters, tolerance);
    const std::size_t n = prob.p.size(), m = prob.q.size();
    for (double pi : prob.p.probs)
        if (!(pi > 0.0))
            throw std::invalid_argument("sinkhorn_gradient: p must be strictly positive");

    const matrix& t = res.plan;
    std::vector<double> u(n, 0.0), v(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double w = t(i, j) * prob.cost(i, j);
            u[i] += w;
            v[j] += w;
        }
    }

    // K = diag(q) - T' diag(1/p) T is symmetric PSD with the constant vector
    // in its kernel; a rank-one shift makes it definite without disturbing
    // the zero-mean solution component.
    matrix k(m, m, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a; b < m; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += t(i, a) * t(i, b) / prob.p.probs[i];
            k(a, b) = (a == b ? prob.q.probs[a] : 0.0) - s;
            k(b, a) = k(a, b);
        }
    }
    double shift = 0.0;
    for (std::size_t a = 0; a < m; ++a) shift += k(a, a);
    shift = std::max(shift / static_cast<double>(m), 1e-12);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) k(a, b) += shift;

    std::vector<double> rhs(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += t(i, j) * u[i] / prob.p.probs[i];
        rhs[j] = v[j] - s;
    }
    std::vector<double> w = solve_linear(k, rhs);

    std::vector<double> grad(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double tw = 0.0;
        for (std::size_t j = 0; j < m; ++j) tw += t(i, j) * w[j];
        grad[i] = (u[i] - tw) / prob.p.probs[i];
    }
    double mean = 0.0;
    for (double gidx : grad) mean += gidx;
    mean /= static_cast<double>(n);
    for (double& gidx : grad) gidx -= mean;
    return grad;
}

struct training_loss_breakdown {
    double sft_loss = 0.0;
    double ont_loss = 0.0;
    double total = 0.0;
};

inline training_loss_breakdown total_loss(double sft_loss, double ont_loss, double lambda_ont) {
    if (!std::isfinite(sft_loss) || !std::isfinite(ont_loss) || !std::isfinite(lambda_ont))
        throw std::invalid_argument("total_loss: non-finite input");
    training_loss_breakdown b;
    b.sft_loss = sft_loss;
    b.ont_loss = ont_loss;
    b.total = sft_loss + lambda_ont * ont_loss;
    return b;
}

/// True when the bank is ready to supply alignment neighborhoods: frozen
/// banks always are, online banks once min_fill_fraction of capacity is met.
inline bool alignment_active(const memory_bank& bank, const alignment_config& cfg) {
    if (bank.frozen()) return bank.size() > 0;
    double fill = static_cast<double>(bank.size()) / static_cast<double>(bank.capacity());
    return fill >= cfg.min_fill_fraction;
}

/// Mean sharp Sinkhorn cost over the batch, with each example's
/// representation neighborhood transported onto its ontology neighborhood
/// under the bank-wide cost matrix. Inactive banks contribute zero.
/// Per-example costs may be computed on several threads; the mean is
/// accumulated in input order, so the result does not depend on workers.
inline double alignment_loss(
    const std::vector<std::pair<representation_vector, ontology_vector>>& batch,
    const memory_bank& bank, const prior_matrix& prior, const alignment_config& cfg,
    std::size_t workers = 1) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("alignment_loss: empty batch");
    if (bank.size() == 0) throw std::invalid_argument("alignment_loss: empty bank");
    if (!alignment_active(bank, cfg)) return 0.0;

    matrix cost = transport_cost(bank, prior);
    std::vector<double> losses(batch.size(), 0.0);
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= batch.size()) return;
            try {
                transport_problem prob;
                prob.p = rep_neighborhood(batch[i].first, bank, cfg.tau);
                prob.q = ont_neighborhood(batch[i].second, bank, prior, cfg.eps0);
                prob.cost = cost;
                losses[i] = sinkhorn(prob, cfg.sinkhorn_reg, cfg.max_iters, cfg.tolerance).cost;
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                next.store(batch.size());
                return;
            }
        }
    };
    if (workers <= 1 || batch.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, batch.size()); ++w)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(batch.size());
}

}  // namespace eppc
