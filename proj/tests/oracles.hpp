// Test-only reference implementations. These stay independent of the library
// code paths they check: the LP solver knows nothing about Sinkhorn, the
// finite-difference oracle only calls the public cost, and the counting
// oracles re-derive voting rules from scratch.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "eppc/ot.hpp"
#include "eppc/text_match.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Dense two-phase simplex with Bland's rule, specialized to the
// transportation polytope: min <T, C> with row sums p and column sums q.
// ---------------------------------------------------------------------------

class simplex_lp {
public:
    // rows: constraints Ax = b (b >= 0 expected); cols: structural variables.
    simplex_lp(std::vector<std::vector<double>> a, std::vector<double> b, std::vector<double> c)
        : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {}

    double solve() {
        const std::size_t k = a_.size();
        const std::size_t n = c_.size();
        const std::size_t total = n + k;  // structural + artificial
        tab_.assign(k, std::vector<double>(total + 1, 0.0));
        basis_.assign(k, 0);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < n; ++j) tab_[i][j] = a_[i][j];
            tab_[i][n + i] = 1.0;
            tab_[i][total] = b_[i];
            basis_[i] = n + i;
        }
        // Phase 1: minimize the sum of artificials.
        std::vector<double> phase1(total, 0.0);
        for (std::size_t j = n; j < total; ++j) phase1[j] = 1.0;
        run(phase1, total, /*allow_artificial=*/true);
        if (objective(phase1) > 1e-7) throw std::runtime_error("simplex: infeasible");
        // Phase 2: original costs; artificials may stay basic at zero but
        // never re-enter.
        std::vector<double> phase2(total, 0.0);
        for (std::size_t j = 0; j < n; ++j) phase2[j] = c_[j];
        run(phase2, n, /*allow_artificial=*/false);
        return objective(phase2);
    }

    std::vector<double> solution(std::size_t n) const {
        std::vector<double> x(n, 0.0);
        for (std::size_t i = 0; i < basis_.size(); ++i)
            if (basis_[i] < n) x[basis_[i]] = tab_[i].back();
        return x;
    }

private:
    double objective(const std::vector<double>& c) const {
        double z = 0.0;
        for (std::size_t i = 0; i < basis_.size(); ++i) z += c[basis_[i]] * tab_[i].back();
        return z;
    }

    void run(const std::vector<double>& c, std::size_t entering_limit, bool allow_artificial) {
        const std::size_t k = tab_.size();
        const std::size_t width = tab_[0].size() - 1;
        for (std::size_t iter = 0; iter < 100000; ++iter) {
            // Reduced costs; Bland: first negative index enters.
            std::size_t enter = width;
            for (std::size_t j = 0; j < width; ++j) {
                if (!allow_artificial && j >= entering_limit) break;
                double r = c[j];
                for (std::size_t i = 0; i < k; ++i) r -= c[basis_[i]] * tab_[i][j];
                if (r < -1e-9) {
                    enter = j;
                    break;
                }
            }
            if (enter == width) return;  // optimal
            // Ratio test; Bland tie-break on the leaving basis variable.
            std::size_t leave = k;
            double best_ratio = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                if (tab_[i][enter] <= 1e-9) continue;
                double ratio = tab_[i].back() / tab_[i][enter];
                if (leave == k || ratio < best_ratio - 1e-12 ||
                    (std::fabs(ratio - best_ratio) <= 1e-12 && basis_[i] < basis_[leave])) {
                    leave = i;
                    best_ratio = ratio;
                }
            }
            if (leave == k) throw std::runtime_error("simplex: unbounded");
            pivot(leave, enter);
        }
        throw std::runtime_error("simplex: iteration limit");
    }

    void pivot(std::size_t row, std::size_t col) {
        double piv = tab_[row][col];
        for (double& v : tab_[row]) v /= piv;
        for (std::size_t i = 0; i < tab_.size(); ++i) {
            if (i == row) continue;
            double f = tab_[i][col];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < tab_[i].size(); ++j) tab_[i][j] -= f * tab_[row][j];
        }
        basis_[row] = col;
    }

    std::vector<std::vector<double>> a_;
    std::vector<double> b_;
    std::vector<double> c_;
    std::vector<std::vector<double>> tab_;
    std::vector<std::size_t> basis_;
};

// Exact optimal-transport value. The last column-sum constraint is dropped
// (it is implied by total mass), keeping the constraint matrix full rank.
inline double transport_lp(const std::vector<double>& p, const std::vector<double>& q,
                           const eppc::matrix& cost) {
    const std::size_t n = p.size(), m = q.size();
    const std::size_t vars = n * m;
    std::vector<std::vector<double>> a;
    std::vector<double> b;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(vars, 0.0);
        for (std::size_t j = 0; j < m; ++j) row[i * m + j] = 1.0;
        a.push_back(std::move(row));
        b.push_back(p[i]);
    }
    for (std::size_t j = 0; j + 1 < m; ++j) {
        std::vector<double> row(vars, 0.0);
        for (std::size_t i = 0; i < n; ++i) row[i * m + j] = 1.0;
        a.push_back(std::move(row));
        b.push_back(q[j]);
    }
    std::vector<double> c(vars, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) c[i * m + j] = cost(i, j);
    return simplex_lp(std::move(a), std::move(b), std::move(c)).solve();
}

// ---------------------------------------------------------------------------
// Finite-difference gradient of the sharp Sinkhorn cost: coordinate
// perturbations re-projected onto the simplex by renormalization, centered
// to the zero-sum tangent space.
// ---------------------------------------------------------------------------

inline std::vector<double> fd_sharp_gradient(const eppc::transport_problem& prob, double reg,
                                             double h = 1e-6) {
    const std::size_t n = prob.p.size();
    auto sharp_at = [&](const std::vector<double>& p) {
        eppc::transport_problem shifted = prob;
        shifted.p.probs = p;
        return eppc::sinkhorn(shifted, reg, 500000, 1e-13).cost;
    };
    std::vector<double> grad(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> plus = prob.p.probs, minus = prob.p.probs;
        plus[i] += h;
        minus[i] -= h;
        for (double& v : plus) v /= 1.0 + h;
        for (double& v : minus) v /= 1.0 - h;
        grad[i] = (sharp_at(plus) - sharp_at(minus)) / (2.0 * h);
    }
    double mean = 0.0;
    for (double g : grad) mean += g;
    mean /= static_cast<double>(n);
    for (double& g : grad) g -= mean;
    return grad;
}

// ---------------------------------------------------------------------------
// Set-overlap oracle for the identity-prior reduction: |intersection| over
// the product of Euclidean norms of binary vectors.
// ---------------------------------------------------------------------------

inline double normalized_overlap(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] && b[i]) ++inter;
        if (a[i]) ++na;
        if (b[i]) ++nb;
    }
    if (na == 0 || nb == 0) return 0.0;
    return static_cast<double>(inter) /
           (std::sqrt(static_cast<double>(na)) * std::sqrt(static_cast<double>(nb)));
}

// ---------------------------------------------------------------------------
// Deterministic random helpers (engine-stable, no distribution objects).
// ---------------------------------------------------------------------------

inline double uniform01(std::mt19937& rng) {
    return (static_cast<double>(rng()) + 0.5) / 4294967296.0;
}

inline std::size_t pick(std::mt19937& rng, std::size_t n) {
    return static_cast<std::size_t>(rng()) % n;
}

// Strictly positive point on the simplex via normalized exponentials.
inline std::vector<double> random_simplex(std::mt19937& rng, std::size_t n) {
    std::vector<double> x(n);
    double total = 0.0;
    for (double& v : x) {
        v = -std::log(uniform01(rng));
        total += v;
    }
    for (double& v : x) v /= total;
    return x;
}

inline eppc::matrix random_cost(std::mt19937& rng, std::size_t n, std::size_t m) {
    eppc::matrix c(n, m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) c(i, j) = uniform01(rng);
    return c;
}

inline eppc::transport_problem random_problem(std::mt19937& rng, std::size_t n, std::size_t m) {
    eppc::transport_problem prob;
    prob.p.probs = random_simplex(rng, n);
    prob.q.probs = random_simplex(rng, m);
    prob.cost = random_cost(rng, n, m);
    return prob;
}

// ---------------------------------------------------------------------------
// Brute-force self-consistency: pair counting plus exhaustive mean-Jaccard
// span selection, re-derived independently of the library implementation.
// ---------------------------------------------------------------------------

struct sc_triplet {
    std::string code, sub, span;
};

inline std::vector<sc_triplet> self_consistency_oracle(
    const std::vector<std::vector<sc_triplet>>& samples) {
    const std::size_t n = samples.size();
    // Deduplicate each sample on exact triplets, preserving order.
    std::vector<std::vector<sc_triplet>> ded(n);
    for (std::size_t s = 0; s < n; ++s) {
        std::set<std::string> seen;
        for (const auto& t : samples[s]) {
            std::string key = t.code + "|" + t.sub + "|" + t.span;
            if (seen.insert(key).second) ded[s].push_back(t);
        }
    }
    // Pairs in first-appearance order.
    std::vector<std::pair<std::string, std::string>> pair_order;
    std::set<std::pair<std::string, std::string>> pair_seen;
    for (std::size_t s = 0; s < n; ++s)
        for (const auto& t : ded[s]) {
            auto key = std::make_pair(t.code, t.sub);
            if (pair_seen.insert(key).second) pair_order.push_back(key);
        }

    std::vector<sc_triplet> out;
    for (const auto& [code, sub] : pair_order) {
        std::size_t votes = 0;
        std::vector<std::string> occurrences;  // spans in (sample, position) order
        for (std::size_t s = 0; s < n; ++s) {
            bool contains = false;
            for (const auto& t : ded[s]) {
                if (t.code == code && t.sub == sub) {
                    contains = true;
                    occurrences.push_back(t.span);
                }
            }
            if (contains) ++votes;
        }
        if (votes * 2 < n) continue;
        double best_mean = -1.0;
        std::string best_span;
        std::set<std::string> tried;
        for (const auto& cand : occurrences) {
            if (!tried.insert(cand).second) continue;
            double total = 0.0;
            for (const auto& other : occurrences) total += eppc::jaccard(cand, other);
            double mean = total / static_cast<double>(occurrences.size());
            if (mean > best_mean) {
                best_mean = mean;
                best_span = cand;
            }
        }
        out.push_back({code, sub, best_span});
    }
    return out;
}

}  // namespace oracle
