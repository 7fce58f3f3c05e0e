#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "eppc/ot.hpp"
#include "oracles.hpp"

using namespace eppc;

namespace {

memory_bank two_entry_bank() {
    return prefill_bank({
        {{{1.0, 0.0}, "a"}, {{1.0, 0.0, 0.0}}},
        {{{0.0, 1.0}, "b"}, {{0.0, 1.0, 0.0}}},
    });
}

double max_marginal_residual(const sinkhorn_result& res, const transport_problem& prob) {
    double worst = 0.0;
    for (std::size_t i = 0; i < prob.p.size(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < prob.q.size(); ++j) row += res.plan(i, j);
        worst = std::max(worst, std::fabs(row - prob.p.probs[i]));
    }
    for (std::size_t j = 0; j < prob.q.size(); ++j) {
        double col = 0.0;
        for (std::size_t i = 0; i < prob.p.size(); ++i) col += res.plan(i, j);
        worst = std::max(worst, std::fabs(col - prob.q.probs[j]));
    }
    return worst;
}

}  // namespace

TEST_CASE("representation similarity is cosine") {
    representation_vector a{{1.0, 1.0}, "a"};
    representation_vector b{{1.0, 0.0}, "b"};
    REQUIRE(representation_similarity(a, a) == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(representation_similarity(b, {{0.0, 1.0}, "c"}) == 0.0);
    REQUIRE(representation_similarity(a, b) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    REQUIRE_THROWS_AS(representation_similarity(a, {{0.0, 0.0}, "z"}), std::invalid_argument);
    REQUIRE_THROWS_AS(representation_similarity(a, {{1.0}, "w"}), std::invalid_argument);
}

TEST_CASE("rep_neighborhood softmax") {
    memory_bank bank = two_entry_bank();

    SECTION("equal similarities give the uniform distribution") {
        representation_vector h{{1.0, 1.0}, "q"};
        auto d = rep_neighborhood(h, bank, 0.5);
        REQUIRE(d.probs[0] == Catch::Approx(0.5).epsilon(1e-12));
        REQUIRE(d.probs[1] == Catch::Approx(0.5).epsilon(1e-12));
    }
    SECTION("similarities one and zero at unit temperature") {
        representation_vector h{{1.0, 0.0}, "q"};
        auto d = rep_neighborhood(h, bank, 1.0);
        double e = std::exp(1.0);
        REQUIRE(d.probs[0] == Catch::Approx(e / (e + 1.0)).epsilon(1e-9));
        REQUIRE(d.probs[1] == Catch::Approx(1.0 / (e + 1.0)).epsilon(1e-9));
    }
    SECTION("small temperature concentrates mass on the argmax") {
        representation_vector h{{1.0, 0.0}, "q"};
        auto d = rep_neighborhood(h, bank, 0.01);
        REQUIRE(d.probs[0] >= 0.999);
    }
    SECTION("distributions are valid") {
        representation_vector h{{0.3, 0.9}, "q"};
        REQUIRE(rep_neighborhood(h, bank, 0.1).valid());
    }
    SECTION("empty banks and bad temperatures are rejected") {
        representation_vector h{{1.0, 0.0}, "q"};
        REQUIRE_THROWS_AS(rep_neighborhood(h, bank, 0.0), std::invalid_argument);
    }
}

TEST_CASE("ont_neighborhood normalizes target similarities") {
    prior_matrix id = matrix::identity(3);

    SECTION("equal similarities") {
        memory_bank bank = two_entry_bank();
        ontology_vector o{{1.0, 1.0, 0.0}};
        auto d = ont_neighborhood(o, bank, id, 1e-8);
        REQUIRE(d.probs[0] == Catch::Approx(0.5).epsilon(1e-9));
        REQUIRE(d.probs[1] == Catch::Approx(0.5).epsilon(1e-9));
        REQUIRE(d.valid());
    }
    SECTION("0.8 / 0.2 similarity split") {
        // Binary bank entries engineered so the identity-prior target
        // similarities to the query are 4/5 and 1/5: five active labels per
        // side sharing four and one label respectively.
        prior_matrix id10 = matrix::identity(10);
        ontology_vector share4{{1, 1, 1, 1, 0, 1, 0, 0, 0, 0}};
        ontology_vector share1{{0, 0, 0, 0, 1, 0, 1, 1, 1, 1}};
        memory_bank bank = prefill_bank({
            {{{1.0, 0.0}, "a"}, share4},
            {{{0.0, 1.0}, "b"}, share1},
        });
        ontology_vector o{{1, 1, 1, 1, 1, 0, 0, 0, 0, 0}};
        auto d = ont_neighborhood(o, bank, id10, 1e-8);
        REQUIRE(std::fabs(d.probs[0] - 0.8) <= 1e-7);
        REQUIRE(std::fabs(d.probs[1] - 0.2) <= 1e-7);
    }
    SECTION("all-zero similarities fall back to uniform") {
        memory_bank bank = two_entry_bank();
        ontology_vector o{{0.0, 0.0, 1.0}};
        auto d = ont_neighborhood(o, bank, id, 1e-8);
        REQUIRE(d.probs[0] == 0.5);
        REQUIRE(d.probs[1] == 0.5);
    }
}

TEST_CASE("transport_cost is one minus target similarity") {
    prior_matrix id = matrix::identity(3);

    SECTION("identical ontology vectors make every cost zero") {
        memory_bank bank = prefill_bank({
            {{{1.0, 0.0}, "a"}, {{1.0, 1.0, 0.0}}},
            {{{0.0, 1.0}, "b"}, {{1.0, 1.0, 0.0}}},
        });
        matrix c = transport_cost(bank, id);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) REQUIRE(c(i, j) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("disjoint vectors cost one off the diagonal") {
        memory_bank bank = two_entry_bank();
        matrix c = transport_cost(bank, id);
        REQUIRE(c(0, 1) == 1.0);
        REQUIRE(c(1, 0) == 1.0);
        REQUIRE(c(0, 0) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("a 0.70711 similarity pair costs 0.29289") {
        memory_bank bank = prefill_bank({
            {{{1.0, 0.0}, "a"}, {{1.0, 1.0, 0.0}}},
            {{{0.0, 1.0}, "b"}, {{1.0, 0.0, 0.0}}},
        });
        matrix c = transport_cost(bank, id);
        REQUIRE(c(0, 1) == Catch::Approx(1.0 - 1.0 / std::sqrt(2.0)).epsilon(1e-9));
    }
}

TEST_CASE("sinkhorn on a zero cost matrix") {
    transport_problem prob;
    prob.p.probs = {0.3, 0.7};
    prob.q.probs = {0.6, 0.4};
    prob.cost = matrix(2, 2, 0.0);
    auto res = sinkhorn(prob, 0.05, 5000, 1e-9);
    REQUIRE(res.cost == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(max_marginal_residual(res, prob) <= 1e-8);
}

TEST_CASE("sinkhorn with degenerate marginals forces the plan") {
    transport_problem prob;
    prob.p.probs = {1.0, 0.0};
    prob.q.probs = {0.0, 1.0};
    prob.cost = matrix(2, 2, 0.0);
    prob.cost(0, 1) = 1.0;
    prob.cost(1, 0) = 1.0;
    auto res = sinkhorn(prob, 0.1, 5000, 1e-9);
    REQUIRE(res.cost == Catch::Approx(1.0).epsilon(1e-9));
    REQUIRE(res.plan(0, 1) == Catch::Approx(1.0).epsilon(1e-9));
    REQUIRE(res.plan(0, 0) == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(res.plan(1, 0) == 0.0);
    REQUIRE(res.plan(1, 1) == 0.0);
}

TEST_CASE("sharp sinkhorn approaches the exact LP value") {
    std::mt19937 rng(17);
    auto prob = oracle::random_problem(rng, 5, 5);
    double lp = oracle::transport_lp(prob.p.probs, prob.q.probs, prob.cost);
    auto res = sinkhorn(prob, 1e-3, 200000, 1e-9);
    REQUIRE(std::fabs(res.cost - lp) <= 1e-3);
}

TEST_CASE("sharp cost is monotone toward the LP value as regularization shrinks") {
    std::mt19937 rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        auto prob = oracle::random_problem(rng, 4, 4);
        double lp = oracle::transport_lp(prob.p.probs, prob.q.probs, prob.cost);
        double c1 = sinkhorn(prob, 0.1, 200000, 1e-9).cost;
        double c2 = sinkhorn(prob, 0.01, 200000, 1e-9).cost;
        double c3 = sinkhorn(prob, 0.001, 400000, 1e-9).cost;
        REQUIRE(c1 >= c2 - 1e-6);
        REQUIRE(c2 >= c3 - 1e-6);
        REQUIRE(c3 >= lp - 1e-6);
    }
}

TEST_CASE("sinkhorn rejects invalid input and reports non-convergence") {
    transport_problem prob;
    prob.p.probs = {0.5, 0.5};
    prob.q.probs = {0.5, 0.5};
    prob.cost = matrix(2, 2, 0.5);

    REQUIRE_THROWS_AS(sinkhorn(prob, 0.0), std::invalid_argument);

    transport_problem nan_prob = prob;
    nan_prob.cost(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(sinkhorn(nan_prob, 0.1), std::invalid_argument);

    transport_problem bad_marginal = prob;
    bad_marginal.p.probs = {0.9, 0.4};
    REQUIRE_THROWS_AS(sinkhorn(bad_marginal, 0.1), std::invalid_argument);

    std::mt19937 rng(31);
    auto hard = oracle::random_problem(rng, 4, 4);
    try {
        sinkhorn(hard, 0.05, 1, 1e-14);
        FAIL("expected non-convergence");
    } catch (const sinkhorn_error& e) {
        REQUIRE(std::isfinite(e.residual()));
        REQUIRE(e.residual() > 1e-14);
    }
}

TEST_CASE("log-domain iterations never produce NaN on bounded costs") {
    std::mt19937 rng(37);
    for (double reg : {1e-4, 1e-3, 1e-2}) {
        for (int trial = 0; trial < 10; ++trial) {
            auto prob = oracle::random_problem(rng, 4, 4);
            try {
                auto res = sinkhorn(prob, reg, 300, 1e-9);
                REQUIRE(std::isfinite(res.cost));
                for (double v : res.plan.data()) REQUIRE(std::isfinite(v));
            } catch (const sinkhorn_error& e) {
                REQUIRE(std::isfinite(e.residual()));
            }
        }
    }
}

TEST_CASE("converged plans satisfy both marginals") {
    std::mt19937 rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        auto prob = oracle::random_problem(rng, 5, 5);
        auto res = sinkhorn(prob, 0.05, 100000, 1e-7);
        REQUIRE(max_marginal_residual(res, prob) <= 1e-6);
    }
}

TEST_CASE("gradient vanishes on a fully symmetric problem") {
    // Uniform marginals with an exchange-invariant cost: every direction is
    // equivalent, so the centered gradient must be zero.
    transport_problem prob;
    prob.p.probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    prob.q.probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    prob.cost = matrix(3, 3, 0.7);
    for (std::size_t i = 0; i < 3; ++i) prob.cost(i, i) = 0.0;
    auto grad = sinkhorn_gradient(prob, 0.1, 20000, 1e-11);
    for (double g : grad) REQUIRE(std::fabs(g) <= 1e-8);
}

TEST_CASE("gradient matches central finite differences") {
    std::mt19937 rng(43);
    for (int trial = 0; trial < 10; ++trial) {
        auto prob = oracle::random_problem(rng, 4, 4);
        double reg = 0.1;
        auto grad = sinkhorn_gradient(prob, reg, 500000, 1e-13);
        auto fd = oracle::fd_sharp_gradient(prob, reg);
        double scale = 0.0;
        for (double g : fd) scale = std::max(scale, std::fabs(g));
        for (std::size_t i = 0; i < grad.size(); ++i) {
            double denom = std::max(std::fabs(fd[i]), 1e-3 * scale);
            REQUIRE(std::fabs(grad[i] - fd[i]) / denom <= 1e-4);
        }
    }
}

TEST_CASE("gradients align across shrinking regularization") {
    std::mt19937 rng(47);
    auto prob = oracle::random_problem(rng, 3, 3);
    auto coarse = sinkhorn_gradient(prob, 0.01, 2000000, 1e-10);
    auto fine = sinkhorn_gradient(prob, 1e-4, 5000000, 1e-10);
    double dot = 0.0, nc = 0.0, nf = 0.0;
    for (std::size_t i = 0; i < coarse.size(); ++i) {
        dot += coarse[i] * fine[i];
        nc += coarse[i] * coarse[i];
        nf += fine[i] * fine[i];
    }
    REQUIRE(dot / std::sqrt(nc * nf) >= 0.99);
}

TEST_CASE("neighborhood distributions are always valid") {
    std::mt19937 rng(59);
    prior_matrix id = matrix::identity(6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<memory_bank::entry> entries;
        std::size_t m = 1 + rng() % 8;
        for (std::size_t i = 0; i < m; ++i) {
            representation_vector rep;
            rep.example_id = "e" + std::to_string(i);
            for (int d = 0; d < 3; ++d)
                rep.values.push_back(oracle::uniform01(rng) * 2.0 - 1.0);
            if (l2_norm(rep.values) == 0.0) rep.values[0] = 0.5;
            ontology_vector ont;
            ont.bits.assign(6, 0.0);
            for (int b = 0; b < 6; ++b) ont.bits[b] = rng() % 3 == 0 ? 1.0 : 0.0;
            entries.push_back({rep, ont});
        }
        memory_bank bank = prefill_bank(entries);
        representation_vector q{{oracle::uniform01(rng) + 0.1, oracle::uniform01(rng),
                                 oracle::uniform01(rng)},
                                "q"};
        ontology_vector o;
        o.bits.assign(6, 0.0);
        for (int b = 0; b < 6; ++b) o.bits[b] = rng() % 4 == 0 ? 1.0 : 0.0;
        REQUIRE(rep_neighborhood(q, bank, 0.1).valid());
        REQUIRE(ont_neighborhood(o, bank, id, 1e-8).valid());
    }
}

TEST_CASE("total_loss composes exactly") {
    auto b = total_loss(1.0, 0.5, 0.5);
    REQUIRE(b.total == 1.25);
    REQUIRE(b.sft_loss == 1.0);
    REQUIRE(b.ont_loss == 0.5);

    auto off = total_loss(0.8, 123.0, 0.0);
    REQUIRE(off.total == 0.8);

    REQUIRE_THROWS_AS(total_loss(std::numeric_limits<double>::infinity(), 0.0, 0.5),
                      std::invalid_argument);

    alignment_config defaults;
    REQUIRE(defaults.lambda_ont == 0.5);
    REQUIRE(defaults.sinkhorn_reg == 0.01);
}

TEST_CASE("prefill_bank freezes at the example count") {
    std::mt19937 rng(53);
    std::vector<memory_bank::entry> entries;
    for (int i = 0; i < 607; ++i) {
        representation_vector rep;
        rep.example_id = "ex" + std::to_string(i);
        for (int d = 0; d < 8; ++d) rep.values.push_back(oracle::uniform01(rng) + 0.01);
        ontology_vector ont;
        ont.bits.assign(6, 0.0);
        ont.bits[i % 6] = 1.0;
        entries.push_back({rep, ont});
    }
    memory_bank bank = prefill_bank(entries);
    REQUIRE(bank.size() == 607);
    REQUIRE(bank.capacity() == 607);
    REQUIRE(bank.frozen());
    REQUIRE_THROWS_AS(bank.append(entries.front()), std::logic_error);

    auto d = rep_neighborhood(entries.front().rep, bank, 0.1);
    REQUIRE(d.valid());
}

TEST_CASE("single-entry banks give degenerate neighborhoods") {
    memory_bank bank = prefill_bank({{{{1.0, 2.0}, "only"}, {{1.0, 0.0}}}});
    REQUIRE(bank.size() == 1);
    auto d = rep_neighborhood({{0.5, 0.5}, "q"}, bank, 0.1);
    REQUIRE(d.probs.size() == 1);
    REQUIRE(d.probs[0] == 1.0);
}

TEST_CASE("prefill rejects inconsistent or empty input") {
    REQUIRE_THROWS_AS(prefill_bank({}), std::invalid_argument);
    REQUIRE_THROWS_AS(prefill_bank({
                          {{{1.0, 0.0}, "a"}, {{1.0}}},
                          {{{1.0, 0.0, 3.0}, "b"}, {{1.0}}},
                      }),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(prefill_bank({{{{0.0, 0.0}, "zero"}, {{1.0}}}}), std::invalid_argument);
}

TEST_CASE("online banks append FIFO and gate alignment activity") {
    memory_bank bank = memory_bank::online(3);
    REQUIRE_FALSE(bank.frozen());
    alignment_config cfg;
    REQUIRE_FALSE(alignment_active(bank, cfg));

    for (int i = 0; i < 5; ++i) {
        representation_vector rep{{1.0, static_cast<double>(i)}, "e" + std::to_string(i)};
        bank.append({rep, {{1.0, 0.0}}});
    }
    REQUIRE(bank.size() == 3);
    REQUIRE(bank.at(0).rep.example_id == "e2");  // the two oldest entries were evicted
    REQUIRE(alignment_active(bank, cfg));
}

TEST_CASE("alignment_loss on coinciding neighborhoods and zero costs") {
    // All bank labels identical: the cost matrix vanishes and so does the loss.
    memory_bank bank = prefill_bank({
        {{{1.0, 0.0}, "a"}, {{1.0, 1.0, 0.0}}},
        {{{0.0, 1.0}, "b"}, {{1.0, 1.0, 0.0}}},
    });
    prior_matrix id = matrix::identity(3);
    alignment_config cfg;
    std::vector<std::pair<representation_vector, ontology_vector>> batch{
        {{{1.0, 0.0}, "a"}, {{1.0, 1.0, 0.0}}}};
    REQUIRE(alignment_loss(batch, bank, id, cfg) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("alignment_loss is the mean of per-example losses and nonnegative") {
    memory_bank bank = prefill_bank({
        {{{1.0, 0.1}, "a"}, {{1.0, 0.0, 1.0, 0.0}}},
        {{{0.1, 1.0}, "b"}, {{0.0, 1.0, 0.0, 1.0}}},
        {{{0.7, 0.7}, "c"}, {{1.0, 1.0, 0.0, 0.0}}},
    });
    prior_matrix id = matrix::identity(4);
    alignment_config cfg;
    cfg.max_iters = 50000;

    std::pair<representation_vector, ontology_vector> x{{{0.9, 0.2}, "x"}, {{1.0, 0.0, 1.0, 0.0}}};
    std::pair<representation_vector, ontology_vector> y{{{0.2, 0.9}, "y"}, {{0.0, 1.0, 0.0, 1.0}}};

    double lx = alignment_loss({x}, bank, id, cfg);
    double ly = alignment_loss({y}, bank, id, cfg);
    double both = alignment_loss({x, y}, bank, id, cfg);
    REQUIRE(lx >= 0.0);
    REQUIRE(ly >= 0.0);
    REQUIRE(both == Catch::Approx((lx + ly) / 2.0).epsilon(1e-12));

    REQUIRE_THROWS_AS(alignment_loss({}, bank, id, cfg), std::invalid_argument);
}

TEST_CASE("alignment_loss is invariant under uniform rescaling of representations") {
    memory_bank bank = prefill_bank({
        {{{1.0, 0.1, 0.3}, "a"}, {{1.0, 0.0, 1.0}}},
        {{{0.1, 1.0, 0.2}, "b"}, {{0.0, 1.0, 1.0}}},
        {{{0.4, 0.4, 0.9}, "c"}, {{1.0, 1.0, 0.0}}},
    });
    memory_bank scaled_bank = prefill_bank({
        {{{3.7, 0.37, 1.11}, "a"}, {{1.0, 0.0, 1.0}}},
        {{{0.37, 3.7, 0.74}, "b"}, {{0.0, 1.0, 1.0}}},
        {{{1.48, 1.48, 3.33}, "c"}, {{1.0, 1.0, 0.0}}},
    });
    prior_matrix id = matrix::identity(3);
    alignment_config cfg;
    cfg.max_iters = 50000;

    std::pair<representation_vector, ontology_vector> x{{{0.9, 0.2, 0.1}, "x"},
                                                        {{1.0, 0.0, 1.0}}};
    std::pair<representation_vector, ontology_vector> sx{{{3.33, 0.74, 0.37}, "x"},
                                                         {{1.0, 0.0, 1.0}}};
    double base = alignment_loss({x}, bank, id, cfg);
    double scaled = alignment_loss({sx}, scaled_bank, id, cfg);
    REQUIRE(std::fabs(base - scaled) <= 1e-12);
}
