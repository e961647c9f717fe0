#include <doctest.h>

#include <cmath>
#include <random>

#include "diqre/io.hpp"
#include "diqre/pef_optimizer.hpp"

using namespace diqre;

namespace {

const HighPrec kAlpha("1.000001172");
const double kPaperQ = 1.0 / 8376;

JointDistribution training_joint() {
    return io::joint_from_json(io::load_json(DIQRE_DATA_DIR "/training_distribution.json"), 1e-9);
}

EstimationFactor reference_factor() { return io::factor_from_json(io::load_json(DIQRE_DATA_DIR "/reference_pef.json")); }

}  // namespace

TEST_CASE("constraint value of constant factors") {
    const auto P = build_polytope();
    const auto mu = spot_checking_input(0.3);
    const auto one = uniform_factor(1.0, kAlpha);
    const auto two = uniform_factor(2.0, kAlpha);
    for (int d = 0; d < 16; ++d) {
        CHECK(pef_constraint_value(one, deterministic_behavior(d), mu) == 1);
        CHECK(pef_constraint_value(two, deterministic_behavior(d), mu) == 2);
    }
    // PR mixtures have non-trivial conditionals and sit strictly below 1
    for (std::size_t k = 0; k < P.size(); ++k)
        if (P.provenance[k].kind == VertexKind::PrMixture) CHECK(pef_constraint_value(one, P.vertices[k], mu) < 1);
}

TEST_CASE("factor validation") {
    auto F = uniform_factor(1.0, kAlpha);
    CHECK_NOTHROW(F.validate());
    F.values[3] = -1;
    CHECK_THROWS_AS(F.validate(), ParameterError);
    F = uniform_factor(1.0, HighPrec(1));
    CHECK_THROWS_AS(F.validate(), ParameterError);
    F = uniform_factor(1.0, kAlpha);
    F.kind = FactorKind::QEF;
    F.rescale_bound = HighPrec("0.999");
    CHECK_THROWS_AS(F.validate(), ParameterError);
}

TEST_CASE("reference factor against the ideal constraints") {
    const auto P = build_polytope();
    const auto F = reference_factor();
    const auto rep = verify_feasibility(F, P, {spot_checking_input(kPaperQ)});
    MESSAGE("reference worst constraint: " << static_cast<double>(rep.worst_constraint - 1));
    CHECK(rep.per_vertex.size() == 80);
    // Rate of the reference factor on the training distribution.
    CHECK(std::abs(pef_rate(F, training_joint()) - 0.0042706) <= 1e-6);
}

TEST_CASE("feasibility shrink") {
    auto F = reference_factor();
    FeasibilityReport r;
    r.worst_constraint = 1;
    CHECK(feasibility_shrink(F, r).values == F.values);
    r.worst_constraint = HighPrec("0.999");
    CHECK(feasibility_shrink(F, r).values == F.values);

    r.worst_constraint = HighPrec("1.000000001");
    const auto G = feasibility_shrink(F, r);
    for (int i = 0; i < 16; ++i) {
        CHECK(G.values[i] <= F.values[i]);
        CHECK(abs(G.values[i] * r.worst_constraint - F.values[i]) < HighPrec("1e-40"));
    }
    const auto nu = training_joint();
    const double drop = std::log2(1.000000001) / F.beta();
    CHECK(std::abs(pef_rate(F, nu) - pef_rate(G, nu) - drop) <= 1e-9);
}

TEST_CASE("optimized factor on the training distribution") {
    const auto P = build_polytope();
    const auto nu = training_joint();
    const auto res = optimize_pef(nu, kAlpha, P, {spot_checking_input(kPaperQ)});
    MESSAGE("rate " << res.rate << " dual " << res.dual_bound << " steps " << res.newton_steps);
    // matches or exceeds the reference factor within 1e-5 relative
    CHECK(res.rate >= pef_rate(reference_factor(), nu) * (1 - 1e-5));
    CHECK(res.dual_bound >= res.rate);
    CHECK(res.report.worst_constraint <= 1);
    CHECK(verify_feasibility(res.F, P, {spot_checking_input(kPaperQ)}).worst_constraint <= 1);
}

TEST_CASE("biased constraint set stays feasible at every extremal input") {
    const auto P = build_polytope();
    const auto nu = training_joint();
    const auto s = build_spot_checking_inputs(kPaperQ, 0.002);
    const std::vector<InputDistribution> mus{s.ideal, s.extremal_low, s.extremal_high};
    const auto res = optimize_pef(nu, kAlpha, P, mus);
    CHECK(res.report.per_vertex.size() == 240);
    for (const auto& v : res.report.per_vertex) CHECK(v <= 1);
    CHECK(res.rate > 0.0041);
}

TEST_CASE("deterministic statistics give no randomness") {
    const auto P = build_polytope();
    const auto mu = spot_checking_input(0.01);
    const auto nu = joint_from(deterministic_behavior(6), mu);
    const auto res = optimize_pef(nu, kAlpha, P, {mu});
    CHECK(std::abs(res.rate) <= 1e-6);
    CHECK(pef_rate(uniform_factor(1.0, kAlpha), nu) == 0.0);

    AlphaScanOptions o;
    const auto scan = scan_alpha(nu, {HighPrec("1.000002"), HighPrec("1.000001"), HighPrec("1.000003")}, P, {mu}, o);
    CHECK(scan.best_entry().alpha == HighPrec("1.000001"));
}

TEST_CASE("alpha scan") {
    const auto P = build_polytope();
    const auto nu = training_joint();
    const auto mu = spot_checking_input(kPaperQ);
    AlphaScanOptions o;
    const auto single = scan_alpha(nu, {HighPrec("1.000001")}, P, {mu}, o);
    CHECK(single.best_entry().alpha == HighPrec("1.000001"));
    CHECK_THROWS_AS(scan_alpha(nu, {}, P, {mu}, o), ParameterError);

    o.r_in = input_entropy_rate(kPaperQ);
    o.horizon = 2.35e11;
    const auto scan = scan_alpha(nu, {HighPrec("1.0000005"), kAlpha, HighPrec("1.000004")}, P, {mu}, o);
    for (const auto& e : scan.table) CHECK(e.objective <= scan.best_entry().objective + o.tie_tol);
    MESSAGE("best alpha-1 " << static_cast<double>(scan.best_entry().alpha - 1));
}

TEST_CASE("vertex mixtures do not exceed the vertex maximum") {
    const auto P = build_polytope();
    const auto mu = spot_checking_input(kPaperQ);
    const auto F = optimize_pef(training_joint(), kAlpha, P, {mu}).F;
    const auto rep = verify_feasibility(F, P, {mu});
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::size_t> pick(0, P.size() - 1);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int t = 0; t < 300; ++t) {
        ConditionalBehavior m;
        double total = 0;
        std::array<double, 4> w;
        std::array<std::size_t, 4> idx;
        for (int k = 0; k < 4; ++k) {
            idx[k] = pick(rng);
            total += (w[k] = U(rng));
        }
        for (int k = 0; k < 4; ++k)
            for (int i = 0; i < 16; ++i) m.p[i] += w[k] / total * P.vertices[idx[k]].p[i];
        CHECK(pef_constraint_value(F, m, mu) <= rep.worst_constraint + HighPrec("1e-9"));
    }
}
