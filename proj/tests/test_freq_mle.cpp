#include <doctest.h>

#include <cmath>
#include <random>

#include "diqre/errors.hpp"
#include "diqre/freq_mle.hpp"
#include "diqre/io.hpp"
#include "diqre/quantum_sim.hpp"

using namespace diqre;

namespace {

double loglik(const ConditionalBehavior& p, const JointDistribution& nu) {
    double s = 0;
    for (int i = 0; i < 16; ++i)
        if (p.p[i] > 0) s += p.p[i] * std::log(nu.nu[i]);
    return s;
}

ConditionalBehavior quantum_behavior() {
    DeviceModel m = reference_device();
    m.p_pair = 0.3;
    m.visibility = 0.93;
    return predicted_behavior(m);
}

}  // namespace

TEST_CASE("counts to conditionals") {
    const auto t = io::read_counts_csv(DIQRE_DATA_DIR "/training_counts.csv");
    const auto c = counts_to_conditional(t);
    const double row = 42212881971.0 + 318991793.0 + 275003068.0 + 629231576.0;
    CHECK(c.at(0, 0, 0, 0) == doctest::Approx(42212881971.0 / row).epsilon(1e-15));
    CHECK(c.at(1, 1, 0, 0) == doctest::Approx(629231576.0 / row).epsilon(1e-15));
    CHECK(c.at(0, 0, 0, 0) == doctest::Approx(0.972).epsilon(1e-3));

    std::array<std::uint64_t, 16> eq;
    eq.fill(7);
    for (double v : counts_to_conditional(CountTable::from_counts(eq)).p) CHECK(v == 0.25);

    std::array<std::uint64_t, 16> single{};
    for (int z = 0; z < 4; ++z) single[8 + z] = 1;
    for (int z = 0; z < 4; ++z) CHECK(counts_to_conditional(CountTable::from_counts(single)).p[8 + z] == 1.0);

    // scale invariance
    std::array<std::uint64_t, 16> big = t.counts;
    for (auto& v : big) v *= 10;
    CHECK(counts_to_conditional(CountTable::from_counts(big)).p == c.p);
}

TEST_CASE("empty input class is reported by name") {
    std::array<std::uint64_t, 16> cnt;
    cnt.fill(3);
    for (int c = 0; c < 4; ++c) cnt[c * 4 + 2] = 0;  // x=1, y=0
    try {
        counts_to_conditional(CountTable::from_counts(cnt));
        FAIL("expected an error");
    } catch (const InsufficientDataError& e) {
        CHECK(std::string(e.what()).find("x=1 y=0") != std::string::npos);
    }
    CHECK_THROWS_AS(CountTable::from_counts({}), InsufficientDataError);
}

TEST_CASE("projection is idempotent on non-signaling input") {
    const auto p = quantum_behavior();
    const auto mu = spot_checking_input(0.01);
    const auto r = mle_project(p, mu, 1e-10);
    for (int i = 0; i < 16; ++i) CHECK(std::abs(r.nu.nu[i] - mu.mu[setting_of(i)] * p.p[i]) <= 1e-10);
    CHECK(r.kkt_residual <= 1e-10);
    CHECK(r.dual_bound >= r.objective - 1e-10);
}

TEST_CASE("projection of signaling perturbations") {
    const auto base = quantum_behavior();
    const auto mu = spot_checking_input(0.2);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> N(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        ConditionalBehavior p;
        for (int z = 0; z < 4; ++z) {
            double s = 0;
            for (int c = 0; c < 4; ++c) {
                double v = base.p[c * 4 + z] * std::exp(0.05 * N(rng));
                p.p[c * 4 + z] = v;
                s += v;
            }
            for (int c = 0; c < 4; ++c) p.p[c * 4 + z] /= s;
        }
        const auto r = mle_project(p, mu, 1e-10);
        CHECK(check_nonsignaling(r.nu.conditional(), 1e-10).pass);
        double mt = 0;
        for (int z = 0; z < 4; ++z) {
            double s = 0;
            for (int c = 0; c < 4; ++c) s += r.nu.nu[c * 4 + z];
            mt = std::max(mt, std::abs(s - mu.mu[z]));
        }
        CHECK(mt <= 1e-12);
        // never worse than the unperturbed feasible behaviour
        CHECK(r.objective >= loglik(p, joint_from(base, mu)) - 1e-12);
        for (std::size_t k = 1; k < r.objective_trace.size(); ++k)
            CHECK(r.objective_trace[k] >= r.objective_trace[k - 1] - 1e-13);
    }
}

TEST_CASE("training counts project close to the training distribution") {
    const auto nu_ref = io::joint_from_json(io::load_json(DIQRE_DATA_DIR "/training_distribution.json"), 1e-9);
    const auto p = counts_to_conditional(io::read_counts_csv(DIQRE_DATA_DIR "/training_counts.csv"));
    const auto r = mle_project(p, nu_ref.input, 1e-10);
    double worst = 0;
    for (int i = 0; i < 16; ++i) worst = std::max(worst, std::abs(r.nu.nu[i] - nu_ref.nu[i]));
    MESSAGE("max cell deviation from the published projection: " << worst);
    CHECK(worst < 1e-3);
}

TEST_CASE("zero cells keep the projection strictly positive") {
    auto p = deterministic_behavior(5);
    const auto r = mle_project(p, spot_checking_input(0.3), 1e-10);
    for (double v : r.nu.nu) CHECK(v > 0.0);
}

TEST_CASE("optimum on the boundary") {
    std::array<std::uint64_t, 16> c{1000, 1000, 1000, 0, 0, 0, 0, 0, 5, 5, 5, 5, 0, 0, 0, 0};
    const auto r = mle_project(counts_to_conditional(CountTable::from_counts(c)), spot_checking_input(0.01), 1e-10);
    CHECK(r.dual_bound - r.objective <= 1e-10);
    CHECK(check_nonsignaling(r.nu.conditional(), 1e-10).pass);

    // random signaling rows with holes
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const auto mu = spot_checking_input(0.3);
    for (int t = 0; t < 200; ++t) {
        ConditionalBehavior p;
        for (int z = 0; z < 4; ++z) {
            double s = 0;
            for (int k = 0; k < 4; ++k) {
                const double v = U(rng) < 0.4 ? 0.0 : U(rng);
                p.p[k * 4 + z] = v;
                s += v;
            }
            if (s == 0) p.p[z] = s = 1;
            for (int k = 0; k < 4; ++k) p.p[k * 4 + z] /= s;
        }
        const auto res = mle_project(p, mu, 1e-10);
        CHECK(res.kkt_residual <= 1e-10);
        CHECK(check_nonsignaling(res.nu.conditional(), 1e-9).pass);
    }
}
