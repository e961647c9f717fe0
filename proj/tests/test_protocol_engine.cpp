#include <doctest.h>

#include <cmath>

#include "diqre/io.hpp"
#include "diqre/protocol_engine.hpp"

using namespace diqre;

namespace {

const double kPaperQ = 1.0 / 8376;

JointDistribution training_joint() {
    return io::joint_from_json(io::load_json(DIQRE_DATA_DIR "/training_distribution.json"), 1e-9);
}

EstimationFactor reference_factor() { return io::factor_from_json(io::load_json(DIQRE_DATA_DIR "/reference_pef.json")); }

AppointmentInputs paper_inputs() {
    AppointmentInputs in;
    in.k = 512;
    in.k0 = 8.50e7;
    in.eps_s = 0x1.0p-32;
    in.gamma_bar = 0.993;
    in.gamma = 0.99;
    in.r_nu = 0.00289;
    in.r_in = 0.00197;
    in.alpha = 1.000001172;
    in.sigma_nu = sigma_nu(reference_factor(), training_joint());
    return in;
}

// Small plan with q = 0.5 so that a few thousand trials carry signal.
ProtocolPlan desk_plan(double h, std::uint64_t N) {
    static const EstimationFactor F = [] {
        const auto mu = spot_checking_input(0.5);
        return optimize_pef(joint_from(training_joint().conditional(), mu), HighPrec("1.001"), build_polytope(), {mu}).F;
    }();
    ProtocolPlan p;
    p.q = 0.5;
    p.alpha = 1.001;
    p.F = F;
    p.k = 16;
    p.eps_s = 0.01;
    p.eps_x = 0.01;
    p.gamma = 0.99;
    p.gamma_bar = 0.993;
    p.r_in = 2.0;
    p.N = N;
    p.h = h;
    return p;
}

}  // namespace

TEST_CASE("sigma_nu") {
    const auto nu = training_joint();
    CHECK(sigma_nu(uniform_factor(1.0, HighPrec("1.000001172")), nu) == 0.0);
    const auto F = reference_factor();
    const double s = sigma_nu(F, nu);
    MESSAGE("sigma_nu(reference factor, training distribution) = " << s);
    CHECK(s == doctest::Approx(63.3384).epsilon(1e-5));
    auto G = F;
    for (auto& v : G.values) v *= HighPrec("1.0000001");
    CHECK(sigma_nu(G, nu) == doctest::Approx(s).epsilon(1e-9));
}

TEST_CASE("parameter appointment at published values") {
    const auto in = paper_inputs();
    const auto a = appoint_parameters(in);
    MESSAGE("N = " << a.N << " h = " << a.h);
    CHECK(std::abs(static_cast<double>(a.N) / 2.35e11 - 1) <= 0.05);
    CHECK(a.success_probability >= in.gamma_bar);
    // N is the smallest admissible count
    auto in2 = in;
    const double h_prev = threshold(in.k, in.k0, a.N - 1.0, in.r_in, in.eps_s, in.alpha, in.gamma_bar);
    CHECK(0.5 * std::erfc(-((a.N - 1.0) * in.r_nu - h_prev) / (std::sqrt(a.N - 1.0) * in.sigma_nu) / std::sqrt(2.0)) < in.gamma_bar);

    // certified min-entropy collapses to k0 + k + N r_in
    const double bound = min_entropy_bound(a.h, in.eps_s, in.alpha, in.gamma);
    const double direct = in.k0 + in.k + a.N * in.r_in;
    CHECK(bound == doctest::Approx(direct).epsilon(1e-9));
    CHECK(direct == doctest::Approx(5.48e8).epsilon(5e-3));

    in2.r_nu = in.r_in;
    CHECK_THROWS_AS(appoint_parameters(in2), InfeasiblePlanError);
    in2 = in;
    in2.gamma = 1.5;
    CHECK_THROWS_AS(appoint_parameters(in2), ParameterError);
}

TEST_CASE("min-entropy bound edge cases") {
    const double alpha = 1.001;
    CHECK(min_entropy_bound(1e6, 1.0, alpha, 0.5) == doctest::Approx(1e6 - 1.0 / 0.001 - alpha / 0.001).epsilon(1e-12));
    CHECK(min_entropy_bound(1e6, 1.0, alpha, 1.0) == doctest::Approx(1e6 - 1000.0).epsilon(1e-12));
}

TEST_CASE("interval Bernoulli sampler on dyadic probabilities") {
    for (int b = 0; b < 2; ++b) {
        BitStreamSource s(BitStream::from_bits({b}));
        const auto d = biased_bernoulli(0.5, s);
        CHECK(d.T == b);
        CHECK(d.bits_used == 1);
    }
    for (int prefix = 0; prefix < 4; ++prefix) {
        BitStreamSource s(BitStream::from_bits({prefix >> 1, prefix & 1}));
        const auto d = biased_bernoulli(0.25, s);
        CHECK(d.T == (prefix == 3 ? 1 : 0));
        CHECK(d.bits_used <= 2);
    }
    BitStreamSource empty{BitStream()};
    CHECK_THROWS_AS(biased_bernoulli(0.3, empty), SeedUnderflowError);
    CHECK_THROWS_AS(biased_bernoulli(1.0, empty), ParameterError);
}

TEST_CASE("Bernoulli draws at a small spot probability") {
    const int n = 1000000;
    PrngBitSource src(17);
    BernoulliSampler sampler(kPaperQ);
    std::uint64_t ones = 0, bits = 0;
    for (int i = 0; i < n; ++i) {
        const auto d = sampler.draw(src);
        ones += d.T;
        bits += d.bits_used;
    }
    const double mean = static_cast<double>(ones) / n;
    CHECK(std::abs(mean - kPaperQ) <= 4 * std::sqrt(kPaperQ * (1 - kPaperQ) / n));
    const double per_draw = static_cast<double>(bits) / n;
    MESSAGE("bits per draw " << per_draw << " vs h(q) " << binary_entropy(kPaperQ));
    CHECK(per_draw <= 1.1 * (binary_entropy(kPaperQ) + 1));
    CHECK(per_draw >= binary_entropy(kPaperQ) * 0.9);

    PrngBitSource s2(3);
    std::uint64_t one_shot_ones = 0;
    for (int i = 0; i < 200000; ++i) one_shot_ones += biased_bernoulli(0.3, s2).T;
    CHECK(std::abs(one_shot_ones / 200000.0 - 0.3) <= 4 * std::sqrt(0.21 / 200000));
}

TEST_CASE("compensated summation") {
    // 1e8 terms of size ~1e-9 on a 2^-60 lattice, so the exact sum is an integer count
    const std::int64_t n = 100000000;
    CompensatedSum acc;
    double naive = 0.0;
    __int128 exact = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t k = (1152921504LL + (i % 1000) - 500) * (i % 3 == 0 ? -1 : 1);
        exact += k;
        const double x = std::ldexp(static_cast<double>(k), -60);
        acc.add(x);
        naive += x;
    }
    const double ref = std::ldexp(static_cast<double>(exact), -60);
    CHECK(std::abs(acc.value() - ref) <= 1e-12 * std::abs(ref));
    MESSAGE("naive relative error " << std::abs(naive - ref) / ref);
}

TEST_CASE("neutral factor never succeeds") {
    ProtocolPlan p = desk_plan(1.0, 20000);
    p.F = uniform_factor(1.0, HighPrec("1.001"));
    SimulatedDevice dev(training_joint().conditional(), 5);
    PrngBitSource seed(6);
    const auto tr = run_expansion(p, dev, seed);
    CHECK_FALSE(tr.success);
    CHECK(tr.n == p.N);
    CHECK(tr.log2_G == 0.0);
    CHECK(tr.stop_reason == StopReason::Exhausted);
    CHECK(tr.outputs.size() == 2 * tr.n);
    CHECK_THROWS_AS(certify(tr, p), InvalidStateError);
}

TEST_CASE("honest desk run, determinism and ledger") {
    const ProtocolPlan p = desk_plan(20.0, 200000);
    auto run = [&](std::uint64_t dseed, std::uint64_t sseed) {
        SimulatedDevice dev(training_joint().conditional(), dseed);
        PrngBitSource seed(sseed);
        RunOptions o;
        o.checkpoint_interval = 1000;
        return run_expansion(p, dev, seed, o);
    };
    const auto a = run(1, 2);
    const auto b = run(1, 2);
    CHECK(a.success);
    CHECK(a.log2_G / p.beta() >= p.h);
    CHECK(a.n == b.n);
    CHECK(a.log2_G == b.log2_G);
    CHECK(a.outputs == b.outputs);
    CHECK(a.check_counts == b.check_counts);
    CHECK(a.spot_count + a.check_counts[0] + a.check_counts[1] + a.check_counts[2] + a.check_counts[3] == a.n);
    CHECK(a.ledger_accounting == p.k0 + static_cast<double>(a.n) * p.r_in);
    for (const auto& c : a.checkpoints) CHECK(c.inputs_consumed_bits <= a.inputs_consumed_bits);

    const auto cert = certify(a, p);
    CHECK(cert.min_entropy_bound == min_entropy_bound(p.h, p.eps_s, p.alpha, p.gamma));
    CHECK(cert.n_stop == a.n);

    // lowering h can only stop earlier
    ProtocolPlan lower = p;
    lower.h = 10.0;
    SimulatedDevice dev(training_joint().conditional(), 1);
    PrngBitSource seed(2);
    const auto c = run_expansion(lower, dev, seed);
    CHECK(c.success);
    CHECK(c.n <= a.n);
}

TEST_CASE("seed underflow keeps the transcript") {
    const ProtocolPlan p = desk_plan(1e9, 1000000);
    SimulatedDevice dev(training_joint().conditional(), 1);
    std::mt19937_64 rng(3);
    BitStreamSource seed(BitStream::random(5000, rng));
    try {
        run_expansion(p, dev, seed);
        FAIL("expected seed underflow");
    } catch (const SeedUnderflowAbort& e) {
        CHECK(e.transcript.n > 0);
        CHECK(e.transcript.outputs.size() == 2 * e.transcript.n);
        CHECK(e.transcript.inputs_consumed_bits <= 5000);
    }
}

TEST_CASE("local deterministic device gains nothing") {
    const ProtocolPlan p = desk_plan(1e9, 200000);
    const auto mu = spot_checking_input(p.q);
    for (int s = 0; s < 16; ++s) {
        const auto nu = joint_from(deterministic_behavior(s), mu);
        // E[F] <= 1 at every deterministic vertex, so the expected log-rate is not positive
        const double mean = pef_rate(p.F, nu);
        CHECK(mean <= 1e-12);
        DeterministicDevice dev(s);
        PrngBitSource seed(40 + s);
        const auto tr = run_expansion(p, dev, seed, {0, false, {}});
        CHECK_FALSE(tr.success);
        if (!std::isfinite(tr.log2_G)) continue;
        const double rate = tr.log2_G / p.beta() / static_cast<double>(tr.n);
        CHECK(std::abs(rate - mean) <= 4.5 * sigma_nu(p.F, nu) / std::sqrt(static_cast<double>(tr.n)));
    }
}

TEST_CASE("net expansion curve") {
    ProtocolPlan p = desk_plan(1e9, 50000);
    p.r_nu = 0.006;
    p.r_in = 0.001;
    SimulatedDevice dev(training_joint().conditional(), 8);
    PrngBitSource seed(9);
    RunOptions o;
    o.checkpoint_interval = 5000;
    const auto tr = run_expansion(p, dev, seed, o);
    const auto curve = net_expansion_curve(tr, p);
    REQUIRE(curve.size() == tr.checkpoints.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
        CHECK(curve[i].realized >= 0.0);
        CHECK(curve[i].expected >= 0.0);
        CHECK(curve[i].consumed == p.k0 + static_cast<double>(curve[i].n) * p.r_in);
    }
    // penalties dominate at this size, so both lines are clamped
    CHECK(curve.front().expected == 0.0);
}

TEST_CASE("local bias analysis") {
    const auto r = local_bias_analysis(0.5, training_joint().conditional(), HighPrec("1.001"), build_polytope());
    CHECK(r.r_in_local == doctest::Approx(2.0).epsilon(1e-15));
    CHECK_FALSE(r.feasible);
    CHECK(r.r_out < 2.0);
    CHECK(2 * binary_entropy(1e-12) < 1e-10);
}
