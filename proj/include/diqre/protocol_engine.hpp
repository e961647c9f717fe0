#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "diqre/chsh_model.hpp"
#include "diqre/errors.hpp"
#include "diqre/extractor.hpp"
#include "diqre/pef_optimizer.hpp"
#include "diqre/quantum_sim.hpp"

namespace diqre {

struct ProtocolPlan {
    double q = 0.0;
    double eps_b = 0.0;
    double alpha = 1.0;
    EstimationFactor F;
    double k = 0.0;
    double k0 = 0.0;
    double eps_s = 0.0;
    double eps_x = 0.0;
    double gamma = 0.0;
    double gamma_bar = 0.0;
    double r_in = 0.0;
    double r_nu = 0.0;
    double sigma_nu = 0.0;
    std::uint64_t N = 0;
    double h = 0.0;

    double beta() const { return alpha - 1.0; }
    void validate() const;
};

// Standard deviation of log2 F / (alpha - 1) under nu.
double sigma_nu(const EstimationFactor& F, const JointDistribution& nu);

// k0 + k + N r_in + log2(2/eps_s^2)/(alpha-1) + alpha/(alpha-1) log2(1/gamma)
double threshold(double k, double k0, double N, double r_in, double eps_s, double alpha, double gamma);

struct AppointmentInputs {
    double k = 512;
    double k0 = 0;
    double eps_s = 0x1.0p-32;
    double gamma_bar = 0.993;
    double gamma = 0.99;
    double r_nu = 0;
    double sigma_nu = 0;
    double r_in = 0;
    double alpha = 1;
};

struct Appointment {
    std::uint64_t N = 0;
    double h = 0.0;         // with the actual gamma
    double h_design = 0.0;  // with gamma_bar, used in the search
    double success_probability = 0.0;
};

Appointment appoint_parameters(const AppointmentInputs& in);

// Source of uniform seed bits consumed by the protocol.
class BitSource {
public:
    virtual ~BitSource() = default;
    virtual int next_bit() = 0;
    virtual std::uint64_t consumed() const = 0;
};

// Finite seed; running out throws SeedUnderflowError.
class BitStreamSource : public BitSource {
public:
    explicit BitStreamSource(BitStream bits) : bits_(std::move(bits)) {}
    int next_bit() override;
    std::uint64_t consumed() const override { return pos_; }
    std::uint64_t remaining() const { return bits_.size() - pos_; }

private:
    BitStream bits_;
    std::uint64_t pos_ = 0;
};

// Pseudorandom bits for simulations only.
class PrngBitSource : public BitSource {
public:
    explicit PrngBitSource(std::uint64_t seed) : rng_(seed) {}
    int next_bit() override;
    std::uint64_t consumed() const override { return used_; }

private:
    std::mt19937_64 rng_;
    std::uint64_t word_ = 0;
    int left_ = 0;
    std::uint64_t used_ = 0;
};

struct BernoulliDraw {
    int T = 0;
    std::uint64_t bits_used = 0;
};

// One-shot interval sampler: reads bits of a uniform u until u is known to be
// below 1 - q (T = 0) or above it (T = 1).
BernoulliDraw biased_bernoulli(double q, BitSource& seed);

// Exact Bernoulli(q) sampler that keeps the unused part of its uniform state between
// draws, so the amortised cost approaches h(q) bits.
class BernoulliSampler {
public:
    explicit BernoulliSampler(double q, int slack_bits = 16);
    BernoulliDraw draw(BitSource& seed);

private:
    unsigned __int128 v_ = 0;  // uniform on [0, m_)
    unsigned __int128 m_ = 1;
    unsigned __int128 Q_ = 0;  // q = Q / D exactly
    unsigned __int128 D_ = 1;
    unsigned __int128 refill_ = 1;
};

// Kahan-Babuska-Neumaier summation.
class CompensatedSum {
public:
    void add(double x);
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

class TrialDevice {
public:
    virtual ~TrialDevice() = default;
    virtual TrialOutcome trial(int x, int y) = 0;
};

class SimulatedDevice : public TrialDevice {
public:
    SimulatedDevice(ConditionalBehavior b, std::uint64_t seed) : b_(b), rng_(seed) {}
    TrialOutcome trial(int x, int y) override { return sample_trial(b_, x, y, rng_); }

private:
    ConditionalBehavior b_;
    std::mt19937_64 rng_;
};

// Plays a fixed local deterministic strategy (a0, a1, b0, b1).
class DeterministicDevice : public TrialDevice {
public:
    explicit DeterministicDevice(int strategy) : b_(deterministic_behavior(strategy)) {}
    TrialOutcome trial(int x, int y) override;

private:
    ConditionalBehavior b_;
};

enum class StopReason { Threshold, Exhausted };

struct Checkpoint {
    std::uint64_t n = 0;
    double log2_G = 0.0;
    std::uint64_t spot_count = 0;
    std::uint64_t inputs_consumed_bits = 0;
};

struct ExpansionTranscript {
    std::uint64_t n = 0;
    double log2_G = 0.0;
    std::uint64_t spot_count = 0;
    std::array<std::uint64_t, 4> check_counts{};  // check trials per setting z
    BitStream outputs;
    std::uint64_t inputs_consumed_bits = 0;
    double ledger_accounting = 0.0;  // k0 + n r_in
    bool success = false;
    StopReason stop_reason = StopReason::Exhausted;
    std::vector<Checkpoint> checkpoints;
};

struct RunOptions {
    std::uint64_t checkpoint_interval = 100000;
    bool keep_outputs = true;
    std::function<void(const Checkpoint&)> on_checkpoint;
};

// Seed ran out mid-run; carries the transcript up to the last completed trial.
struct SeedUnderflowAbort : SeedUnderflowError {
    SeedUnderflowAbort(const std::string& what, ExpansionTranscript t) : SeedUnderflowError(what), transcript(std::move(t)) {}
    ExpansionTranscript transcript;
};

ExpansionTranscript run_expansion(const ProtocolPlan& plan, TrialDevice& device, BitSource& seed,
                                  const RunOptions& opts = {});

struct EntropyCertificate {
    double min_entropy_bound = 0.0;
    double h = 0.0;
    double eps_s = 0.0;
    double gamma = 0.0;
    double alpha = 1.0;
    std::uint64_t n_stop = 0;
    bool success = false;
};

// h - log2(2/eps_s^2)/(alpha-1) + alpha log2(gamma)/(alpha-1)
double min_entropy_bound(double h, double eps_s, double alpha, double gamma);
EntropyCertificate certify(const ExpansionTranscript& transcript, const ProtocolPlan& plan);

struct CurvePoint {
    std::uint64_t n = 0;
    double realized = 0.0;  // max{log2G/beta - n r_in - penalties, 0}
    double expected = 0.0;  // max{n r_nu - n r_in - penalties, 0}
    double generated = 0.0; // (log2G - log2(2/eps_s^2) + alpha log2 gamma)/beta
    double consumed = 0.0;  // k0 + n r_in
};

std::vector<CurvePoint> net_expansion_curve(const ExpansionTranscript& transcript, const ProtocolPlan& plan);

struct LocalBiasResult {
    double r_out = 0.0;
    double r_in_local = 0.0;
    bool feasible = false;
};

LocalBiasResult local_bias_analysis(double q_local, const ConditionalBehavior& behavior, const HighPrec& alpha,
                                    const PolytopeModel& polytope, const PefOptions& opts = {});

}  // namespace diqre
