#include "diqre/protocol_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diqre/errors.hpp"

namespace diqre {

void ProtocolPlan::validate() const {
    auto open_unit = [](double v, const char* name) {
        if (!(v > 0.0 && v < 1.0)) throw ParameterError(std::string(name) + " must lie in (0,1)");
    };
    open_unit(eps_s, "eps_s");
    open_unit(eps_x, "eps_x");
    open_unit(gamma, "gamma");
    open_unit(gamma_bar, "gamma_bar");
    open_unit(q, "q");
    if (!(alpha > 1.0)) throw ParameterError("alpha must exceed 1");
    if (N < 1) throw ParameterError("N must be at least 1");
    if (!(h > 0.0)) throw ParameterError("threshold h must be positive");
    F.validate();
}

double sigma_nu(const EstimationFactor& F, const JointDistribution& nu) {
    const auto l2 = F.log2_values();
    const double beta = F.beta();
    double m1 = 0.0;
    for (int i = 0; i < 16; ++i)
        if (nu.nu[i] > 0.0) m1 += nu.nu[i] * l2[i] / beta;
    double var = 0.0;
    for (int i = 0; i < 16; ++i) {
        if (nu.nu[i] <= 0.0) continue;
        const double d = l2[i] / beta - m1;
        var += nu.nu[i] * d * d;
    }
    return std::sqrt(var);
}

double threshold(double k, double k0, double N, double r_in, double eps_s, double alpha, double gamma) {
    const double beta = alpha - 1.0;
    return k0 + k + N * r_in + std::log2(2.0 / (eps_s * eps_s)) / beta + alpha / beta * std::log2(1.0 / gamma);
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double success_probability(const AppointmentInputs& in, double N) {
    const double h = threshold(in.k, in.k0, N, in.r_in, in.eps_s, in.alpha, in.gamma_bar);
    if (in.sigma_nu <= 0.0) return N * in.r_nu >= h ? 1.0 : 0.0;
    return normal_cdf((N * in.r_nu - h) / (std::sqrt(N) * in.sigma_nu));
}

}  // namespace

Appointment appoint_parameters(const AppointmentInputs& in) {
    auto open_unit = [](double v, const char* name) {
        if (!(v > 0.0 && v < 1.0)) throw ParameterError(std::string(name) + " must lie in (0,1)");
    };
    open_unit(in.eps_s, "eps_s");
    open_unit(in.gamma, "gamma");
    open_unit(in.gamma_bar, "gamma_bar");
    if (!(in.alpha > 1.0)) throw ParameterError("alpha must exceed 1");
    if (!(in.sigma_nu >= 0.0)) throw ParameterError("sigma_nu must be nonnegative");
    if (!(in.r_nu > in.r_in)) throw InfeasiblePlanError("expected rate does not exceed the input entropy rate");

    const double limit = 1e15;
    if (success_probability(in, limit) < in.gamma_bar)
        throw InfeasiblePlanError("no N below 1e15 reaches the design success probability");
    // success probability is increasing in N on the relevant range; bisect for the smallest N
    double lo = 0.0, hi = limit;
    if (success_probability(in, 1.0) >= in.gamma_bar) hi = 1.0;
    while (hi - lo > 1.0) {
        const double mid = std::floor(0.5 * (lo + hi));
        if (success_probability(in, mid) >= in.gamma_bar) hi = mid;
        else lo = mid;
    }
    Appointment a;
    a.N = static_cast<std::uint64_t>(hi);
    a.h_design = threshold(in.k, in.k0, hi, in.r_in, in.eps_s, in.alpha, in.gamma_bar);
    a.h = threshold(in.k, in.k0, hi, in.r_in, in.eps_s, in.alpha, in.gamma);
    a.success_probability = success_probability(in, hi);
    return a;
}

int BitStreamSource::next_bit() {
    if (pos_ >= bits_.size()) throw SeedUnderflowError("seed exhausted after " + std::to_string(pos_) + " bits");
    return bits_.get(pos_++);
}

int PrngBitSource::next_bit() {
    if (left_ == 0) {
        word_ = rng_();
        left_ = 64;
    }
    const int b = static_cast<int>(word_ & 1);
    word_ >>= 1;
    --left_;
    ++used_;
    return b;
}

BernoulliDraw biased_bernoulli(double q, BitSource& seed) {
    if (!(q > 0.0 && q < 1.0)) throw ParameterError("q must lie in (0,1)");
    // T = 1 iff u >= 1 - q. rem is the threshold relative to the current dyadic interval;
    // doubling and subtracting one are exact in binary floating point.
    double rem = 1.0 - q;
    BernoulliDraw d;
    while (true) {
        const int bit = seed.next_bit();
        ++d.bits_used;
        rem *= 2.0;
        if (bit == 0) {
            if (rem >= 1.0) return d;
        } else {
            rem -= 1.0;
            if (rem <= 0.0) {
                d.T = 1;
                return d;
            }
        }
    }
}

namespace {

// q = Q / 2^K exactly.
void dyadic(double q, unsigned __int128& Q, unsigned __int128& D) {
    int e = 0;
    const double f = std::frexp(q, &e);  // q = f 2^e, f in [0.5, 1)
    const auto mant = static_cast<std::uint64_t>(std::ldexp(f, 53));
    int K = 53 - e;
    std::uint64_t m = mant;
    while (K > 0 && (m & 1) == 0) {
        m >>= 1;
        --K;
    }
    if (K > 100) throw ParameterError("q needs more than 100 bits of precision");
    Q = m;
    D = static_cast<unsigned __int128>(1) << K;
}

}  // namespace

BernoulliSampler::BernoulliSampler(double q, int slack_bits) {
    if (!(q > 0.0 && q < 1.0)) throw ParameterError("q must lie in (0,1)");
    dyadic(q, Q_, D_);
    if (slack_bits < 0 || slack_bits > 24) throw ParameterError("slack bits out of range");
    refill_ = D_ << slack_bits;
}

BernoulliDraw BernoulliSampler::draw(BitSource& seed) {
    BernoulliDraw d;
    while (true) {
        while (m_ < refill_) {
            v_ = 2 * v_ + static_cast<unsigned>(seed.next_bit());
            m_ *= 2;
            ++d.bits_used;
        }
        const unsigned __int128 k = m_ / D_;
        const unsigned __int128 cut = k * D_;
        if (v_ >= cut) {
            // rejected tail stays uniform on the remainder
            v_ -= cut;
            m_ -= cut;
            continue;
        }
        const unsigned __int128 j = v_ / D_;
        const unsigned __int128 s = v_ % D_;
        if (s >= D_ - Q_) {
            d.T = 1;
            v_ = j * Q_ + (s - (D_ - Q_));
            m_ = k * Q_;
        } else {
            d.T = 0;
            v_ = j * (D_ - Q_) + s;
            m_ = k * (D_ - Q_);
        }
        return d;
    }
}

void CompensatedSum::add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) comp_ += (sum_ - t) + x;
    else comp_ += (x - t) + sum_;
    sum_ = t;
}

TrialOutcome DeterministicDevice::trial(int x, int y) {
    for (int c = 0; c < 4; ++c)
        if (b_.p[c * 4 + 2 * x + y] > 0.5) return {c >> 1, c & 1};
    return {0, 0};
}

ExpansionTranscript run_expansion(const ProtocolPlan& plan, TrialDevice& device, BitSource& seed,
                                  const RunOptions& opts) {
    if (!(plan.alpha > 1.0) || plan.N < 1) throw ParameterError("plan is not valid");
    const auto l2 = plan.F.log2_values();
    const double beta = plan.beta();
    bool dead = false;  // a zero factor was hit; G stays 0
    BernoulliSampler sampler(plan.q);
    ExpansionTranscript tr;
    CompensatedSum acc;
    const std::uint64_t start_bits = seed.consumed();
    auto checkpoint = [&]() {
        Checkpoint c{tr.n, acc.value(), tr.spot_count, seed.consumed() - start_bits};
        tr.checkpoints.push_back(c);
        if (opts.on_checkpoint) opts.on_checkpoint(c);
    };
    try {
        while (tr.n < plan.N) {
            const auto draw = sampler.draw(seed);
            int x = 0, y = 0;
            if (draw.T == 1) {
                x = seed.next_bit();
                y = seed.next_bit();
                ++tr.check_counts[2 * x + y];
            } else {
                ++tr.spot_count;
            }
            const auto out = device.trial(x, y);
            const double l = l2[flat_index(out.a, out.b, x, y)];
            if (std::isfinite(l)) acc.add(l);
            else dead = true;
            if (opts.keep_outputs) {
                tr.outputs.push_back(out.a);
                tr.outputs.push_back(out.b);
            }
            ++tr.n;
            if (opts.checkpoint_interval && tr.n % opts.checkpoint_interval == 0) checkpoint();
            if (!dead && acc.value() / beta >= plan.h) {
                tr.success = true;
                tr.stop_reason = StopReason::Threshold;
                break;
            }
        }
    } catch (const SeedUnderflowError& e) {
        tr.log2_G = acc.value();
        tr.inputs_consumed_bits = seed.consumed() - start_bits;
        tr.ledger_accounting = plan.k0 + static_cast<double>(tr.n) * plan.r_in;
        throw SeedUnderflowAbort(e.what(), std::move(tr));
    }
    if (!tr.success) tr.stop_reason = StopReason::Exhausted;
    tr.log2_G = dead ? -std::numeric_limits<double>::infinity() : acc.value();
    tr.inputs_consumed_bits = seed.consumed() - start_bits;
    tr.ledger_accounting = plan.k0 + static_cast<double>(tr.n) * plan.r_in;
    if (tr.checkpoints.empty() || tr.checkpoints.back().n != tr.n) checkpoint();
    return tr;
}

double min_entropy_bound(double h, double eps_s, double alpha, double gamma) {
    const double beta = alpha - 1.0;
    return h - std::log2(2.0 / (eps_s * eps_s)) / beta + alpha * std::log2(gamma) / beta;
}

EntropyCertificate certify(const ExpansionTranscript& transcript, const ProtocolPlan& plan) {
    if (!transcript.success) throw InvalidStateError("cannot certify a failed run");
    EntropyCertificate c;
    c.h = plan.h;
    c.eps_s = plan.eps_s;
    c.gamma = plan.gamma;
    c.alpha = plan.alpha;
    c.n_stop = transcript.n;
    c.min_entropy_bound = min_entropy_bound(plan.h, plan.eps_s, plan.alpha, plan.gamma);
    c.success = true;
    return c;
}

std::vector<CurvePoint> net_expansion_curve(const ExpansionTranscript& transcript, const ProtocolPlan& plan) {
    const double beta = plan.beta();
    const double penalty = std::log2(2.0 / (plan.eps_s * plan.eps_s)) / beta - plan.alpha * std::log2(plan.gamma) / beta;
    std::vector<CurvePoint> out;
    for (const auto& c : transcript.checkpoints) {
        CurvePoint p;
        p.n = c.n;
        const double nd = static_cast<double>(c.n);
        p.generated = c.log2_G / beta - penalty;
        p.consumed = plan.k0 + nd * plan.r_in;
        p.realized = std::max(c.log2_G / beta - nd * plan.r_in - penalty, 0.0);
        p.expected = std::max(nd * plan.r_nu - nd * plan.r_in - penalty, 0.0);
        out.push_back(p);
    }
    return out;
}

LocalBiasResult local_bias_analysis(double q_local, const ConditionalBehavior& behavior, const HighPrec& alpha,
                                    const PolytopeModel& polytope, const PefOptions& opts) {
    const auto mu = product_input(q_local);
    const auto nu = joint_from(behavior, mu);
    const auto res = optimize_pef(nu, alpha, polytope, {mu}, opts);
    LocalBiasResult r;
    r.r_out = res.rate;
    r.r_in_local = 2.0 * binary_entropy(q_local);
    r.feasible = r.r_out > r.r_in_local;
    return r;
}

}  // namespace diqre
