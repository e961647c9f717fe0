#include "diqre/chsh_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "diqre/errors.hpp"

namespace diqre {

namespace {

void require_probability(double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) {
        std::ostringstream os;
        os << name << " must lie in (0,1), got " << v;
        throw ParameterError(os.str());
    }
}

}  // namespace

ConditionalBehavior ConditionalBehavior::from_cells(const Cells& p, double tol) {
    for (int i = 0; i < 16; ++i) {
        if (!(p[i] >= -tol && p[i] <= 1.0 + tol))
            throw ParameterError("conditional entry " + std::to_string(i) + " outside [0,1]");
    }
    for (int z = 0; z < 4; ++z) {
        double s = 0.0;
        for (int c = 0; c < 4; ++c) s += p[c * 4 + z];
        if (std::abs(s - 1.0) > tol)
            throw ParameterError("conditional row for setting " + std::to_string(z) + " does not sum to 1");
    }
    ConditionalBehavior b;
    for (int i = 0; i < 16; ++i) b.p[i] = std::clamp(p[i], 0.0, 1.0);
    return b;
}

std::array<HighPrec, 4> InputDistribution::mu_highprec() const {
    std::array<HighPrec, 4> out;
    HighPrec qh(q);
    switch (shape) {
        case InputShape::SpotChecking:
            out[0] = 1 - 3 * qh / 4;
            out[1] = out[2] = out[3] = qh / 4;
            break;
        case InputShape::Product:
            out[0] = (1 - qh) * (1 - qh);
            out[1] = (1 - qh) * qh;
            out[2] = qh * (1 - qh);
            out[3] = qh * qh;
            break;
        case InputShape::General:
            for (int z = 0; z < 4; ++z) out[z] = HighPrec(mu[z]);
            break;
    }
    return out;
}

InputDistribution spot_checking_input(double q, double eps_b) {
    require_probability(q, "spot probability q");
    InputDistribution d;
    d.q = q;
    d.eps_b = eps_b;
    d.shape = InputShape::SpotChecking;
    d.mu = {1.0 - 3.0 * q / 4.0, q / 4.0, q / 4.0, q / 4.0};
    return d;
}

InputDistribution product_input(double q_local) {
    require_probability(q_local, "local input probability");
    InputDistribution d;
    d.q = q_local;
    d.shape = InputShape::Product;
    const double r = 1.0 - q_local;
    d.mu = {r * r, r * q_local, q_local * r, q_local * q_local};
    return d;
}

InputDistribution general_input(const std::array<double, 4>& mu) {
    double s = 0.0;
    for (double m : mu) {
        if (!(m >= 0.0)) throw ParameterError("input probabilities must be nonnegative");
        s += m;
    }
    if (std::abs(s - 1.0) > 1e-15) throw ParameterError("input probabilities must sum to 1");
    InputDistribution d;
    d.mu = mu;
    d.shape = InputShape::General;
    return d;
}

SpotCheckingInputs build_spot_checking_inputs(double q, double eps_b) {
    require_probability(q, "spot probability q");
    if (!(eps_b >= 0.0 && eps_b < 1.0)) throw ParameterError("eps_b must lie in [0,1)");
    const double qu = q * (1.0 + eps_b);
    const double ql = q * (1.0 - eps_b);
    if (!(ql > 0.0 && qu < 1.0)) throw ParameterError("biased spot probabilities leave (0,1)");
    SpotCheckingInputs s;
    s.ideal = spot_checking_input(q, eps_b);
    s.extremal_low = spot_checking_input(ql, eps_b);
    s.extremal_high = spot_checking_input(qu, eps_b);
    return s;
}

double binary_entropy(double q) {
    if (q <= 0.0 || q >= 1.0) return 0.0;
    return -(q * std::log2(q) + (1.0 - q) * std::log2(1.0 - q));
}

double input_entropy_rate(double q) {
    require_probability(q, "spot probability q");
    return binary_entropy(q) + 2.0 * q;
}

ChshStatistics chsh_statistics(const ConditionalBehavior& b) {
    ChshStatistics s;
    for (int z = 0; z < 4; ++z) {
        double e = 0.0;
        for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) e += ((a ^ bb) ? -1.0 : 1.0) * b.p[flat_index(a, bb, 0, 0) + z];
        s.E[z] = e;
    }
    s.S = s.E[0] + s.E[1] + s.E[2] - s.E[3];
    s.J = 0.5 + s.S / 8.0;
    return s;
}

JointDistribution JointDistribution::from_cells(const Cells& nu, const InputDistribution& input,
                                                double marginal_tol, double signaling_tol) {
    double total = 0.0;
    for (int i = 0; i < 16; ++i) {
        if (!(nu[i] >= 0.0)) throw ParameterError("joint probability " + std::to_string(i) + " is negative");
        total += nu[i];
    }
    if (std::abs(total - 1.0) > 1e-12) throw ParameterError("joint distribution does not sum to 1");
    for (int z = 0; z < 4; ++z) {
        double m = 0.0;
        for (int c = 0; c < 4; ++c) m += nu[c * 4 + z];
        if (std::abs(m - input.mu[z]) > marginal_tol)
            throw ParameterError("joint marginal for setting " + std::to_string(z) + " differs from the input distribution");
    }
    JointDistribution j;
    j.nu = nu;
    j.input = input;
    if (signaling_tol > 0.0) {
        const auto rep = check_nonsignaling(j.conditional(), signaling_tol);
        if (!rep.pass) throw ParameterError("joint distribution is signaling");
    }
    return j;
}

ConditionalBehavior JointDistribution::conditional() const {
    ConditionalBehavior b;
    for (int z = 0; z < 4; ++z) {
        double m = 0.0;
        for (int c = 0; c < 4; ++c) m += nu[c * 4 + z];
        if (m <= 0.0) throw InsufficientDataError("setting " + std::to_string(z) + " has zero probability");
        for (int c = 0; c < 4; ++c) b.p[c * 4 + z] = nu[c * 4 + z] / m;
    }
    return b;
}

JointDistribution joint_from(const ConditionalBehavior& b, const InputDistribution& input) {
    JointDistribution j;
    j.input = input;
    for (int i = 0; i < 16; ++i) j.nu[i] = input.mu[setting_of(i)] * b.p[i];
    return j;
}

std::array<int, 4> facet_signs(int facet) {
    if (facet < 0 || facet >= 8) throw ParameterError("facet index out of range");
    int seen = 0;
    for (int mask = 0; mask < 16; ++mask) {
        if (__builtin_popcount(mask) % 2 == 0) continue;
        if (seen++ == facet) {
            std::array<int, 4> s;
            for (int k = 0; k < 4; ++k) s[k] = ((mask >> (3 - k)) & 1) ? -1 : 1;
            return s;
        }
    }
    return {};
}

double facet_value(const ConditionalBehavior& b, int facet) {
    const auto s = facet_signs(facet);
    const auto st = chsh_statistics(b);
    double v = 0.0;
    for (int z = 0; z < 4; ++z) v += s[z] * st.E[z];
    return v;
}

ConditionalBehavior deterministic_behavior(int index) {
    if (index < 0 || index >= 16) throw ParameterError("deterministic index out of range");
    const int a_resp[2] = {(index >> 3) & 1, (index >> 2) & 1};
    const int b_resp[2] = {(index >> 1) & 1, index & 1};
    ConditionalBehavior b;
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y) b.p[flat_index(a_resp[x], b_resp[y], x, y)] = 1.0;
    return b;
}

ConditionalBehavior pr_box(int facet) {
    const auto s = facet_signs(facet);
    ConditionalBehavior b;
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y)
            for (int a = 0; a < 2; ++a)
                for (int bb = 0; bb < 2; ++bb)
                    if (((a ^ bb) ? -1 : 1) == s[2 * x + y]) b.p[flat_index(a, bb, x, y)] = 0.5;
    return b;
}

PolytopeModel build_polytope() {
    PolytopeModel m;
    for (int d = 0; d < 16; ++d) {
        m.vertices.push_back(deterministic_behavior(d));
        m.provenance.push_back({VertexKind::LocalDeterministic, -1, d});
    }
    const double lambda = std::sqrt(2.0) - 1.0;
    for (int f = 0; f < 8; ++f) {
        const auto pr = pr_box(f);
        for (int d = 0; d < 16; ++d) {
            const auto det = deterministic_behavior(d);
            // deterministic values are integers, so the comparison is exact
            if (facet_value(det, f) != 2.0) continue;
            ConditionalBehavior v;
            for (int i = 0; i < 16; ++i) v.p[i] = lambda * pr.p[i] + (1.0 - lambda) * det.p[i];
            m.vertices.push_back(v);
            m.provenance.push_back({VertexKind::PrMixture, f, d});
        }
    }
    return m;
}

std::array<HighPrec, 16> PolytopeModel::vertex_highprec(std::size_t k) const {
    const auto& prov = provenance.at(k);
    const auto det = deterministic_behavior(prov.deterministic);
    std::array<HighPrec, 16> out;
    if (prov.kind == VertexKind::LocalDeterministic) {
        for (int i = 0; i < 16; ++i) out[i] = HighPrec(det.p[i]);
        return out;
    }
    const HighPrec lambda = boost::multiprecision::sqrt(HighPrec(2)) - 1;
    const auto pr = pr_box(prov.facet);
    for (int i = 0; i < 16; ++i) out[i] = lambda * HighPrec(pr.p[i]) + (1 - lambda) * HighPrec(det.p[i]);
    return out;
}

SignalingReport check_nonsignaling(const ConditionalBehavior& b, double tol) {
    SignalingReport r;
    for (int x = 0; x < 2; ++x) {
        const double a0 = b.at(1, 0, x, 0) + b.at(1, 1, x, 0);
        const double a1 = b.at(1, 0, x, 1) + b.at(1, 1, x, 1);
        r.alice = std::max(r.alice, std::abs(a0 - a1));
    }
    for (int y = 0; y < 2; ++y) {
        const double b0 = b.at(0, 1, 0, y) + b.at(1, 1, 0, y);
        const double b1 = b.at(0, 1, 1, y) + b.at(1, 1, 1, y);
        r.bob = std::max(r.bob, std::abs(b0 - b1));
    }
    r.pass = r.alice <= tol && r.bob <= tol;
    return r;
}

}  // namespace diqre
