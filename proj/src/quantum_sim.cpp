#include "diqre/quantum_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "diqre/errors.hpp"

namespace diqre {

void DeviceModel::validate() const {
    auto unit = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) throw ParameterError(std::string(name) + " must lie in [0,1]");
    };
    unit(eta_A, "eta_A");
    unit(eta_B, "eta_B");
    unit(p_pair, "p_pair");
    unit(visibility, "visibility");
    for (double a : {theta_state, alice_angles[0], alice_angles[1], bob_angles[0], bob_angles[1]})
        if (!std::isfinite(a)) throw ParameterError("device angles must be finite");
}

double degrees(double deg) { return deg * std::numbers::pi / 180.0; }

DeviceModel reference_device() {
    DeviceModel m;
    m.theta_state = degrees(24.56);
    m.alice_angles = {degrees(-83.02), degrees(-118.58)};
    m.bob_angles = {degrees(6.98), degrees(-28.58)};
    m.eta_A = 0.805;
    m.eta_B = 0.822;
    return m;
}

ConditionalBehavior predicted_behavior(const DeviceModel& m) {
    m.validate();
    // basis |HH>, |HV>, |VH>, |VV>
    Eigen::Vector4d psi(0.0, std::cos(m.theta_state), std::sin(m.theta_state), 0.0);
    Eigen::Matrix4d rho = m.visibility * psi * psi.transpose();
    rho.diagonal() += (1.0 - m.visibility) * psi.cwiseProduct(psi);

    ConditionalBehavior out;
    const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    for (int x = 0; x < 2; ++x) {
        for (int y = 0; y < 2; ++y) {
            const Eigen::Vector2d va(std::cos(m.alice_angles[x]), std::sin(m.alice_angles[x]));
            const Eigen::Vector2d vb(std::cos(m.bob_angles[y]), std::sin(m.bob_angles[y]));
            const Eigen::Matrix2d Pa = va * va.transpose();
            const Eigen::Matrix2d Pb = vb * vb.transpose();
            Eigen::Matrix4d PaPb, PaI, IPb;
            PaPb = Eigen::kroneckerProduct(Pa, Pb);
            PaI = Eigen::kroneckerProduct(Pa, I);
            IPb = Eigen::kroneckerProduct(I, Pb);
            const double tAB = (rho * PaPb).trace();
            const double tA = (rho * PaI).trace();
            const double tB = (rho * IPb).trace();
            const double p11 = m.p_pair * m.eta_A * m.eta_B * tAB;
            const double p10 = m.p_pair * m.eta_A * tA - p11;
            const double p01 = m.p_pair * m.eta_B * tB - p11;
            out.p[flat_index(1, 1, x, y)] = std::max(p11, 0.0);
            out.p[flat_index(1, 0, x, y)] = std::max(p10, 0.0);
            out.p[flat_index(0, 1, x, y)] = std::max(p01, 0.0);
            out.p[flat_index(0, 0, x, y)] = std::max(1.0 - p11 - p10 - p01, 0.0);
        }
    }
    return out;
}

TrialOutcome sample_trial(const ConditionalBehavior& b, int x, int y, std::mt19937_64& rng) {
    if ((x | y) & ~1) throw ParameterError("inputs must be bits");
    const double u = uniform01(rng);
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) {
        acc += b.p[c * 4 + 2 * x + y];
        if (u < acc) return {c >> 1, c & 1};
    }
    return {1, 1};
}

namespace {

Eigen::Matrix<double, 16, 1> weighted_residual(const DeviceModel& m, const ConditionalBehavior& target,
                                               const Eigen::Matrix<double, 16, 1>& w) {
    const auto p = predicted_behavior(m);
    Eigen::Matrix<double, 16, 1> r;
    for (int i = 0; i < 16; ++i) r[i] = (p.p[i] - target.p[i]) * w[i];
    return r;
}

}  // namespace

CalibrationResult calibrate_device(const DeviceModel& start, const ConditionalBehavior& target, int max_iters) {
    Eigen::Matrix<double, 16, 1> w;
    for (int i = 0; i < 16; ++i) w[i] = target.p[i] > 0.0 ? 1.0 / std::sqrt(target.p[i]) : 0.0;

    DeviceModel m = start;
    auto params = [](const DeviceModel& d) { return Eigen::Vector2d(d.p_pair, d.visibility); };
    auto with = [&](Eigen::Vector2d v) {
        DeviceModel d = m;
        d.p_pair = std::clamp(v[0], 0.0, 1.0);
        d.visibility = std::clamp(v[1], 0.0, 1.0);
        return d;
    };

    auto r = weighted_residual(m, target, w);
    double cost = r.squaredNorm();
    double mu_lm = 1e-3;
    int it = 0;
    for (; it < max_iters; ++it) {
        Eigen::Matrix<double, 16, 2> Jac;
        const Eigen::Vector2d x0 = params(m);
        for (int k = 0; k < 2; ++k) {
            const double h = 1e-7;
            Eigen::Vector2d xp = x0, xm = x0;
            xp[k] = std::min(x0[k] + h, 1.0);
            xm[k] = std::max(x0[k] - h, 0.0);
            Jac.col(k) = (weighted_residual(with(xp), target, w) - weighted_residual(with(xm), target, w)) / (xp[k] - xm[k]);
        }
        const Eigen::Matrix2d JtJ = Jac.transpose() * Jac;
        const Eigen::Vector2d g = Jac.transpose() * r;
        bool improved = false;
        for (int tries = 0; tries < 30 && !improved; ++tries) {
            Eigen::Matrix2d A = JtJ;
            A.diagonal() *= (1.0 + mu_lm);
            const Eigen::Vector2d step = A.ldlt().solve(-g);
            const DeviceModel cand = with(x0 + step);
            const auto rc = weighted_residual(cand, target, w);
            const double cc = rc.squaredNorm();
            if (cc < cost) {
                const double rel = (cost - cc) / std::max(cost, 1e-300);
                m = cand;
                r = rc;
                cost = cc;
                mu_lm = std::max(mu_lm / 3.0, 1e-12);
                improved = true;
                if (rel < 1e-14) it = max_iters;
            } else {
                mu_lm *= 4.0;
            }
        }
        if (!improved) break;
    }

    CalibrationResult res;
    res.model = m;
    res.weighted_residual = cost;
    res.iterations = it;
    const auto p = predicted_behavior(m);
    for (int i = 0; i < 16; ++i) res.max_abs_error = std::max(res.max_abs_error, std::abs(p.p[i] - target.p[i]));
    return res;
}

}  // namespace diqre
