#include "diqre/freq_mle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "diqre/errors.hpp"

namespace diqre {

std::uint64_t CountTable::total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

CountTable CountTable::from_counts(const std::array<std::uint64_t, 16>& counts) {
    CountTable t;
    t.counts = counts;
    if (t.total() == 0) throw InsufficientDataError("count table is empty");
    return t;
}

ConditionalBehavior counts_to_conditional(const CountTable& c) {
    ConditionalBehavior b;
    for (int z = 0; z < 4; ++z) {
        std::uint64_t row = 0;
        for (int cc = 0; cc < 4; ++cc) row += c.counts[cc * 4 + z];
        if (row == 0)
            throw InsufficientDataError("no counts for input class x=" + std::to_string(z >> 1) +
                                        " y=" + std::to_string(z & 1));
        for (int cc = 0; cc < 4; ++cc)
            b.p[cc * 4 + z] = static_cast<double>(c.counts[cc * 4 + z]) / static_cast<double>(row);
    }
    return b;
}

namespace {

using Vec16 = Eigen::Matrix<double, 16, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat16x8 = Eigen::Matrix<double, 16, 8>;

constexpr double kFloor = 1e-300;

// Non-signaling conditionals as an affine image of
// (P(a=1|x) for x=0,1, P(b=1|y) for y=0,1, P(11|xy) for z=0..3).
struct Param {
    Mat16x8 A = Mat16x8::Zero();
    Vec16 b = Vec16::Zero();
    Param() {
        for (int x = 0; x < 2; ++x) {
            for (int y = 0; y < 2; ++y) {
                const int z = 2 * x + y;
                A(flat_index(1, 1, x, y), 4 + z) = 1;
                A(flat_index(1, 0, x, y), x) = 1;
                A(flat_index(1, 0, x, y), 4 + z) = -1;
                A(flat_index(0, 1, x, y), 2 + y) = 1;
                A(flat_index(0, 1, x, y), 4 + z) = -1;
                b[flat_index(0, 0, x, y)] = 1;
                A(flat_index(0, 0, x, y), x) = -1;
                A(flat_index(0, 0, x, y), 2 + y) = -1;
                A(flat_index(0, 0, x, y), 4 + z) = 1;
            }
        }
    }
};

// Cells in `pinned` are held at zero and skipped.
double log_likelihood(const Vec16& w, const Vec16& P, const std::array<bool, 16>& pinned) {
    double s = 0.0;
    for (int i = 0; i < 16; ++i) {
        if (pinned[i]) continue;
        if (P[i] <= 0.0) return -std::numeric_limits<double>::infinity();
        if (w[i] > 0.0) s += w[i] * std::log(P[i]);
    }
    return s;
}

}  // namespace

MleResult mle_project(const ConditionalBehavior& p, const InputDistribution& mu, double tol, int max_iters) {
    if (!(tol > 0.0)) throw ParameterError("tolerance must be positive");
    static const Param par;
    const Mat16x8& A = par.A;
    const Vec16& b = par.b;

    Vec16 w;
    for (int i = 0; i < 16; ++i) w[i] = p.p[i];

    double shift = 0.0;
    for (int i = 0; i < 16; ++i)
        if (w[i] > 0.0) shift += w[i] * std::log(mu.mu[setting_of(i)]);

    // Already feasible: p maximises each row's likelihood outright (Gibbs), so it is optimal.
    // Handled directly because zero cells would otherwise be approached only geometrically.
    if (check_nonsignaling(p, 1e-15).pass) {
        MleResult res;
        double obj = 0.0;
        for (int i = 0; i < 16; ++i)
            if (w[i] > 0.0) obj += w[i] * std::log(w[i]);
        res.objective = res.dual_bound = obj + shift;
        res.objective_trace.push_back(res.objective);
        for (int i = 0; i < 16; ++i) res.nu.nu[i] = mu.mu[setting_of(i)] * std::max(p.p[i], kFloor);
        res.nu.input = mu;
        return res;
    }

    Vec8 theta;
    theta << 0.5, 0.5, 0.5, 0.5, 0.25, 0.25, 0.25, 0.25;
    Vec16 P = A * theta + b;

    std::array<bool, 16> pinned{};
    Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(8, 8);

    // Damped Newton ascent of sum v log P over theta + Z phi. Returns the iteration count.
    auto ascend = [&](const Vec16& v, int iters, std::vector<double>* trace) {
        double obj = log_likelihood(v, P, pinned);
        if (trace) trace->push_back(obj);
        int it = 0;
        int flat_steps = 0;
        for (; it < iters; ++it) {
            Vec16 vp = Vec16::Zero(), curv = Vec16::Zero();
            for (int i = 0; i < 16; ++i) {
                if (pinned[i]) continue;
                vp[i] = v[i] / P[i];
                curv[i] = vp[i] / P[i];
            }
            const Vec8 grad = A.transpose() * vp;
            const Eigen::MatrixXd H = Z.transpose() * A.transpose() * curv.asDiagonal() * A * Z;
            const Vec8 dx = Z * H.completeOrthogonalDecomposition().solve(Z.transpose() * grad);
            const double decrement = grad.dot(dx);
            if (!(decrement > 2e-30)) break;

            double step = 1.0;
            for (int i = 0; i < 16; ++i) {
                const double dp = (A.row(i) * dx)(0);
                if (!pinned[i] && dp < 0.0) step = std::min(step, 0.99 * (P[i] - kFloor) / -dp);
            }
            bool accepted = false;
            for (int k = 0; k < 80; ++k) {
                const Vec8 cand = theta + step * dx;
                const Vec16 Pc = A * cand + b;
                const double oc = log_likelihood(v, Pc, pinned);
                // Near the optimum the Armijo gain drops below the rounding of obj; take plain Newton steps there.
                const bool flat = decrement < 1e-14 && oc >= obj - 4e-16 * std::abs(obj);
                if (oc >= obj + 0.25 * step * decrement || flat) {
                    theta = cand;
                    P = Pc;
                    for (int i = 0; i < 16; ++i)
                        if (pinned[i]) P[i] = 0.0;
                    obj = oc;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            if (trace) trace->push_back(obj);
            if (decrement < 1e-28 || (decrement < 1e-14 && ++flat_steps > 3)) break;
        }
        return it;
    };

    // Empty cells carry no curvature, and an optimum on the boundary is then approached only
    // through the step cap. Warm start along a smoothed path, v = w + tau, tau -> 0.
    for (double tau = 1e-2; tau >= 1e-21; tau *= 1e-2) ascend(w + Vec16::Constant(tau), 100, nullptr);


    // Dual certificate. Any y >= 0 gives
    // max <= sum_w [w log(w/y) - w] + y.b + sum_j max(0, (A^T y)_j),
    // since every parameter lies in [0,1]. Take y = w/P plus nonnegative multipliers
    // on the pinned cells, fitted so that A^T y is as small as possible.
    auto certify = [&](double& kkt) {
        Vec16 y = Vec16::Zero();
        for (int i = 0; i < 16; ++i)
            if (w[i] > 0.0) y[i] = w[i] / P[i];
        for (int sweep = 0; sweep < 20000; ++sweep) {
            bool moved = false;
            for (int i = 0; i < 16; ++i) {
                if (!pinned[i]) continue;
                const double g = A.row(i).dot(A.transpose() * y);
                const double next = std::max(0.0, y[i] - g / A.row(i).squaredNorm());
                if (next != y[i]) moved = true;
                y[i] = next;
            }
            if (!moved) break;
        }
        const Vec8 r = A.transpose() * y;
        kkt = r.cwiseAbs().maxCoeff();
        double bound = y.dot(b) + r.cwiseMax(0.0).sum();
        // complementary slackness on the empty cells is covered by the duality gap
        for (int i = 0; i < 16; ++i)
            if (w[i] > 0.0) bound += w[i] * std::log(w[i] / y[i]) - w[i];
        return bound;
    };

    // Pin the empty cells the path drove to (near) zero and finish on that face. Directions
    // the path left unresolved show up as a stationarity residual; pin more loosely and retry.
    MleResult res;
    double kkt = 0.0, bound = 0.0;
    for (double pin_below : {1e-9, 1e-6, 1e-4}) {
        Eigen::MatrixXd C(0, 8);
        Eigen::VectorXd d(0);
        for (int i = 0; i < 16; ++i) {
            if (w[i] > 0.0 || !(pinned[i] || P[i] <= pin_below)) continue;
            pinned[i] = true;
            C.conservativeResize(C.rows() + 1, Eigen::NoChange);
            d.conservativeResize(d.size() + 1);
            C.row(C.rows() - 1) = A.row(i);
            d[d.size() - 1] = -b[i];
        }
        if (C.rows() > 0) {
            theta += C.completeOrthogonalDecomposition().solve(d - C * theta);
            Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
            if (lu.rank() == 8) Z = Eigen::MatrixXd::Zero(8, 1);
            else Z = lu.kernel().householderQr().householderQ() * Eigen::MatrixXd::Identity(8, 8 - lu.rank());
            P = A * theta + b;
            for (int i = 0; i < 16; ++i)
                if (pinned[i]) P[i] = 0.0;
        }
        res.iterations += ascend(w, max_iters, &res.objective_trace);
        bound = certify(kkt);
        if (kkt <= tol && bound - res.objective_trace.back() <= tol) break;
    }
    res.objective = res.objective_trace.back() + shift;
    res.dual_bound = bound + shift;
    res.kkt_residual = kkt;

    Cells nu{};
    for (int i = 0; i < 16; ++i) nu[i] = mu.mu[setting_of(i)] * std::max(P[i], kFloor);
    res.nu.nu = nu;
    res.nu.input = mu;

    if (kkt > tol || !(res.dual_bound - res.objective <= tol)) {
        std::vector<double> best(nu.begin(), nu.end());
        throw OptimizationError("maximum-likelihood projection did not reach tolerance", best, kkt);
    }
    return res;
}

}  // namespace diqre
