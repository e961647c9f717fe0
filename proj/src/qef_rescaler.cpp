#include "diqre/qef_rescaler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <thread>

#include <Eigen/Eigenvalues>

#include "diqre/errors.hpp"

namespace diqre {

namespace {

constexpr double kEigClip = 1e-300;
constexpr double kCloseEig = 1e-12;

// Unit eigenvector of the qubit observable along angle theta in the x-z plane.
Eigen::Vector2d qubit_vector(int a, int x, double theta) {
    const double h = (x == 0 ? 0.0 : theta) / 2.0;
    if (a == 0) return {std::cos(h), std::sin(h)};
    return {-std::sin(h), std::cos(h)};
}

std::array<Eigen::Vector4d, 16> real_vectors(double theta1, double theta2) {
    std::array<Eigen::Vector4d, 16> out;
    for (int i = 0; i < 16; ++i) {
        const int a = i >> 3, b = (i >> 2) & 1, x = (i >> 1) & 1, y = i & 1;
        const Eigen::Vector2d va = qubit_vector(a, x, theta1);
        const Eigen::Vector2d vb = qubit_vector(b, y, theta2);
        out[i] << va[0] * vb[0], va[0] * vb[1], va[1] * vb[0], va[1] * vb[1];
    }
    return out;
}

// (l1^p - l2^p) / (l1 - l2), with the derivative p l^(p-1) for near-equal pairs.
double divided_difference(double l1, double l2, double p) {
    const double d = l1 - l2;
    if (std::abs(d) <= kCloseEig * std::max(l1, l2) || d == 0.0) {
        const double m = 0.5 * (l1 + l2);
        return p * std::pow(m, p - 1.0);
    }
    const double x = d / l2;
    return std::pow(l2, p - 1.0) * std::expm1(p * std::log1p(x)) / x;
}

template <class Scalar>
struct Core {
    using Mat = Eigen::Matrix<Scalar, 4, 4>;
    using Vec = Eigen::Matrix<Scalar, 4, 1>;

    // Weighted objective sum_i c_i Tr[P_i tau^p]^alpha; gradient written to *grad when given.
    static double eval(const Mat& tau, const std::array<Vec, 16>& v, const std::array<double, 16>& c, double alpha,
                       Mat* grad) {
        Eigen::SelfAdjointEigenSolver<Mat> es(tau);
        if (es.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
        const Eigen::Vector4d lam = es.eigenvalues();
        const Mat& U = es.eigenvectors();
        const double p = 1.0 / alpha;
        Eigen::Vector4d lc, lp;
        for (int k = 0; k < 4; ++k) {
            if (lam[k] < -1e-10) throw NumericError("state has a negative eigenvalue");
            lc[k] = std::max(lam[k], kEigClip);
            lp[k] = std::pow(lc[k], p);
        }
        double value = 0.0;
        Mat M = Mat::Zero();
        for (int i = 0; i < 16; ++i) {
            if (c[i] == 0.0) continue;
            const Vec w = U.adjoint() * v[i];
            double t = 0.0;
            for (int k = 0; k < 4; ++k) t += lp[k] * std::norm(w[k]);
            const double ta = std::pow(t, alpha);
            value += c[i] * ta;
            if (grad) M.noalias() += (alpha * c[i] * ta / t) * (w * w.adjoint());
        }
        if (grad) {
            for (int k = 0; k < 4; ++k)
                for (int l = 0; l < 4; ++l) M(k, l) *= divided_difference(lc[k], lc[l], p);
            *grad = U * M * U.adjoint();
        }
        return value;
    }
};

using RealCore = Core<double>;
using ComplexCore = Core<std::complex<double>>;

std::array<double, 16> weights(const std::array<double, 16>& Ftilde, const InputDistribution& mu) {
    std::array<double, 16> c;
    for (int i = 0; i < 16; ++i) c[i] = mu.mu[setting_of(i)] * Ftilde[i];
    return c;
}

void check_hermitian(const Matrix4& tau) {
    if ((tau - tau.adjoint()).cwiseAbs().maxCoeff() > 1e-12) throw NumericError("state is not Hermitian");
}

}  // namespace

Eigen::Matrix2cd qubit_projector(int a, int x, double theta) {
    const Eigen::Vector2d v = qubit_vector(a, x, theta);
    return (v * v.transpose()).cast<std::complex<double>>();
}

AdversaryMeasurement adversary_measurements(double theta1, double theta2) {
    if (!std::isfinite(theta1) || !std::isfinite(theta2)) throw ParameterError("angles must be finite");
    AdversaryMeasurement m;
    m.theta1 = theta1;
    m.theta2 = theta2;
    const auto rv = real_vectors(theta1, theta2);
    for (int i = 0; i < 16; ++i) m.vectors[i] = rv[i].cast<std::complex<double>>();
    return m;
}

InnerValue inner_objective(const Matrix4& tau, const AdversaryMeasurement& meas, const std::array<double, 16>& Ftilde,
                           const InputDistribution& mu, double alpha) {
    check_hermitian(tau);
    InnerValue out;
    out.value = ComplexCore::eval(tau, meas.vectors, weights(Ftilde, mu), alpha, &out.gradient);
    return out;
}

double inner_value(const Matrix4& tau, const AdversaryMeasurement& meas, const std::array<double, 16>& Ftilde,
                   const InputDistribution& mu, double alpha) {
    check_hermitian(tau);
    return ComplexCore::eval(tau, meas.vectors, weights(Ftilde, mu), alpha, nullptr);
}

namespace {

// Frank-Wolfe on real symmetric states; the projectors are real, so averaging a state with its
// complex conjugate never lowers the concave objective and the real restriction loses nothing.
FwResult frank_wolfe_real(const std::array<Eigen::Vector4d, 16>& v, const std::array<double, 16>& c, double alpha,
                          const FwOptions& opts, const Eigen::Matrix4d* warm) {
    using Mat = Eigen::Matrix4d;
    Mat tau;
    if (warm) {
        tau = *warm;
    } else {
        Mat W = Mat::Zero();
        for (int i = 0; i < 16; ++i) W.noalias() += c[i] * v[i] * v[i].transpose();
        Eigen::SelfAdjointEigenSolver<Mat> es(W);
        const Eigen::Vector4d top = es.eigenvectors().col(3);
        tau = (1.0 - 1e-3) * top * top.transpose() + (1e-3 / 4.0) * Mat::Identity();
    }

    FwResult res;
    res.lower = -std::numeric_limits<double>::infinity();
    res.upper = std::numeric_limits<double>::infinity();
    Mat G;
    double f = RealCore::eval(tau, v, c, alpha, &G);
    for (int it = 0; it < opts.max_iters; ++it) {
        res.iterations = it + 1;
        if (f > res.lower) {
            res.lower = f;
            res.tau_best = tau.cast<std::complex<double>>();
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(G);
        const double lmax = es.eigenvalues()[3];
        const Eigen::Vector4d s = es.eigenvectors().col(3);
        const double gap = lmax - f;  // <G, tau> = f by homogeneity
        if (opts.record_trace) res.gap_trace.push_back(gap);

        if (gap <= 0.5 * opts.tol) {
            // Exact supergradient at a full-rank neighbour gives a rigorous upper bound.
            const Mat safe = (1.0 - 1e-12) * tau + (1e-12 / 4.0) * Mat::Identity();
            Mat Gs;
            RealCore::eval(safe, v, c, alpha, &Gs);
            Eigen::SelfAdjointEigenSolver<Mat> ess(Gs, Eigen::EigenvaluesOnly);
            res.upper = std::min(res.upper, ess.eigenvalues()[3]);
            if (res.upper - res.lower <= opts.tol) {
                res.converged = true;
                break;
            }
        }

        const Mat D = s * s.transpose() - tau;
        double step;
        if (opts.step == StepRule::OpenLoop) {
            step = 2.0 / (it + 2.0);
        } else {
            // phi(s) = f(tau + s D) is concave; find the root of phi' on [0, 1).
            double lo = 0.0, dlo = gap;
            double hi = 1.0 - 1e-12;
            Mat Gh;
            RealCore::eval(tau + hi * D, v, c, alpha, &Gh);
            double dhi = (Gh.cwiseProduct(D)).sum();
            if (dhi >= 0.0) {
                step = hi;
            } else {
                step = 0.5;
                int side = 0;
                for (int k = 0; k < 12; ++k) {
                    step = (lo * dhi - hi * dlo) / (dhi - dlo);
                    if (!(step > lo && step < hi)) step = 0.5 * (lo + hi);
                    Mat Gm;
                    RealCore::eval(tau + step * D, v, c, alpha, &Gm);
                    const double dm = (Gm.cwiseProduct(D)).sum();
                    if (std::abs(dm) <= 1e-3 * gap || hi - lo < 1e-15) break;
                    if (dm > 0.0) {
                        lo = step;
                        dlo = dm;
                        if (side == 1) dhi *= 0.5;
                        side = 1;
                    } else {
                        hi = step;
                        dhi = dm;
                        if (side == -1) dlo *= 0.5;
                        side = -1;
                    }
                }
            }
        }
        const Mat next = tau + step * D;
        Mat Gn;
        const double fn = RealCore::eval(next, v, c, alpha, &Gn);
        if (opts.step == StepRule::ExactLineSearch && fn < f) {
            // no progress along the conditional-gradient direction; keep the certified state
            if (opts.record_trace) res.gap_trace.push_back(gap);
            Mat Gs;
            const Mat safe = (1.0 - 1e-12) * tau + (1e-12 / 4.0) * Mat::Identity();
            RealCore::eval(safe, v, c, alpha, &Gs);
            Eigen::SelfAdjointEigenSolver<Mat> ess(Gs, Eigen::EigenvaluesOnly);
            res.upper = std::min(res.upper, ess.eigenvalues()[3]);
            res.converged = res.upper - res.lower <= opts.tol;
            break;
        }
        tau = next;
        G = Gn;
        f = fn;
    }
    if (!std::isfinite(res.upper)) {
        const Mat safe = (1.0 - 1e-12) * tau + (1e-12 / 4.0) * Mat::Identity();
        Mat Gs;
        RealCore::eval(safe, v, c, alpha, &Gs);
        Eigen::SelfAdjointEigenSolver<Mat> ess(Gs, Eigen::EigenvaluesOnly);
        res.upper = ess.eigenvalues()[3];
    }
    if (f > res.lower) {
        res.lower = f;
        res.tau_best = tau.cast<std::complex<double>>();
    }
    res.upper = std::max(res.upper, res.lower);
    return res;
}

}  // namespace

FwResult frank_wolfe_ftheta(double theta1, double theta2, const std::array<double, 16>& Ftilde,
                            const InputDistribution& mu, double alpha, const FwOptions& opts,
                            const Matrix4* warm_start) {
    if (!(opts.tol > 0.0)) throw ParameterError("Frank-Wolfe tolerance must be positive");
    const auto v = real_vectors(theta1, theta2);
    const auto c = weights(Ftilde, mu);
    if (warm_start) {
        const Eigen::Matrix4d w = warm_start->real();
        return frank_wolfe_real(v, c, alpha, opts, &w);
    }
    return frank_wolfe_real(v, c, alpha, opts, nullptr);
}

double lattice_angle(std::int64_t i) { return static_cast<double>(i) * (std::numbers::pi / 0x1.0p40); }

double grid_inflation(double phi, double alpha) {
    if (!(phi < std::numbers::pi)) throw ParameterError("grid cell width must be below pi");
    if (phi == 0.0) return 1.0;
    return std::pow(phi / std::sin(phi), alpha);
}

namespace {

struct CornerKey {
    std::int64_t i1, i2;
    bool operator<(const CornerKey& o) const { return i1 != o.i1 ? i1 < o.i1 : i2 < o.i2; }
};

double cell_bound(const GridCell& cell, const std::map<CornerKey, CornerBound>& corners, double alpha, double* lower) {
    double up = -std::numeric_limits<double>::infinity();
    double lo = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 4; ++k) {
        const CornerKey key{cell.i1 + ((k & 1) ? cell.w1 : 0), cell.i2 + ((k & 2) ? cell.w2 : 0)};
        const auto& cb = corners.at(key);
        up = std::max(up, cb.upper);
        lo = std::max(lo, cb.lower);
    }
    if (lower) *lower = lo;
    return grid_inflation(lattice_angle(cell.w1), alpha) * grid_inflation(lattice_angle(cell.w2), alpha) * up;
}

}  // namespace

GridCertificate grid_bound_fmax(const std::array<double, 16>& Ftilde, const InputDistribution& mu, double alpha,
                                const GridOptions& opts) {
    if (opts.initial_divisions < 2) throw ParameterError("grid cells must be at most pi/2 wide");
    const std::int64_t full = std::int64_t{1} << kLatticeBits;
    if (full % opts.initial_divisions != 0) throw ParameterError("initial divisions must divide the lattice");
    const std::int64_t w0 = full / opts.initial_divisions;
    const auto c = weights(Ftilde, mu);

    std::map<CornerKey, CornerBound> corners;
    std::size_t evaluations = 0;
    auto evaluate = [&](const std::vector<CornerKey>& keys) {
        std::vector<CornerBound> out(keys.size());
        unsigned threads = std::max(1u, std::thread::hardware_concurrency());
        threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, keys.size() / 64)));
        auto work = [&](unsigned tid) {
            for (std::size_t j = tid; j < keys.size(); j += threads) {
                const auto v = real_vectors(lattice_angle(keys[j].i1), lattice_angle(keys[j].i2));
                const auto r = frank_wolfe_real(v, c, alpha, opts.fw, nullptr);
                out[j] = {keys[j].i1, keys[j].i2, r.lower, r.upper};
            }
        };
        if (threads == 1) {
            work(0);
        } else {
            std::vector<std::thread> pool;
            for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
            for (auto& th : pool) th.join();
        }
        for (const auto& cb : out) corners[{cb.i1, cb.i2}] = cb;
        evaluations += keys.size();
    };
    auto missing_corners = [&](const std::vector<GridCell>& cells) {
        std::vector<CornerKey> keys;
        std::map<CornerKey, bool> seen;
        for (const auto& cell : cells)
            for (int k = 0; k < 4; ++k) {
                const CornerKey key{cell.i1 + ((k & 1) ? cell.w1 : 0), cell.i2 + ((k & 2) ? cell.w2 : 0)};
                if (!corners.count(key) && !seen.count(key)) {
                    seen[key] = true;
                    keys.push_back(key);
                }
            }
        return keys;
    };

    std::vector<GridCell> active;
    for (int a = 0; a < opts.initial_divisions; ++a)
        for (int b = 0; b < opts.initial_divisions; ++b)
            active.push_back({a * w0, b * w0, w0, w0, 0.0, std::numeric_limits<double>::infinity(), 0});

    GridCertificate cert;
    cert.alpha = alpha;
    std::vector<GridCell> done;
    double global_lower = -std::numeric_limits<double>::infinity();
    int depth = 0;
    while (true) {
        evaluate(missing_corners(active));
        for (auto& cell : active) {
            double lo = 0.0;
            const double up = cell_bound(cell, corners, alpha, &lo);
            cell.upper = std::min(cell.upper, up);
            cell.lower = lo;
        }
        for (const auto& [k, cb] : corners) global_lower = std::max(global_lower, cb.lower);
        double global_upper = -std::numeric_limits<double>::infinity();
        for (const auto& cell : done) global_upper = std::max(global_upper, cell.upper);
        for (const auto& cell : active) global_upper = std::max(global_upper, cell.upper);
        if (!cert.history.empty()) global_upper = std::min(global_upper, cert.history.back().second);
        cert.history.emplace_back(global_lower, global_upper);
        cert.global_lower = global_lower;
        cert.global_upper = global_upper;
        cert.refinement_depth = depth;
        if (opts.progress) opts.progress(depth, done.size() + active.size(), global_lower, global_upper);

        if (global_upper - global_lower <= opts.target_gap) {
            cert.converged = true;
            done.insert(done.end(), active.begin(), active.end());
            break;
        }
        std::vector<GridCell> split;
        for (const auto& cell : active) {
            if (cell.upper > global_lower + opts.target_gap && cell.w1 > 1 && cell.w2 > 1) split.push_back(cell);
            else done.push_back(cell);
        }
        if (split.empty() || depth >= opts.max_depth ||
            evaluations + 5 * split.size() > opts.max_corner_evaluations) {
            done.insert(done.end(), split.begin(), split.end());
            break;
        }
        active.clear();
        for (const auto& cell : split) {
            const std::int64_t h1 = cell.w1 / 2, h2 = cell.w2 / 2;
            for (int k = 0; k < 4; ++k) {
                GridCell ch;
                ch.i1 = cell.i1 + ((k & 1) ? h1 : 0);
                ch.i2 = cell.i2 + ((k & 2) ? h2 : 0);
                ch.w1 = h1;
                ch.w2 = h2;
                ch.upper = cell.upper;
                ch.depth = cell.depth + 1;
                active.push_back(ch);
            }
        }
        ++depth;
    }
    cert.cells = std::move(done);
    cert.corners.reserve(corners.size());
    for (const auto& [k, cb] : corners) cert.corners.push_back(cb);
    return cert;
}

bool audit_grid_certificate(const GridCertificate& cert, double tol) {
    std::map<CornerKey, CornerBound> corners;
    double max_corner_lower = -std::numeric_limits<double>::infinity();
    for (const auto& cb : cert.corners) {
        if (cb.lower > cb.upper) return false;
        corners[{cb.i1, cb.i2}] = cb;
        max_corner_lower = std::max(max_corner_lower, cb.lower);
    }
    const std::int64_t full = std::int64_t{1} << kLatticeBits;
    // Bound of a cell = min over its quadtree ancestors of the corner formula.
    std::function<double(const GridCell&)> bound = [&](const GridCell& cell) -> double {
        const double own = cell_bound(cell, corners, cert.alpha, nullptr);
        if (cell.depth == 0) return own;
        GridCell parent = cell;
        parent.w1 = 2 * cell.w1;
        parent.w2 = 2 * cell.w2;
        parent.i1 = cell.i1 - cell.i1 % parent.w1;
        parent.i2 = cell.i2 - cell.i2 % parent.w2;
        parent.depth = cell.depth - 1;
        return std::min(own, bound(parent));
    };
    long double area = 0.0L;
    double max_upper = -std::numeric_limits<double>::infinity();
    for (const auto& cell : cert.cells) {
        if (cell.i1 < 0 || cell.i2 < 0 || cell.w1 <= 0 || cell.w2 <= 0 || cell.i1 + cell.w1 > full ||
            cell.i2 + cell.w2 > full)
            return false;
        double up = 0.0;
        try {
            up = bound(cell);
        } catch (const std::out_of_range&) {
            return false;
        }
        if (cell.upper < up * (1.0 - tol)) return false;
        max_upper = std::max(max_upper, up);
        area += static_cast<long double>(cell.w1) / full * (static_cast<long double>(cell.w2) / full);
    }
    if (std::abs(static_cast<double>(area) - 1.0) > 1e-12) return false;
    if (cert.global_lower > max_corner_lower) return false;
    if (cert.global_upper < max_upper * (1.0 - tol)) return false;
    return cert.global_lower <= cert.global_upper;
}

std::array<double, 16> normalized_factor(const EstimationFactor& F, double* f0) {
    HighPrec s = 0;
    for (const auto& v : F.values) s += v;
    if (!(s > 0)) throw ParameterError("estimation factor is identically zero");
    std::array<double, 16> out;
    for (int i = 0; i < 16; ++i) out[i] = static_cast<double>(F.values[i] / s);
    if (f0) *f0 = static_cast<double>(s);
    return out;
}

EstimationFactor qef_from_bound(const EstimationFactor& pef, const HighPrec& rescale_bound) {
    EstimationFactor q = pef;
    q.kind = FactorKind::QEF;
    const HighPrec r = rescale_bound < 1 ? HighPrec(1) : rescale_bound;
    for (auto& v : q.values) v /= r;
    q.rescale_bound = r;
    return q;
}

QefResult rescale_to_qef(const EstimationFactor& pef, const JointDistribution& nu,
                         const std::pair<InputDistribution, InputDistribution>& extremal_mus, const GridOptions& opts) {
    pef.validate();
    QefResult res;
    const auto Ft = normalized_factor(pef, &res.f0);
    HighPrec f0 = 0;
    for (const auto& v : pef.values) f0 += v;
    const double alpha = pef.alpha_double();
    res.certificates[0] = grid_bound_fmax(Ft, extremal_mus.first, alpha, opts);
    res.certificates[1] = grid_bound_fmax(Ft, extremal_mus.second, alpha, opts);
    res.ftilde_bound = std::max(res.certificates[0].global_upper, res.certificates[1].global_upper);
    res.qef = qef_from_bound(pef, f0 * HighPrec(res.ftilde_bound));
    res.pef_rate = pef_rate(pef, nu);
    res.qef_rate = pef_rate(res.qef, nu);
    return res;
}

}  // namespace diqre
