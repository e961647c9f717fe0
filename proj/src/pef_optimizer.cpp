#include "diqre/pef_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "diqre/errors.hpp"

namespace diqre {

namespace mp = boost::multiprecision;

void EstimationFactor::validate() const {
    if (!(alpha > 1)) throw ParameterError("estimation factor power must exceed 1");
    for (const auto& v : values)
        if (v < 0) throw ParameterError("estimation factor values must be nonnegative");
    if (kind == FactorKind::QEF) {
        if (!rescale_bound || *rescale_bound < 1) throw ParameterError("QEF requires a rescale bound >= 1");
    }
}

std::array<double, 16> EstimationFactor::log2_values() const {
    std::array<double, 16> out;
    const HighPrec ln2 = mp::log(HighPrec(2));
    for (int i = 0; i < 16; ++i)
        out[i] = values[i] > 0 ? static_cast<double>(mp::log(values[i]) / ln2) : -std::numeric_limits<double>::infinity();
    return out;
}

EstimationFactor uniform_factor(double value, const HighPrec& alpha) {
    EstimationFactor F;
    F.values.fill(HighPrec(value));
    F.alpha = alpha;
    return F;
}

HighPrec pef_constraint_value(const EstimationFactor& F, const std::array<HighPrec, 16>& vertex,
                              const std::array<HighPrec, 4>& mu) {
    const HighPrec beta = F.beta_highprec();
    HighPrec s = 0;
    for (int i = 0; i < 16; ++i) {
        const HighPrec& t = vertex[i];
        if (t <= 0) continue;
        const HighPrec tb = (t == 1) ? HighPrec(1) : mp::exp(beta * mp::log(t));
        s += F.values[i] * tb * mu[setting_of(i)] * t;
    }
    return s;
}

HighPrec pef_constraint_value(const EstimationFactor& F, const ConditionalBehavior& vertex,
                              const InputDistribution& mu) {
    return pef_constraint_value(F, to_highprec(vertex.p), mu.mu_highprec());
}

FeasibilityReport verify_feasibility(const EstimationFactor& F, const PolytopeModel& polytope,
                                     const std::vector<InputDistribution>& mus) {
    FeasibilityReport r;
    r.worst_constraint = -1;
    std::vector<std::array<HighPrec, 16>> verts;
    verts.reserve(polytope.size());
    for (std::size_t k = 0; k < polytope.size(); ++k) verts.push_back(polytope.vertex_highprec(k));
    for (const auto& m : mus) {
        const auto muh = m.mu_highprec();
        for (const auto& v : verts) {
            r.per_vertex.push_back(pef_constraint_value(F, v, muh));
            if (r.per_vertex.back() > r.worst_constraint) r.worst_constraint = r.per_vertex.back();
        }
    }
    r.margin = 1 - r.worst_constraint;
    return r;
}

double pef_rate(const EstimationFactor& F, const JointDistribution& nu) {
    const HighPrec ln2 = mp::log(HighPrec(2));
    HighPrec s = 0;
    for (int i = 0; i < 16; ++i) {
        if (nu.nu[i] <= 0.0) continue;
        if (F.values[i] <= 0) return -std::numeric_limits<double>::infinity();
        s += HighPrec(nu.nu[i]) * mp::log(F.values[i]);
    }
    return static_cast<double>(s / ln2 / F.beta_highprec());
}

EstimationFactor feasibility_shrink(const EstimationFactor& F, const FeasibilityReport& report) {
    if (report.worst_constraint <= 1) return F;
    EstimationFactor out = F;
    for (auto& v : out.values) v /= report.worst_constraint;
    return out;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// x - log1p(x), accurate near 0.
double x_minus_log1p(double x) {
    if (std::abs(x) < 1e-3) {
        const double x2 = x * x;
        return x2 / 2 - x2 * x / 3 + x2 * x2 / 4 - x2 * x2 * x / 5 + x2 * x2 * x2 / 6;
    }
    return x - std::log1p(x);
}

struct BarrierProblem {
    MatrixXd A;  // constraints x active cells
    VectorXd d;
    VectorXd nu;
    double beta = 0.0;

    VectorXd g(const VectorXd& u) const {
        VectorXd e(u.size());
        for (int i = 0; i < u.size(); ++i) e[i] = std::expm1(beta * u[i]) / beta;
        return A * e + d;
    }
    double barrier(const VectorXd& u, double t, bool* feasible) const {
        const VectorXd gu = g(u);
        if ((gu.array() >= 0.0).any()) {
            *feasible = false;
            return std::numeric_limits<double>::infinity();
        }
        *feasible = true;
        return -t * nu.dot(u) - (-gu.array()).log().sum();
    }
    // barrier(u + du) - barrier(u), formed from increments so large t does not swamp it.
    double barrier_delta(const VectorXd& u, const VectorXd& du, const VectorXd& gu, double t, bool* feasible) const {
        VectorXd de(u.size());
        for (int i = 0; i < u.size(); ++i) de[i] = std::exp(beta * u[i]) * std::expm1(beta * du[i]) / beta;
        const VectorXd dg = A * de;
        double val = -t * nu.dot(du);
        for (int k = 0; k < dg.size(); ++k) {
            const double r = dg[k] / -gu[k];
            if (!(r < 1.0) || !(gu[k] + dg[k] < 0.0)) {
                *feasible = false;
                return std::numeric_limits<double>::infinity();
            }
            val -= std::log1p(-r);
        }
        *feasible = true;
        return val;
    }
    // Newton on the dual over the constraints with non-negligible multipliers. The central-path
    // multipliers 1/(t s) lose accuracy once slacks approach the rounding of g; the dual
    // Hessian is O(1/beta), so a few exact steps recover the lost bound.
    VectorXd refine_multipliers(const VectorXd& lambda0) const {
        const double top = lambda0.maxCoeff();
        std::vector<int> K;
        for (int k = 0; k < lambda0.size(); ++k)
            if (lambda0[k] > 1e-8 * top) K.push_back(k);
        const int m = static_cast<int>(K.size());
        MatrixXd AK(m, A.cols());
        VectorXd dK(m), lam(m);
        for (int r = 0; r < m; ++r) {
            AK.row(r) = A.row(K[r]);
            dK[r] = d[K[r]];
            lam[r] = lambda0[K[r]];
        }
        auto value = [&](const VectorXd& l, bool* ok) {
            const VectorXd w = AK.transpose() * l;
            double v = 0.0;
            for (int i = 0; i < w.size(); ++i) {
                if (!(w[i] > 0.0)) {
                    *ok = false;
                    return 0.0;
                }
                v += nu[i] * x_minus_log1p(w[i] / nu[i] - 1.0);
            }
            *ok = true;
            return v / beta - l.dot(dK);
        };
        bool ok = false;
        double cur = value(lam, &ok);
        if (!ok) return lambda0;
        for (int it = 0; it < 30; ++it) {
            const VectorXd w = AK.transpose() * lam;
            VectorXd r(w.size()), c(w.size());
            for (int i = 0; i < w.size(); ++i) {
                r[i] = (1.0 - nu[i] / w[i]) / beta;
                c[i] = nu[i] / (w[i] * w[i]) / beta;
            }
            const VectorXd grad = AK * r - dK;
            const MatrixXd H = AK * c.asDiagonal() * AK.transpose();
            const VectorXd step = -H.completeOrthogonalDecomposition().solve(grad);
            double a = 1.0;
            for (int i = 0; i < m; ++i)
                if (step[i] < 0.0) a = std::min(a, 0.99 * lam[i] / -step[i]);
            bool moved = false;
            for (int ls = 0; ls < 40; ++ls, a *= 0.5) {
                const VectorXd cand = lam + a * step;
                bool c_ok = false;
                const double v = value(cand, &c_ok);
                if (c_ok && v < cur) {
                    lam = cand;
                    cur = v;
                    moved = true;
                    break;
                }
            }
            if (!moved) break;
        }
        VectorXd out = VectorXd::Zero(lambda0.size());
        for (int r = 0; r < m; ++r) out[K[r]] = lam[r];
        return out;
    }
    // Lagrangian dual value for multipliers lambda >= 0, optimised over a scalar multiple.
    double dual(const VectorXd& lambda) const {
        VectorXd w = A.transpose() * lambda;
        const double ld = lambda.dot(d);
        const double denom = w.sum() - beta * ld;
        const double s = denom > 0.0 ? nu.sum() / denom : 1.0;
        double val = 0.0;
        for (int i = 0; i < w.size(); ++i) {
            if (!(w[i] > 0.0)) return std::numeric_limits<double>::infinity();
            const double x = s * w[i] / nu[i] - 1.0;
            val += nu[i] * x_minus_log1p(x);
        }
        return val / beta - s * ld;
    }
};

}  // namespace

PefResult optimize_pef(const JointDistribution& nu, const HighPrec& alpha, const PolytopeModel& polytope,
                       const std::vector<InputDistribution>& mus, const PefOptions& opts) {
    if (!(alpha > 1)) throw ParameterError("alpha must exceed 1");
    if (mus.empty()) throw ParameterError("at least one input distribution is required");
    const double beta = static_cast<double>(alpha - 1);

    std::vector<int> active;
    for (int i = 0; i < 16; ++i)
        if (nu.nu[i] > 0.0) active.push_back(i);
    if (active.empty()) throw ParameterError("distribution has no positive cells");
    const int n = static_cast<int>(active.size());

    BarrierProblem P;
    P.beta = beta;
    P.nu.resize(n);
    for (int j = 0; j < n; ++j) P.nu[j] = nu.nu[active[j]];

    std::vector<VectorXd> rows;
    std::vector<double> ds;
    for (const auto& m : mus) {
        for (const auto& v : polytope.vertices) {
            VectorXd row = VectorXd::Zero(n);
            double dk = 0.0;
            std::array<bool, 16> is_active{};
            for (int i : active) is_active[i] = true;
            for (int i = 0; i < 16; ++i) {
                const double t = v.p[i];
                if (t <= 0.0) continue;
                const double mz = m.mu[setting_of(i)];
                if (is_active[i]) dk += mz * t * std::expm1(beta * std::log(t)) / beta;
                else dk -= mz * t / beta;
            }
            for (int j = 0; j < n; ++j) {
                const double t = v.p[active[j]];
                if (t > 0.0) row[j] = m.mu[setting_of(active[j])] * std::exp((1.0 + beta) * std::log(t));
            }
            if (row.maxCoeff() <= 0.0) continue;  // constant in u
            rows.push_back(row);
            ds.push_back(dk);
        }
    }
    const int mcount = static_cast<int>(rows.size());
    P.A.resize(mcount, n);
    P.d.resize(mcount);
    for (int k = 0; k < mcount; ++k) {
        P.A.row(k) = rows[k].transpose();
        P.d[k] = ds[k];
    }

    VectorXd u = VectorXd::Constant(n, -1.0);
    bool feas = false;
    P.barrier(u, 1.0, &feas);
    if (!feas) throw OptimizationError("initial point is infeasible", {}, 0.0);

    const double ln2 = std::log(2.0);
    double t = 1.0;
    int steps = 0;
    double best_dual = std::numeric_limits<double>::infinity();
    double primal = P.nu.dot(u);
    bool converged = false;
    while (true) {
        for (int inner = 0; inner < 100 && steps < opts.max_newton * 50; ++inner, ++steps) {
            const VectorXd gu = P.g(u);
            const VectorXd s = -gu;
            VectorXd e(n);
            for (int i = 0; i < n; ++i) e[i] = std::exp(beta * u[i]);
            MatrixXd J = P.A * e.asDiagonal();  // dg/du
            for (int k = 0; k < mcount; ++k) J.row(k) /= s[k];
            const VectorXd grad = -t * P.nu + J.colwise().sum().transpose();
            VectorXd diag_term = VectorXd::Zero(n);
            for (int k = 0; k < mcount; ++k) diag_term += (P.A.row(k).transpose().cwiseProduct(e)) * (beta / s[k]);
            // Newton system (J^T J + diag) dx = -grad posed as least squares, so the
            // conditioning is that of J rather than J^T J.
            MatrixXd K(mcount + n, n);
            K.topRows(mcount) = J;
            K.bottomRows(n) = diag_term.cwiseSqrt().asDiagonal();
            VectorXd rhs(mcount + n);
            rhs.head(mcount).setConstant(-1.0);
            rhs.tail(n) = t * P.nu.cwiseQuotient(diag_term.cwiseSqrt());
            const VectorXd colnorm = K.colwise().norm().transpose().cwiseInverse();
            const VectorXd dx = colnorm.asDiagonal() * (K * colnorm.asDiagonal()).householderQr().solve(rhs);
            const double lam2 = -grad.dot(dx);
            if (!(lam2 > 1e-9)) break;
            bool ok = false;
            double step = 1.0;
            for (int ls = 0; ls < 60; ++ls) {
                bool fn_ok = false;
                const double df = P.barrier_delta(u, step * dx, gu, t, &fn_ok);
                if (fn_ok && df <= -0.25 * step * lam2) {
                    u += step * dx;
                    ok = true;
                    break;
                }
                step *= 0.5;
            }
            if (!ok) break;
        }
        primal = P.nu.dot(u);
        const VectorXd gu = P.g(u);
        VectorXd lambda(mcount);
        for (int k = 0; k < mcount; ++k) lambda[k] = 1.0 / (t * -gu[k]);
        best_dual = std::min({best_dual, P.dual(lambda), P.dual(P.refine_multipliers(lambda))});
        const double gap_bits = (best_dual - primal) / ln2;
        if (gap_bits <= opts.tol * std::abs(primal / ln2) + opts.abs_tol) {
            converged = true;
            break;
        }
        if (t >= opts.t_max || steps >= opts.max_newton * 50) break;
        t *= 10.0;
    }
    if (!converged) {
        std::vector<double> best(u.data(), u.data() + n);
        throw OptimizationError("PEF barrier solve did not reach the requested duality gap", best,
                                (best_dual - primal) / ln2);
    }

    EstimationFactor F;
    F.alpha = alpha;
    F.kind = FactorKind::PEF;
    const HighPrec beta_hp = alpha - 1;
    for (int i = 0; i < 16; ++i) F.values[i] = 0;
    for (int j = 0; j < n; ++j) F.values[active[j]] = mp::exp(beta_hp * HighPrec(u[j]));

    if (n < 16) {
        // Unobserved cells: largest value keeping every constraint feasible, capped at 1.
        std::vector<std::array<HighPrec, 16>> verts;
        for (std::size_t k = 0; k < polytope.size(); ++k) verts.push_back(polytope.vertex_highprec(k));
        std::vector<std::array<HighPrec, 4>> muh;
        for (const auto& m : mus) muh.push_back(m.mu_highprec());
        for (int i = 0; i < 16; ++i) {
            if (nu.nu[i] > 0.0) continue;
            HighPrec best = 1;
            for (const auto& m : muh) {
                for (const auto& v : verts) {
                    if (v[i] <= 0) continue;
                    const HighPrec used = pef_constraint_value(F, v, m);
                    const HighPrec coeff = m[setting_of(i)] * v[i] * mp::exp(beta_hp * mp::log(v[i]));
                    if (coeff <= 0) continue;
                    HighPrec room = (1 - used) / coeff;
                    if (room < 0) room = 0;
                    if (room < best) best = room;
                }
            }
            F.values[i] = best;
        }
    }

    PefResult res;
    const auto report = verify_feasibility(F, polytope, mus);
    const double rate_before = pef_rate(F, nu);
    res.F = feasibility_shrink(F, report);
    res.report = verify_feasibility(res.F, polytope, mus);
    res.rate = pef_rate(res.F, nu);
    res.shrink_loss = rate_before - res.rate;
    res.dual_bound = best_dual / ln2;
    res.gap = res.dual_bound - res.rate;
    res.newton_steps = steps;
    return res;
}

AlphaScan scan_alpha(const JointDistribution& nu, const std::vector<HighPrec>& alphas, const PolytopeModel& polytope,
                     const std::vector<InputDistribution>& mus, const AlphaScanOptions& opts) {
    if (alphas.empty()) throw ParameterError("alpha list is empty");
    AlphaScan scan;
    for (const auto& a : alphas) {
        AlphaScanEntry e;
        e.alpha = a;
        e.result = optimize_pef(nu, a, polytope, mus, opts.pef);
        e.objective = e.result.rate - opts.r_in;
        if (opts.horizon > 0.0) {
            const double beta = static_cast<double>(a - 1);
            const double alpha_d = static_cast<double>(a);
            const double penalty = std::log2(2.0 / (opts.eps_s * opts.eps_s)) + alpha_d * std::log2(1.0 / opts.gamma);
            e.objective -= penalty / (beta * opts.horizon);
        }
        scan.table.push_back(std::move(e));
    }
    // Smallest alpha wins ties.
    std::vector<std::size_t> order(scan.table.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return scan.table[l].alpha < scan.table[r].alpha; });
    std::size_t best = order[0];
    for (std::size_t i : order)
        if (scan.table[i].objective > scan.table[best].objective + opts.tie_tol) best = i;
    scan.best = best;
    return scan;
}

}  // namespace diqre
