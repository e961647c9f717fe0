#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "diqre/chsh_model.hpp"
#include "diqre/highprec.hpp"

namespace diqre {

enum class FactorKind { PEF, QEF };

struct EstimationFactor {
    std::array<HighPrec, 16> values{};
    HighPrec alpha = 1;
    FactorKind kind = FactorKind::PEF;
    std::optional<HighPrec> rescale_bound;  // QEF only

    void validate() const;
    HighPrec beta_highprec() const { return alpha - 1; }
    double beta() const { return static_cast<double>(alpha - 1); }
    double alpha_double() const { return static_cast<double>(alpha); }
    // log2 F per cell; -inf for zero cells.
    std::array<double, 16> log2_values() const;
};

EstimationFactor uniform_factor(double value, const HighPrec& alpha);

struct FeasibilityReport {
    HighPrec worst_constraint = 0;
    HighPrec margin = 1;
    std::vector<HighPrec> per_vertex;  // vertex-major within each input distribution
};

// sum_cz F(cz) tau(c|z)^(alpha-1) mu(z) tau(c|z); zero cells contribute 0.
HighPrec pef_constraint_value(const EstimationFactor& F, const std::array<HighPrec, 16>& vertex,
                              const std::array<HighPrec, 4>& mu);
HighPrec pef_constraint_value(const EstimationFactor& F, const ConditionalBehavior& vertex,
                              const InputDistribution& mu);

FeasibilityReport verify_feasibility(const EstimationFactor& F, const PolytopeModel& polytope,
                                     const std::vector<InputDistribution>& mus);

// sum nu log2 F / (alpha - 1), bits per trial.
double pef_rate(const EstimationFactor& F, const JointDistribution& nu);

struct PefOptions {
    double tol = 1e-6;          // relative duality gap
    double abs_tol = 1e-12;     // absolute gap floor, bits per trial
    int max_newton = 400;
    double t_max = 1e20;
};

struct PefResult {
    EstimationFactor F;
    FeasibilityReport report;
    double rate = 0.0;        // of the returned, verified factor
    double dual_bound = 0.0;  // upper bound on the optimal rate
    double gap = 0.0;
    double shrink_loss = 0.0;
    int newton_steps = 0;
};

PefResult optimize_pef(const JointDistribution& nu, const HighPrec& alpha, const PolytopeModel& polytope,
                       const std::vector<InputDistribution>& mus, const PefOptions& opts = {});

// Scales F down so the worst constraint becomes 1; never scales up.
EstimationFactor feasibility_shrink(const EstimationFactor& F, const FeasibilityReport& report);

struct AlphaScanEntry {
    HighPrec alpha;
    PefResult result;
    double objective = 0.0;  // net rate used for selection
};

struct AlphaScanOptions {
    double r_in = 0.0;
    // When positive, the selection objective also subtracts the finite-size penalty
    // [log2(2/eps_s^2) + alpha log2(1/gamma)] / ((alpha-1) horizon).
    double horizon = 0.0;
    double eps_s = 0x1.0p-32;
    double gamma = 0.99;
    double tie_tol = 1e-9;
    PefOptions pef;
};

struct AlphaScan {
    std::vector<AlphaScanEntry> table;
    std::size_t best = 0;
    const AlphaScanEntry& best_entry() const { return table.at(best); }
};

AlphaScan scan_alpha(const JointDistribution& nu, const std::vector<HighPrec>& alphas, const PolytopeModel& polytope,
                     const std::vector<InputDistribution>& mus, const AlphaScanOptions& opts);

}  // namespace diqre
