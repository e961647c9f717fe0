#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "diqre/chsh_model.hpp"
#include "diqre/pef_optimizer.hpp"

namespace diqre {

using Matrix4 = Eigen::Matrix4cd;
using Vector4 = Eigen::Vector4cd;

struct AdversaryMeasurement {
    double theta1 = 0.0;
    double theta2 = 0.0;
    // Rank-one projectors Q_{a|x} (x) Q_{b|y}, stored as unit vectors, by flat index.
    std::array<Vector4, 16> vectors;

    Matrix4 projector(int index) const { return vectors[index] * vectors[index].adjoint(); }
};

AdversaryMeasurement adversary_measurements(double theta1, double theta2);

// Q_{a|x;theta} on one qubit: x = 0 measures sigma_z, x = 1 the axis cos(theta) sigma_z + sin(theta) sigma_x.
Eigen::Matrix2cd qubit_projector(int a, int x, double theta);

struct InnerValue {
    double value = 0.0;
    Matrix4 gradient;
};

// sum_cz mu(z) Ftilde(cz) Tr[P tau^(1/alpha)]^alpha and its gradient in tau.
InnerValue inner_objective(const Matrix4& tau, const AdversaryMeasurement& meas, const std::array<double, 16>& Ftilde,
                           const InputDistribution& mu, double alpha);
double inner_value(const Matrix4& tau, const AdversaryMeasurement& meas, const std::array<double, 16>& Ftilde,
                   const InputDistribution& mu, double alpha);

enum class StepRule { ExactLineSearch, OpenLoop };

struct FwOptions {
    double tol = 1e-10;
    int max_iters = 500;
    StepRule step = StepRule::OpenLoop;
    bool record_trace = false;
};

struct FwResult {
    double lower = 0.0;
    double upper = 0.0;
    bool converged = false;
    int iterations = 0;
    Matrix4 tau_best;  // state attaining `lower`
    std::vector<double> gap_trace;
};

FwResult frank_wolfe_ftheta(double theta1, double theta2, const std::array<double, 16>& Ftilde,
                            const InputDistribution& mu, double alpha, const FwOptions& opts = {},
                            const Matrix4* warm_start = nullptr);

// Cells live on an integer lattice: coordinate i means theta = i * pi / 2^kLatticeBits.
inline constexpr int kLatticeBits = 40;
double lattice_angle(std::int64_t i);

struct GridCell {
    std::int64_t i1 = 0, i2 = 0;  // lower-left lattice corner
    std::int64_t w1 = 0, w2 = 0;  // widths in lattice units
    double lower = 0.0;
    double upper = 0.0;
    int depth = 0;
};

struct CornerBound {
    std::int64_t i1 = 0, i2 = 0;
    double lower = 0.0;
    double upper = 0.0;
};

struct GridCertificate {
    std::vector<GridCell> cells;     // final partition of [0,pi]^2
    std::vector<CornerBound> corners;
    double global_lower = 0.0;
    double global_upper = 0.0;
    int refinement_depth = 0;
    bool converged = false;
    double alpha = 1.0;
    std::vector<std::pair<double, double>> history;  // (global_lower, global_upper) per depth
};

struct GridOptions {
    double target_gap = 1e-7;
    int initial_divisions = 2;          // per axis; widths of pi / divisions
    std::size_t max_corner_evaluations = 20'000'000;
    int max_depth = 30;
    FwOptions fw{};
    std::function<void(int depth, std::size_t cells, double lower, double upper)> progress;
};

// (phi / sin phi)^alpha for a cell of width phi along one axis.
double grid_inflation(double phi, double alpha);

GridCertificate grid_bound_fmax(const std::array<double, 16>& Ftilde, const InputDistribution& mu, double alpha,
                                const GridOptions& opts);

// Re-derives every cell bound from the stored corner bounds.
bool audit_grid_certificate(const GridCertificate& cert, double tol = 1e-15);

struct QefResult {
    EstimationFactor qef;
    double f0 = 0.0;
    double ftilde_bound = 0.0;
    double pef_rate = 0.0;
    double qef_rate = 0.0;
    std::array<GridCertificate, 2> certificates;
};

std::array<double, 16> normalized_factor(const EstimationFactor& F, double* f0 = nullptr);

QefResult rescale_to_qef(const EstimationFactor& pef, const JointDistribution& nu,
                         const std::pair<InputDistribution, InputDistribution>& extremal_mus, const GridOptions& opts);

// Builds a QEF from a PEF and an externally supplied rescaling bound.
EstimationFactor qef_from_bound(const EstimationFactor& pef, const HighPrec& rescale_bound);

}  // namespace diqre
