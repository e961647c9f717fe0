#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "diqre/highprec.hpp"

namespace diqre {

// Flat cell index used everywhere: a*8 + b*4 + x*2 + y.
constexpr int flat_index(int a, int b, int x, int y) { return a * 8 + b * 4 + x * 2 + y; }
constexpr int setting_of(int index) { return index & 3; }   // z = 2x + y
constexpr int outcome_of(int index) { return index >> 2; }  // c = 2a + b

inline const char* kIndexConvention = "a*8+b*4+x*2+y";

using Cells = std::array<double, 16>;

struct ConditionalBehavior {
    Cells p{};

    // Validates entries in [0,1] and per-setting normalisation.
    static ConditionalBehavior from_cells(const Cells& p, double tol = 1e-12);
    double at(int a, int b, int x, int y) const { return p[flat_index(a, b, x, y)]; }
};

enum class InputShape { SpotChecking, Product, General };

struct InputDistribution {
    std::array<double, 4> mu{};
    double q = 0.0;
    double eps_b = 0.0;
    InputShape shape = InputShape::General;

    // mu recomputed from q in high precision for the spot-checking and product shapes.
    std::array<HighPrec, 4> mu_highprec() const;
};

InputDistribution spot_checking_input(double q, double eps_b = 0.0);
InputDistribution product_input(double q_local);
InputDistribution general_input(const std::array<double, 4>& mu);

struct SpotCheckingInputs {
    InputDistribution ideal;
    InputDistribution extremal_low;
    InputDistribution extremal_high;
};

SpotCheckingInputs build_spot_checking_inputs(double q, double eps_b);

double binary_entropy(double q);
double input_entropy_rate(double q);

struct ChshStatistics {
    std::array<double, 4> E{};  // indexed by z = 2x + y
    double S = 0.0;
    double J = 0.0;
};

ChshStatistics chsh_statistics(const ConditionalBehavior& b);

struct JointDistribution {
    Cells nu{};
    InputDistribution input;

    static JointDistribution from_cells(const Cells& nu, const InputDistribution& input,
                                        double marginal_tol = 1e-12, double signaling_tol = 1e-10);
    ConditionalBehavior conditional() const;
};

JointDistribution joint_from(const ConditionalBehavior& b, const InputDistribution& input);

enum class VertexKind { LocalDeterministic, PrMixture };

struct VertexProvenance {
    VertexKind kind = VertexKind::LocalDeterministic;
    int facet = -1;          // PR mixtures only
    int deterministic = -1;  // index into the 16 deterministic behaviours
};

struct PolytopeModel {
    std::vector<ConditionalBehavior> vertices;
    std::vector<VertexProvenance> provenance;

    std::size_t size() const { return vertices.size(); }
    // Rebuilt from provenance so that sqrt(2) - 1 carries full precision.
    std::array<HighPrec, 16> vertex_highprec(std::size_t k) const;
};

// Signs (s00, s01, s10, s11) of signed CHSH facet f in [0, 8).
std::array<int, 4> facet_signs(int facet);
double facet_value(const ConditionalBehavior& b, int facet);
// Index over (a0, a1, b0, b1), a0 most significant.
ConditionalBehavior deterministic_behavior(int index);
ConditionalBehavior pr_box(int facet);
PolytopeModel build_polytope();
inline const char* kPolytopeVersion = "chsh-tsirelson-80/v1";

struct SignalingReport {
    double alice = 0.0;
    double bob = 0.0;
    bool pass = false;
};

SignalingReport check_nonsignaling(const ConditionalBehavior& b, double tol);

}  // namespace diqre
