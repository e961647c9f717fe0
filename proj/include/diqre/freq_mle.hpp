#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "diqre/chsh_model.hpp"

namespace diqre {

struct CountTable {
    std::array<std::uint64_t, 16> counts{};

    std::uint64_t total() const;
    static CountTable from_counts(const std::array<std::uint64_t, 16>& counts);
};

ConditionalBehavior counts_to_conditional(const CountTable& c);

struct MleResult {
    JointDistribution nu;
    double objective = 0.0;    // sum_i p_i log nu_i
    double dual_bound = 0.0;   // upper bound on the optimal objective
    double kkt_residual = 0.0;
    int iterations = 0;
    std::vector<double> objective_trace;
};

// Maximises sum p(ab|xy) log nu(abxy) over non-signaling nu with input marginal mu.
MleResult mle_project(const ConditionalBehavior& p, const InputDistribution& mu, double tol, int max_iters = 500);

}  // namespace diqre
