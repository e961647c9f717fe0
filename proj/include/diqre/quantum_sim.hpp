#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "diqre/chsh_model.hpp"

namespace diqre {

struct DeviceModel {
    double theta_state = 0.0;                // radians
    std::array<double, 2> alice_angles{};    // polarizer angles for x = 0, 1 (radians)
    std::array<double, 2> bob_angles{};      // y = 0, 1
    double eta_A = 1.0;
    double eta_B = 1.0;
    double p_pair = 1.0;
    double visibility = 1.0;

    void validate() const;
};

double degrees(double deg);

// State angle 24.56 deg, A = (-83.02, -118.58), B = (6.98, -28.58), eta = (0.805, 0.822).
// p_pair and visibility are left at 1 and must be calibrated.
DeviceModel reference_device();

struct TrialOutcome {
    int a = 0;
    int b = 0;
};

ConditionalBehavior predicted_behavior(const DeviceModel& m);

// Uniform double on [0,1) with 53 random bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

TrialOutcome sample_trial(const ConditionalBehavior& b, int x, int y, std::mt19937_64& rng);

struct CalibrationResult {
    DeviceModel model;
    double weighted_residual = 0.0;  // sum of squares
    double max_abs_error = 0.0;
    int iterations = 0;
};

// Fits p_pair and visibility to target conditionals, residuals weighted by 1/sqrt(target).
CalibrationResult calibrate_device(const DeviceModel& start, const ConditionalBehavior& target,
                                   int max_iters = 200);

}  // namespace diqre
