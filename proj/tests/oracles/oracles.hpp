// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used by the unit and acceptance tests.
// They share no code with the library beyond plain data types.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace oracle {

/// Index of the max-dot-product codeword among all 2^b sign patterns / sqrt(b).
/// Bit i of the result is 1 when channel i of the codeword is positive.
std::uint64_t nearest_codeword(std::span<const double> x);

/// Bilinear resample of one (H x W) plane by direct summation of tent weights
/// over every source pixel, half-pixel centres, coordinates clamped to the grid.
std::vector<double> bilinear_direct(std::span<const double> plane, int H, int W, int h, int w);

/// MSE computed as a difference buffer first, then a separate summation pass.
double mse_two_pass(std::span<const double> a, std::span<const double> b);

/// One content block for the pair oracle.
struct Block {
    int pyramid = 0;
    std::int64_t size = 0;
};

/// Dense visibility matrix (n x n, row = query) decided pair by pair.
/// variant: "var_full", "full_history", "preceding_only", "ssa" (with depth m).
std::vector<std::vector<bool>> mask_pairs(const std::vector<Block>& blocks, std::int64_t n_cond,
                                          const std::string& variant, int m = 1);

std::int64_t count_pairs(const std::vector<std::vector<bool>>& dense);

/// Histogram estimate of sum_i [mean_n H(p_ni) - H(mean_n p_ni)] with
/// p = sigmoid(tau * u); u is positions x b row-major.
double entropy_penalty_histogram(std::span<const double> u, int b, double tau);

/// -[y log s + (1-y) log(1-s)], s = 1/(1+exp(-z)), written out directly.
double naive_bce(double z, int y);

/// Position of a shape's top-left corner per frame, simulated step by step with
/// reflection at [0, limit].
std::vector<double> reflect_walk(double start, double velocity, double limit, int frames);

}  // namespace oracle
