#pragma once

#include "premap/model.hpp"

#include <cstdint>
#include <vector>

namespace premap::kernels {

// Pre-activations of every stage for each row of X.  Rows are independent;
// the parallel build runs them across threads, each writing its own slot, so
// the result is identical to the serial loop.
std::vector<Matrix> batch_pre_activations(const CompiledNet& net, const Matrix& X);

// Per-row conjunction of plane rows: inside[r] = all_k (A x_r + b)_k >= 0.
void plane_membership(const Matrix& A, const Vector& b, const Matrix& X,
                      std::vector<char>& inside);

// Weighted fraction sum(w[inside]) / sum(w); 0 when the total weight is 0.
// The reduction is serial and index-ordered, so results are bit-stable.
double weighted_fraction(const std::vector<char>& inside, const Vector& w);

// Bootstrap resample fractions: each seed drives one resample of n indices
// with replacement, shared between the two masks, yielding that replicate's
// weighted in-P and in-O fractions.  Replicates are independent, so the loop
// parallelizes without changing any draw.
void bootstrap_fractions(const std::vector<char>& inP, const std::vector<char>& inO,
                         const Vector& w, const std::vector<std::uint64_t>& seeds,
                         std::vector<double>& fracP, std::vector<double>& fracO);

}  // namespace premap::kernels
