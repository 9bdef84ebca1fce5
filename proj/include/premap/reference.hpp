#pragma once

#include "premap/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

// Serial reference implementations written as straight-line index loops,
// independent of the compiled-stage path and of the OpenMP kernels.  They are
// the comparison lane for the benchmark tool and the ground truth the test
// suite checks the fast lane against.
namespace premap::ref {

// Plain nested-loop forward pass over the stored layer list.
Vector forward(const Network& net, const Vector& x);

// Pre-activation vectors entering each ReLU layer.
std::vector<Vector> relu_pre_activations(const Network& net, const Vector& x);

// Row r of the result holds forward(net, X.row(r)).
Matrix batch_forward(const Network& net, const Matrix& X);

// Weighted fraction of rows x of X with A x + b >= 0 in every row of A.
double coverage_fraction(const Matrix& A, const Vector& b, const Matrix& X,
                         const Vector& w);

// Weighted mean of sigma(-log sum_k exp(-(A x + b)_k)) over the rows of X.
double objective_under(const Matrix& A, const Vector& b, const Matrix& X,
                       const Vector& w);

// Mirrored statistic for over mode, averaged over the masked rows only
// (mask[r] != 0 selects row r).  Returns 1 when no row is selected.
double objective_over(const Matrix& A, const Vector& b, const Matrix& X,
                      const Vector& w, const std::vector<char>& mask);

// Raw Table-style branching scores for one candidate neuron.  `z` holds the
// sample pre-activations of that neuron, `lambda` the cached final-bound
// coefficients on it (one entry per spec row).
struct NeuronInputs {
    std::vector<double> z;
    double lb = 0.0;
    double ub = 0.0;
    std::vector<double> lambda;
};

std::map<std::string, double> raw_scores(const NeuronInputs& in);

// Normalize each heuristic by its maximum over candidates (zero max gives a
// zero contribution), combine with the given weights, and return the argmax
// index with ties broken by lowest index.
int combine_and_select(const std::vector<std::map<std::string, double>>& raw,
                       const std::map<std::string, double>& weights);

// Effective sample size (sum w)^2 / sum w^2.
double ess(const Vector& w);

// Fraction of a B-replicate bootstrap: resamples `inP`/`inO` (parallel masks
// over the same points) with the per-replicate seeds and returns the weighted
// in-mask fractions per replicate.
void bootstrap_fractions(const std::vector<char>& inP, const std::vector<char>& inO,
                         const Vector& w, const std::vector<std::uint64_t>& seeds,
                         std::vector<double>& fracP, std::vector<double>& fracO);

// Grid estimate of the weighted preimage volume of {x in box : all outputs of
// `net` >= 0} for two-input networks, on an nx-by-ny cell-centered grid.
double grid_preimage_volume(const Network& net, const Vector& lo, const Vector& hi,
                            int nx, int ny);

}  // namespace premap::ref
