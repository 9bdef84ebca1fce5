#pragma once

#include "premap/relax.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace premap {

struct Subdomain;

// Weighted sample pool attached to one subdomain.  Invariant: every row of X
// lies in the owning subdomain's box and satisfies its split signs, and `pre`
// mirrors X row-for-row at every stage.
struct SampleSet {
    Matrix X;                // n x input_size
    Vector w;                // nonnegative weights, not all zero when n > 0
    std::vector<Matrix> pre; // per stage: n x width pre-activations

    std::uint64_t stream_seed = 0;
    std::mt19937_64 rng;

    int n() const { return static_cast<int>(X.rows()); }
};

// Nonnegative sampling prior, evaluable pointwise.
struct WeightFunction {
    std::string name;
    std::function<double(const Vector&)> eval;
};

// Registry lookup.  Known names: "uniform"; "brightness" with params
// {"image": [...], "mask": [...], "shape": [h,w,c]}; "piecewise" with params
// {"knots": [[...] per coordinate], "values": [[...] per coordinate]}.
WeightFunction make_weight_function(const std::string& name,
                                    const nlohmann::json& params);

// Deterministic per-branch stream seeds: the child seed depends only on the
// parent seed and the split taken, never on draw history.
std::uint64_t derive_stream(std::uint64_t parent_seed, int stage, int neuron,
                            int sign);

// Uniform double in [0, 1) straight from the engine's bits, so the stream is
// reproducible independent of the standard library's distribution choices.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// n i.i.d. uniform points in the box, one per row.  Degenerate coordinates
// (lo = hi) come out constant.
Matrix sample_uniform(const Box& box, int n, std::mt19937_64& rng);

// Pre-activation cache for every row of X, stage by stage.
std::vector<Matrix> batch_pre_activations(const CompiledNet& net, const Matrix& X);

// Rows satisfying every split sign (sign -1: z < 0; +1: z >= 0).
std::vector<char> split_consistent(const std::vector<Matrix>& pre,
                                   const std::vector<SplitConstraint>& splits);

struct RejectionResult {
    Matrix points;          // k x d accepted points, k <= n
    double hit_rate = 1.0;  // accepted / attempted
    bool exhausted = false; // attempt budget spent before reaching n
};

// Draw until n in-branch points are found or the attempt budget (20n) runs
// out.  hit_rate below 0.05 signals the hit-and-run fallback.
RejectionResult rejection_sample(const CompiledNet& net, const Subdomain& dom,
                                 int n, std::mt19937_64& rng);

// Inequality system G x <= h.
struct LinearConstraints {
    Matrix G;
    Vector h;
};

// Outer polytope implied by the subdomain's splits: one cached linear-bound
// row per split (the reverse-tightening inequalities), box handled separately.
LinearConstraints split_polytope(const Subdomain& dom);

// Hit-and-run chain over box ∩ {G x <= h}: discards `burn_in` leading steps,
// then records every `thinning`-th point.  The start must be feasible.
Matrix hit_and_run(const Box& box, const LinearConstraints& cons,
                   const Vector& start, int n, int thinning, int burn_in,
                   std::mt19937_64& rng);

struct ReplenishOptions {
    double fallback_hit_rate = 0.05;
    int thinning = 10;
    int burn_in = 50;
};

// Tops X up to n_target in-branch points, keeping existing rows.  Rejection
// first; hit-and-run over the split polytope (then sign-filtered) when the
// hit rate collapses.  Weights come from `wf`; `pre` is refreshed for new
// rows.  Returns false when the subdomain yields no feasible point at all.
bool replenish(const CompiledNet& net, const Subdomain& dom, SampleSet& X,
               int n_target, const WeightFunction& wf,
               const ReplenishOptions& opt = {});

// (Σw)² / Σw².  Throws when all weights are zero.
double effective_sample_size(const Vector& w);

}  // namespace premap
