#pragma once

#include "premap/model.hpp"

#include <optional>
#include <vector>

namespace premap {

enum class Mode { Under, Over };

// Axis-aligned input region.
struct Box {
    Vector lo, hi;

    int dim() const { return static_cast<int>(lo.size()); }
    double volume() const { return (hi - lo).prod(); }

    // Lebesgue measure over the box's affine hull: pinned coordinates (as in
    // patch domains) contribute no factor, a full-dimensional box matches
    // volume(), and a single point has hull measure 1 (counting measure).
    double hull_volume() const {
        double v = 1.0;
        for (Eigen::Index i = 0; i < lo.size(); ++i)
            if (hi(i) > lo(i)) v *= hi(i) - lo(i);
        return v;
    }

    bool empty() const { return ((hi - lo).array() < 0.0).any(); }
};

// One branch constraint: sign -1 pins z^stage_neuron < 0, sign +1 pins >= 0.
struct SplitConstraint {
    int stage = 0;
    int neuron = 0;
    int sign = 0;
};

// A x + b brackets the bounded values for every input in the associated box:
// A_lower x + b_lower <= z <= A_upper x + b_upper.
struct LinearBounds {
    Matrix Al, Au;
    Vector bl, bu;
};

enum class NeuronState { Inactive, Active, Unstable };

// Tie lb = ub = 0 counts as inactive so Eq. 1's upper slope never divides by 0.
inline NeuronState neuron_state(double lb, double ub) {
    if (ub <= 0.0) return NeuronState::Inactive;
    if (lb >= 0.0) return NeuronState::Active;
    return NeuronState::Unstable;
}

// Scalar ReLU relaxation: lower line dl*z + cl, upper line du*z + cu.
struct ReluRelaxation {
    double dl = 0.0, cl = 0.0;
    double du = 0.0, cu = 0.0;
    NeuronState state = NeuronState::Inactive;
};

ReluRelaxation relu_relaxation(double lb, double ub, double alpha);

// CROWN init slope: 1 when the interval leans positive, else 0.
inline double alpha_init(double lb, double ub) { return ub >= -lb ? 1.0 : 0.0; }

struct StageBounds {
    Vector lb, ub;
};
using LayerBounds = std::vector<StageBounds>;

// Optimizable relaxation state for one bounded target (K output rows).
// alpha_lo/alpha_up have one K-by-width matrix per stage (empty when the stage
// has no ReLU); beta vectors are aligned with the subdomain's split list.
struct RelaxParams {
    std::vector<Matrix> alpha_lo, alpha_up;
    std::vector<Vector> beta_lo, beta_up;
};

RelaxParams init_params(const CompiledNet& net, const LayerBounds& bounds, int K,
                        int num_splits);

struct BackwardOptions {
    const RelaxParams* params = nullptr;  // null: init alpha, no beta terms
    bool use_beta = true;
    bool want_tape = false;
    bool want_stage_lambda = false;
    int snapshot_stage = -1;  // record (A, b) when coefficients reach this z^m
};

// Gradient tape entry for one ReLU pass-through (see relax.cpp for the adjoint).
struct RelaxTapeOp {
    int stage = 0;
    Matrix lambda_pre_lo, lambda_pre_up;  // coefficients on h^stage before Eq. 1
    Matrix D_lo, D_up, C_lo, C_up;        // chosen slopes / intercepts per entry
};

struct BackwardResult {
    LinearBounds vs_input;  // bounds on the target in terms of x

    // Post-relaxation coefficients on each z^s (the A^{l s} rows); index by stage.
    std::vector<Matrix> stage_lambda_lo, stage_lambda_up;

    std::optional<LinearBounds> snapshot;  // vs z^{snapshot_stage}

    std::vector<RelaxTapeOp> tape;
};

// Backward pass from z^{target_stage} down to the input.  Relaxations use the
// supplied per-stage intervals; split neurons must already be stabilized in
// those intervals.  K is the width of the target stage.
BackwardResult backward_bounds(const CompiledNet& net, int target_stage,
                               const LayerBounds& bounds,
                               const std::vector<SplitConstraint>& splits,
                               const BackwardOptions& opt);

// Interval image of the linear bounds over the box.
void concretize(const LinearBounds& lb, const Box& box, Vector& out_lb, Vector& out_ub);

// Per-stage caches a subdomain keeps current between refinements.
struct BoundState {
    LayerBounds bounds;                        // intervals of every z^s
    std::vector<LinearBounds> vs_input;        // A^{s,0} for every stage
    std::vector<std::optional<LinearBounds>> vs_prev_relu;  // A^{s,r(s)}

    // Set when narrowing emptied some interval: the region holds no input.
    bool infeasible = false;
};

// Backward-bounds every stage against the input box in order, honoring splits.
// When `narrow_into` is given, each freshly computed interval is intersected
// with it (refreshes never widen) and the clipped result seeds later stages.
BoundState compute_bound_state(const CompiledNet& net, const Box& box,
                               const std::vector<SplitConstraint>& splits,
                               const LayerBounds* narrow_into = nullptr);

// Weighted mean of sigma(-log sum_k exp(-(A x + b)_k)) over sample rows.
double objective_under(const Matrix& Al, const Vector& bl, const Matrix& X,
                       const Vector& w);

// Mirrored statistic over the masked rows (the samples outside the preimage);
// returns 1 when the mask selects nothing.
double objective_over(const Matrix& Au, const Vector& bu, const Matrix& X,
                      const Vector& w, const std::vector<char>& outside);

struct OptimizeOptions {
    Mode mode = Mode::Under;
    int iterations = 20;
    double step = 0.1;
    double decay = 0.98;
    bool use_beta = true;
};

struct OptimizeResult {
    LinearBounds bounds;
    RelaxParams params;
    std::vector<Matrix> stage_lambda;  // active side's coefficient cache
    double objective = 0.0;
    double initial_objective = 0.0;
};

// Projected gradient ascent on the sample objective over (alpha, beta) of the
// mode's active side.  `outside` is only read in over mode.  Never returns an
// objective below the one at `start`.
OptimizeResult optimize_params(const CompiledNet& net, const LayerBounds& bounds,
                               const std::vector<SplitConstraint>& splits,
                               const Matrix& X, const Vector& w,
                               const std::vector<char>& outside,
                               const RelaxParams& start, const OptimizeOptions& opt);

// Gradient of the mode's objective w.r.t. the active side's alpha and beta at
// `params` (exposed for the finite-difference comparison).
void objective_gradient(const CompiledNet& net, const LayerBounds& bounds,
                        const std::vector<SplitConstraint>& splits, const Matrix& X,
                        const Vector& w, const std::vector<char>& outside,
                        const RelaxParams& params, Mode mode, bool use_beta,
                        std::vector<Matrix>& dalpha, std::vector<Vector>& dbeta);

}  // namespace premap
