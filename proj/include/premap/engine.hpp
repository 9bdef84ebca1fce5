#pragma once

#include "premap/domain.hpp"
#include "premap/heuristics.hpp"
#include "premap/stats.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace premap {

// Everything one refinement run needs to know up front.
struct RunConfig {
    Mode mode = Mode::Under;
    double threshold = 0.9;  // stop at ratio >= threshold (under) / <= (over)
    int samples = 2000;      // target pool size n per subdomain; the root gets 5n
    double time_limit = std::numeric_limits<double>::infinity();  // seconds
    long max_iterations = 1000000;  // cap on processed subdomains, root included
    int batch = 2;                  // leaves refined per round
    HeuristicConfig heuristics = HeuristicConfig::defaults();
    int bootstrap = 1000;  // replicates per leaf, >= 100
    double level = 0.9;    // confidence level for reported intervals
    WeightFunction weight;  // empty eval falls back to the uniform prior
    std::uint64_t seed = 0;
    bool shortcuts = true;  // sample-evidence discard/finalize/stabilize paths
    bool tighten = true;    // reverse bound tightening after each split
    OptimizeOptions optimize;  // its mode field is overridden by `mode`
};

inline double default_threshold(Mode mode) {
    return mode == Mode::Under ? 0.9 : 1.1;
}

enum class LeafStatus {
    Open,        // still refinable
    Discarded,   // no preimage evidence (under): empty plane, kept for accounting
    Finalized,   // plane settled from sample evidence (over: covers everything)
    Exact,       // no unstable neuron left: plane is the exact affine restriction
    Infeasible,  // branch constraints admit no input at all
};
const char* to_string(LeafStatus s);

enum class StopReason { Threshold, Time, Iterations, Exact };
const char* to_string(StopReason r);

// One node of the refinement fringe.
struct Leaf {
    Subdomain dom;
    SampleSet samples;
    LeafStats stats;

    // Coefficient rows cached from this leaf's last bound optimization; input
    // for the split-selection heuristics.
    std::vector<Matrix> stage_lambda;

    // The statistics basis: the leading core_rows rows of `samples` descend
    // from the root draw by pure partitioning.  Replenished rows sit after
    // them and inform optimization, selection, and shortcut evidence, never
    // the frozen volume fractions; splitting a leaf then redistributes its
    // recorded coverage exactly, which keeps the anytime coverage statistic
    // monotone and the preimage-volume estimate constant across refinement.
    int core_rows = 0;

    LeafStatus status = LeafStatus::Open;
    long order = 0;  // creation sequence; FIFO tiebreak for equal priorities

    bool open() const { return status == LeafStatus::Open; }
};

// One progress-trace record, emitted after the root pass and after every
// refinement round.
struct TraceEntry {
    long iteration = 0;
    double elapsed_s = 0.0;
    double v_P = 0.0;
    double v_O = 0.0;
    double ratio = 1.0;
    double ci_low = 0.0;   // bootstrap interval on the ratio
    double ci_high = 0.0;
    int leaves = 1;
};

using TraceCallback = std::function<void(const TraceEntry&)>;

struct RunResult {
    std::vector<Leaf> leaves;  // final fringe, sorted by split path
    TreeEstimate estimate;
    CiEstimate ci;
    StopReason stop = StopReason::Threshold;
    long iterations = 0;
    double elapsed_seconds = 0.0;
    long optimizer_invocations = 0;
    double root_volume = 0.0;
    double root_ess = 0.0;  // effective sample size of the root pool
    double min_ess = 0.0;   // smallest pool ESS seen across all leaves
    std::vector<TraceEntry> trace;
};

// Mode-appropriate pick between the parent's plane (already sound on the
// child) and a freshly optimized candidate, judged by weighted coverage of
// the child's statistics rows; ties keep the parent.  Guarantees a split
// never degrades the recorded coverage.
HalfSpaceRegion merge_planes(Mode mode, const HalfSpaceRegion& parent,
                             const HalfSpaceRegion& candidate, const Matrix& X,
                             const Vector& w);

// The branch-and-refine loop.  `net` must already end in the output-spec
// rows, so the preimage is {x : every final-stage value >= 0}.  The returned
// tree is a valid anytime result for every stop reason.
RunResult premap2(const CompiledNet& net, const Box& box, const RunConfig& cfg,
                  const TraceCallback& on_trace = {});

}  // namespace premap
