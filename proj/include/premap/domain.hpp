#pragma once

#include "premap/relax.hpp"
#include "premap/sampler.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace premap {

// Approximation plane on one subdomain: the region {x : A x + b >= 0 on all
// rows} intersected with the subdomain's box and split signs.
struct HalfSpaceRegion {
    Matrix A;
    Vector b;
    Mode side = Mode::Under;
};

// One node of the refinement tree: a box plus the ReLU sign constraints
// accumulated on the way down, with cached interval and linear bounds that
// stay sound for every input satisfying box + splits.
struct Subdomain {
    Box box;
    std::vector<SplitConstraint> splits;
    BoundState state;
    std::optional<HalfSpaceRegion> plane;

    // Weighted sample fractions recorded at each ancestor split; the
    // subdomain's share of the root volume is their product.
    std::vector<double> volume_chain;

    std::uint64_t stream_seed = 0;
};

// Root node over the full input region.
Subdomain make_root(const CompiledNet& net, const Box& box,
                    std::uint64_t master_seed);

struct SplitOutcome {
    Subdomain neg, pos;
    SampleSet neg_samples, pos_samples;
    double neg_fraction = 0.0;  // weighted share of the parent's samples
    double pos_fraction = 0.0;
};

// Splits on z^stage_neuron: the "-" child pins the neuron negative, the "+"
// child nonnegative.  Samples are partitioned by their cached pre-activation
// sign; each child's volume_chain gains its weighted share.  The split neuron
// must be unstable in `dom` and not split before.
SplitOutcome split_neuron(const CompiledNet& net, const Subdomain& dom,
                          const SampleSet& samples, int stage, int neuron);

enum class TightenOutcome { Tightened, Infeasible };

// Reverse bound propagation for the split (stage, neuron, sign): intersects
// the branch inequality with the cached linear bounds to narrow the input box
// and the preceding ReLU stage's intervals.  Never widens anything.
// Infeasible means some interval emptied: the branch contains no input.
TightenOutcome tighten_reverse(const CompiledNet& net, Subdomain& dom, int stage,
                               int neuron, int sign);

// Recomputes every stage's bounds from the (tightened) box, intersecting with
// the previous intervals so nothing widens, and refreshes the linear-bound
// caches used for later tightening.
TightenOutcome refresh_forward(const CompiledNet& net, Subdomain& dom);

// True iff every region row holds at x and x matches every split sign.
bool contains(const HalfSpaceRegion& region, const CompiledNet& net,
              const Subdomain& dom, const Vector& x);

}  // namespace premap
