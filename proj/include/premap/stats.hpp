#pragma once

#include "premap/model.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace premap {

// Statistical record of one refinement-tree leaf.  `chain` is the product of
// the ancestor split fractions (the leaf's share of the root box); the boot
// vectors hold one entry per bootstrap replicate and stay aligned across the
// whole tree so replicates combine element-wise.
struct LeafStats {
    double chain = 1.0;
    double frac_plane = 0.0;     // weighted share of samples inside the plane
    double frac_preimage = 0.0;  // weighted share with f_O(x) >= 0

    Vector boot_chain;            // replicate chain products
    Vector boot_plane, boot_preimage;  // replicate fractions on the leaf's set
};

struct TreeEstimate {
    double v_P = 0.0;
    double v_O = 0.0;
    double ratio = 1.0;  // 0/0 reads as 1, x/0 as +infinity
};

struct Interval {
    double lo = 0.0, hi = 0.0;

    double width() const { return hi - lo; }
};

struct CiEstimate {
    Interval v_P, v_O, ratio;
};

// B serial draws for the replicate streams.
std::vector<std::uint64_t> draw_seeds(std::mt19937_64& rng, int B);

// Fills the leaf's point fractions and per-replicate fraction vectors from
// its sample masks.  Throws when the total weight is zero.
void init_leaf_stats(LeafStats& leaf, const std::vector<char>& in_plane,
                     const std::vector<char>& in_preimage, const Vector& w,
                     const std::vector<std::uint64_t>& seeds);

// Extends the parent's chain into both children using one shared resample of
// the parent's sample set per replicate: the "+" share of every replicate is
// the exact complement of the "-" share, preserving the dependence between
// the two sides.  Returns the "-" shares.
Vector split_chains(const LeafStats& parent, const std::vector<char>& in_neg,
                    const Vector& w, const std::vector<std::uint64_t>& seeds,
                    double neg_fraction, LeafStats& neg, LeafStats& pos);

// Point estimates over the leaves: v_P = root_volume * sum chain * frac.
TreeEstimate volume_estimates(const std::vector<const LeafStats*>& leaves,
                              double root_volume);

// |v_P - v_O| restricted to one leaf.
double priority(const LeafStats& leaf, double root_volume);

// Percentile bootstrap intervals over the element-wise-combined replicates.
// Needs every leaf to carry the same number (>= 100) of replicates.
CiEstimate bootstrap_ci(const std::vector<const LeafStats*>& leaves,
                        double root_volume, double level);

// Percentile interval of the leaf's own ratio replicates (chains cancel).
Interval leaf_ratio_ci(const LeafStats& leaf, double level);

// Anytime-improvement benchmark: |first - final| / elapsed.
double delta_metric(double first_ratio, double final_ratio,
                    double elapsed_seconds);

}  // namespace premap
