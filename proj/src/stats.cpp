#include "premap/stats.hpp"

#include "premap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace premap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double ratio_of(double v_P, double v_O) {
    if (v_O == 0.0) return v_P == 0.0 ? 1.0 : kInf;
    return std::max(v_P / v_O, 0.0);
}

// Linear-interpolated order statistic of an unsorted copy.
double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    const double f = pos - static_cast<double>(lo);
    if (std::isinf(v[lo]) || std::isinf(v[lo + 1])) return f > 0.0 ? v[lo + 1] : v[lo];
    return v[lo] + f * (v[lo + 1] - v[lo]);
}

Interval percentile_interval(const std::vector<double>& reps, double level) {
    const double tail = 0.5 * (1.0 - level);
    return {quantile(reps, tail), quantile(reps, 1.0 - tail)};
}

int validate_replicates(const std::vector<const LeafStats*>& leaves) {
    if (leaves.empty()) throw std::invalid_argument("bootstrap: no leaves");
    const int B = static_cast<int>(leaves[0]->boot_chain.size());
    if (B < 100) throw std::invalid_argument("bootstrap: needs >= 100 replicates");
    for (const LeafStats* l : leaves)
        if (l->boot_chain.size() != B || l->boot_plane.size() != B ||
            l->boot_preimage.size() != B)
            throw std::invalid_argument("bootstrap: replicate counts differ");
    return B;
}

}  // namespace

std::vector<std::uint64_t> draw_seeds(std::mt19937_64& rng, int B) {
    std::vector<std::uint64_t> seeds(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) seeds[static_cast<size_t>(b)] = rng();
    return seeds;
}

void init_leaf_stats(LeafStats& leaf, const std::vector<char>& in_plane,
                     const std::vector<char>& in_preimage, const Vector& w,
                     const std::vector<std::uint64_t>& seeds) {
    if (w.sum() <= 0.0)
        throw std::runtime_error("leaf statistics: total sample weight is zero");
    leaf.frac_plane = kernels::weighted_fraction(in_plane, w);
    leaf.frac_preimage = kernels::weighted_fraction(in_preimage, w);

    std::vector<double> fp, fo;
    kernels::bootstrap_fractions(in_plane, in_preimage, w, seeds, fp, fo);
    leaf.boot_plane = Eigen::Map<const Vector>(fp.data(), fp.size());
    leaf.boot_preimage = Eigen::Map<const Vector>(fo.data(), fo.size());
    if (leaf.boot_chain.size() != leaf.boot_plane.size())
        leaf.boot_chain = Vector::Ones(leaf.boot_plane.size());
}

Vector split_chains(const LeafStats& parent, const std::vector<char>& in_neg,
                    const Vector& w, const std::vector<std::uint64_t>& seeds,
                    double neg_fraction, LeafStats& neg, LeafStats& pos) {
    std::vector<double> fneg, unused;
    kernels::bootstrap_fractions(in_neg, in_neg, w, seeds, fneg, unused);
    const Vector share = Eigen::Map<const Vector>(fneg.data(), fneg.size());

    neg.chain = parent.chain * neg_fraction;
    pos.chain = parent.chain * (1.0 - neg_fraction);
    // the "+" share is the exact complement of the "-" share, so every
    // replicate splits the parent's whole between the two sides
    neg.boot_chain = parent.boot_chain.cwiseProduct(share);
    pos.boot_chain =
        parent.boot_chain.cwiseProduct(Vector::Ones(share.size()) - share);
    return share;
}

TreeEstimate volume_estimates(const std::vector<const LeafStats*>& leaves,
                              double root_volume) {
    TreeEstimate est;
    for (const LeafStats* l : leaves) {
        est.v_P += root_volume * l->chain * l->frac_plane;
        est.v_O += root_volume * l->chain * l->frac_preimage;
    }
    est.ratio = ratio_of(est.v_P, est.v_O);
    return est;
}

double priority(const LeafStats& leaf, double root_volume) {
    return root_volume * leaf.chain * std::abs(leaf.frac_plane - leaf.frac_preimage);
}

CiEstimate bootstrap_ci(const std::vector<const LeafStats*>& leaves,
                        double root_volume, double level) {
    const int B = validate_replicates(leaves);
    std::vector<double> vP(static_cast<size_t>(B), 0.0);
    std::vector<double> vO(static_cast<size_t>(B), 0.0);
    std::vector<double> ratio(static_cast<size_t>(B), 0.0);
    for (const LeafStats* l : leaves)
        for (int b = 0; b < B; ++b) {
            vP[static_cast<size_t>(b)] +=
                root_volume * l->boot_chain(b) * l->boot_plane(b);
            vO[static_cast<size_t>(b)] +=
                root_volume * l->boot_chain(b) * l->boot_preimage(b);
        }
    for (int b = 0; b < B; ++b)
        ratio[static_cast<size_t>(b)] =
            ratio_of(vP[static_cast<size_t>(b)], vO[static_cast<size_t>(b)]);

    CiEstimate ci;
    ci.v_P = percentile_interval(vP, level);
    ci.v_O = percentile_interval(vO, level);
    ci.ratio = percentile_interval(ratio, level);
    return ci;
}

Interval leaf_ratio_ci(const LeafStats& leaf, double level) {
    const int B = static_cast<int>(leaf.boot_plane.size());
    std::vector<double> reps(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b)
        reps[static_cast<size_t>(b)] = ratio_of(leaf.boot_plane(b), leaf.boot_preimage(b));
    return percentile_interval(reps, level);
}

double delta_metric(double first_ratio, double final_ratio,
                    double elapsed_seconds) {
    if (elapsed_seconds <= 0.0)
        throw std::invalid_argument("delta_metric: elapsed time must be positive");
    return std::abs(first_ratio - final_ratio) / elapsed_seconds;
}

}  // namespace premap
