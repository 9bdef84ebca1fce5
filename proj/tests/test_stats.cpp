#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "premap/sampler.hpp"
#include "premap/stats.hpp"

#include <cmath>
#include <random>

using namespace premap;

namespace {

LeafStats simple_leaf(double chain, double fp, double fo, int B) {
    LeafStats l;
    l.chain = chain;
    l.frac_plane = fp;
    l.frac_preimage = fo;
    l.boot_chain = Vector::Constant(B, chain);
    l.boot_plane = Vector::Constant(B, fp);
    l.boot_preimage = Vector::Constant(B, fo);
    return l;
}

std::vector<char> bernoulli_mask(int n, double p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<char> m(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) m[static_cast<size_t>(i)] = uniform01(rng) < p;
    return m;
}

}  // namespace

TEST_CASE("volume estimates: single leaf and additivity") {
    LeafStats leaf = simple_leaf(1.0, 0.5, 0.8, 100);
    TreeEstimate est = volume_estimates({&leaf}, 4.0);
    CHECK(est.v_P == doctest::Approx(2.0));
    CHECK(est.v_O == doctest::Approx(3.2));
    CHECK(est.ratio == doctest::Approx(0.625));

    LeafStats a = simple_leaf(0.25, 0.4, 0.4, 100);
    LeafStats b = simple_leaf(0.75, 0.2, 0.2, 100);
    est = volume_estimates({&a, &b}, 2.0);
    CHECK(est.v_P == doctest::Approx(2.0 * (0.25 * 0.4 + 0.75 * 0.2)));
    CHECK(est.v_P == est.v_O);
    CHECK(est.ratio == doctest::Approx(1.0));
}

TEST_CASE("ratio conventions at zero denominators") {
    LeafStats zero = simple_leaf(1.0, 0.0, 0.0, 100);
    CHECK(volume_estimates({&zero}, 1.0).ratio == doctest::Approx(1.0));
    LeafStats overshoot = simple_leaf(1.0, 0.3, 0.0, 100);
    CHECK(std::isinf(volume_estimates({&overshoot}, 1.0).ratio));
}

TEST_CASE("priority is the leaf's absolute volume gap") {
    LeafStats leaf = simple_leaf(1.0, 0.3, 0.5, 100);
    CHECK(priority(leaf, 1.0) == doctest::Approx(0.2));
    LeafStats covered = simple_leaf(0.5, 0.7, 0.7, 100);
    CHECK(priority(covered, 3.0) == doctest::Approx(0.0));
    LeafStats scaled = simple_leaf(0.25, 0.1, 0.6, 100);
    CHECK(priority(scaled, 8.0) == doctest::Approx(8.0 * 0.25 * 0.5));
}

TEST_CASE("init_leaf_stats computes weighted fractions and replicates") {
    const int n = 6;
    std::vector<char> inP = {1, 1, 0, 0, 0, 0};
    std::vector<char> inO = {1, 1, 1, 0, 0, 0};
    Vector w(n);
    w << 2.0, 1.0, 1.0, 1.0, 1.0, 2.0;  // total 8, P-mass 3, O-mass 4

    std::mt19937_64 rng(101);
    LeafStats leaf;
    init_leaf_stats(leaf, inP, inO, w, draw_seeds(rng, 200));
    CHECK(leaf.frac_plane == doctest::Approx(3.0 / 8.0));
    CHECK(leaf.frac_preimage == doctest::Approx(0.5));
    CHECK(leaf.boot_plane.size() == 200);
    CHECK(leaf.boot_chain.size() == 200);
    CHECK((leaf.boot_plane.array() >= 0.0).all());
    CHECK((leaf.boot_plane.array() <= 1.0).all());
    // replicates never put more mass in P than in its superset O
    CHECK(((leaf.boot_preimage - leaf.boot_plane).array() >= 0.0).all());

    CHECK_THROWS_AS(init_leaf_stats(leaf, inP, inO, Vector::Zero(n), draw_seeds(rng, 200)),
                    std::runtime_error);
}

TEST_CASE("degenerate all-inside leaf yields a zero-width interval") {
    const int n = 500;
    std::vector<char> all(n, 1);
    std::mt19937_64 rng(103);
    LeafStats leaf;
    init_leaf_stats(leaf, all, all, Vector::Ones(n), draw_seeds(rng, 300));
    CiEstimate ci = bootstrap_ci({&leaf}, 2.0, 0.9);
    CHECK(ci.v_P.lo == doctest::Approx(2.0));
    CHECK(ci.v_P.hi == doctest::Approx(2.0));
    CHECK(ci.ratio.lo == doctest::Approx(1.0));
    CHECK(ci.ratio.hi == doctest::Approx(1.0));
}

TEST_CASE("sibling replicate shares complement exactly") {
    const int n = 400;
    std::vector<char> neg = bernoulli_mask(n, 0.37, 55);
    Vector w(n);
    std::mt19937_64 wr(56);
    for (int i = 0; i < n; ++i) w(i) = 0.5 + uniform01(wr);

    LeafStats parent = simple_leaf(0.6, 0.0, 0.0, 250);
    std::mt19937_64 rng(57);
    parent.boot_chain = Vector::NullaryExpr(250, [&]() { return 0.5 + 0.5 * uniform01(rng); });

    double wneg = 0.0;
    for (int i = 0; i < n; ++i)
        if (neg[static_cast<size_t>(i)]) wneg += w(i);
    const double frac = wneg / w.sum();

    LeafStats left, right;
    std::mt19937_64 sr(58);
    Vector share = split_chains(parent, neg, w, draw_seeds(sr, 250), frac, left, right);
    CHECK(left.chain == doctest::Approx(0.6 * frac));
    CHECK(right.chain == doctest::Approx(0.6 * (1.0 - frac)));
    for (int b = 0; b < 250; ++b) {
        // one shared resample: the two shares split the whole exactly, and
        // each child's replicate is its share of the parent's replicate
        REQUIRE(share(b) + (1.0 - share(b)) == 1.0);
        REQUIRE(left.boot_chain(b) == parent.boot_chain(b) * share(b));
        REQUIRE(right.boot_chain(b) == parent.boot_chain(b) * (1.0 - share(b)));
        REQUIRE(std::abs(left.boot_chain(b) + right.boot_chain(b) -
                         parent.boot_chain(b)) <=
                4e-16 * parent.boot_chain(b));
    }
}

TEST_CASE("interval width tracks the binomial normal approximation") {
    const int n = 2000, B = 1000;
    std::vector<char> inP = bernoulli_mask(n, 0.5, 61);
    std::mt19937_64 rng(62);
    LeafStats leaf;
    init_leaf_stats(leaf, inP, inP, Vector::Ones(n), draw_seeds(rng, B));
    CiEstimate ci = bootstrap_ci({&leaf}, 4.0, 0.9);
    const double expect = 2.0 * 1.645 * std::sqrt(0.25 / n) * 4.0;
    CHECK(std::abs(ci.v_P.width() - expect) / expect < 0.2);
}

TEST_CASE("interval midpoint converges to the point estimate") {
    const int n = 2000;
    std::vector<char> inP = bernoulli_mask(n, 0.3, 63);
    std::mt19937_64 rng(64);
    LeafStats leaf;
    init_leaf_stats(leaf, inP, inP, Vector::Ones(n), draw_seeds(rng, 10000));
    CiEstimate ci = bootstrap_ci({&leaf}, 1.0, 0.9);
    const double mid = 0.5 * (ci.v_P.lo + ci.v_P.hi);
    CHECK(std::abs(mid - leaf.frac_plane) < 1e-3);
}

TEST_CASE("leaf ratio interval collapses when the masks coincide") {
    const int n = 800;
    std::vector<char> m = bernoulli_mask(n, 0.4, 65);
    std::mt19937_64 rng(66);
    LeafStats leaf;
    init_leaf_stats(leaf, m, m, Vector::Ones(n), draw_seeds(rng, 500));
    Interval ci = leaf_ratio_ci(leaf, 0.9);
    CHECK(ci.lo == doctest::Approx(1.0));
    CHECK(ci.hi == doctest::Approx(1.0));
}

TEST_CASE("bootstrap validation rejects bad replicate sets") {
    LeafStats small = simple_leaf(1.0, 0.5, 0.5, 50);
    CHECK_THROWS_AS(bootstrap_ci({&small}, 1.0, 0.9), std::invalid_argument);
    LeafStats a = simple_leaf(1.0, 0.5, 0.5, 200);
    LeafStats b = simple_leaf(1.0, 0.5, 0.5, 300);
    CHECK_THROWS_AS(bootstrap_ci({&a, &b}, 1.0, 0.9), std::invalid_argument);
    CHECK_THROWS_AS(bootstrap_ci({}, 1.0, 0.9), std::invalid_argument);
}

TEST_CASE("delta metric") {
    CHECK(delta_metric(0.5, 0.9, 4.0) == doctest::Approx(0.1));
    CHECK(delta_metric(0.7, 0.7, 10.0) == doctest::Approx(0.0));
    CHECK_THROWS_AS(delta_metric(0.5, 0.9, 0.0), std::invalid_argument);
}
