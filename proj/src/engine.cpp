#include "premap/engine.hpp"

#include "premap/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>
#include <utility>

namespace premap {

const char* to_string(LeafStatus s) {
    switch (s) {
        case LeafStatus::Open: return "open";
        case LeafStatus::Discarded: return "discarded";
        case LeafStatus::Finalized: return "finalized";
        case LeafStatus::Exact: return "exact";
        case LeafStatus::Infeasible: return "infeasible";
    }
    return "?";
}

const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::Threshold: return "threshold";
        case StopReason::Time: return "time";
        case StopReason::Iterations: return "iterations";
        case StopReason::Exact: return "exact";
    }
    return "?";
}

HalfSpaceRegion merge_planes(Mode mode, const HalfSpaceRegion& parent,
                             const HalfSpaceRegion& candidate, const Matrix& X,
                             const Vector& w) {
    std::vector<char> in_parent, in_cand;
    kernels::plane_membership(parent.A, parent.b, X, in_parent);
    kernels::plane_membership(candidate.A, candidate.b, X, in_cand);
    const double fp = kernels::weighted_fraction(in_parent, w);
    const double fc = kernels::weighted_fraction(in_cand, w);
    const bool better = mode == Mode::Under ? fc > fp : fc < fp;
    return better ? candidate : parent;
}

namespace {

using Clock = std::chrono::steady_clock;

// f_O(x) >= 0 on every spec row, read off the cached final-stage values.
std::vector<char> preimage_mask(const SampleSet& s) {
    const Matrix& out = s.pre.back();
    std::vector<char> in(out.rows());
    for (int r = 0; r < out.rows(); ++r)
        in[r] = (out.row(r).array() >= 0.0).all() ? 1 : 0;
    return in;
}

HalfSpaceRegion plane_from_bounds(Mode mode, const LinearBounds& lb) {
    HalfSpaceRegion p;
    p.side = mode;
    if (mode == Mode::Under) {
        p.A = lb.Al;
        p.b = lb.bl;
    } else {
        p.A = lb.Au;
        p.b = lb.bu;
    }
    return p;
}

// Satisfied nowhere: a discarded branch covers no volume.
HalfSpaceRegion impossible_plane(int dim, Mode mode) {
    HalfSpaceRegion p;
    p.side = mode;
    p.A = Matrix::Zero(1, dim);
    p.b = Vector::Constant(1, -1.0);
    return p;
}

// Satisfied everywhere: a finalized over branch covers its whole subdomain.
HalfSpaceRegion trivial_plane(int dim, Mode mode) {
    HalfSpaceRegion p;
    p.side = mode;
    p.A = Matrix(0, dim);
    p.b = Vector(0);
    return p;
}

// Lexicographic order on split histories; the final fringe is an antichain in
// the prefix order, so this is a strict total order on it.
bool path_less(const Leaf& a, const Leaf& b) {
    const auto& p = a.dom.splits;
    const auto& q = b.dom.splits;
    const size_t n = std::min(p.size(), q.size());
    for (size_t i = 0; i < n; ++i) {
        const auto ta = std::make_tuple(p[i].stage, p[i].neuron, p[i].sign);
        const auto tb = std::make_tuple(q[i].stage, q[i].neuron, q[i].sign);
        if (ta != tb) return ta < tb;
    }
    return p.size() < q.size();
}

struct Engine {
    const CompiledNet& net;
    const Box& box;
    const RunConfig& cfg;
    const TraceCallback& trace_cb;

    WeightFunction wf;
    OptimizeOptions optc;
    double root_volume = 0.0;
    long optimizer_calls = 0;
    long next_order = 0;
    long iterations = 0;
    double root_ess = 0.0;
    double min_ess = std::numeric_limits<double>::infinity();
    Clock::time_point t0;

    std::vector<Leaf> leaves;
    std::vector<TraceEntry> trace;
    TreeEstimate estimate;
    CiEstimate ci;

    Engine(const CompiledNet& n, const Box& b, const RunConfig& c,
           const TraceCallback& cb)
        : net(n), box(b), cfg(c), trace_cb(cb) {
        wf = cfg.weight.eval ? cfg.weight
                             : make_weight_function("uniform", nlohmann::json());
        optc = cfg.optimize;
        optc.mode = cfg.mode;
    }

    double elapsed() const {
        return std::chrono::duration<double>(Clock::now() - t0).count();
    }

    bool threshold_met(double ratio) const {
        return cfg.mode == Mode::Under ? ratio >= cfg.threshold
                                       : ratio <= cfg.threshold;
    }

    void validate() const {
        if (box.dim() != net.input_size)
            throw std::invalid_argument("run: box dimension does not match the net");
        if (box.empty()) throw std::invalid_argument("run: empty input box");
        if (cfg.samples < 1) throw std::invalid_argument("run: samples must be >= 1");
        if (cfg.batch < 1) throw std::invalid_argument("run: batch must be >= 1");
        if (cfg.bootstrap < 100)
            throw std::invalid_argument("run: bootstrap replicates must be >= 100");
        if (!(cfg.level > 0.0 && cfg.level < 1.0))
            throw std::invalid_argument("run: confidence level must lie in (0, 1)");
        if (!(cfg.time_limit > 0.0))
            throw std::invalid_argument("run: time limit must be positive");
        if (cfg.max_iterations < 1)
            throw std::invalid_argument("run: iteration cap must be >= 1");
        if (cfg.mode == Mode::Under) {
            if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0))
                throw std::invalid_argument(
                    "run: under-approximation threshold must lie in (0, 1)");
        } else if (!(cfg.threshold > 1.0)) {
            throw std::invalid_argument(
                "run: over-approximation threshold must exceed 1");
        }
        // fail on a bad heuristic table before any sampling work happens
        bool positive = false;
        for (const auto& [name, weight] : cfg.heuristics.weights) {
            if (weight < 0.0)
                throw std::invalid_argument("heuristic weight must be nonnegative: " +
                                            name);
            if (weight > 0.0) {
                raw_score(name, Vector(), -1.0, 1.0, Vector());
                positive = true;
            }
        }
        if (!positive)
            throw std::invalid_argument("heuristic config has no positive weight");
    }

    Vector row_weights(const Matrix& X) const {
        Vector w(X.rows());
        for (int r = 0; r < X.rows(); ++r) w(r) = wf.eval(X.row(r).transpose());
        return w;
    }

    // Zero-size replicate vectors confuse the interval code; every frozen leaf
    // carries full-size constant replicates instead.
    void freeze_stats(Leaf& lf, double frac) {
        lf.stats.frac_plane = frac;
        lf.stats.frac_preimage = frac;
        lf.stats.boot_plane = Vector::Constant(cfg.bootstrap, frac);
        lf.stats.boot_preimage = Vector::Constant(cfg.bootstrap, frac);
        if (lf.stats.boot_chain.size() != cfg.bootstrap)
            lf.stats.boot_chain = Vector::Ones(cfg.bootstrap);
    }

    // A branch proved empty (or defensively treated as such): its volume share
    // is zeroed so both totals stay a redistribution of the root estimate.
    void freeze_infeasible(Leaf& lf) {
        lf.stats.chain = 0.0;
        lf.stats.boot_chain = Vector::Zero(cfg.bootstrap);
        lf.dom.plane = impossible_plane(net.input_size, cfg.mode);
        freeze_stats(lf, 0.0);
        lf.status = LeafStatus::Infeasible;
    }

    // A split side that holds none of the statistics mass: frozen at a chain
    // share of exactly zero.  Under mode keeps it with an empty plane so the
    // accounting stays a partition; over mode keeps the parent's plane, which
    // is still a sound cover of the side.
    void freeze_zero_share(Leaf& lf, const HalfSpaceRegion& parent_plane) {
        if (cfg.mode == Mode::Under) {
            lf.dom.plane = impossible_plane(net.input_size, cfg.mode);
            lf.status = LeafStatus::Discarded;
        } else {
            lf.dom.plane = parent_plane;
            lf.status = LeafStatus::Finalized;
        }
        freeze_stats(lf, 0.0);
    }

    // Tops the pool up, applies the sample-evidence shortcuts, optimizes the
    // relaxation, merges the plane monotonically against the parent's, and
    // freezes the leaf's statistics on its core rows.
    void refine(Leaf& lf, const HalfSpaceRegion* parent_plane) {
        replenish(net, lf.dom, lf.samples, cfg.samples, wf);

        const std::vector<char> in_pre = preimage_mask(lf.samples);
        bool any_in = false, all_in = true;
        for (char c : in_pre) {
            if (c)
                any_in = true;
            else
                all_in = false;
        }
        const int m = lf.core_rows;
        const Vector w_core = lf.samples.w.head(m);
        const Matrix X_core = lf.samples.X.topRows(m);

        if (cfg.shortcuts && cfg.mode == Mode::Under && !any_in) {
            // no sampled point reaches the spec: by per-row soundness the
            // parent plane covered none of these rows either, so discarding
            // costs the recorded coverage nothing
            lf.dom.plane = impossible_plane(net.input_size, cfg.mode);
            freeze_stats(lf, 0.0);
            lf.status = LeafStatus::Discarded;
        } else if (cfg.shortcuts && cfg.mode == Mode::Over && all_in) {
            // every sampled point satisfies the spec: cover the whole side
            lf.dom.plane = trivial_plane(net.input_size, cfg.mode);
            freeze_stats(lf, 1.0);
            lf.status = LeafStatus::Finalized;
        } else {
            RelaxParams start = init_params(net, lf.dom.state.bounds,
                                            net.output_size(),
                                            static_cast<int>(lf.dom.splits.size()));
            std::vector<char> outside;
            if (cfg.mode == Mode::Over) {
                outside.resize(in_pre.size());
                for (size_t r = 0; r < in_pre.size(); ++r) outside[r] = !in_pre[r];
            }
            OptimizeResult opt =
                optimize_params(net, lf.dom.state.bounds, lf.dom.splits,
                                lf.samples.X, lf.samples.w, outside, start, optc);
            ++optimizer_calls;
            lf.stage_lambda = std::move(opt.stage_lambda);

            const HalfSpaceRegion cand = plane_from_bounds(cfg.mode, opt.bounds);
            lf.dom.plane = parent_plane
                               ? merge_planes(cfg.mode, *parent_plane, cand,
                                              X_core, w_core)
                               : cand;

            std::vector<char> in_plane;
            kernels::plane_membership(lf.dom.plane->A, lf.dom.plane->b, X_core,
                                      in_plane);
            const std::vector<char> in_pre_core(in_pre.begin(), in_pre.begin() + m);
            const auto seeds = draw_seeds(lf.samples.rng, cfg.bootstrap);
            init_leaf_stats(lf.stats, in_plane, in_pre_core, w_core, seeds);
        }
        min_ess = std::min(min_ess, effective_sample_size(lf.samples.w));
    }

    // All remaining neurons are stable, so the cached final bounds collapse to
    // one affine map: the plane is the exact preimage restricted to this leaf.
    void exact_finalize(Leaf& lf) {
        lf.dom.plane = plane_from_bounds(cfg.mode, lf.dom.state.vs_input.back());
        const int m = lf.core_rows;
        std::vector<char> in_plane;
        kernels::plane_membership(lf.dom.plane->A, lf.dom.plane->b,
                                  lf.samples.X.topRows(m), in_plane);
        const std::vector<char> all_pre = preimage_mask(lf.samples);
        const std::vector<char> in_pre(all_pre.begin(), all_pre.begin() + m);
        const auto seeds = draw_seeds(lf.samples.rng, cfg.bootstrap);
        init_leaf_stats(lf.stats, in_plane, in_pre, lf.samples.w.head(m), seeds);
        lf.status = LeafStatus::Exact;
    }

    // Pins (stage, neuron) to the side every pooled sample is on.  The live
    // side keeps the whole pool and the full chain: the share is exactly one,
    // so the parent replicates carry over unchanged and no resample is drawn.
    // The empty side enters the tree frozen at a share of exactly zero.
    void stabilize(Leaf& lf, int stage, int neuron, int sign,
                   std::vector<Leaf>& out) {
        SplitOutcome so = split_neuron(net, lf.dom, lf.samples, stage, neuron);

        Leaf dead;
        dead.dom = sign < 0 ? std::move(so.pos) : std::move(so.neg);
        dead.samples = sign < 0 ? std::move(so.pos_samples) : std::move(so.neg_samples);
        dead.stats.chain = 0.0;
        dead.stats.boot_chain = Vector::Zero(cfg.bootstrap);
        dead.core_rows = 0;
        dead.order = next_order++;
        freeze_zero_share(dead, *lf.dom.plane);
        out.push_back(std::move(dead));

        // plane, statistics, and the core basis are untouched: every core row
        // already satisfied the pinned sign
        const HalfSpaceRegion plane = *lf.dom.plane;
        lf.dom = sign < 0 ? std::move(so.neg) : std::move(so.pos);
        lf.dom.plane = plane;
        lf.samples = sign < 0 ? std::move(so.neg_samples) : std::move(so.pos_samples);

        if (cfg.tighten &&
            tighten_reverse(net, lf.dom, stage, neuron, sign) ==
                TightenOutcome::Infeasible) {
            freeze_infeasible(lf);  // unreachable for a side holding samples
            return;
        }
        if (refresh_forward(net, lf.dom) == TightenOutcome::Infeasible)
            freeze_infeasible(lf);
    }

    // One full refinement of a popped leaf; returns its replacements.
    std::vector<Leaf> process(Leaf lf) {
        std::vector<Leaf> out;
        replenish(net, lf.dom, lf.samples, cfg.samples, wf);

        SelectionResult sel;
        int stabilized = 0;
        for (;;) {
            sel = select_neuron(net, lf.dom, lf.samples, lf.stage_lambda,
                                cfg.heuristics);
            if (sel.exact) {
                exact_finalize(lf);
                out.push_back(std::move(lf));
                return out;
            }
            if (!cfg.shortcuts || stabilized >= 10) break;
            const auto z = lf.samples.pre[sel.stage].col(sel.neuron);
            const bool any_neg = (z.array() < 0.0).any();
            const bool any_pos = (z.array() >= 0.0).any();
            if (any_neg && any_pos) break;
            stabilize(lf, sel.stage, sel.neuron, any_neg ? -1 : +1, out);
            if (!lf.open()) {
                out.push_back(std::move(lf));
                return out;
            }
            ++stabilized;
        }

        SplitOutcome so = split_neuron(net, lf.dom, lf.samples, sel.stage,
                                       sel.neuron);

        // chain shares are measured on the statistics basis, the core rows
        const int m = lf.core_rows;
        std::vector<char> in_neg_core(m);
        int neg_core = 0;
        for (int r = 0; r < m; ++r) {
            in_neg_core[r] = lf.samples.pre[sel.stage](r, sel.neuron) < 0.0;
            neg_core += in_neg_core[r];
        }
        const Vector w_core = lf.samples.w.head(m);
        const double neg_share = kernels::weighted_fraction(in_neg_core, w_core);
        const auto seeds = draw_seeds(lf.samples.rng, cfg.bootstrap);

        Leaf neg, pos;
        split_chains(lf.stats, in_neg_core, w_core, seeds, neg_share, neg.stats,
                     pos.stats);
        neg.dom = std::move(so.neg);
        neg.samples = std::move(so.neg_samples);
        neg.core_rows = neg_core;
        neg.dom.volume_chain.back() = neg_share;
        pos.dom = std::move(so.pos);
        pos.samples = std::move(so.pos_samples);
        pos.core_rows = m - neg_core;
        pos.dom.volume_chain.back() = 1.0 - neg_share;

        const HalfSpaceRegion parent_plane = *lf.dom.plane;
        auto finish_child = [&](Leaf& child, double share, int sign) {
            child.order = next_order++;
            if (share <= 0.0) {
                freeze_zero_share(child, parent_plane);
            } else if (cfg.tighten &&
                       tighten_reverse(net, child.dom, sel.stage, sel.neuron,
                                       sign) == TightenOutcome::Infeasible) {
                freeze_infeasible(child);
            } else if (refresh_forward(net, child.dom) ==
                       TightenOutcome::Infeasible) {
                freeze_infeasible(child);
            } else {
                refine(child, &parent_plane);
            }
            out.push_back(std::move(child));
        };
        finish_child(neg, neg_share, -1);
        finish_child(pos, 1.0 - neg_share, +1);
        return out;
    }

    void refresh_estimates() {
        std::vector<const LeafStats*> st;
        st.reserve(leaves.size());
        for (const Leaf& l : leaves) st.push_back(&l.stats);
        estimate = volume_estimates(st, root_volume);
        ci = bootstrap_ci(st, root_volume, cfg.level);
    }

    void emit_trace() {
        TraceEntry e;
        e.iteration = iterations;
        e.elapsed_s = elapsed();
        e.v_P = estimate.v_P;
        e.v_O = estimate.v_O;
        e.ratio = estimate.ratio;
        e.ci_low = ci.ratio.lo;
        e.ci_high = ci.ratio.hi;
        e.leaves = static_cast<int>(leaves.size());
        trace.push_back(e);
        if (trace_cb) trace_cb(e);
    }

    RunResult run() {
        validate();
        t0 = Clock::now();
        // Hull measure keeps patch-style domains (pinned coordinates) from
        // collapsing every volume estimate to zero.
        root_volume = box.hull_volume();

        Leaf root;
        root.dom = make_root(net, box, cfg.seed);
        root.samples.stream_seed = root.dom.stream_seed;
        root.samples.rng.seed(root.samples.stream_seed);
        root.samples.X = sample_uniform(box, 5 * cfg.samples, root.samples.rng);
        root.samples.w = row_weights(root.samples.X);
        root.samples.pre = kernels::batch_pre_activations(net, root.samples.X);
        root.core_rows = root.samples.n();
        root.order = next_order++;
        refine(root, nullptr);
        root_ess = effective_sample_size(root.samples.w);
        leaves.push_back(std::move(root));
        iterations = 1;
        refresh_estimates();
        emit_trace();

        StopReason stop;
        for (;;) {
            if (threshold_met(estimate.ratio)) {
                stop = StopReason::Threshold;
                break;
            }
            std::vector<int> open;
            for (int i = 0; i < static_cast<int>(leaves.size()); ++i)
                if (leaves[i].open()) open.push_back(i);
            if (open.empty()) {
                stop = StopReason::Exact;
                break;
            }
            if (elapsed() >= cfg.time_limit) {
                stop = StopReason::Time;
                break;
            }
            const long budget = cfg.max_iterations - iterations;
            if (budget <= 0) {
                stop = StopReason::Iterations;
                break;
            }
            std::sort(open.begin(), open.end(), [&](int a, int b) {
                const double pa = priority(leaves[a].stats, root_volume);
                const double pb = priority(leaves[b].stats, root_volume);
                if (pa != pb) return pa > pb;
                return leaves[a].order < leaves[b].order;
            });
            const int k = static_cast<int>(std::min<long>(
                std::min<long>(cfg.batch, static_cast<long>(open.size())), budget));

            // refinements are leaf-pure (own stream, own pool, own bounds), so
            // the round's outcome is independent of processing order; the tree
            // is mutated only here at the merge point, in slot order
            std::vector<std::pair<int, std::vector<Leaf>>> rounds;
            rounds.reserve(k);
            for (int j = 0; j < k; ++j)
                rounds.emplace_back(open[j], process(std::move(leaves[open[j]])));
            std::sort(rounds.begin(), rounds.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });

            std::vector<Leaf> merged;
            merged.reserve(leaves.size() + k);
            size_t next = 0;
            for (int i = 0; i < static_cast<int>(leaves.size()); ++i) {
                if (next < rounds.size() && rounds[next].first == i) {
                    for (Leaf& l : rounds[next].second) merged.push_back(std::move(l));
                    ++next;
                } else {
                    merged.push_back(std::move(leaves[i]));
                }
            }
            leaves = std::move(merged);

            iterations += k;
            refresh_estimates();
            emit_trace();
        }

        std::sort(leaves.begin(), leaves.end(), path_less);
        refresh_estimates();

        RunResult res;
        res.leaves = std::move(leaves);
        res.estimate = estimate;
        res.ci = ci;
        res.stop = stop;
        res.iterations = iterations;
        res.elapsed_seconds = elapsed();
        res.optimizer_invocations = optimizer_calls;
        res.root_volume = root_volume;
        res.root_ess = root_ess;
        res.min_ess = min_ess;
        res.trace = std::move(trace);
        return res;
    }
};

}  // namespace

RunResult premap2(const CompiledNet& net, const Box& box, const RunConfig& cfg,
                  const TraceCallback& on_trace) {
    Engine engine(net, box, cfg, on_trace);
    return engine.run();
}

}  // namespace premap
