#include "premap/domain.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace premap {

namespace {

constexpr double kSlack = 1e-12;

void check_split_target(const Subdomain& dom, int stage, int neuron) {
    if (stage < 0 || stage >= static_cast<int>(dom.state.bounds.size()))
        throw std::invalid_argument("split: stage out of range");
    const StageBounds& sb = dom.state.bounds[stage];
    if (neuron < 0 || neuron >= sb.lb.size())
        throw std::invalid_argument("split: neuron out of range");
    for (const SplitConstraint& sp : dom.splits)
        if (sp.stage == stage && sp.neuron == neuron)
            throw std::invalid_argument("split: neuron already split");
    if (neuron_state(sb.lb(neuron), sb.ub(neuron)) != NeuronState::Unstable)
        throw std::invalid_argument("split: neuron is stable");
}

// Narrows [lo, hi] under a . xi + b <= 0, with c_j built from the pre-update
// intervals.  Returns false when some coordinate empties.
bool tighten_leq(const Vector& a, double b, Vector& lo, Vector& hi) {
    const int d = static_cast<int>(a.size());
    double total_min = 0.0;
    Vector term_min(d);
    for (int j = 0; j < d; ++j) {
        term_min(j) = std::min(a(j) * lo(j), a(j) * hi(j));
        total_min += term_min(j);
    }
    if ((a.array() == 0.0).all()) return b <= kSlack;

    Vector new_lo = lo, new_hi = hi;
    for (int j = 0; j < d; ++j) {
        if (a(j) == 0.0) continue;
        const double c = total_min - term_min(j);
        const double bound = -(c + b) / a(j);
        if (a(j) > 0.0)
            new_hi(j) = std::min(new_hi(j), bound + kSlack);
        else
            new_lo(j) = std::max(new_lo(j), bound - kSlack);
    }
    if ((new_hi - new_lo).minCoeff() < 0.0) return false;
    lo = new_lo;
    hi = new_hi;
    return true;
}

SampleSet filter_rows(const SampleSet& in, const std::vector<int>& rows,
                      std::uint64_t seed) {
    SampleSet out;
    out.X.resize(rows.size(), in.X.cols());
    out.w.resize(rows.size());
    out.pre.resize(in.pre.size());
    for (auto& m : out.pre) m = Matrix();
    for (size_t s = 0; s < in.pre.size(); ++s)
        out.pre[s].resize(rows.size(), in.pre[s].cols());
    for (size_t r = 0; r < rows.size(); ++r) {
        out.X.row(r) = in.X.row(rows[r]);
        out.w(r) = in.w(rows[r]);
        for (size_t s = 0; s < in.pre.size(); ++s)
            out.pre[s].row(r) = in.pre[s].row(rows[r]);
    }
    out.stream_seed = seed;
    out.rng.seed(seed);
    return out;
}

}  // namespace

Subdomain make_root(const CompiledNet& net, const Box& box,
                    std::uint64_t master_seed) {
    Subdomain root;
    root.box = box;
    root.state = compute_bound_state(net, box, {});
    root.stream_seed = derive_stream(master_seed, -1, -1, 0);
    return root;
}

SplitOutcome split_neuron(const CompiledNet& net, const Subdomain& dom,
                          const SampleSet& samples, int stage, int neuron) {
    (void)net;
    check_split_target(dom, stage, neuron);
    if (samples.n() == 0)
        throw std::invalid_argument("split: empty sample set");

    std::vector<int> neg_rows, pos_rows;
    for (int r = 0; r < samples.n(); ++r) {
        if (samples.pre[stage](r, neuron) >= 0.0)
            pos_rows.push_back(r);
        else
            neg_rows.push_back(r);
    }
    const double total = samples.w.sum();
    double wneg = 0.0;
    for (int r : neg_rows) wneg += samples.w(r);

    SplitOutcome out;
    out.neg_fraction = wneg / total;
    out.pos_fraction = 1.0 - out.neg_fraction;

    auto make_child = [&](int sign, double fraction) {
        Subdomain child = dom;
        child.splits.push_back({stage, neuron, sign});
        StageBounds& sb = child.state.bounds[stage];
        if (sign < 0)
            sb.ub(neuron) = std::min(sb.ub(neuron), 0.0);
        else
            sb.lb(neuron) = std::max(sb.lb(neuron), 0.0);
        child.volume_chain.push_back(fraction);
        child.stream_seed = derive_stream(dom.stream_seed, stage, neuron, sign);
        return child;
    };
    out.neg = make_child(-1, out.neg_fraction);
    out.pos = make_child(+1, out.pos_fraction);
    out.neg_samples = filter_rows(samples, neg_rows,
                                  derive_stream(samples.stream_seed, stage, neuron, -1));
    out.pos_samples = filter_rows(samples, pos_rows,
                                  derive_stream(samples.stream_seed, stage, neuron, +1));
    return out;
}

TightenOutcome tighten_reverse(const CompiledNet& net, Subdomain& dom, int stage,
                               int neuron, int sign) {
    if (stage < 0 || stage >= static_cast<int>(dom.state.vs_input.size()) ||
        dom.state.vs_input[stage].Al.rows() == 0)
        throw std::runtime_error("tighten: missing linear-bound cache");
    const LinearBounds& vin = dom.state.vs_input[stage];

    // Branch inequality in "a . xi + b <= 0" form: the "-" branch bounds the
    // neuron's lower line below zero, the "+" branch its upper line above.
    auto row = [&](const LinearBounds& lb) {
        Vector a;
        double b;
        if (sign < 0) {
            a = lb.Al.row(neuron).transpose();
            b = lb.bl(neuron);
        } else {
            a = -lb.Au.row(neuron).transpose();
            b = -lb.bu(neuron);
        }
        return std::pair<Vector, double>(std::move(a), b);
    };

    auto [ain, bin] = row(vin);
    if (!tighten_leq(ain, bin, dom.box.lo, dom.box.hi))
        return TightenOutcome::Infeasible;

    const int prev = net.prev_relu_stage(stage);
    if (prev >= 0 && dom.state.vs_prev_relu[stage].has_value()) {
        auto [ar, br] = row(*dom.state.vs_prev_relu[stage]);
        if (!tighten_leq(ar, br, dom.state.bounds[prev].lb,
                         dom.state.bounds[prev].ub))
            return TightenOutcome::Infeasible;
    }

    StageBounds& sb = dom.state.bounds[stage];
    if (sign < 0)
        sb.ub(neuron) = std::min(sb.ub(neuron), 0.0);
    else
        sb.lb(neuron) = std::max(sb.lb(neuron), 0.0);
    if (sb.ub(neuron) < sb.lb(neuron)) return TightenOutcome::Infeasible;
    return TightenOutcome::Tightened;
}

TightenOutcome refresh_forward(const CompiledNet& net, Subdomain& dom) {
    if (dom.box.empty()) return TightenOutcome::Infeasible;
    BoundState fresh = compute_bound_state(net, dom.box, dom.splits,
                                           &dom.state.bounds);
    if (fresh.infeasible) return TightenOutcome::Infeasible;
    dom.state = std::move(fresh);
    return TightenOutcome::Tightened;
}

bool contains(const HalfSpaceRegion& region, const CompiledNet& net,
              const Subdomain& dom, const Vector& x) {
    const auto zs = stage_pre_activations(net, x);
    for (const SplitConstraint& sp : dom.splits) {
        const double z = zs[sp.stage](sp.neuron);
        if (sp.sign < 0 ? z >= 0.0 : z < 0.0) return false;
    }
    if (region.A.rows() == 0) return true;
    return ((region.A * x + region.b).array() >= 0.0).all();
}

}  // namespace premap
