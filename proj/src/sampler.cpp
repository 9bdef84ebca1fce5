#include "premap/sampler.hpp"

#include "premap/domain.hpp"
#include "premap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace premap {

namespace {

using nlohmann::json;

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Vector json_vector(const json& j, const char* what) {
    if (!j.is_array()) throw std::runtime_error(std::string(what) + ": expected array");
    Vector v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

WeightFunction brightness_prior(const json& params) {
    const Vector image = json_vector(params.at("image"), "brightness.image");
    const Vector mask = json_vector(params.at("mask"), "brightness.mask");
    const auto shape = params.at("shape");
    const int h = shape.at(0).get<int>();
    const int w = shape.at(1).get<int>();
    const int c = shape.at(2).get<int>();
    if (image.size() != h * w * c)
        throw std::runtime_error("brightness: image does not match shape");
    if (mask.size() != h * w)
        throw std::runtime_error("brightness: mask must have one entry per pixel");

    // Reference level: brightness of the brightest pixel of the base image.
    double pmax = 0.0;
    for (int p = 0; p < h * w; ++p)
        pmax = std::max(pmax, image.segment(p * c, c).mean());

    std::vector<int> patch;
    for (int p = 0; p < h * w; ++p)
        if (mask(p) != 0.0) patch.push_back(p);

    WeightFunction wf;
    wf.name = "brightness";
    wf.eval = [patch, c, pmax](const Vector& x) {
        double weight = 1.0;
        for (int p : patch) {
            const double bright = x.segment(p * c, c).mean();
            // A pixel is penalized for exceeding the image's brightest pixel,
            // hitting 0 at pure white; denominator 0 means nothing can exceed.
            if (pmax < 1.0)
                weight *= 1.0 - std::max(0.0, bright - pmax) / (1.0 - pmax);
        }
        return std::max(weight, 0.0);
    };
    return wf;
}

WeightFunction piecewise_prior(const json& params) {
    const auto& knots_j = params.at("knots");
    const auto& values_j = params.at("values");
    if (knots_j.size() != values_j.size())
        throw std::runtime_error("piecewise: knots/values count mismatch");
    std::vector<Vector> knots, values;
    for (size_t i = 0; i < knots_j.size(); ++i) {
        knots.push_back(json_vector(knots_j[i], "piecewise.knots"));
        values.push_back(json_vector(values_j[i], "piecewise.values"));
        if (knots.back().size() != values.back().size() || knots.back().size() < 2)
            throw std::runtime_error("piecewise: need matching knots/values, >= 2");
        for (Eigen::Index k = 1; k < knots.back().size(); ++k)
            if (knots.back()(k) <= knots.back()(k - 1))
                throw std::runtime_error("piecewise: knots must increase");
        if ((values.back().array() < 0.0).any())
            throw std::runtime_error("piecewise: negative value");
    }

    WeightFunction wf;
    wf.name = "piecewise";
    wf.eval = [knots, values](const Vector& x) {
        double weight = 1.0;
        const size_t dims = std::min<size_t>(knots.size(), x.size());
        for (size_t i = 0; i < dims; ++i) {
            const Vector& t = knots[i];
            const Vector& v = values[i];
            const double xi = x(static_cast<Eigen::Index>(i));
            if (xi <= t(0)) {
                weight *= v(0);
            } else if (xi >= t(t.size() - 1)) {
                weight *= v(v.size() - 1);
            } else {
                Eigen::Index k = 1;
                while (t(k) < xi) ++k;
                const double f = (xi - t(k - 1)) / (t(k) - t(k - 1));
                weight *= v(k - 1) + f * (v(k) - v(k - 1));
            }
        }
        return weight;
    };
    return wf;
}

}  // namespace

WeightFunction make_weight_function(const std::string& name, const json& params) {
    if (name == "uniform") {
        WeightFunction wf;
        wf.name = "uniform";
        wf.eval = [](const Vector&) { return 1.0; };
        return wf;
    }
    if (name == "brightness") return brightness_prior(params);
    if (name == "piecewise") return piecewise_prior(params);
    throw std::runtime_error("unknown weight function: " + name);
}

std::uint64_t derive_stream(std::uint64_t parent_seed, int stage, int neuron,
                            int sign) {
    std::uint64_t h = mix64(parent_seed);
    h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(stage)));
    h = mix64(h ^ (static_cast<std::uint64_t>(static_cast<std::uint32_t>(neuron)) << 20));
    h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(sign + 2)));
    return h;
}

Matrix sample_uniform(const Box& box, int n, std::mt19937_64& rng) {
    if (box.empty()) throw std::invalid_argument("sample_uniform: empty box");
    const int d = box.dim();
    Matrix X(n, d);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j)
            X(r, j) = box.lo(j) + (box.hi(j) - box.lo(j)) * uniform01(rng);
    return X;
}

std::vector<Matrix> batch_pre_activations(const CompiledNet& net, const Matrix& X) {
    return kernels::batch_pre_activations(net, X);
}

std::vector<char> split_consistent(const std::vector<Matrix>& pre,
                                   const std::vector<SplitConstraint>& splits) {
    const int n = pre.empty() ? 0 : static_cast<int>(pre[0].rows());
    std::vector<char> ok(n, 1);
    for (const SplitConstraint& sp : splits) {
        const Matrix& z = pre[sp.stage];
        for (int r = 0; r < n; ++r) {
            if (!ok[static_cast<size_t>(r)]) continue;
            const bool neg = z(r, sp.neuron) < 0.0;
            if (sp.sign < 0 ? !neg : neg) ok[static_cast<size_t>(r)] = 0;
        }
    }
    return ok;
}

RejectionResult rejection_sample(const CompiledNet& net, const Subdomain& dom,
                                 int n, std::mt19937_64& rng) {
    RejectionResult res;
    res.points.resize(0, dom.box.dim());
    if (n <= 0) return res;

    const long budget = 20L * n;
    long attempted = 0;
    std::vector<Matrix> accepted;
    long accepted_count = 0;
    while (attempted < budget && accepted_count < n) {
        const int chunk =
            static_cast<int>(std::min<long>(budget - attempted, std::max(n, 256)));
        Matrix cand = sample_uniform(dom.box, chunk, rng);
        attempted += chunk;
        if (dom.splits.empty()) {
            accepted.push_back(std::move(cand));
            accepted_count += chunk;
            continue;
        }
        const auto pre = batch_pre_activations(net, cand);
        const auto ok = split_consistent(pre, dom.splits);
        const long hits = std::count(ok.begin(), ok.end(), char(1));
        if (hits == 0) continue;
        Matrix kept(hits, cand.cols());
        long k = 0;
        for (int r = 0; r < chunk; ++r)
            if (ok[static_cast<size_t>(r)]) kept.row(k++) = cand.row(r);
        accepted.push_back(std::move(kept));
        accepted_count += hits;
    }

    res.hit_rate = attempted > 0 ? static_cast<double>(accepted_count) / attempted : 1.0;
    res.exhausted = accepted_count < n;
    const long keep = std::min<long>(accepted_count, n);
    res.points.resize(keep, dom.box.dim());
    long row = 0;
    for (const Matrix& blk : accepted) {
        if (row >= keep) break;
        const long take = std::min<long>(blk.rows(), keep - row);
        res.points.middleRows(row, take) = blk.topRows(take);
        row += take;
    }
    return res;
}

LinearConstraints split_polytope(const Subdomain& dom) {
    const int d = dom.box.dim();
    LinearConstraints cons;
    cons.G.resize(dom.splits.size(), d);
    cons.h.resize(dom.splits.size());
    for (size_t q = 0; q < dom.splits.size(); ++q) {
        const SplitConstraint& sp = dom.splits[q];
        const LinearBounds& lb = dom.state.vs_input[sp.stage];
        const Eigen::Index i = static_cast<Eigen::Index>(q);
        if (sp.sign < 0) {
            // lower line below zero: Al x <= -bl
            cons.G.row(i) = lb.Al.row(sp.neuron);
            cons.h(i) = -lb.bl(sp.neuron);
        } else {
            // upper line above zero: -Au x <= bu
            cons.G.row(i) = -lb.Au.row(sp.neuron);
            cons.h(i) = lb.bu(sp.neuron);
        }
    }
    return cons;
}

Matrix hit_and_run(const Box& box, const LinearConstraints& cons,
                   const Vector& start, int n, int thinning, int burn_in,
                   std::mt19937_64& rng) {
    const int d = box.dim();
    const double tol = 1e-9;
    if (((start - box.lo).array() < -tol).any() ||
        ((box.hi - start).array() < -tol).any())
        throw std::invalid_argument("hit_and_run: start outside box");
    if (cons.G.rows() > 0 &&
        ((cons.G * start - cons.h).array() > tol).any())
        throw std::invalid_argument("hit_and_run: start violates constraints");

    // The chain moves only along non-degenerate coordinates; on a pinned
    // coordinate every chord has length zero, so directions touching one
    // would never produce a step.
    std::vector<int> free_dims;
    for (int j = 0; j < d; ++j)
        if (box.hi(j) > box.lo(j)) free_dims.push_back(j);
    if (free_dims.empty())
        throw std::invalid_argument("hit_and_run: box has no free coordinate");

    Matrix out(n, d);
    Vector x = start;
    auto gauss = [&]() {
        // Box-Muller on the raw stream keeps the chain library-independent.
        const double u1 = std::max(uniform01(rng), 1e-300);
        const double u2 = uniform01(rng);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    };

    int recorded = 0, steps = 0;
    while (recorded < n) {
        Vector dir = Vector::Zero(d);
        for (int j : free_dims) dir(j) = gauss();
        const double norm = dir.norm();
        if (norm < 1e-12) continue;
        dir /= norm;

        double tlo = -std::numeric_limits<double>::infinity();
        double thi = std::numeric_limits<double>::infinity();
        for (int j = 0; j < d; ++j) {
            if (dir(j) > 1e-15) {
                tlo = std::max(tlo, (box.lo(j) - x(j)) / dir(j));
                thi = std::min(thi, (box.hi(j) - x(j)) / dir(j));
            } else if (dir(j) < -1e-15) {
                tlo = std::max(tlo, (box.hi(j) - x(j)) / dir(j));
                thi = std::min(thi, (box.lo(j) - x(j)) / dir(j));
            }
        }
        for (Eigen::Index i = 0; i < cons.G.rows(); ++i) {
            const double gd = cons.G.row(i).dot(dir);
            const double slack = cons.h(i) - cons.G.row(i).dot(x);
            if (gd > 1e-15)
                thi = std::min(thi, slack / gd);
            else if (gd < -1e-15)
                tlo = std::max(tlo, slack / gd);
        }
        if (!(thi > tlo)) continue;  // degenerate chord: new direction

        x += (tlo + (thi - tlo) * uniform01(rng)) * dir;
        ++steps;
        if (steps <= burn_in) continue;
        if ((steps - burn_in) % thinning == 0) out.row(recorded++) = x;
    }
    return out;
}

double effective_sample_size(const Vector& w) {
    if ((w.array() < 0.0).any())
        throw std::invalid_argument("ess: negative weight");
    const double s = w.sum();
    const double s2 = w.squaredNorm();
    if (s2 == 0.0) throw std::runtime_error("ess: all weights are zero");
    return s * s / s2;
}

namespace {

// Appends rows to the set, computing weights and pre-activation caches.
void append_rows(const CompiledNet& net, SampleSet& X, const Matrix& rows,
                 const WeightFunction& wf) {
    if (rows.rows() == 0) return;
    const auto pre_new = batch_pre_activations(net, rows);
    const int old_n = X.n();
    const int add = static_cast<int>(rows.rows());
    X.X.conservativeResize(old_n + add, rows.cols());
    X.X.bottomRows(add) = rows;
    X.w.conservativeResize(old_n + add);
    for (int r = 0; r < add; ++r)
        X.w(old_n + r) = wf.eval(rows.row(r).transpose());
    if (X.pre.empty()) X.pre.resize(pre_new.size());
    for (size_t s = 0; s < pre_new.size(); ++s) {
        X.pre[s].conservativeResize(old_n + add, pre_new[s].cols());
        X.pre[s].bottomRows(add) = pre_new[s];
    }
}

}  // namespace

bool replenish(const CompiledNet& net, const Subdomain& dom, SampleSet& X,
               int n_target, const WeightFunction& wf,
               const ReplenishOptions& opt) {
    if (X.n() >= n_target) return true;

    const int need = n_target - X.n();
    RejectionResult rej = rejection_sample(net, dom, need, X.rng);
    append_rows(net, X, rej.points, wf);
    if (X.n() >= n_target) return true;
    if (rej.hit_rate >= opt.fallback_hit_rate) return X.n() > 0;

    // Thin branch: walk the outer split polytope, then filter exact signs.
    Vector start;
    if (X.n() > 0)
        start = X.X.row(0).transpose();
    else
        return false;  // no feasible point known anywhere in the branch
    const LinearConstraints cons = split_polytope(dom);

    for (int round = 0; round < 20 && X.n() < n_target; ++round) {
        const int want = n_target - X.n();
        const int chain_n = std::max(2 * want, 64);
        Matrix pts;
        try {
            pts = hit_and_run(dom.box, cons, start, chain_n, opt.thinning,
                              opt.burn_in, X.rng);
        } catch (const std::invalid_argument&) {
            break;  // start fell outside the outer polytope: give up topping up
        }
        const auto pre = batch_pre_activations(net, pts);
        const auto ok = split_consistent(pre, dom.splits);
        const long hits = std::count(ok.begin(), ok.end(), char(1));
        if (hits == 0) continue;
        Matrix kept(std::min<long>(hits, want), pts.cols());
        long k = 0;
        for (int r = 0; r < pts.rows() && k < kept.rows(); ++r)
            if (ok[static_cast<size_t>(r)]) kept.row(k++) = pts.row(r);
        append_rows(net, X, kept, wf);
        start = X.X.row(X.n() - 1).transpose();  // continue from a fresh point
    }
    return X.n() > 0;
}

}  // namespace premap
