#include "premap/relax.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace premap {

namespace {

double sigmoid(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

// Slope/intercept pair chosen for one matrix entry during the backward pass.
struct Choice {
    double d, c;
};

// Lower-bound side: positive coefficients keep the lower relaxation line.
Choice choose_lower(const ReluRelaxation& r, double lambda) {
    if (lambda >= 0.0) return {r.dl, r.cl};
    return {r.du, r.cu};
}

Choice choose_upper(const ReluRelaxation& r, double lambda) {
    if (lambda >= 0.0) return {r.du, r.cu};
    return {r.dl, r.cl};
}

}  // namespace

ReluRelaxation relu_relaxation(double lb, double ub, double alpha) {
    if (lb > ub) throw std::invalid_argument("relu_relaxation: lb > ub");
    ReluRelaxation r;
    r.state = neuron_state(lb, ub);
    switch (r.state) {
        case NeuronState::Inactive:
            r.dl = r.du = r.cl = r.cu = 0.0;
            break;
        case NeuronState::Active:
            r.dl = r.du = 1.0;
            r.cl = r.cu = 0.0;
            break;
        case NeuronState::Unstable: {
            const double slope = ub / (ub - lb);
            r.dl = alpha;
            r.cl = 0.0;
            r.du = slope;
            r.cu = -lb * slope;
            break;
        }
    }
    return r;
}

RelaxParams init_params(const CompiledNet& net, const LayerBounds& bounds, int K,
                        int num_splits) {
    RelaxParams p;
    p.alpha_lo.resize(net.num_stages());
    p.alpha_up.resize(net.num_stages());
    for (int s = 0; s < net.num_stages(); ++s) {
        if (!net.stages[s].relu) continue;
        const int w = net.stages[s].width;
        Matrix a(K, w);
        for (int i = 0; i < w; ++i)
            a.col(i).setConstant(alpha_init(bounds[s].lb(i), bounds[s].ub(i)));
        p.alpha_lo[s] = a;
        p.alpha_up[s] = a;
    }
    p.beta_lo.assign(num_splits, Vector::Zero(K));
    p.beta_up.assign(num_splits, Vector::Zero(K));
    return p;
}

BackwardResult backward_bounds(const CompiledNet& net, int target_stage,
                               const LayerBounds& bounds,
                               const std::vector<SplitConstraint>& splits,
                               const BackwardOptions& opt) {
    if (target_stage < 0 || target_stage >= net.num_stages())
        throw std::invalid_argument("backward_bounds: target stage out of range");
    if (opt.params) {
        if (static_cast<int>(opt.params->alpha_lo.size()) != net.num_stages() ||
            opt.params->beta_lo.size() != splits.size())
            throw std::invalid_argument("backward_bounds: params shape mismatch");
    }

    const int K = net.stages[target_stage].width;
    BackwardResult res;
    if (opt.want_stage_lambda) {
        res.stage_lambda_lo.resize(net.num_stages());
        res.stage_lambda_up.resize(net.num_stages());
    }

    Matrix Ll = Matrix::Identity(K, K);
    Matrix Lu = Matrix::Identity(K, K);
    Vector ol = Vector::Zero(K);
    Vector ou = Vector::Zero(K);

    for (int t = target_stage; t >= 0; --t) {
        const Stage& st = net.stages[t];
        if (t < target_stage && st.relu) {
            const int w = st.width;
            RelaxTapeOp op;
            if (opt.want_tape) {
                op.stage = t;
                op.lambda_pre_lo = Ll;
                op.lambda_pre_up = Lu;
                op.D_lo.resize(K, w);
                op.D_up.resize(K, w);
                op.C_lo.resize(K, w);
                op.C_up.resize(K, w);
            }
            for (int i = 0; i < w; ++i) {
                const double lb = bounds[t].lb(i), ub = bounds[t].ub(i);
                // Alpha defaults to the init slope; tape entries record the
                // per-row choice so the adjoint can replay it.
                for (int j = 0; j < K; ++j) {
                    const double a_lo =
                        opt.params ? opt.params->alpha_lo[t](j, i) : alpha_init(lb, ub);
                    const double a_up =
                        opt.params ? opt.params->alpha_up[t](j, i) : alpha_init(lb, ub);
                    const ReluRelaxation r_lo = relu_relaxation(lb, ub, a_lo);
                    const ReluRelaxation r_up = relu_relaxation(lb, ub, a_up);
                    const Choice cl = choose_lower(r_lo, Ll(j, i));
                    const Choice cu = choose_upper(r_up, Lu(j, i));
                    if (opt.want_tape) {
                        op.D_lo(j, i) = cl.d;
                        op.C_lo(j, i) = cl.c;
                        op.D_up(j, i) = cu.d;
                        op.C_up(j, i) = cu.c;
                    }
                    ol(j) += Ll(j, i) * cl.c;
                    ou(j) += Lu(j, i) * cu.c;
                    Ll(j, i) *= cl.d;
                    Lu(j, i) *= cu.d;
                }
            }
            if (opt.use_beta && opt.params) {
                for (size_t q = 0; q < splits.size(); ++q) {
                    const SplitConstraint& sp = splits[q];
                    if (sp.stage != t) continue;
                    // Lagrangian sign: lower rows subtract beta for "+" splits
                    // and add it for "-" splits; upper rows mirror.
                    Ll.col(sp.neuron) -= sp.sign * opt.params->beta_lo[q];
                    Lu.col(sp.neuron) += sp.sign * opt.params->beta_up[q];
                }
            }
            if (opt.want_tape) res.tape.push_back(std::move(op));
            if (opt.want_stage_lambda) {
                res.stage_lambda_lo[t] = Ll;
                res.stage_lambda_up[t] = Lu;
            }
        }
        if (t == opt.snapshot_stage) {
            LinearBounds snap;
            snap.Al = Ll;
            snap.bl = ol;
            snap.Au = Lu;
            snap.bu = ou;
            res.snapshot = std::move(snap);
        }
        ol += Ll * st.b;
        ou += Lu * st.b;
        Ll = (Ll * st.W).eval();
        Lu = (Lu * st.W).eval();
    }

    res.vs_input.Al = std::move(Ll);
    res.vs_input.Au = std::move(Lu);
    res.vs_input.bl = std::move(ol);
    res.vs_input.bu = std::move(ou);
    return res;
}

void concretize(const LinearBounds& lb, const Box& box, Vector& out_lb,
                Vector& out_ub) {
    const Eigen::Index K = lb.Al.rows();
    out_lb = lb.bl;
    out_ub = lb.bu;
    for (Eigen::Index j = 0; j < box.lo.size(); ++j) {
        const double lo = box.lo(j), hi = box.hi(j);
        for (Eigen::Index k = 0; k < K; ++k) {
            const double al = lb.Al(k, j), au = lb.Au(k, j);
            out_lb(k) += al >= 0.0 ? al * lo : al * hi;
            out_ub(k) += au >= 0.0 ? au * hi : au * lo;
        }
    }
}

BoundState compute_bound_state(const CompiledNet& net, const Box& box,
                               const std::vector<SplitConstraint>& splits,
                               const LayerBounds* narrow_into) {
    if (box.empty())
        throw std::invalid_argument("compute_bound_state: empty input box");
    const int S = net.num_stages();
    BoundState st;
    st.bounds.resize(S);
    st.vs_input.resize(S);
    st.vs_prev_relu.resize(S);
    for (int s = 0; s < S; ++s) {
        BackwardOptions opt;
        opt.snapshot_stage = net.prev_relu_stage(s);
        BackwardResult r = backward_bounds(net, s, st.bounds, splits, opt);
        Vector lb, ub;
        concretize(r.vs_input, box, lb, ub);
        if (narrow_into) {
            lb = lb.cwiseMax((*narrow_into)[s].lb);
            ub = ub.cwiseMin((*narrow_into)[s].ub);
        }
        for (const SplitConstraint& sp : splits) {
            if (sp.stage != s) continue;
            if (sp.sign < 0)
                ub(sp.neuron) = std::min(ub(sp.neuron), 0.0);
            else
                lb(sp.neuron) = std::max(lb(sp.neuron), 0.0);
        }
        // Intersections of two sound interval systems can only invert by
        // float hairlines unless the region is genuinely empty.
        for (int i = 0; i < lb.size(); ++i) {
            if (ub(i) >= lb(i)) continue;
            if (lb(i) - ub(i) <= 1e-9) {
                const double mid = 0.5 * (lb(i) + ub(i));
                lb(i) = ub(i) = mid;
            } else {
                st.infeasible = true;
                ub(i) = lb(i);
            }
        }
        st.bounds[s] = {lb, ub};
        st.vs_input[s] = std::move(r.vs_input);
        st.vs_prev_relu[s] = std::move(r.snapshot);
        if (st.infeasible) break;
    }
    return st;
}

namespace {

// Per-sample scores S = X Al^T + bl^T and the shared sigmoid statistic.
// sign = -1 gives the under objective, +1 the over objective.
double objective_impl(const Matrix& A, const Vector& b, const Matrix& X,
                      const Vector& w, const std::vector<char>* mask, double sign,
                      Matrix* gamma) {
    const Eigen::Index n = X.rows(), K = A.rows();
    Matrix S = X * A.transpose();
    S.rowwise() += b.transpose();

    double total = 0.0;
    Vector p(n), correction(n);
    Matrix soft;
    if (gamma) soft.resize(n, K);
    for (Eigen::Index r = 0; r < n; ++r) {
        if (mask && !(*mask)[static_cast<size_t>(r)]) {
            p(r) = 0.0;
            if (gamma) soft.row(r).setZero();
            continue;
        }
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < K; ++k) m = std::max(m, sign * S(r, k));
        double acc = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) acc += std::exp(sign * S(r, k) - m);
        const double u = -(m + std::log(acc));
        p(r) = sigmoid(u);
        if (gamma)
            for (Eigen::Index k = 0; k < K; ++k)
                soft(r, k) = std::exp(sign * S(r, k) - m) / acc;
        total += w(r);
    }
    if (total <= 0.0) {
        if (mask) return 1.0;  // nothing outside the preimage: vacuous objective
        throw std::runtime_error("objective: all-zero total weight");
    }

    double value = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        if (mask && !(*mask)[static_cast<size_t>(r)]) continue;
        value += w(r) * p(r);
    }
    value /= total;

    if (gamma) {
        gamma->resize(n, K);
        for (Eigen::Index r = 0; r < n; ++r) {
            if (mask && !(*mask)[static_cast<size_t>(r)]) {
                gamma->row(r).setZero();
                continue;
            }
            // d value / d S(r,k): sigma'(u) * d u/d S = p(1-p) * (-sign*softmax)
            const double coef = (w(r) / total) * p(r) * (1.0 - p(r)) * (-sign);
            gamma->row(r) = coef * soft.row(r);
        }
    }
    return value;
}

struct SideGradient {
    std::vector<Matrix> dalpha;
    std::vector<Vector> dbeta;
};

// Reverse sweep through the recorded tape, turning (dA, db) into parameter
// gradients for one bound side.
SideGradient adjoint_pass(const CompiledNet& net, int target_stage,
                          const LayerBounds& bounds,
                          const std::vector<SplitConstraint>& splits,
                          const BackwardResult& fwd, bool lower_side, bool use_beta,
                          const Matrix& dA, const Vector& db) {
    const int K = static_cast<int>(dA.rows());
    SideGradient g;
    g.dalpha.resize(net.num_stages());
    for (int s = 0; s < net.num_stages(); ++s)
        if (net.stages[s].relu) g.dalpha[s] = Matrix::Zero(K, net.stages[s].width);
    g.dbeta.assign(splits.size(), Vector::Zero(K));

    Matrix Lbar = dA;
    const Vector& obar = db;  // the offset accumulator is a plain running sum

    auto tape_entry = [&](int stage) -> const RelaxTapeOp& {
        for (const RelaxTapeOp& op : fwd.tape)
            if (op.stage == stage) return op;
        throw std::logic_error("adjoint_pass: missing tape entry");
    };

    for (int t = 0; t <= target_stage; ++t) {
        const Stage& st = net.stages[t];
        Lbar = (Lbar * st.W.transpose()).eval();
        Lbar += obar * st.b.transpose();
        if (t < target_stage && st.relu) {
            const RelaxTapeOp& op = tape_entry(t);
            if (use_beta) {
                for (size_t q = 0; q < splits.size(); ++q) {
                    const SplitConstraint& sp = splits[q];
                    if (sp.stage != t) continue;
                    const double sgn = lower_side ? -sp.sign : +sp.sign;
                    g.dbeta[q] += sgn * Lbar.col(sp.neuron);
                }
            }
            const Matrix& pre = lower_side ? op.lambda_pre_lo : op.lambda_pre_up;
            const Matrix& D = lower_side ? op.D_lo : op.D_up;
            const Matrix& C = lower_side ? op.C_lo : op.C_up;
            for (int i = 0; i < st.width; ++i) {
                const NeuronState state =
                    neuron_state(bounds[t].lb(i), bounds[t].ub(i));
                for (int j = 0; j < K; ++j) {
                    const double lpost_bar = Lbar(j, i);
                    // alpha enters when the unstable lower line was picked:
                    // positive coefficients on the lower side, negative on the
                    // upper side.
                    if (state == NeuronState::Unstable) {
                        const bool alpha_branch =
                            lower_side ? pre(j, i) >= 0.0 : pre(j, i) < 0.0;
                        if (alpha_branch) g.dalpha[t](j, i) += lpost_bar * pre(j, i);
                    }
                    Lbar(j, i) = lpost_bar * D(j, i) + obar(j) * C(j, i);
                }
            }
        }
    }
    return g;
}

}  // namespace

double objective_under(const Matrix& Al, const Vector& bl, const Matrix& X,
                       const Vector& w) {
    return objective_impl(Al, bl, X, w, nullptr, -1.0, nullptr);
}

double objective_over(const Matrix& Au, const Vector& bu, const Matrix& X,
                      const Vector& w, const std::vector<char>& outside) {
    return objective_impl(Au, bu, X, w, &outside, 1.0, nullptr);
}

void objective_gradient(const CompiledNet& net, const LayerBounds& bounds,
                        const std::vector<SplitConstraint>& splits, const Matrix& X,
                        const Vector& w, const std::vector<char>& outside,
                        const RelaxParams& params, Mode mode, bool use_beta,
                        std::vector<Matrix>& dalpha, std::vector<Vector>& dbeta) {
    const int target = net.num_stages() - 1;
    BackwardOptions opt;
    opt.params = &params;
    opt.use_beta = use_beta;
    opt.want_tape = true;
    BackwardResult fwd = backward_bounds(net, target, bounds, splits, opt);

    const bool lower = mode == Mode::Under;
    const Matrix& A = lower ? fwd.vs_input.Al : fwd.vs_input.Au;
    const Vector& b = lower ? fwd.vs_input.bl : fwd.vs_input.bu;
    Matrix gamma;
    objective_impl(A, b, X, w, lower ? nullptr : &outside, lower ? -1.0 : 1.0,
                   &gamma);
    const Matrix dA = gamma.transpose() * X;
    const Vector db = gamma.colwise().sum().transpose();

    SideGradient g =
        adjoint_pass(net, target, bounds, splits, fwd, lower, use_beta, dA, db);
    dalpha = std::move(g.dalpha);
    dbeta = std::move(g.dbeta);
}

OptimizeResult optimize_params(const CompiledNet& net, const LayerBounds& bounds,
                               const std::vector<SplitConstraint>& splits,
                               const Matrix& X, const Vector& w,
                               const std::vector<char>& outside,
                               const RelaxParams& start, const OptimizeOptions& opt) {
    const int target = net.num_stages() - 1;
    const bool lower = opt.mode == Mode::Under;

    auto evaluate = [&](const RelaxParams& p, OptimizeResult& out) {
        BackwardOptions bo;
        bo.params = &p;
        bo.use_beta = opt.use_beta;
        bo.want_stage_lambda = true;
        BackwardResult r = backward_bounds(net, target, bounds, splits, bo);
        const Matrix& A = lower ? r.vs_input.Al : r.vs_input.Au;
        const Vector& b = lower ? r.vs_input.bl : r.vs_input.bu;
        out.objective = objective_impl(A, b, X, w, lower ? nullptr : &outside,
                                       lower ? -1.0 : 1.0, nullptr);
        out.bounds = std::move(r.vs_input);
        out.stage_lambda = lower ? std::move(r.stage_lambda_lo)
                                 : std::move(r.stage_lambda_up);
        out.params = p;
    };

    OptimizeResult best;
    evaluate(start, best);
    best.initial_objective = best.objective;

    // A net with no unstable ReLU entries and no splits has an empty parameter
    // surface; the initial evaluation is already exact.
    bool any_param = !splits.empty();
    for (int s = 0; s < net.num_stages() - 1 && !any_param; ++s) {
        if (!net.stages[s].relu) continue;
        for (int i = 0; i < net.stages[s].width && !any_param; ++i)
            if (neuron_state(bounds[s].lb(i), bounds[s].ub(i)) ==
                NeuronState::Unstable)
                any_param = true;
    }
    if (!any_param) return best;

    RelaxParams cur = start;
    double step = opt.step;
    for (int it = 0; it < opt.iterations; ++it) {
        std::vector<Matrix> dalpha;
        std::vector<Vector> dbeta;
        objective_gradient(net, bounds, splits, X, w, outside, cur, opt.mode,
                           opt.use_beta, dalpha, dbeta);
        for (int s = 0; s < net.num_stages(); ++s) {
            if (dalpha[s].size() == 0) continue;
            Matrix& a = lower ? cur.alpha_lo[s] : cur.alpha_up[s];
            a = (a + step * dalpha[s]).cwiseMax(0.0).cwiseMin(1.0);
        }
        if (opt.use_beta) {
            for (size_t q = 0; q < splits.size(); ++q) {
                Vector& bq = lower ? cur.beta_lo[q] : cur.beta_up[q];
                bq = (bq + step * dbeta[q]).cwiseMax(0.0);
            }
        }
        OptimizeResult trial;
        evaluate(cur, trial);
        trial.initial_objective = best.initial_objective;
        if (trial.objective > best.objective) best = std::move(trial);
        step *= opt.decay;
    }
    return best;
}

}  // namespace premap
