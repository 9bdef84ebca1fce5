#include "premap/heuristics.hpp"

#include <cmath>
#include <stdexcept>

namespace premap {

namespace {

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

HeuristicConfig HeuristicConfig::defaults() {
    HeuristicConfig cfg;
    cfg.weights = {{"extra", 1.0}, {"area", 0.75}, {"under", 0.5}, {"gap", 0.25}};
    return cfg;
}

const std::vector<std::string>& heuristic_names() {
    static const std::vector<std::string> names = {
        "balance", "soft", "lower", "width", "loose",
        "bound",   "gap",  "area",  "under", "extra"};
    return names;
}

double raw_score(const std::string& name, const Vector& z, double lb, double ub,
                 const Vector& lambda) {
    const Eigen::Index n = z.size();
    if (name == "balance") {
        if (n == 0) return 0.0;
        const double pos = (z.array() >= 0.0).cast<double>().sum();
        return 1.0 - std::abs(2.0 * pos / static_cast<double>(n) - 1.0);
    }
    if (name == "soft") {
        if (n == 0) return 0.0;
        double s = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) s += sigmoid(z(j));
        return 1.0 - std::abs(2.0 * s / static_cast<double>(n) - 1.0);
    }
    if (name == "lower") return std::max(-lb, 0.0);
    if (name == "width") return ub - lb;

    const double range = n ? z.maxCoeff() - z.minCoeff() : 0.0;
    if (name == "loose") return (ub - lb) - range;
    if (name == "bound") return 1.0 - range / (ub - lb);
    if (name == "gap") return (-lb * ub) / (ub - lb);

    // |A_k c| summed over rows factors into |c| * sum_k |A_k|
    const double lambda_abs = lambda.cwiseAbs().sum();
    if (name == "area") return lambda_abs * lb * lb;
    if (name == "under") return lambda_abs * std::abs(lb);
    if (name == "extra") {
        double neg_sum = 0.0;
        Eigen::Index neg_count = 0;
        for (Eigen::Index j = 0; j < n; ++j)
            if (z(j) < 0.0) {
                neg_sum += -z(j);
                ++neg_count;
            }
        return neg_count ? lambda_abs * neg_sum / static_cast<double>(neg_count) : 0.0;
    }
    throw std::runtime_error("unknown heuristic: " + name);
}

SelectionResult select_neuron(const CompiledNet& net, const Subdomain& dom,
                              const SampleSet& X,
                              const std::vector<Matrix>& stage_lambda,
                              const HeuristicConfig& cfg) {
    bool any_positive = false;
    for (const auto& [name, weight] : cfg.weights) {
        if (weight < 0.0)
            throw std::invalid_argument("heuristic weight must be nonnegative: " + name);
        if (weight > 0.0) {
            raw_score(name, Vector(), -1.0, 1.0, Vector());  // name validation
            any_positive = true;
        }
    }
    if (!any_positive)
        throw std::invalid_argument("heuristic config has no positive weight");

    struct Candidate {
        int stage, neuron;
    };
    std::vector<Candidate> cands;
    for (int s = 0; s < net.num_stages(); ++s) {
        if (!net.stages[s].relu) continue;
        for (int i = 0; i < net.stages[s].width; ++i) {
            if (neuron_state(dom.state.bounds[s].lb(i), dom.state.bounds[s].ub(i)) !=
                NeuronState::Unstable)
                continue;
            bool split = false;
            for (const SplitConstraint& sp : dom.splits)
                if (sp.stage == s && sp.neuron == i) split = true;
            if (!split) cands.push_back({s, i});
        }
    }
    SelectionResult res;
    if (cands.empty()) {
        res.exact = true;
        return res;
    }

    // raw scores per active heuristic, then max-normalize across candidates
    std::vector<double> combined(cands.size(), 0.0);
    std::vector<double> raw(cands.size());
    for (const auto& [name, weight] : cfg.weights) {
        if (weight == 0.0) continue;
        double mx = 0.0;
        for (size_t c = 0; c < cands.size(); ++c) {
            const auto& [s, i] = cands[c];
            raw[c] = raw_score(name, X.pre[s].col(i), dom.state.bounds[s].lb(i),
                               dom.state.bounds[s].ub(i), stage_lambda[s].col(i));
            mx = std::max(mx, raw[c]);
        }
        if (mx <= 0.0) continue;  // flat heuristic contributes nothing
        for (size_t c = 0; c < cands.size(); ++c)
            combined[c] += weight * raw[c] / mx;
    }

    size_t best = 0;
    for (size_t c = 1; c < cands.size(); ++c)
        if (combined[c] > combined[best]) best = c;
    res.stage = cands[best].stage;
    res.neuron = cands[best].neuron;
    res.combined = combined[best];
    return res;
}

}  // namespace premap
