#pragma once

#include "premap/domain.hpp"

#include <map>
#include <string>
#include <vector>

namespace premap {

// Split-selection weights, name -> weight >= 0.  At least one positive.
struct HeuristicConfig {
    std::map<std::string, double> weights;

    static HeuristicConfig defaults();
};

const std::vector<std::string>& heuristic_names();

// Raw score of one heuristic for one unstable neuron: `z` holds the sampled
// pre-activations, [lb, ub] its interval, `lambda` the cached final-bound
// coefficients on this neuron (one per output row).  Unknown names throw.
double raw_score(const std::string& name, const Vector& z, double lb, double ub,
                 const Vector& lambda);

struct SelectionResult {
    bool exact = false;  // no unstable, unsplit neuron: branch is affine
    int stage = -1;
    int neuron = -1;
    double combined = 0.0;
};

// Argmax of the weighted sum of max-normalized scores over all unstable,
// unsplit ReLU neurons; ties go to the lowest (stage, neuron).  stage_lambda
// holds the cached coefficient rows per stage (active bound side).
SelectionResult select_neuron(const CompiledNet& net, const Subdomain& dom,
                              const SampleSet& X,
                              const std::vector<Matrix>& stage_lambda,
                              const HeuristicConfig& cfg);

}  // namespace premap
