// premap: guaranteed under/over-approximation of a network's preimage.
//
// Reads a model and an input-domain description, runs the branch-and-refine
// loop, and writes a result document plus an optional JSONL progress trace.
// Exit codes: 0 quality target reached, 2 budget exhausted (the written
// result is still a valid anytime approximation), 1 error.

#include "premap/runner.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

// NAME, NAME:{inline json}, or NAME:@params-file
void parse_weight_arg(const std::string& arg, premap::JobConfig& job) {
    const auto colon = arg.find(':');
    job.weight_name = arg.substr(0, colon);
    if (colon == std::string::npos) {
        job.weight_params = nlohmann::json::object();
        return;
    }
    const std::string rest = arg.substr(colon + 1);
    job.weight_params = (!rest.empty() && rest[0] == '@') ? read_json_file(rest.substr(1))
                                                          : nlohmann::json::parse(rest);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Guaranteed preimage approximation for ReLU networks"};

    std::string model_path, domain_path, spec_path, heuristics_path, weight_arg;
    std::string mode = "under";
    std::string output_path = "result.json";
    std::string trace_path;
    int label = -1;
    double threshold = 0.0;
    premap::RunConfig run;

    app.add_option("--model", model_path, "network JSON file")->required();
    app.add_option("--domain", domain_path, "input-domain JSON file")->required();
    auto* spec_opt = app.add_option("--spec", spec_path, "output polytope JSON file {C, d}");
    app.add_option("--label", label, "expand to the class-dominance polytope for this label")
        ->excludes(spec_opt);
    app.add_option("--mode", mode, "under | over")->check(CLI::IsMember({"under", "over"}));
    auto* thr_opt = app.add_option("--threshold", threshold,
                                   "stop once the ratio reaches this (default 0.9 / 1.1)");
    app.add_option("--samples", run.samples, "sample pool size per subdomain");
    app.add_option("--time-limit", run.time_limit, "wall-clock budget in seconds");
    app.add_option("--iterations", run.max_iterations, "subdomain-refinement budget");
    app.add_option("--batch", run.batch, "leaves refined per round");
    app.add_option("--seed", run.seed, "RNG seed");
    app.add_option("--heuristics", heuristics_path, "JSON file {name: weight} for split scoring");
    app.add_option("--weight-fn", weight_arg, "sampling prior NAME, NAME:{json} or NAME:@file");
    app.add_option("--bootstrap", run.bootstrap, "bootstrap replicates per leaf");
    app.add_option("--level", run.level, "confidence level for reported intervals");
    app.add_option("--output", output_path, "result document path");
    app.add_option("--trace", trace_path, "progress trace path (JSON lines)");
    app.add_flag("--no-shortcuts", "disable the sample-evidence shortcut paths");
    app.add_flag("--no-tighten", "disable reverse bound tightening after splits");

    CLI11_PARSE(app, argc, argv);

    try {
        premap::JobConfig job;
        job.model_path = model_path;
        job.domain = read_json_file(domain_path);
        if (!spec_path.empty()) job.spec = read_json_file(spec_path);
        job.label = label;
        if (job.spec.is_null() && job.label < 0)
            throw std::runtime_error("one of --spec or --label is required");

        job.run = run;
        job.run.mode = mode == "over" ? premap::Mode::Over : premap::Mode::Under;
        job.run.threshold = thr_opt->count() ? threshold
                                             : premap::default_threshold(job.run.mode);
        job.run.shortcuts = app.count("--no-shortcuts") == 0;
        job.run.tighten = app.count("--no-tighten") == 0;
        if (!heuristics_path.empty()) {
            job.run.heuristics.weights.clear();
            for (const auto& [name, w] : read_json_file(heuristics_path).items())
                job.run.heuristics.weights[name] = w.get<double>();
        }
        if (!weight_arg.empty()) parse_weight_arg(weight_arg, job);

        std::ofstream trace_out;
        premap::TraceCallback on_trace;
        if (!trace_path.empty()) {
            trace_out.open(trace_path);
            if (!trace_out) throw std::runtime_error("cannot open " + trace_path);
            on_trace = [&trace_out](const premap::TraceEntry& e) {
                trace_out << premap::trace_entry_json(e).dump() << '\n';
            };
        }

        const premap::JobResult result = premap::run_job(job, on_trace);
        {
            std::ofstream out(output_path);
            if (!out) throw std::runtime_error("cannot open " + output_path);
            out << result.document.dump(2) << '\n';
        }

        const premap::RunResult& r = result.run;
        const int pool = r.leaves.empty() ? 0 : 5 * job.run.samples;
        if (pool > 0 && r.root_ess < 0.01 * pool)
            std::cerr << "warning: root effective sample size " << r.root_ess << " of " << pool
                      << " rows; the sampling prior is nearly disjoint from the domain\n";

        std::printf("stop: %-10s  iterations: %ld  leaves: %zu  optimizer calls: %ld\n",
                    premap::to_string(r.stop), r.iterations, r.leaves.size(),
                    r.optimizer_invocations);
        std::printf("v_P: %.6g  v_O: %.6g  ratio: %.4f  [%.4f, %.4f] @ %g%%\n", r.estimate.v_P,
                    r.estimate.v_O, r.estimate.ratio, r.ci.ratio.lo, r.ci.ratio.hi,
                    100.0 * job.run.level);
        std::printf("root ESS: %.1f  min ESS: %.1f  elapsed: %.2fs\nwrote %s\n", r.root_ess,
                    r.min_ess, r.elapsed_seconds, output_path.c_str());
        return result.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
