#include "premap/runner.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace premap {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

json vector_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r)));
    return rows;
}

Vector vector_from(const json& j, const std::string& what) {
    if (!j.is_array()) fail(what + ": expected an array");
    Vector v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

// Next whitespace-separated token, with '#' starting a comment to end of line.
bool next_token(std::istream& in, std::string& tok) {
    for (;;) {
        if (!(in >> tok)) return false;
        if (tok[0] != '#') return true;
        std::string rest;
        std::getline(in, rest);
    }
}

Image load_ppm(std::istream& in, const std::string& path) {
    std::string tok;
    if (!next_token(in, tok) || tok != "P3") fail(path + ": not a plain P3 image");
    long w, h, maxval;
    auto read_long = [&](long& out) {
        if (!next_token(in, tok)) fail(path + ": truncated header");
        out = std::stol(tok);
    };
    read_long(w);
    read_long(h);
    read_long(maxval);
    if (w <= 0 || h <= 0 || maxval <= 0) fail(path + ": bad dimensions");

    Image img;
    img.shape = {static_cast<int>(h), static_cast<int>(w), 3};
    img.data.resize(img.shape.size());
    for (Eigen::Index i = 0; i < img.data.size(); ++i) {
        if (!next_token(in, tok)) fail(path + ": truncated pixel data");
        img.data(i) = std::stod(tok) / static_cast<double>(maxval);
    }
    return img;
}

Image image_from_json(const json& j, const std::string& path) {
    const auto& shape = j.at("shape");
    if (shape.size() != 3) fail(path + ": shape must be [h, w, c]");
    Image img;
    img.shape = {shape[0].get<int>(), shape[1].get<int>(), shape[2].get<int>()};
    if (img.shape.size() <= 0) fail(path + ": empty shape");
    img.data = vector_from(j.at("data"), path + ".data");
    if (img.data.size() != img.shape.size()) fail(path + ": data does not match shape");
    if ((img.data.array() < 0.0).any() || (img.data.array() > 1.0).any())
        fail(path + ": values must lie in [0, 1]");
    return img;
}

int flat_index(const Shape& s, int y, int x, int ch) { return (y * s.w + x) * s.c + ch; }

Mode mode_from(const std::string& s) {
    if (s == "under") return Mode::Under;
    if (s == "over") return Mode::Over;
    fail("unknown mode: " + s);
}

const char* mode_name(Mode m) { return m == Mode::Under ? "under" : "over"; }

}  // namespace

Image load_image(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open image: " + path);
    // a JSON tensor begins with '{'; everything else is treated as plain PPM
    if (in.peek() == '{') {
        json j;
        in >> j;
        return image_from_json(j, path);
    }
    return load_ppm(in, path);
}

Box build_patch_domain(const Image& img, const PatchRect& rect) {
    const Shape& s = img.shape;
    if (rect.w <= 0 || rect.h <= 0) fail("patch: empty rectangle");
    if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > s.w || rect.y + rect.h > s.h)
        fail("patch: rectangle outside the image");
    if (rect.ch_lo > rect.ch_hi) fail("patch: channel bounds out of order");

    Box box{img.data, img.data};
    for (int y = rect.y; y < rect.y + rect.h; ++y)
        for (int x = rect.x; x < rect.x + rect.w; ++x)
            for (int ch = 0; ch < s.c; ++ch) {
                const int i = flat_index(s, y, x, ch);
                box.lo(i) = rect.ch_lo;
                box.hi(i) = rect.ch_hi;
            }
    return box;
}

Box build_masked_patch_domain(const Image& img,
                              const std::vector<std::pair<int, int>>& mask) {
    const Shape& s = img.shape;
    Box box{img.data, img.data};
    for (const auto& [y, x] : mask) {
        if (y < 0 || y >= s.h || x < 0 || x >= s.w) fail("patch: mask pixel outside the image");
        for (int ch = 0; ch < s.c; ++ch) box.hi(flat_index(s, y, x, ch)) = 1.0;
    }
    return box;
}

Box domain_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "box") {
        Box box{vector_from(j.at("lower"), "domain.lower"),
                vector_from(j.at("upper"), "domain.upper")};
        if (box.lo.size() != box.hi.size() || box.lo.size() == 0)
            fail("domain: lower/upper must be equal-length, nonempty");
        if (box.empty()) fail("domain: lower exceeds upper");
        return box;
    }
    if (kind == "patch") {
        Image img = load_image(j.at("image").get<std::string>());
        PatchRect rect;
        rect.x = j.at("x").get<int>();
        rect.y = j.at("y").get<int>();
        rect.w = j.at("w").get<int>();
        rect.h = j.at("h").get<int>();
        if (j.contains("channel_bounds")) {
            const auto& cb = j.at("channel_bounds");
            if (cb.size() != 2) fail("domain: channel_bounds must be [lo, hi]");
            rect.ch_lo = cb[0].get<double>();
            rect.ch_hi = cb[1].get<double>();
        }
        return build_patch_domain(img, rect);
    }
    if (kind == "masked-patch") {
        Image img = load_image(j.at("image").get<std::string>());
        std::vector<std::pair<int, int>> mask;
        for (const auto& px : j.at("mask")) {
            if (px.size() != 2) fail("domain: mask entries must be [y, x]");
            mask.emplace_back(px[0].get<int>(), px[1].get<int>());
        }
        return build_masked_patch_domain(img, mask);
    }
    fail("unknown domain kind: " + kind);
}

JobConfig job_from_json(const nlohmann::json& j) {
    JobConfig job;
    job.model_path = j.at("model").get<std::string>();
    job.domain = j.at("domain");
    if (j.contains("spec")) job.spec = j.at("spec");
    if (j.contains("label")) job.label = j.at("label").get<int>();
    if (job.spec.is_null() && job.label < 0) fail("job: needs a spec or a label");

    RunConfig& run = job.run;
    run.mode = mode_from(j.value("mode", "under"));
    run.threshold = j.value("threshold", default_threshold(run.mode));
    run.samples = j.value("samples", run.samples);
    run.time_limit = j.value("time_limit", run.time_limit);
    run.max_iterations = j.value("iterations", run.max_iterations);
    run.batch = j.value("batch", run.batch);
    run.seed = j.value("seed", run.seed);
    run.bootstrap = j.value("bootstrap", run.bootstrap);
    run.level = j.value("level", run.level);
    run.shortcuts = j.value("shortcuts", run.shortcuts);
    run.tighten = j.value("tighten", run.tighten);
    if (j.contains("optimize")) {
        const auto& o = j.at("optimize");
        run.optimize.iterations = o.value("iterations", run.optimize.iterations);
        run.optimize.step = o.value("step", run.optimize.step);
        run.optimize.decay = o.value("decay", run.optimize.decay);
        run.optimize.use_beta = o.value("use_beta", run.optimize.use_beta);
    }
    if (j.contains("heuristics")) {
        job.run.heuristics.weights.clear();
        for (const auto& [name, weight] : j.at("heuristics").items())
            job.run.heuristics.weights[name] = weight.get<double>();
    }
    if (j.contains("weight")) {
        job.weight_name = j.at("weight").at("name").get<std::string>();
        job.weight_params = j.at("weight").value("params", nlohmann::json::object());
    }
    return job;
}

nlohmann::json job_to_json(const JobConfig& job) {
    const RunConfig& run = job.run;
    json j{{"model", job.model_path},
           {"domain", job.domain},
           {"mode", mode_name(run.mode)},
           {"threshold", run.threshold},
           {"samples", run.samples},
           {"iterations", run.max_iterations},
           {"batch", run.batch},
           {"seed", run.seed},
           {"bootstrap", run.bootstrap},
           {"level", run.level},
           {"shortcuts", run.shortcuts},
           {"tighten", run.tighten},
           {"optimize",
            {{"iterations", run.optimize.iterations},
             {"step", run.optimize.step},
             {"decay", run.optimize.decay},
             {"use_beta", run.optimize.use_beta}}},
           {"weight", {{"name", job.weight_name}, {"params", job.weight_params}}}};
    if (!job.spec.is_null()) j["spec"] = job.spec;
    if (job.label >= 0) j["label"] = job.label;
    // JSON has no infinity; an absent limit means unlimited
    if (std::isfinite(run.time_limit)) j["time_limit"] = run.time_limit;
    json h = json::object();
    for (const auto& [name, weight] : run.heuristics.weights) h[name] = weight;
    j["heuristics"] = h;
    return j;
}

nlohmann::json trace_entry_json(const TraceEntry& e) {
    return json{{"iteration", e.iteration}, {"elapsed_s", e.elapsed_s},
                {"v_P", e.v_P},           {"v_O", e.v_O},
                {"ratio", e.ratio},       {"ci_low", e.ci_low},
                {"ci_high", e.ci_high},   {"leaves", e.leaves}};
}

JobResult run_job(const JobConfig& job, const TraceCallback& on_trace) {
    Network net = load_model(job.model_path);
    const Box box = domain_from_json(job.domain);
    const OutputSpec spec = job.label >= 0
                                ? label_spec(compile(net).output_size(), job.label)
                                : spec_from_json(job.spec);
    const CompiledNet cnet = compile(append_output_spec(net, spec));

    RunConfig cfg = job.run;
    cfg.weight = make_weight_function(job.weight_name, job.weight_params);

    JobResult out;
    out.run = premap2(cnet, box, cfg, on_trace);
    const RunResult& res = out.run;
    out.exit_code =
        (res.stop == StopReason::Threshold || res.stop == StopReason::Exact) ? 0 : 2;

    // the echoed config carries the resolved box and spec rows, so the run is
    // replayable (and its planes re-checkable) from the document alone
    JobConfig echo = job;
    echo.domain = json{{"kind", "box"}, {"lower", vector_json(box.lo)},
                       {"upper", vector_json(box.hi)}};
    echo.spec = json{{"C", matrix_json(spec.C)}, {"d", vector_json(spec.d)}};
    echo.label = -1;

    json leaves = json::array();
    for (const Leaf& l : res.leaves) {
        json splits = json::array();
        for (const SplitConstraint& s : l.dom.splits)
            splits.push_back(json::array({s.stage, s.neuron, s.sign}));
        if (!l.dom.plane.has_value()) fail("run: leaf without a plane");
        leaves.push_back(
            json{{"splits", splits},
                 {"status", to_string(l.status)},
                 {"plane", {{"A", matrix_json(l.dom.plane->A)}, {"b", vector_json(l.dom.plane->b)}}},
                 {"volume_factors", l.dom.volume_chain},
                 {"chain", l.stats.chain},
                 {"frac_plane", l.stats.frac_plane},
                 {"frac_preimage", l.stats.frac_preimage},
                 {"samples", l.samples.n()},
                 {"core_rows", l.core_rows},
                 {"box", {{"lower", vector_json(l.dom.box.lo)}, {"upper", vector_json(l.dom.box.hi)}}}});
    }

    out.document =
        json{{"config", job_to_json(echo)},
             {"stop_reason", to_string(res.stop)},
             {"iterations", res.iterations},
             {"optimizer_invocations", res.optimizer_invocations},
             {"root_volume", res.root_volume},
             {"root_ess", res.root_ess},
             {"min_ess", res.min_ess},
             {"totals",
              {{"v_P", res.estimate.v_P},
               {"v_O", res.estimate.v_O},
               {"ratio", res.estimate.ratio},
               {"level", cfg.level},
               {"ci",
                {{"v_P", {res.ci.v_P.lo, res.ci.v_P.hi}},
                 {"v_O", {res.ci.v_O.lo, res.ci.v_O.hi}},
                 {"ratio", {res.ci.ratio.lo, res.ci.ratio.hi}}}}}},
             {"leaves", leaves},
             {"timings", {{"elapsed_seconds", res.elapsed_seconds}}}};
    return out;
}

}  // namespace premap
