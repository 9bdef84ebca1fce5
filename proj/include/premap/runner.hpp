#pragma once

#include "premap/engine.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace premap {

// Image tensor in (h, w, c) layout with values in [0, 1]; the flat index of
// element (y, x, ch) is (y * w + x) * c + ch, matching Shape.
struct Image {
    Shape shape;
    Vector data;
};

// Reads a plain PPM (P3, '#' comments allowed, values scaled by maxval) or a
// JSON tensor {"shape": [h, w, c], "data": [...]} with data already in [0, 1].
Image load_image(const std::string& path);

struct PatchRect {
    int x = 0, y = 0, w = 0, h = 0;
    double ch_lo = 0.0, ch_hi = 1.0;  // bounds given to every patched coordinate
};

// Free patch: coordinates inside the rectangle range over the channel bounds,
// everything else is pinned to the image.  The rectangle must lie inside the
// image and the bounds must be ordered.
Box build_patch_domain(const Image& img, const PatchRect& rect);

// One-sided brightening patch: lower = image everywhere, upper = 1 on the
// masked pixels (all channels).  Pixels are (y, x) pairs inside the image;
// an empty mask leaves a degenerate box equal to the image.
Box build_masked_patch_domain(const Image& img,
                              const std::vector<std::pair<int, int>>& mask);

// Dispatch on "kind": "box" {lower, upper}, "patch" {image, x, y, w, h,
// channel_bounds?}, "masked-patch" {image, mask: [[y, x], ...]}.
Box domain_from_json(const nlohmann::json& j);

// One full run request; `domain` holds the DomainSpec JSON and `label`, when
// nonnegative, replaces `spec` with the class-dominance rows for that label.
struct JobConfig {
    std::string model_path;
    nlohmann::json domain;
    nlohmann::json spec;
    int label = -1;
    RunConfig run;
    std::string weight_name = "uniform";
    nlohmann::json weight_params = nlohmann::json::object();
};

JobConfig job_from_json(const nlohmann::json& j);
nlohmann::json job_to_json(const JobConfig& job);

nlohmann::json trace_entry_json(const TraceEntry& e);

struct JobResult {
    RunResult run;
    nlohmann::json document;
    int exit_code = 0;  // 0 stop on quality, 2 stop on budget
};

// Loads the model, resolves domain/spec/prior, runs the engine, and assembles
// the result document.  The document's "config" echo holds the resolved box
// and spec rows, so a replay needs only this document and the model file; all
// wall-clock quantities live under "timings".
JobResult run_job(const JobConfig& job, const TraceCallback& on_trace = {});

}  // namespace premap
