#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "premap/runner.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>

using namespace premap;
using nlohmann::json;

namespace {

// Written into the test's working directory (the build tree).
void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump()); }

Image flat_image(int h, int w, int c, double value) {
    Image img;
    img.shape = {h, w, c};
    img.data = Vector::Constant(img.shape.size(), value);
    return img;
}

json box_domain(double lo, double hi, int d) {
    return json{{"kind", "box"},
                {"lower", std::vector<double>(d, lo)},
                {"upper", std::vector<double>(d, hi)}};
}

// y >= 0 for the single network output
const json kRowSpec{{"C", {{1.0}}}, {"d", {0.0}}};

JobConfig linear_job() {
    JobConfig job;
    job.model_path = testing::fixture_path("linear.json");
    job.domain = box_domain(-1.0, 1.0, 2);
    job.spec = kRowSpec;
    job.run.samples = 2000;
    job.run.seed = 5;
    return job;
}

}  // namespace

TEST_CASE("plain PPM loads with comments and maxval normalization") {
    const Image img = load_image(testing::fixture_path("gradient.ppm"));
    CHECK(img.shape == Shape{4, 4, 3});
    REQUIRE(img.data.size() == 48);
    CHECK(img.data(0) == 0.0);
    CHECK(img.data(2) == 1.0);
    // pixel (y=1, x=2) is (170, 85, 85)
    const int i = (1 * 4 + 2) * 3;
    CHECK(img.data(i) == 170.0 / 255.0);
    CHECK(img.data(i + 1) == 85.0 / 255.0);

    write_text("rt_tiny.ppm", "P3\n# one pixel\n1 1\n100\n50 100 0\n");
    const Image tiny = load_image("rt_tiny.ppm");
    CHECK(tiny.data(0) == 0.5);
    CHECK(tiny.data(1) == 1.0);
    CHECK(tiny.data(2) == 0.0);

    write_text("rt_bad.ppm", "P3\n1 1\n255\n9 9\n");  // truncated pixels
    CHECK_THROWS_AS(load_image("rt_bad.ppm"), std::runtime_error);
    CHECK_THROWS_AS(load_image("rt_absent.ppm"), std::runtime_error);
}

TEST_CASE("JSON tensor image loads and validates") {
    const Image img = load_image(testing::fixture_path("image8.json"));
    CHECK(img.shape == Shape{8, 8, 1});
    REQUIRE(img.data.size() == 64);
    CHECK(img.data.maxCoeff() == 0.75);
    CHECK(img.data.minCoeff() == 0.1);

    write_json("rt_img_short.json", json{{"shape", {2, 2, 1}}, {"data", {0.5, 0.5, 0.5}}});
    CHECK_THROWS_AS(load_image("rt_img_short.json"), std::runtime_error);
    write_json("rt_img_range.json", json{{"shape", {1, 1, 1}}, {"data", {1.5}}});
    CHECK_THROWS_AS(load_image("rt_img_range.json"), std::runtime_error);
}

TEST_CASE("free patch pins every coordinate outside the rectangle") {
    const Image img = flat_image(32, 32, 3, 0.5);
    const Box box = build_patch_domain(img, PatchRect{0, 0, 3, 3});

    int free = 0, fixed = 0;
    for (Eigen::Index i = 0; i < box.lo.size(); ++i) {
        if (box.lo(i) == 0.0 && box.hi(i) == 1.0)
            ++free;
        else if (box.lo(i) == 0.5 && box.hi(i) == 0.5)
            ++fixed;
    }
    CHECK(free == 27);
    CHECK(fixed == 3045);

    const Box clipped = build_patch_domain(img, PatchRect{2, 4, 2, 2, 0.25, 0.75});
    CHECK(clipped.lo((4 * 32 + 2) * 3) == 0.25);
    CHECK(clipped.hi((4 * 32 + 2) * 3) == 0.75);

    CHECK_THROWS_AS(build_patch_domain(img, PatchRect{30, 30, 3, 3}), std::runtime_error);
    CHECK_THROWS_AS(build_patch_domain(img, PatchRect{-1, 0, 3, 3}), std::runtime_error);
    CHECK_THROWS_AS(build_patch_domain(img, PatchRect{0, 0, 0, 3}), std::runtime_error);
    CHECK_THROWS_AS(build_patch_domain(img, PatchRect{0, 0, 2, 2, 0.9, 0.1}),
                    std::runtime_error);
}

TEST_CASE("one-sided mask raises only the masked pixels' upper bounds") {
    const Image img = flat_image(4, 4, 3, 0.25);
    const std::vector<std::pair<int, int>> mask{{0, 0}, {1, 2}, {3, 3}, {2, 1}, {0, 3}};
    const Box box = build_masked_patch_domain(img, mask);

    CHECK((box.lo.array() == 0.25).all());
    int raised = 0;
    for (Eigen::Index i = 0; i < box.hi.size(); ++i) {
        if (box.hi(i) == 1.0)
            ++raised;
        else
            CHECK(box.hi(i) == 0.25);
    }
    CHECK(raised == 15);
    // hull measure counts only the 15 raised coordinates, width 0.75 each
    CHECK(box.hull_volume() == doctest::Approx(std::pow(0.75, 15)).epsilon(1e-12));

    const Box degenerate = build_masked_patch_domain(img, {});
    CHECK((degenerate.lo.array() == degenerate.hi.array()).all());
    CHECK(degenerate.volume() == 0.0);
    CHECK(degenerate.hull_volume() == 1.0);

    CHECK_THROWS_AS(build_masked_patch_domain(img, {{4, 0}}), std::runtime_error);
    CHECK_THROWS_AS(build_masked_patch_domain(img, {{0, -1}}), std::runtime_error);
}

TEST_CASE("domain_from_json dispatches on kind and validates boxes") {
    const Box box = domain_from_json(box_domain(-2.0, 3.0, 4));
    CHECK(box.dim() == 4);
    CHECK(box.lo(0) == -2.0);
    CHECK(box.hi(3) == 3.0);

    CHECK_THROWS_AS(domain_from_json(json{{"kind", "box"},
                                          {"lower", {0.0, 0.0}},
                                          {"upper", {1.0}}}),
                    std::runtime_error);
    CHECK_THROWS_AS(domain_from_json(json{{"kind", "box"},
                                          {"lower", {2.0}},
                                          {"upper", {1.0}}}),
                    std::runtime_error);
    CHECK_THROWS_AS(domain_from_json(json{{"kind", "sphere"}}), std::runtime_error);

    const json patch{{"kind", "patch"},
                     {"image", testing::fixture_path("image8.json")},
                     {"x", 1},
                     {"y", 2},
                     {"w", 2},
                     {"h", 2}};
    const Box pbox = domain_from_json(patch);
    CHECK(pbox.dim() == 64);
    CHECK(pbox.lo(2 * 8 + 1) == 0.0);
    CHECK(pbox.hi(2 * 8 + 1) == 1.0);

    const json masked{{"kind", "masked-patch"},
                      {"image", testing::fixture_path("image8.json")},
                      {"mask", {{0, 0}, {7, 7}}}};
    const Box mbox = domain_from_json(masked);
    CHECK(mbox.hi(0) == 1.0);
    CHECK(mbox.hi(63) == 1.0);
    CHECK(mbox.lo(63) == 0.75);
    CHECK(mbox.hi(32) == mbox.lo(32));
}

TEST_CASE("job JSON round-trips through job_to_json") {
    json j{{"model", "m.json"},
           {"domain", box_domain(0.0, 1.0, 2)},
           {"label", 3},
           {"mode", "over"},
           {"samples", 750},
           {"seed", 42},
           {"heuristics", {{"width", 1.0}}},
           {"weight", {{"name", "piecewise"}, {"params", {{"knots", {{0.0, 1.0}}}, {"values", {{1.0, 2.0}}}}}}}};
    const JobConfig job = job_from_json(j);
    CHECK(job.run.mode == Mode::Over);
    CHECK(job.run.threshold == 1.1);  // mode-dependent default
    CHECK(job.run.samples == 750);
    CHECK(job.run.seed == 42);
    CHECK(job.label == 3);
    CHECK(job.weight_name == "piecewise");
    REQUIRE(job.run.heuristics.weights.size() == 1);
    CHECK(job.run.heuristics.weights.at("width") == 1.0);

    const JobConfig again = job_from_json(job_to_json(job));
    CHECK(job_to_json(again) == job_to_json(job));

    CHECK_THROWS_AS(job_from_json(json{{"model", "m.json"}, {"domain", box_domain(0, 1, 2)}}),
                    std::runtime_error);
    j["mode"] = "sideways";
    CHECK_THROWS_AS(job_from_json(j), std::runtime_error);
}

TEST_CASE("linear fixture resolves exactly in one iteration with exit 0") {
    const JobResult res = run_job(linear_job());
    CHECK(res.exit_code == 0);
    CHECK(res.run.estimate.ratio == 1.0);
    CHECK(res.document.at("stop_reason") == "threshold");
    CHECK(res.document.at("iterations") == 1);
    REQUIRE(res.document.at("leaves").size() == 1);
    CHECK(res.document.at("leaves")[0].at("status") == "open");
    // half of the [-1,1]^2 box satisfies x0 + x1 >= 0
    CHECK(res.document.at("totals").at("v_O").get<double>() ==
          doctest::Approx(2.0).epsilon(0.05));
    CHECK(res.document.at("config").at("spec").at("C")[0][0] == 1.0);
    CHECK(res.document.at("config").at("domain").at("kind") == "box");
}

TEST_CASE("document totals are recomputable from the leaf records") {
    JobConfig job;
    job.model_path = testing::fixture_path("planar_0.json");
    job.domain = box_domain(-1.0, 1.0, 2);
    job.label = 0;
    job.run.samples = 1000;
    job.run.seed = 17;
    const JobResult res = run_job(job);
    CHECK(res.exit_code == 0);

    const json& doc = res.document;
    const double rv = doc.at("root_volume").get<double>();
    double vP = 0.0, vO = 0.0;
    for (const json& leaf : doc.at("leaves")) {
        const double chain = leaf.at("chain").get<double>();
        vP += rv * chain * leaf.at("frac_plane").get<double>();
        vO += rv * chain * leaf.at("frac_preimage").get<double>();
    }
    REQUIRE(vO > 0.0);
    CHECK(vP == doc.at("totals").at("v_P").get<double>());
    CHECK(vO == doc.at("totals").at("v_O").get<double>());
    CHECK(vP / vO == doc.at("totals").at("ratio").get<double>());

    // each leaf's chain is the product of its recorded volume factors
    for (const json& leaf : doc.at("leaves")) {
        double prod = 1.0;
        for (const json& f : leaf.at("volume_factors")) prod *= f.get<double>();
        CHECK(prod == doctest::Approx(leaf.at("chain").get<double>()).epsilon(1e-12));
    }
}

TEST_CASE("config echo replays the run bit-identically") {
    JobConfig job;
    job.model_path = testing::fixture_path("planar_1.json");
    job.domain = box_domain(-1.0, 1.0, 2);
    job.label = 0;
    job.run.samples = 500;
    job.run.seed = 11;
    job.run.max_iterations = 6;  // stop mid-tree; the echo must still replay
    const JobResult first = run_job(job);

    const JobConfig replay = job_from_json(first.document.at("config"));
    CHECK(replay.label == -1);  // echo carries resolved spec rows instead
    const JobResult second = run_job(replay);

    json a = first.document, b = second.document;
    a.erase("timings");
    b.erase("timings");
    CHECK(a.dump() == b.dump());
}

TEST_CASE("budget stops exit with code 2 and a valid anytime document") {
    JobConfig job;
    job.model_path = testing::fixture_path("planar_0.json");
    job.domain = box_domain(-1.0, 1.0, 2);
    job.label = 0;
    job.run.samples = 500;
    job.run.seed = 3;
    job.run.max_iterations = 1;
    const JobResult res = run_job(job);
    CHECK(res.exit_code == 2);
    CHECK(res.document.at("stop_reason") == "iterations");
    CHECK(!res.document.at("leaves").empty());
    CHECK(res.document.at("totals").at("ratio").get<double>() < 0.9);
}

TEST_CASE("degenerate masked domain finishes immediately") {
    JobConfig job;
    job.model_path = testing::fixture_path("linear.json");
    write_json("rt_point_img.json", json{{"shape", {2, 1, 1}}, {"data", {0.8, 0.9}}});
    job.domain = json{{"kind", "masked-patch"}, {"image", "rt_point_img.json"},
                      {"mask", json::array()}};
    job.spec = kRowSpec;
    job.run.samples = 200;
    const JobResult res = run_job(job);
    CHECK(res.exit_code == 0);
    CHECK(res.document.at("iterations") == 1);
    // the point's hull measure is 1 and (0.8, 0.9) maps to 1.7 >= 0
    CHECK(res.document.at("root_volume") == 1.0);
    CHECK(res.run.estimate.v_O == 1.0);
    CHECK(res.run.estimate.ratio == 1.0);
}

TEST_CASE("command-line binary writes the document and trace") {
    write_json("rt_domain.json", box_domain(-1.0, 1.0, 2));
    write_json("rt_spec.json", kRowSpec);

    const std::string model = testing::fixture_path("linear.json");
    const std::string cmd = "./premap --model \"" + model +
                            "\" --domain rt_domain.json --spec rt_spec.json"
                            " --samples 500 --seed 7 --output rt_result.json"
                            " --trace rt_trace.jsonl > rt_stdout.txt 2>&1";
    REQUIRE(std::system(cmd.c_str()) == 0);

    std::ifstream in("rt_result.json");
    REQUIRE(in.good());
    json doc;
    in >> doc;
    CHECK(doc.at("stop_reason") == "threshold");
    CHECK(doc.at("totals").at("ratio") == 1.0);

    std::ifstream tr("rt_trace.jsonl");
    REQUIRE(tr.good());
    std::string line;
    int lines = 0;
    while (std::getline(tr, line)) {
        const json e = json::parse(line);
        CHECK(e.contains("ratio"));
        CHECK(e.at("iteration").get<long>() >= 1);
        ++lines;
    }
    CHECK(lines >= 1);

    // --label on a two-output fixture expands to the dominance row
    const std::string planar = testing::fixture_path("planar_0.json");
    const std::string cmd2 = "./premap --model \"" + planar +
                             "\" --domain rt_domain.json --label 0 --samples 400"
                             " --seed 2 --iterations 3 --batch 1"
                             " --output rt_result2.json > rt_stdout2.txt 2>&1";
    const int rc2 = std::system(cmd2.c_str());
    const int code2 = WEXITSTATUS(rc2);
    CHECK((code2 == 0 || code2 == 2));
    std::ifstream in2("rt_result2.json");
    REQUIRE(in2.good());
    json doc2;
    in2 >> doc2;
    CHECK(doc2.at("config").at("spec").at("C")[0].size() == 2);

    // config errors are reported on stderr with exit 1
    const int rc3 = std::system(("./premap --model \"" + model +
                                 "\" --domain rt_domain.json"
                                 " --output rt_unused.json > rt_stdout3.txt 2>&1")
                                    .c_str());
    CHECK(WEXITSTATUS(rc3) == 1);
}
