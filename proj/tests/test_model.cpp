#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "premap/model.hpp"
#include "premap/reference.hpp"

#include <json.hpp>

using namespace premap;
using nlohmann::json;

namespace {

json two_layer_dense_file() {
    return json::parse(R"({
      "input_shape": [2],
      "layers": [
        {"kind": "dense", "weight": [[1,0],[0,1],[1,1],[1,-1]], "bias": [0,0,0,0]},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense", "weight": [[1,1,0,0],[0,0,1,1]], "bias": [0.5,-0.5]}
      ]
    })");
}

}  // namespace

TEST_CASE("loader accepts a well-formed dense file") {
    Network net = network_from_json(two_layer_dense_file());
    CHECK(net.layers.size() == 4);
    CHECK(net.input_size() == 2);
}

TEST_CASE("loader accepts relu before any linear layer") {
    json j = json::parse(R"({
      "input_shape": [3],
      "layers": [{"kind": "relu"},
                 {"kind": "dense", "weight": [[1,1,1]], "bias": [0]}]
    })");
    Network net = network_from_json(j);
    Vector x(3);
    x << -1.0, 2.0, -3.0;
    CHECK(forward(net, x)(0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("loader rejects a dense weight of wrong column count, naming the layer") {
    json j = two_layer_dense_file();
    j["layers"][3]["weight"] = {{1, 1, 0}, {0, 0, 1}};
    CHECK_THROWS_WITH_AS(network_from_json(j),
                         doctest::Contains("layer 3"), std::runtime_error);
}

TEST_CASE("loader rejects unknown layer kinds and non-finite values") {
    json j = two_layer_dense_file();
    j["layers"][1]["kind"] = "sigmoid";
    CHECK_THROWS_AS(network_from_json(j), std::runtime_error);

    json k = two_layer_dense_file();
    k["layers"][0]["weight"][0][0] = "notanumber";
    CHECK_THROWS(network_from_json(k));
}

TEST_CASE("forward: identity dense net returns its input") {
    Network net;
    net.input_shape = {2, 1, 1};
    Layer l;
    l.kind = LayerKind::Dense;
    l.weight = Matrix::Identity(2, 2);
    l.bias = Vector::Zero(2);
    net.layers.push_back(l);
    Vector x(2);
    x << 1.0, -2.0;
    Vector y = forward(net, x);
    CHECK(y(0) == 1.0);
    CHECK(y(1) == -2.0);
}

TEST_CASE("forward: scalar relu clamps negatives") {
    Network net;
    net.input_shape = {1, 1, 1};
    Layer relu;
    relu.kind = LayerKind::Relu;
    net.layers.push_back(relu);
    Vector x(1);
    x << -3.0;
    CHECK(forward(net, x)(0) == 0.0);
}

TEST_CASE("forward matches the straight-line evaluator on random nets") {
    for (std::uint64_t seed : {11u, 12u, 13u, 14u}) {
        Network net = testing::random_dense_net(seed, 3, {8, 6}, 2);
        Matrix X = testing::random_points(seed + 100, 32, Vector::Constant(3, -2.0),
                                          Vector::Constant(3, 2.0));
        for (int r = 0; r < X.rows(); ++r) {
            Vector a = forward(net, X.row(r).transpose());
            Vector b = ref::forward(net, X.row(r).transpose());
            CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("forward matches the straight-line evaluator on a conv net") {
    Network net = testing::random_conv_net(21, 6, 6, 2, 3, 3, 2, 4);
    Matrix X = testing::random_points(22, 16, Vector::Zero(net.input_size()),
                                      Vector::Ones(net.input_size()));
    for (int r = 0; r < X.rows(); ++r) {
        Vector a = forward(net, X.row(r).transpose());
        Vector b = ref::forward(net, X.row(r).transpose());
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("pre-activations: scalar net z=2x on {-1,1}") {
    Network net;
    net.input_shape = {1, 1, 1};
    Layer l;
    l.kind = LayerKind::Dense;
    l.weight = Matrix::Constant(1, 1, 2.0);
    l.bias = Vector::Zero(1);
    net.layers.push_back(l);
    Layer relu;
    relu.kind = LayerKind::Relu;
    net.layers.push_back(relu);
    Vector a(1), b(1);
    a << -1.0;
    b << 1.0;
    CHECK(relu_pre_activations(net, a)[0](0) == -2.0);
    CHECK(relu_pre_activations(net, b)[0](0) == 2.0);
}

TEST_CASE("compiled stages agree with the layer walk and the matrix expansion") {
    Network net = testing::random_conv_net(31, 6, 6, 1, 2, 3, 2, 3);
    CompiledNet cn = compile(net);
    // conv+relu, then pool+flatten+dense with no trailing relu
    REQUIRE(cn.num_stages() == 2);
    CHECK(cn.stages[0].relu);
    CHECK_FALSE(cn.stages[1].relu);

    Matrix X = testing::random_points(32, 24, Vector::Zero(net.input_size()),
                                      Vector::Ones(net.input_size()));
    for (int r = 0; r < X.rows(); ++r) {
        const Vector x = X.row(r).transpose();
        auto zs = stage_pre_activations(cn, x);
        auto layer_zs = ref::relu_pre_activations(net, x);
        REQUIRE(zs.size() == 2);
        REQUIRE(layer_zs.size() == 1);
        CHECK((zs[0] - layer_zs[0]).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((zs[1] - ref::forward(net, x)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("pre-activations on a batch of one equal the forward intermediates") {
    Network net = testing::random_dense_net(41, 4, {6, 5}, 3);
    CompiledNet cn = compile(net);
    Vector x = testing::random_points(42, 1, Vector::Constant(4, -1.0),
                                      Vector::Constant(4, 1.0))
                   .row(0)
                   .transpose();
    auto zs = stage_pre_activations(cn, x);
    auto direct = relu_pre_activations(net, x);
    REQUIRE(zs.size() == 3);
    REQUIRE(direct.size() == 2);
    CHECK((zs[0] - direct[0]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((zs[1] - direct[1]).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((zs[2] - forward(net, x)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("append_output_spec: class-dominance and identity specs") {
    Network net = testing::random_dense_net(51, 2, {4}, 2);
    OutputSpec dom;
    dom.C = Matrix(1, 2);
    dom.C << 1.0, -1.0;
    dom.d = Vector::Zero(1);
    Network fo = append_output_spec(net, dom);
    Vector x(2);
    x << 0.3, -0.7;
    const Vector y = forward(net, x);
    CHECK(forward(fo, x)(0) == doctest::Approx(y(0) - y(1)).epsilon(1e-14));

    OutputSpec ident;
    ident.C = Matrix::Identity(2, 2);
    ident.d = Vector::Zero(2);
    CHECK((forward(append_output_spec(net, ident), x) - y).cwiseAbs().maxCoeff() <
          1e-14);
}

TEST_CASE("append_output_spec: membership equivalence on random points") {
    Network net = testing::random_dense_net(61, 3, {8, 8}, 4);
    std::mt19937_64 rng(62);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    OutputSpec spec;
    spec.C = Matrix::NullaryExpr(3, 4, [&]() { return u(rng); });
    spec.d = Vector::NullaryExpr(3, [&]() { return u(rng); });
    Network fo = append_output_spec(net, spec);
    Matrix X = testing::random_points(63, 10000, Vector::Constant(3, -2.0),
                                      Vector::Constant(3, 2.0));
    for (int r = 0; r < X.rows(); ++r) {
        const Vector x = X.row(r).transpose();
        const Vector y = forward(net, x);
        const bool in_spec = ((spec.C * y + spec.d).array() >= 0.0).all();
        const bool via_net = (forward(fo, x).array() >= 0.0).all();
        REQUIRE(in_spec == via_net);
    }
}

TEST_CASE("label_spec builds dominance rows") {
    OutputSpec s = label_spec(3, 1);
    REQUIRE(s.rows() == 2);
    Vector y(3);
    y << 0.2, 0.9, 0.5;
    Vector v = s.C * y + s.d;
    CHECK(v(0) == doctest::Approx(0.7));
    CHECK(v(1) == doctest::Approx(0.4));
}

TEST_CASE("serialize-load round trip preserves forward exactly") {
    Network net = testing::random_conv_net(71, 4, 4, 1, 2, 3, 1, 2);
    Network back = network_from_json(network_to_json(net));
    Matrix X = testing::random_points(72, 8, Vector::Zero(net.input_size()),
                                      Vector::Ones(net.input_size()));
    for (int r = 0; r < X.rows(); ++r) {
        const Vector x = X.row(r).transpose();
        CHECK((forward(net, x) - forward(back, x)).cwiseAbs().maxCoeff() == 0.0);
    }
}
