#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <vector>

namespace premap {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Tensor extents in (height, width, channels) order.  Flat vectors use h = size,
// w = c = 1.  The flat index of element (y, x, ch) is (y * w + x) * c + ch.
struct Shape {
    int h = 0;
    int w = 1;
    int c = 1;

    int size() const { return h * w * c; }
    bool operator==(const Shape&) const = default;
};

enum class LayerKind { Dense, Relu, Conv2d, AvgPool2d, Flatten };

struct Layer {
    LayerKind kind = LayerKind::Dense;

    // Dense
    Matrix weight;
    Vector bias;

    // Conv2d: kernel values in (out-channel, in-channel, ky, kx) order.
    std::vector<double> kernel;
    int out_channels = 0;
    int in_channels = 0;
    int kh = 0;
    int kw = 0;
    int stride = 1;
    int padding = 0;
    Vector conv_bias;

    // AvgPool2d: non-overlapping window (stride == window).
    int window = 0;
};

struct Network {
    Shape input_shape;
    std::vector<Layer> layers;

    int input_size() const { return input_shape.size(); }
};

// Conjunction of linear constraints on the network output: C y + d >= 0 rowwise.
struct OutputSpec {
    Matrix C;
    Vector d;

    int rows() const { return static_cast<int>(C.rows()); }
};

// One affine map (possibly composed from several stored layers) followed by an
// optional ReLU.  Bound propagation and split bookkeeping index neurons by
// (stage, column of W).
struct Stage {
    Matrix W;
    Vector b;
    bool relu = false;
    int width = 0;  // rows of W
};

struct CompiledNet {
    int input_size = 0;
    std::vector<Stage> stages;

    int num_stages() const { return static_cast<int>(stages.size()); }
    int output_size() const { return stages.back().width; }
    // Index of the nearest earlier ReLU stage, or -1 when the input is next.
    int prev_relu_stage(int s) const;
};

Network load_model(const std::string& path);
Network network_from_json(const nlohmann::json& j);
nlohmann::json network_to_json(const Network& net);

// Structured forward pass applying each stored layer in turn.
Vector forward(const Network& net, const Vector& x);

// Pre-activation values entering each ReLU layer, in layer order.
std::vector<Vector> relu_pre_activations(const Network& net, const Vector& x);

// Affine matrix form of a single non-ReLU layer acting on shape `in`.
void layer_matrix_form(const Layer& layer, const Shape& in, Matrix& W, Vector& b,
                       Shape& out);

// Collapse runs of affine layers between ReLUs into stages.
CompiledNet compile(const Network& net);

// Forward pass through the compiled form; z[s] is the input of stage s's ReLU
// (or the stage output when it has none).  z.back() is the network output for
// nets ending in an affine stage.
std::vector<Vector> stage_pre_activations(const CompiledNet& net, const Vector& x);

// Appends the spec rows C y + d as a final affine layer, so the preimage of the
// spec is exactly {x : every output of the returned net is >= 0}.
Network append_output_spec(const Network& net, const OutputSpec& spec);

// Spec asserting class `label` dominates every other logit: rows e_label - e_j.
OutputSpec label_spec(int num_outputs, int label);

OutputSpec spec_from_json(const nlohmann::json& j);

}  // namespace premap
