#include "premap/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace premap {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_finite(const double v, const std::string& where) {
    if (!std::isfinite(v)) fail("non-finite value in " + where);
}

Matrix parse_matrix(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) fail(where + " must be a non-empty 2-d array");
    const size_t cols = j[0].size();
    if (cols == 0) fail(where + " has an empty row");
    Matrix m(j.size(), cols);
    for (size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols)
            fail(where + " rows have inconsistent lengths");
        for (size_t c = 0; c < cols; ++c) {
            m(r, c) = j[r][c].get<double>();
            check_finite(m(r, c), where);
        }
    }
    return m;
}

Vector parse_vector(const json& j, const std::string& where) {
    if (!j.is_array()) fail(where + " must be an array");
    Vector v(j.size());
    for (size_t i = 0; i < j.size(); ++i) {
        v(i) = j[i].get<double>();
        check_finite(v(i), where);
    }
    return v;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

json vector_to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Shape shape_from_json(const json& j) {
    if (!j.is_array() || j.empty() || j.size() > 3)
        fail("input_shape must have 1 to 3 entries");
    Shape s;
    if (j.size() == 1) {
        s = {j[0].get<int>(), 1, 1};
    } else if (j.size() == 2) {
        s = {j[0].get<int>(), j[1].get<int>(), 1};
    } else {
        s = {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
    }
    if (s.h <= 0 || s.w <= 0 || s.c <= 0) fail("input_shape entries must be positive");
    return s;
}

// Shape bookkeeping shared by validation, forward, and matrix expansion.
Shape layer_output_shape(const Layer& layer, const Shape& in, size_t idx) {
    const std::string where = "layer " + std::to_string(idx);
    switch (layer.kind) {
        case LayerKind::Dense: {
            if (layer.weight.cols() != in.size())
                fail(where + ": dense weight has " + std::to_string(layer.weight.cols()) +
                     " columns but the incoming size is " + std::to_string(in.size()));
            if (layer.bias.size() != layer.weight.rows())
                fail(where + ": bias length does not match weight rows");
            return {static_cast<int>(layer.weight.rows()), 1, 1};
        }
        case LayerKind::Relu:
            return in;
        case LayerKind::Conv2d: {
            if (layer.in_channels != in.c)
                fail(where + ": conv expects " + std::to_string(layer.in_channels) +
                     " input channels, got " + std::to_string(in.c));
            if (layer.stride <= 0 || layer.padding < 0)
                fail(where + ": conv stride must be positive and padding non-negative");
            const int oh = (in.h + 2 * layer.padding - layer.kh) / layer.stride + 1;
            const int ow = (in.w + 2 * layer.padding - layer.kw) / layer.stride + 1;
            if (oh <= 0 || ow <= 0) fail(where + ": conv kernel larger than padded input");
            if (layer.conv_bias.size() != layer.out_channels)
                fail(where + ": conv bias length does not match out_channels");
            return {oh, ow, layer.out_channels};
        }
        case LayerKind::AvgPool2d: {
            if (layer.window <= 0) fail(where + ": pool window must be positive");
            if (in.h % layer.window != 0 || in.w % layer.window != 0)
                fail(where + ": pool window must divide the spatial extents");
            return {in.h / layer.window, in.w / layer.window, in.c};
        }
        case LayerKind::Flatten:
            return {in.size(), 1, 1};
    }
    fail(where + ": unknown layer kind");
}

int flat_index(const Shape& s, int y, int x, int c) { return (y * s.w + x) * s.c + c; }

}  // namespace

int CompiledNet::prev_relu_stage(int s) const {
    for (int t = s - 1; t >= 0; --t)
        if (stages[t].relu) return t;
    return -1;
}

Network network_from_json(const json& j) {
    Network net;
    if (!j.contains("input_shape")) fail("model is missing input_shape");
    net.input_shape = shape_from_json(j.at("input_shape"));
    if (!j.contains("layers") || !j.at("layers").is_array() || j.at("layers").empty())
        fail("model must declare a non-empty layers array");

    Shape cur = net.input_shape;
    for (size_t i = 0; i < j.at("layers").size(); ++i) {
        const json& lj = j.at("layers")[i];
        const std::string where = "layer " + std::to_string(i);
        if (!lj.contains("kind")) fail(where + " is missing kind");
        const std::string kind = lj.at("kind").get<std::string>();
        Layer layer;
        if (kind == "dense") {
            layer.kind = LayerKind::Dense;
            layer.weight = parse_matrix(lj.at("weight"), where + " weight");
            layer.bias = lj.contains("bias")
                             ? parse_vector(lj.at("bias"), where + " bias")
                             : Vector::Zero(layer.weight.rows());
        } else if (kind == "relu") {
            layer.kind = LayerKind::Relu;
        } else if (kind == "conv2d") {
            layer.kind = LayerKind::Conv2d;
            const json& k = lj.at("kernel");
            // kernel nesting: [out][in][ky][kx]
            if (!k.is_array() || k.empty() || !k[0].is_array() || k[0].empty() ||
                !k[0][0].is_array() || k[0][0].empty() || !k[0][0][0].is_array())
                fail(where + ": conv kernel must be a 4-d array");
            layer.out_channels = static_cast<int>(k.size());
            layer.in_channels = static_cast<int>(k[0].size());
            layer.kh = static_cast<int>(k[0][0].size());
            layer.kw = static_cast<int>(k[0][0][0].size());
            layer.kernel.reserve(static_cast<size_t>(layer.out_channels) *
                                 layer.in_channels * layer.kh * layer.kw);
            for (const auto& oc : k) {
                if (static_cast<int>(oc.size()) != layer.in_channels)
                    fail(where + ": ragged conv kernel");
                for (const auto& ic : oc) {
                    if (static_cast<int>(ic.size()) != layer.kh)
                        fail(where + ": ragged conv kernel");
                    for (const auto& row : ic) {
                        if (static_cast<int>(row.size()) != layer.kw)
                            fail(where + ": ragged conv kernel");
                        for (const auto& v : row) {
                            const double d = v.get<double>();
                            check_finite(d, where + " kernel");
                            layer.kernel.push_back(d);
                        }
                    }
                }
            }
            layer.stride = lj.value("stride", 1);
            layer.padding = lj.value("padding", 0);
            layer.conv_bias = lj.contains("bias")
                                  ? parse_vector(lj.at("bias"), where + " bias")
                                  : Vector::Zero(layer.out_channels);
        } else if (kind == "avgpool2d") {
            layer.kind = LayerKind::AvgPool2d;
            layer.window = lj.at("window").get<int>();
        } else if (kind == "flatten") {
            layer.kind = LayerKind::Flatten;
        } else {
            fail(where + ": unknown kind '" + kind + "'");
        }
        cur = layer_output_shape(layer, cur, i);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Network load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open model file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail("model file " + path + " is not valid JSON: " + e.what());
    }
    return network_from_json(j);
}

json network_to_json(const Network& net) {
    json j;
    j["input_shape"] = {net.input_shape.h, net.input_shape.w, net.input_shape.c};
    json layers = json::array();
    for (const Layer& l : net.layers) {
        json lj;
        switch (l.kind) {
            case LayerKind::Dense:
                lj["kind"] = "dense";
                lj["weight"] = matrix_to_json(l.weight);
                lj["bias"] = vector_to_json(l.bias);
                break;
            case LayerKind::Relu:
                lj["kind"] = "relu";
                break;
            case LayerKind::Conv2d: {
                lj["kind"] = "conv2d";
                json k = json::array();
                size_t p = 0;
                for (int o = 0; o < l.out_channels; ++o) {
                    json oc = json::array();
                    for (int i = 0; i < l.in_channels; ++i) {
                        json ic = json::array();
                        for (int y = 0; y < l.kh; ++y) {
                            json row = json::array();
                            for (int x = 0; x < l.kw; ++x) row.push_back(l.kernel[p++]);
                            ic.push_back(row);
                        }
                        oc.push_back(ic);
                    }
                    k.push_back(oc);
                }
                lj["kernel"] = k;
                lj["stride"] = l.stride;
                lj["padding"] = l.padding;
                lj["bias"] = vector_to_json(l.conv_bias);
                break;
            }
            case LayerKind::AvgPool2d:
                lj["kind"] = "avgpool2d";
                lj["window"] = l.window;
                break;
            case LayerKind::Flatten:
                lj["kind"] = "flatten";
                break;
        }
        layers.push_back(lj);
    }
    j["layers"] = layers;
    return j;
}

namespace {

Vector apply_layer(const Layer& layer, const Shape& in, const Shape& out, const Vector& x) {
    switch (layer.kind) {
        case LayerKind::Dense:
            return layer.weight * x + layer.bias;
        case LayerKind::Relu:
            return x.cwiseMax(0.0);
        case LayerKind::Conv2d: {
            Vector y(out.size());
            const int KH = layer.kh, KW = layer.kw, IC = layer.in_channels;
            for (int oy = 0; oy < out.h; ++oy)
                for (int ox = 0; ox < out.w; ++ox)
                    for (int oc = 0; oc < out.c; ++oc) {
                        double acc = layer.conv_bias(oc);
                        for (int ic = 0; ic < IC; ++ic)
                            for (int ky = 0; ky < KH; ++ky)
                                for (int kx = 0; kx < KW; ++kx) {
                                    const int iy = oy * layer.stride - layer.padding + ky;
                                    const int ix = ox * layer.stride - layer.padding + kx;
                                    if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                                    const size_t kidx =
                                        ((static_cast<size_t>(oc) * IC + ic) * KH + ky) * KW + kx;
                                    acc += layer.kernel[kidx] * x(flat_index(in, iy, ix, ic));
                                }
                        y(flat_index(out, oy, ox, oc)) = acc;
                    }
            return y;
        }
        case LayerKind::AvgPool2d: {
            Vector y(out.size());
            const double inv = 1.0 / (layer.window * layer.window);
            for (int oy = 0; oy < out.h; ++oy)
                for (int ox = 0; ox < out.w; ++ox)
                    for (int c = 0; c < out.c; ++c) {
                        double acc = 0.0;
                        for (int dy = 0; dy < layer.window; ++dy)
                            for (int dx = 0; dx < layer.window; ++dx)
                                acc += x(flat_index(in, oy * layer.window + dy,
                                                    ox * layer.window + dx, c));
                        y(flat_index(out, oy, ox, c)) = acc * inv;
                    }
            return y;
        }
        case LayerKind::Flatten:
            return x;
    }
    throw std::runtime_error("unknown layer kind in forward");
}

}  // namespace

Vector forward(const Network& net, const Vector& x) {
    if (x.size() != net.input_size())
        fail("forward: input has size " + std::to_string(x.size()) + ", expected " +
             std::to_string(net.input_size()));
    Vector cur = x;
    Shape shape = net.input_shape;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const Shape out = layer_output_shape(net.layers[i], shape, i);
        cur = apply_layer(net.layers[i], shape, out, cur);
        shape = out;
    }
    return cur;
}

std::vector<Vector> relu_pre_activations(const Network& net, const Vector& x) {
    if (x.size() != net.input_size()) fail("relu_pre_activations: input size mismatch");
    std::vector<Vector> zs;
    Vector cur = x;
    Shape shape = net.input_shape;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].kind == LayerKind::Relu) zs.push_back(cur);
        const Shape out = layer_output_shape(net.layers[i], shape, i);
        cur = apply_layer(net.layers[i], shape, out, cur);
        shape = out;
    }
    return zs;
}

void layer_matrix_form(const Layer& layer, const Shape& in, Matrix& W, Vector& b,
                       Shape& out) {
    out = layer_output_shape(layer, in, 0);
    switch (layer.kind) {
        case LayerKind::Dense:
            W = layer.weight;
            b = layer.bias;
            return;
        case LayerKind::Relu:
            fail("layer_matrix_form: relu has no affine form");
        case LayerKind::Conv2d: {
            W = Matrix::Zero(out.size(), in.size());
            b = Vector(out.size());
            const int KH = layer.kh, KW = layer.kw, IC = layer.in_channels;
            for (int oy = 0; oy < out.h; ++oy)
                for (int ox = 0; ox < out.w; ++ox)
                    for (int oc = 0; oc < out.c; ++oc) {
                        const int r = flat_index(out, oy, ox, oc);
                        b(r) = layer.conv_bias(oc);
                        for (int ic = 0; ic < IC; ++ic)
                            for (int ky = 0; ky < KH; ++ky)
                                for (int kx = 0; kx < KW; ++kx) {
                                    const int iy = oy * layer.stride - layer.padding + ky;
                                    const int ix = ox * layer.stride - layer.padding + kx;
                                    if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                                    const size_t kidx =
                                        ((static_cast<size_t>(oc) * IC + ic) * KH + ky) * KW + kx;
                                    W(r, flat_index(in, iy, ix, ic)) += layer.kernel[kidx];
                                }
                    }
            return;
        }
        case LayerKind::AvgPool2d: {
            W = Matrix::Zero(out.size(), in.size());
            b = Vector::Zero(out.size());
            const double inv = 1.0 / (layer.window * layer.window);
            for (int oy = 0; oy < out.h; ++oy)
                for (int ox = 0; ox < out.w; ++ox)
                    for (int c = 0; c < out.c; ++c)
                        for (int dy = 0; dy < layer.window; ++dy)
                            for (int dx = 0; dx < layer.window; ++dx)
                                W(flat_index(out, oy, ox, c),
                                  flat_index(in, oy * layer.window + dy,
                                             ox * layer.window + dx, c)) = inv;
            return;
        }
        case LayerKind::Flatten:
            W = Matrix::Identity(in.size(), in.size());
            b = Vector::Zero(in.size());
            return;
    }
}

CompiledNet compile(const Network& net) {
    CompiledNet cn;
    cn.input_size = net.input_size();
    Shape shape = net.input_shape;

    // Pending affine composition: y = W x + b over the stage's input.
    Matrix W = Matrix::Identity(shape.size(), shape.size());
    Vector b = Vector::Zero(shape.size());
    bool pending = false;  // any affine op absorbed since the last stage cut

    auto cut = [&](bool relu) {
        Stage st;
        st.W = W;
        st.b = b;
        st.relu = relu;
        st.width = static_cast<int>(W.rows());
        cn.stages.push_back(std::move(st));
        W = Matrix::Identity(shape.size(), shape.size());
        b = Vector::Zero(shape.size());
        pending = false;
    };

    for (size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& layer = net.layers[i];
        if (layer.kind == LayerKind::Relu) {
            // A ReLU with no preceding affine becomes an identity stage.
            cut(true);
            continue;
        }
        Matrix Wl;
        Vector bl;
        Shape out;
        layer_matrix_form(layer, shape, Wl, bl, out);
        b = Wl * b + bl;
        W = (Wl * W).eval();
        shape = out;
        pending = true;
    }
    if (pending || cn.stages.empty()) cut(false);
    return cn;
}

std::vector<Vector> stage_pre_activations(const CompiledNet& net, const Vector& x) {
    if (x.size() != net.input_size) fail("stage_pre_activations: input size mismatch");
    std::vector<Vector> zs;
    zs.reserve(net.stages.size());
    Vector h = x;
    for (const Stage& st : net.stages) {
        Vector z = st.W * h + st.b;
        h = st.relu ? z.cwiseMax(0.0).eval() : z;
        zs.push_back(std::move(z));
    }
    return zs;
}

Network append_output_spec(const Network& net, const OutputSpec& spec) {
    if (spec.C.rows() == 0) fail("append_output_spec: spec has no rows");
    if (spec.d.size() != spec.C.rows())
        fail("append_output_spec: offset length does not match row count");
    // Validate against the network's output width.
    Shape shape = net.input_shape;
    for (size_t i = 0; i < net.layers.size(); ++i)
        shape = layer_output_shape(net.layers[i], shape, i);
    if (spec.C.cols() != shape.size())
        fail("append_output_spec: spec has " + std::to_string(spec.C.cols()) +
             " columns but the network outputs " + std::to_string(shape.size()) +
             " values");
    Network out = net;
    Layer l;
    l.kind = LayerKind::Dense;
    l.weight = spec.C;
    l.bias = spec.d;
    out.layers.push_back(std::move(l));
    return out;
}

OutputSpec label_spec(int num_outputs, int label) {
    if (num_outputs < 2) fail("label_spec: need at least two outputs");
    if (label < 0 || label >= num_outputs) fail("label_spec: label out of range");
    OutputSpec spec;
    spec.C = Matrix::Zero(num_outputs - 1, num_outputs);
    spec.d = Vector::Zero(num_outputs - 1);
    int r = 0;
    for (int j = 0; j < num_outputs; ++j) {
        if (j == label) continue;
        spec.C(r, label) = 1.0;
        spec.C(r, j) = -1.0;
        ++r;
    }
    return spec;
}

OutputSpec spec_from_json(const nlohmann::json& j) {
    OutputSpec spec;
    spec.C = parse_matrix(j.at("C"), "spec C");
    spec.d = j.contains("d") ? parse_vector(j.at("d"), "spec d")
                             : Vector::Zero(spec.C.rows());
    if (spec.d.size() != spec.C.rows()) fail("spec d length does not match C rows");
    return spec;
}

}  // namespace premap
