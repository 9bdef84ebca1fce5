#pragma once

#include "premap/model.hpp"

#include <random>
#include <string>

namespace premap::testing {

inline std::string fixture_path(const std::string& name) {
    return std::string(PREMAP_SOURCE_DIR) + "/tests/fixtures/" + name;
}

// Dense net with the given hidden widths, ReLU after every hidden layer.
// Weights ~ U(-scale, scale), biases ~ U(-0.5, 0.5) * scale; pinned by seed.
inline Network random_dense_net(std::uint64_t seed, int input_dim,
                                const std::vector<int>& widths, int outputs,
                                double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uw(-scale, scale);
    std::uniform_real_distribution<double> ub(-0.5 * scale, 0.5 * scale);
    Network net;
    net.input_shape = {input_dim, 1, 1};
    int prev = input_dim;
    auto dense = [&](int rows) {
        Layer l;
        l.kind = LayerKind::Dense;
        l.weight = Matrix::NullaryExpr(rows, prev, [&]() { return uw(rng); });
        l.bias = Vector::NullaryExpr(rows, [&]() { return ub(rng); });
        prev = rows;
        return l;
    };
    for (int wdt : widths) {
        net.layers.push_back(dense(wdt));
        Layer relu;
        relu.kind = LayerKind::Relu;
        net.layers.push_back(relu);
    }
    net.layers.push_back(dense(outputs));
    return net;
}

// Small conv net: conv (stride 1, padding 0) + relu + avgpool + flatten + dense.
inline Network random_conv_net(std::uint64_t seed, int h, int w, int c,
                               int out_channels, int ksize, int pool, int outputs,
                               double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uw(-scale, scale);
    Network net;
    net.input_shape = {h, w, c};
    Layer conv;
    conv.kind = LayerKind::Conv2d;
    conv.out_channels = out_channels;
    conv.in_channels = c;
    conv.kh = ksize;
    conv.kw = ksize;
    conv.stride = 1;
    conv.padding = 0;
    conv.kernel.resize(static_cast<size_t>(out_channels) * c * ksize * ksize);
    for (double& v : conv.kernel) v = uw(rng);
    conv.conv_bias = Vector::NullaryExpr(out_channels, [&]() { return uw(rng); });
    net.layers.push_back(conv);
    Layer relu;
    relu.kind = LayerKind::Relu;
    net.layers.push_back(relu);
    Layer pl;
    pl.kind = LayerKind::AvgPool2d;
    pl.window = pool;
    net.layers.push_back(pl);
    Layer fl;
    fl.kind = LayerKind::Flatten;
    net.layers.push_back(fl);
    const int oh = h - ksize + 1, ow = w - ksize + 1;
    const int flat = (oh / pool) * (ow / pool) * out_channels;
    Layer d;
    d.kind = LayerKind::Dense;
    d.weight = Matrix::NullaryExpr(outputs, flat, [&]() { return uw(rng); });
    d.bias = Vector::NullaryExpr(outputs, [&]() { return uw(rng); });
    net.layers.push_back(d);
    return net;
}

inline Matrix random_points(std::uint64_t seed, int n, const Vector& lo,
                            const Vector& hi) {
    std::mt19937_64 rng(seed);
    Matrix X(n, lo.size());
    for (int r = 0; r < n; ++r)
        for (Eigen::Index j = 0; j < lo.size(); ++j) {
            std::uniform_real_distribution<double> u(lo(j), hi(j));
            X(r, j) = u(rng);
        }
    return X;
}

}  // namespace premap::testing
