#include "premap/reference.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace premap::ref {

namespace {

struct Dims {
    int h, w, c;
    int size() const { return h * w * c; }
};

int at(const Dims& d, int y, int x, int c) { return (y * d.w + x) * d.c + c; }

// Straight-line layer application on std::vector buffers; keeps its own shape
// arithmetic so it cannot inherit a mistake from the matrix-form path.
std::vector<double> apply(const Layer& l, const Dims& in, Dims& out,
                          const std::vector<double>& x) {
    switch (l.kind) {
        case LayerKind::Dense: {
            out = {static_cast<int>(l.weight.rows()), 1, 1};
            std::vector<double> y(out.size(), 0.0);
            for (int r = 0; r < out.h; ++r) {
                double acc = l.bias(r);
                for (int c = 0; c < l.weight.cols(); ++c) acc += l.weight(r, c) * x[c];
                y[r] = acc;
            }
            return y;
        }
        case LayerKind::Relu: {
            out = in;
            std::vector<double> y(x.size());
            for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
            return y;
        }
        case LayerKind::Conv2d: {
            out = {(in.h + 2 * l.padding - l.kh) / l.stride + 1,
                   (in.w + 2 * l.padding - l.kw) / l.stride + 1, l.out_channels};
            std::vector<double> y(out.size(), 0.0);
            for (int oy = 0; oy < out.h; ++oy)
                for (int ox = 0; ox < out.w; ++ox)
                    for (int oc = 0; oc < out.c; ++oc) {
                        double acc = l.conv_bias(oc);
                        for (int ic = 0; ic < l.in_channels; ++ic)
                            for (int ky = 0; ky < l.kh; ++ky)
                                for (int kx = 0; kx < l.kw; ++kx) {
                                    const int iy = oy * l.stride - l.padding + ky;
                                    const int ix = ox * l.stride - l.padding + kx;
                                    if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w)
                                        continue;
                                    acc += l.kernel[((static_cast<size_t>(oc) * l.in_channels +
                                                      ic) * l.kh + ky) * l.kw + kx] *
                                           x[at(in, iy, ix, ic)];
                                }
                        y[at(out, oy, ox, oc)] = acc;
                    }
            return y;
        }
        case LayerKind::AvgPool2d: {
            out = {in.h / l.window, in.w / l.window, in.c};
            std::vector<double> y(out.size(), 0.0);
            for (int oy = 0; oy < out.h; ++oy)
                for (int ox = 0; ox < out.w; ++ox)
                    for (int c = 0; c < out.c; ++c) {
                        double acc = 0.0;
                        for (int dy = 0; dy < l.window; ++dy)
                            for (int dx = 0; dx < l.window; ++dx)
                                acc += x[at(in, oy * l.window + dy, ox * l.window + dx, c)];
                        y[at(out, oy, ox, c)] = acc / (l.window * l.window);
                    }
            return y;
        }
        case LayerKind::Flatten: {
            out = {in.size(), 1, 1};
            return x;
        }
    }
    throw std::runtime_error("reference forward: unknown layer kind");
}

std::vector<double> run_layers(const Network& net, const std::vector<double>& x0,
                               std::vector<std::vector<double>>* relu_inputs) {
    Dims dims{net.input_shape.h, net.input_shape.w, net.input_shape.c};
    std::vector<double> cur = x0;
    for (const Layer& l : net.layers) {
        if (l.kind == LayerKind::Relu && relu_inputs) relu_inputs->push_back(cur);
        Dims out{};
        cur = apply(l, dims, out, cur);
        dims = out;
    }
    return cur;
}

double sigmoid(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

// -log sum_k exp(sign * s_k), evaluated stably.
double neg_log_sum_exp(const std::vector<double>& s, double sign) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : s) m = std::max(m, sign * v);
    double acc = 0.0;
    for (double v : s) acc += std::exp(sign * v - m);
    return -(m + std::log(acc));
}

}  // namespace

Vector forward(const Network& net, const Vector& x) {
    std::vector<double> x0(x.data(), x.data() + x.size());
    std::vector<double> y = run_layers(net, x0, nullptr);
    return Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
}

std::vector<Vector> relu_pre_activations(const Network& net, const Vector& x) {
    std::vector<double> x0(x.data(), x.data() + x.size());
    std::vector<std::vector<double>> zs;
    run_layers(net, x0, &zs);
    std::vector<Vector> out;
    out.reserve(zs.size());
    for (const auto& z : zs)
        out.push_back(Eigen::Map<const Vector>(z.data(), static_cast<Eigen::Index>(z.size())));
    return out;
}

Matrix batch_forward(const Network& net, const Matrix& X) {
    Matrix Y;
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        Vector y = premap::ref::forward(net, X.row(r).transpose());
        if (r == 0) Y.resize(X.rows(), y.size());
        Y.row(r) = y.transpose();
    }
    return Y;
}

double coverage_fraction(const Matrix& A, const Vector& b, const Matrix& X,
                         const Vector& w) {
    double total = 0.0, covered = 0.0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        total += w(r);
        bool in = true;
        for (Eigen::Index k = 0; k < A.rows() && in; ++k) {
            double s = b(k);
            for (Eigen::Index j = 0; j < A.cols(); ++j) s += A(k, j) * X(r, j);
            if (s < 0.0) in = false;
        }
        if (in) covered += w(r);
    }
    if (total <= 0.0) throw std::runtime_error("coverage_fraction: total weight is zero");
    return covered / total;
}

double objective_under(const Matrix& A, const Vector& b, const Matrix& X,
                       const Vector& w) {
    double total = 0.0, acc = 0.0;
    std::vector<double> s(A.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        for (Eigen::Index k = 0; k < A.rows(); ++k) {
            double v = b(k);
            for (Eigen::Index j = 0; j < A.cols(); ++j) v += A(k, j) * X(r, j);
            s[k] = v;
        }
        acc += w(r) * sigmoid(neg_log_sum_exp(s, -1.0));
        total += w(r);
    }
    if (total <= 0.0) throw std::runtime_error("objective_under: total weight is zero");
    return acc / total;
}

double objective_over(const Matrix& A, const Vector& b, const Matrix& X,
                      const Vector& w, const std::vector<char>& mask) {
    double total = 0.0, acc = 0.0;
    std::vector<double> s(A.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        for (Eigen::Index k = 0; k < A.rows(); ++k) {
            double v = b(k);
            for (Eigen::Index j = 0; j < A.cols(); ++j) v += A(k, j) * X(r, j);
            s[k] = v;
        }
        acc += w(r) * sigmoid(neg_log_sum_exp(s, 1.0));
        total += w(r);
    }
    if (total <= 0.0) return 1.0;
    return acc / total;
}

std::map<std::string, double> raw_scores(const NeuronInputs& in) {
    const size_t n = in.z.size();
    const double lb = in.lb, ub = in.ub;
    double sum_lambda_abs = 0.0;
    for (double l : in.lambda) sum_lambda_abs += std::abs(l);

    double pos = 0.0, soft = 0.0;
    double zmin = n ? in.z[0] : 0.0, zmax = n ? in.z[0] : 0.0;
    double neg_abs_sum = 0.0;
    size_t neg_count = 0;
    for (double z : in.z) {
        if (z >= 0.0) pos += 1.0;
        soft += sigmoid(z);
        zmin = std::min(zmin, z);
        zmax = std::max(zmax, z);
        if (z < 0.0) {
            neg_abs_sum += std::abs(z);
            ++neg_count;
        }
    }

    std::map<std::string, double> s;
    s["balance"] = n ? 1.0 - std::abs(2.0 * pos / n - 1.0) : 0.0;
    s["soft"] = n ? 1.0 - std::abs(2.0 * soft / n - 1.0) : 0.0;
    s["lower"] = std::max(-lb, 0.0);
    s["width"] = ub - lb;
    s["loose"] = (ub - lb) - (n ? (zmax - zmin) : 0.0);
    s["bound"] = 1.0 - (n ? (zmax - zmin) : 0.0) / (ub - lb);
    s["gap"] = (-lb * ub) / (ub - lb);
    s["area"] = sum_lambda_abs * lb * lb;
    s["under"] = sum_lambda_abs * std::abs(lb);
    s["extra"] = neg_count ? sum_lambda_abs * neg_abs_sum / neg_count : 0.0;
    return s;
}

int combine_and_select(const std::vector<std::map<std::string, double>>& raw,
                       const std::map<std::string, double>& weights) {
    if (raw.empty()) throw std::runtime_error("combine_and_select: no candidates");
    std::vector<double> combined(raw.size(), 0.0);
    for (const auto& [name, weight] : weights) {
        if (weight == 0.0) continue;
        double mx = 0.0;
        for (const auto& scores : raw) mx = std::max(mx, scores.at(name));
        if (mx <= 0.0) continue;
        for (size_t i = 0; i < raw.size(); ++i)
            combined[i] += weight * raw[i].at(name) / mx;
    }
    int best = 0;
    for (size_t i = 1; i < raw.size(); ++i)
        if (combined[i] > combined[best]) best = static_cast<int>(i);
    return best;
}

double ess(const Vector& w) {
    double s1 = 0.0, s2 = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        s1 += w(i);
        s2 += w(i) * w(i);
    }
    if (s2 <= 0.0) throw std::runtime_error("ess: all weights are zero");
    return s1 * s1 / s2;
}

void bootstrap_fractions(const std::vector<char>& inP, const std::vector<char>& inO,
                         const Vector& w, const std::vector<std::uint64_t>& seeds,
                         std::vector<double>& fracP, std::vector<double>& fracO) {
    const int n = static_cast<int>(w.size());
    fracP.assign(seeds.size(), 0.0);
    fracO.assign(seeds.size(), 0.0);
    for (size_t b = 0; b < seeds.size(); ++b) {
        std::mt19937_64 rng(seeds[b]);
        std::uniform_int_distribution<int> pick(0, n - 1);
        double total = 0.0, p = 0.0, o = 0.0;
        for (int i = 0; i < n; ++i) {
            const int j = pick(rng);
            total += w(j);
            if (inP[static_cast<size_t>(j)]) p += w(j);
            if (inO[static_cast<size_t>(j)]) o += w(j);
        }
        fracP[b] = total > 0.0 ? p / total : 0.0;
        fracO[b] = total > 0.0 ? o / total : 0.0;
    }
}

double grid_preimage_volume(const Network& net, const Vector& lo, const Vector& hi,
                            int nx, int ny) {
    if (net.input_size() != 2)
        throw std::runtime_error("grid_preimage_volume: needs a two-input network");
    const double cell =
        ((hi(0) - lo(0)) / nx) * ((hi(1) - lo(1)) / ny);
    double vol = 0.0;
    Vector x(2);
    for (int i = 0; i < nx; ++i) {
        x(0) = lo(0) + (i + 0.5) * (hi(0) - lo(0)) / nx;
        for (int j = 0; j < ny; ++j) {
            x(1) = lo(1) + (j + 0.5) * (hi(1) - lo(1)) / ny;
            const Vector y = premap::ref::forward(net, x);
            if ((y.array() >= 0.0).all()) vol += cell;
        }
    }
    return vol;
}

}  // namespace premap::ref
