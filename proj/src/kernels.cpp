#include "premap/kernels.hpp"

#include <random>
#include <stdexcept>

namespace premap::kernels {

std::vector<Matrix> batch_pre_activations(const CompiledNet& net, const Matrix& X) {
    const int n = static_cast<int>(X.rows());
    std::vector<Matrix> out(net.num_stages());
    for (int s = 0; s < net.num_stages(); ++s)
        out[s].resize(n, net.stages[s].width);

#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        const auto zs = stage_pre_activations(net, X.row(r).transpose());
        for (int s = 0; s < net.num_stages(); ++s)
            out[s].row(r) = zs[s].transpose();
    }
    return out;
}

void plane_membership(const Matrix& A, const Vector& b, const Matrix& X,
                      std::vector<char>& inside) {
    const int n = static_cast<int>(X.rows());
    inside.assign(n, 1);
    if (A.rows() == 0) return;

#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        const Vector m = A * X.row(r).transpose() + b;
        inside[static_cast<size_t>(r)] = (m.array() >= 0.0).all();
    }
}

double weighted_fraction(const std::vector<char>& inside, const Vector& w) {
    if (static_cast<Eigen::Index>(inside.size()) != w.size())
        throw std::invalid_argument("weighted_fraction: size mismatch");
    double total = 0.0, in = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        total += w(i);
        if (inside[static_cast<size_t>(i)]) in += w(i);
    }
    return total > 0.0 ? in / total : 0.0;
}

void bootstrap_fractions(const std::vector<char>& inP, const std::vector<char>& inO,
                         const Vector& w, const std::vector<std::uint64_t>& seeds,
                         std::vector<double>& fracP, std::vector<double>& fracO) {
    const int n = static_cast<int>(w.size());
    const int B = static_cast<int>(seeds.size());
    fracP.assign(B, 0.0);
    fracO.assign(B, 0.0);
    if (n == 0) return;

#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        std::mt19937_64 rng(seeds[static_cast<size_t>(b)]);
        std::uniform_int_distribution<int> pick(0, n - 1);
        double total = 0.0, p = 0.0, o = 0.0;
        for (int i = 0; i < n; ++i) {
            const int j = pick(rng);
            total += w(j);
            if (inP[static_cast<size_t>(j)]) p += w(j);
            if (inO[static_cast<size_t>(j)]) o += w(j);
        }
        fracP[static_cast<size_t>(b)] = total > 0.0 ? p / total : 0.0;
        fracO[static_cast<size_t>(b)] = total > 0.0 ? o / total : 0.0;
    }
}

}  // namespace premap::kernels
