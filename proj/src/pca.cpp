#include "snowfuse/pca.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>

namespace snowfuse {

SymmetricEigen jacobi_eigen(const std::vector<double>& matrix, std::size_t n) {
    if (n == 0 || matrix.size() != n * n)
        throw std::invalid_argument("jacobi_eigen: expected " + std::to_string(n) + "x" + std::to_string(n) +
                                    " matrix, got " + std::to_string(matrix.size()) + " values");
    double scale = 0.0;
    for (double v : matrix) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(matrix[i * n + j] - matrix[j * n + i]) > 1e-12 * std::max(scale, 1.0))
                throw std::invalid_argument("jacobi_eigen: matrix is not symmetric");

    std::vector<double> a = matrix;
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i * n + j] * a[i * n + j];
        if (off == 0.0) break;
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) diag += a[i * n + i] * a[i * n + i];
        if (off <= 1e-32 * diag) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
    SymmetricEigen out;
    for (std::size_t k : order) {
        out.values.push_back(a[k * n + k]);
        std::vector<double> vec(n);
        for (std::size_t i = 0; i < n; ++i) vec[i] = v[i * n + k];
        out.vectors.push_back(std::move(vec));
    }
    return out;
}

PcaClusterResult pca_cluster_distance(const Tensor& features, const BinaryMap& object_mask) {
    if (features.rank() != 3) throw ShapeError("pca: features must be C x H x W, got " + shape_to_string(features.shape()));
    const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2), n = h * w;
    if (c < 2) throw std::invalid_argument("pca: need at least 2 feature channels, got " + std::to_string(c));
    if (object_mask.height != h || object_mask.width != w)
        throw ShapeError("pca: mask is " + std::to_string(object_mask.height) + "x" + std::to_string(object_mask.width) +
                         ", features are " + std::to_string(h) + "x" + std::to_string(w));
    const std::size_t objects = object_mask.count();
    if (objects == 0) throw std::invalid_argument("pca: object cluster is empty");
    if (objects == n) throw std::invalid_argument("pca: background cluster is empty");

    std::vector<double> mean(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < n; ++i) mean[ch] += features[ch * n + i];
        mean[ch] /= static_cast<double>(n);
    }
    std::vector<double> centred(c * n);
    double spread = 0.0, magnitude = 1.0;
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < n; ++i) {
            centred[ch * n + i] = features[ch * n + i] - mean[ch];
            spread = std::max(spread, std::abs(centred[ch * n + i]));
            magnitude = std::max(magnitude, std::abs(features[ch * n + i]));
        }

    PcaClusterResult result;
    result.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) result.points[i].object = object_mask.pixels[i] != 0;

    // identical pixels up to rounding of the mean: rank-0 covariance
    if (spread <= 1e-12 * magnitude) {
        result.eigenvalues.assign(c, 0.0);
        return result;
    }

    std::vector<double> cov(c * c, 0.0);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = i; j < c; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += centred[i * n + k] * centred[j * n + k];
            cov[i * c + j] = cov[j * c + i] = s / static_cast<double>(n);
        }
    const SymmetricEigen eig = jacobi_eigen(cov, c);
    result.eigenvalues = eig.values;

    for (std::size_t k = 0; k < n; ++k) {
        double x = 0.0, y = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            x += centred[ch * n + k] * eig.vectors[0][ch];
            y += centred[ch * n + k] * eig.vectors[1][ch];
        }
        result.points[k].x = x;
        result.points[k].y = y;
    }

    auto cluster_distance = [&](bool object) {
        double cx = 0.0, cy = 0.0;
        std::size_t m = 0;
        for (const auto& p : result.points)
            if (p.object == object) {
                cx += p.x;
                cy += p.y;
                ++m;
            }
        cx /= static_cast<double>(m);
        cy /= static_cast<double>(m);
        double d = 0.0;
        for (const auto& p : result.points)
            if (p.object == object) d += std::hypot(p.x - cx, p.y - cy);
        return d / static_cast<double>(m);
    };
    result.object_distance = cluster_distance(true);
    result.background_distance = cluster_distance(false);
    return result;
}

void write_pca_csv(std::ostream& out, const PcaClusterResult& result) {
    out << "x,y,object\n";
    char buf[96];
    for (const auto& p : result.points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%d\n", p.x, p.y, p.object ? 1 : 0);
        out << buf;
    }
}

}  // namespace snowfuse
