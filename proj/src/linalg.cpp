#include "kgd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace kgd {

Matrix row_softmax(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw Error(ErrorCode::EmptyInput, "row_softmax on empty matrix");
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto in = m.row(i);
        auto dst = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            dst[j] = std::exp(in[j] - mx);
            sum += dst[j];
        }
        for (double& v : dst) v /= sum;
    }
    return out;
}

Matrix affinity(const Matrix& h, Diagonal diag, Diagnostics* diagnostics) {
    const std::size_t n = h.rows();
    if (n == 0) throw Error(ErrorCode::EmptyInput, "affinity of an empty point set");

    Matrix sq(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            auto a = h.row(i);
            auto b = h.row(j);
            for (std::size_t k = 0; k < a.size(); ++k) {
                const double t = a[k] - b[k];
                d2 += t * t;
            }
            sq(i, j) = d2;
            sq(j, i) = d2;
        }
    }

    // Population variance over the ordered off-diagonal pairs. Each unordered
    // pair appears twice, which leaves mean and variance unchanged.
    double var = 0.0;
    const std::size_t pairs = n * (n - 1) / 2;
    if (pairs > 0) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) mean += sq(i, j);
        mean /= static_cast<double>(pairs);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) var += (sq(i, j) - mean) * (sq(i, j) - mean);
        var /= static_cast<double>(pairs);
    }
    if (!(var > 0.0)) {
        report_warning(diagnostics, Warning::DegenerateBandwidth,
                       "all pairwise distances equal over " + std::to_string(n) + " points");
        var = kBandwidthFloor;
    }

    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        a(i, i) = diag == Diagonal::One ? 1.0 : 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double w = std::exp(-sq(i, j) / var);
            a(i, j) = w;
            a(j, i) = w;
        }
    }
    return a;
}

Matrix sym_normalize(const Matrix& a) {
    if (a.rows() != a.cols()) throw Error(ErrorCode::DimMismatch, "sym_normalize needs a square matrix");
    const std::size_t n = a.rows();
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 0.0;
        for (double v : a.row(i)) deg += v;
        if (!(deg > 0.0)) throw Error(ErrorCode::IsolatedNode, "row " + std::to_string(i) + " has zero degree");
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out(i, j) = inv_sqrt_deg[i] * a(i, j) * inv_sqrt_deg[j];
    return out;
}

Matrix solve(const Matrix& a, const Matrix& b) {
    if (a.rows() != a.cols() || a.rows() != b.rows()) {
        throw Error(ErrorCode::DimMismatch, "solve: incompatible system shapes");
    }
    const std::size_t n = a.rows();
    const std::size_t m = b.cols();
    Matrix lu = a;
    Matrix x = b;
    const double scale = std::max(norm_inf(a), 1.0);

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t pivot = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
        if (std::abs(lu(pivot, k)) <= 1e-14 * scale) {
            throw Error(ErrorCode::SingularSystem, "pivot " + std::to_string(k) + " is numerically zero");
        }
        if (pivot != k) {
            std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(pivot).begin());
            std::swap_ranges(x.row(k).begin(), x.row(k).end(), x.row(pivot).begin());
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = lu(i, k) / lu(k, k);
            if (f == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
            for (std::size_t j = 0; j < m; ++j) x(i, j) -= f * x(k, j);
        }
    }
    for (std::size_t kk = n; kk-- > 0;) {
        for (std::size_t j = 0; j < m; ++j) {
            double s = x(kk, j);
            for (std::size_t c = kk + 1; c < n; ++c) s -= lu(kk, c) * x(c, j);
            x(kk, j) = s / lu(kk, kk);
        }
    }
    return x;
}

Matrix smoothing_solve(const Matrix& l, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw Error(ErrorCode::BadAlpha, "alpha must lie in (0,1), got " + std::to_string(alpha));
    }
    if (l.rows() != l.cols()) throw Error(ErrorCode::DimMismatch, "smoothing_solve needs a square matrix");
    const std::size_t n = l.rows();
    Matrix system = Matrix::identity(n) - alpha * l;
    return solve(system, Matrix::identity(n));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::DimMismatch, "cosine of vectors with different lengths");
    const double na = norm_l2(a);
    const double nb = norm_l2(b);
    if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
    return dot(a, b) / (na * nb);
}

}  // namespace kgd
