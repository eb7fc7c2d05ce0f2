#include "scf/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

namespace scf {

namespace {

[[noreturn]] void fail(SpectralError::Kind kind, const std::string& message) { throw SpectralError(kind, message); }

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxSweeps = 80;

void check_finite(const Matrix& w) {
    if (!w.allFinite()) fail(SpectralError::Kind::NonFinite, "matrix has non-finite entries");
}

// Orthonormalizes u's columns in place, in column order. Columns listed in
// `unreliable`, or whose residual collapses, are replaced by the standard basis
// vector with the largest component outside the span of the columns so far.
void orthonormalize(Matrix& u, const std::vector<bool>& unreliable) {
    const Eigen::Index m = u.rows();
    for (Eigen::Index c = 0; c < u.cols(); ++c) {
        bool replace = unreliable[static_cast<std::size_t>(c)];
        if (!replace) {
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index j = 0; j < c; ++j) u.col(c) -= u.col(j).dot(u.col(c)) * u.col(j);
            }
            const double norm = u.col(c).norm();
            if (norm < 0.5) replace = true;
            else u.col(c) /= norm;
        }
        if (!replace) continue;

        Eigen::VectorXd best;
        double best_norm = -1.0;
        for (Eigen::Index e = 0; e < m; ++e) {
            Eigen::VectorXd cand = Eigen::VectorXd::Unit(m, e);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index j = 0; j < c; ++j) cand -= u.col(j).dot(cand) * u.col(j);
            }
            const double norm = cand.norm();
            if (norm > best_norm + 1e-12) {
                best_norm = norm;
                best = std::move(cand);
            }
        }
        u.col(c) = best / best_norm;
    }
}

// Hestenes iteration on a matrix with rows >= cols.
Svd jacobi_tall(const Matrix& w) {
    const Eigen::Index m = w.rows();
    const Eigen::Index n = w.cols();
    Matrix a = w;
    Matrix v = Matrix::Identity(n, n);
    Eigen::VectorXd ai(m), vi(n);
    // columns below this squared norm are numerically zero; rotating them only
    // shuffles rounding noise and can keep the sweep from terminating
    const double negligible = kEps * kEps * w.squaredNorm();

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (Eigen::Index i = 0; i + 1 < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double alpha = a.col(i).squaredNorm();
                const double beta = a.col(j).squaredNorm();
                const double gamma = a.col(i).dot(a.col(j));
                if (gamma == 0.0 || alpha <= negligible || beta <= negligible) continue;
                if (std::fabs(gamma) <= kEps * std::sqrt(alpha) * std::sqrt(beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                ai = a.col(i);
                a.col(i) = c * ai - s * a.col(j);
                a.col(j) = s * ai + c * a.col(j);
                vi = v.col(i);
                v.col(i) = c * vi - s * v.col(j);
                v.col(j) = s * vi + c * v.col(j);
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) norms[static_cast<std::size_t>(i)] = a.col(i).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
        return norms[static_cast<std::size_t>(x)] > norms[static_cast<std::size_t>(y)];
    });

    Svd out;
    out.sigma.resize(n);
    out.u.resize(m, n);
    out.v.resize(n, n);
    const double floor = norms.empty() ? 0.0 : norms[static_cast<std::size_t>(order[0])] * kEps * static_cast<double>(m);
    std::vector<bool> unreliable(static_cast<std::size_t>(n), false);
    for (Eigen::Index c = 0; c < n; ++c) {
        const Eigen::Index src = order[static_cast<std::size_t>(c)];
        const double sigma = norms[static_cast<std::size_t>(src)];
        out.sigma(c) = sigma;
        out.v.col(c) = v.col(src);
        if (sigma == 0.0 || sigma <= floor) {
            unreliable[static_cast<std::size_t>(c)] = true;
            out.u.col(c).setZero();
        } else {
            out.u.col(c) = a.col(src) / sigma;
        }
    }
    orthonormalize(out.u, unreliable);
    return out;
}

double radians_to_degrees(double rad) { return rad * (180.0 / std::numbers::pi); }

std::vector<double> principal_angles_rad(const Matrix& u_a, const Matrix& u_b, std::size_t k) {
    if (k == 0) fail(SpectralError::Kind::InvalidK, "subspace dimension must be at least 1");
    if (u_a.rows() != u_b.rows()) {
        fail(SpectralError::Kind::ShapeMismatch,
             fmt::format("bases live in different spaces ({} vs {} rows)", u_a.rows(), u_b.rows()));
    }
    const auto kk = static_cast<Eigen::Index>(k);
    if (u_a.cols() < kk || u_b.cols() < kk) {
        fail(SpectralError::Kind::InvalidK,
             fmt::format("k = {} exceeds the basis widths ({}, {})", k, u_a.cols(), u_b.cols()));
    }
    const Matrix a = u_a.leftCols(kk);
    const Matrix b = u_b.leftCols(kk);
    check_finite(a);
    check_finite(b);
    const Matrix eye = Matrix::Identity(kk, kk);
    if ((a.transpose() * a - eye).cwiseAbs().maxCoeff() > 1e-10 ||
        (b.transpose() * b - eye).cwiseAbs().maxCoeff() > 1e-10) {
        fail(SpectralError::Kind::NotOrthonormal, "basis columns are not orthonormal to 1e-10");
    }
    // equal bases, or both spanning the whole space
    if (a == b || kk == a.rows()) return std::vector<double>(k, 0.0);

    const Matrix cross = a.transpose() * b;
    std::vector<double> cosines = singular_values(cross);
    const Matrix residual = b - a * cross;
    std::vector<double> sines = singular_values(residual);
    sines.resize(k, 0.0);
    std::sort(sines.begin(), sines.end());

    std::vector<double> angles(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double c = std::clamp(cosines[i], 0.0, 1.0);
        const double s = std::clamp(sines[i], 0.0, 1.0);
        angles[i] = std::clamp(std::atan2(s, c), 0.0, std::numbers::pi / 2);
    }
    std::sort(angles.begin(), angles.end(), std::greater<>());
    return angles;
}

}  // namespace

Matrix as_matrix(const Tensor& t) {
    if (t.shape.size() < 2) {
        fail(SpectralError::Kind::InvalidRank, fmt::format("expected a tensor of rank >= 2, got shape {}", shape_string(t.shape)));
    }
    const auto rows = static_cast<Eigen::Index>(t.shape[0]);
    const auto cols = static_cast<Eigen::Index>(t.values.size()) / rows;
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(t.values.data(), rows, cols);
}

Svd svd_jacobi(const Matrix& w) {
    if (w.rows() == 0 || w.cols() == 0) fail(SpectralError::Kind::InvalidRank, "empty matrix");
    check_finite(w);
    if (w.rows() < w.cols()) {
        Svd t = svd_jacobi(w.transpose());
        std::swap(t.u, t.v);
        return t;
    }
    if (w.rows() == w.cols()) return jacobi_tall(w);

    const Eigen::Index n = w.cols();
    Eigen::HouseholderQR<Matrix> qr(w);
    const Matrix r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    Svd inner = jacobi_tall(r);
    const Matrix q = qr.householderQ() * Matrix::Identity(w.rows(), n);
    inner.u = q * inner.u;
    return inner;
}

std::vector<double> singular_values(const Matrix& w) {
    const Svd s = svd_jacobi(w);
    return {s.sigma.data(), s.sigma.data() + s.sigma.size()};
}

std::vector<double> principal_angles(const Matrix& u_a, const Matrix& u_b, std::size_t k) {
    std::vector<double> angles = principal_angles_rad(u_a, u_b, k);
    for (auto& a : angles) a = std::clamp(radians_to_degrees(a), 0.0, 90.0);
    return angles;
}

double max_principal_angle_rad(const Matrix& u_a, const Matrix& u_b, std::size_t k) {
    return principal_angles_rad(u_a, u_b, k).front();
}

double nss(const std::vector<double>& sigma_base, const std::vector<double>& sigma_fused) {
    const std::size_t n = std::max(sigma_base.size(), sigma_fused.size());
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double b = i < sigma_base.size() ? sigma_base[i] : 0.0;
        const double f = i < sigma_fused.size() ? sigma_fused[i] : 0.0;
        diff += (f - b) * (f - b);
        ref += b * b;
    }
    if (ref == 0.0) fail(SpectralError::Kind::ZeroMatrix, "base spectrum is zero");
    return std::sqrt(diff) / std::sqrt(ref);
}

double nss(const Matrix& w_base, const Matrix& w_fused) { return nss(singular_values(w_base), singular_values(w_fused)); }

std::string_view wedin_status_name(WedinStatus status) noexcept {
    switch (status) {
        case WedinStatus::Holds: return "holds";
        case WedinStatus::Violated: return "violated";
        case WedinStatus::NotApplicable: return "not-applicable";
    }
    return "?";
}

WedinResult wedin_check(const Matrix& w_base, const Matrix& w_fused, std::size_t k) {
    if (w_base.rows() != w_fused.rows() || w_base.cols() != w_fused.cols()) {
        fail(SpectralError::Kind::ShapeMismatch, fmt::format("matrices differ in shape ({}x{} vs {}x{})", w_base.rows(),
                                                             w_base.cols(), w_fused.rows(), w_fused.cols()));
    }
    return wedin_check(w_base, w_fused, svd_jacobi(w_base), svd_jacobi(w_fused), k);
}

WedinResult wedin_check(const Matrix& w_base, const Matrix& w_fused, const Svd& base, const Svd& fused, std::size_t k) {
    if (w_base.rows() != w_fused.rows() || w_base.cols() != w_fused.cols()) {
        fail(SpectralError::Kind::ShapeMismatch, fmt::format("matrices differ in shape ({}x{} vs {}x{})", w_base.rows(),
                                                             w_base.cols(), w_fused.rows(), w_fused.cols()));
    }
    const auto r = static_cast<std::size_t>(std::min(w_base.rows(), w_base.cols()));
    if (k == 0 || k > r) fail(SpectralError::Kind::InvalidK, fmt::format("k = {} outside [1, {}]", k, r));

    WedinResult out;
    out.k = k;
    const auto kk = static_cast<Eigen::Index>(k);
    const double next = k < r ? base.sigma(kk) : 0.0;
    out.gap = base.sigma(kk - 1) - next;
    const bool applicable = base.sigma(0) > 0.0 && out.gap > 1e-9 * base.sigma(0);

    const Matrix e = w_fused - w_base;
    if (e.isZero(0.0)) {
        out.status = applicable ? WedinStatus::Holds : WedinStatus::NotApplicable;
        return out;
    }
    out.perturbation_norm = singular_values(e).front();
    out.lhs = std::sin(max_principal_angle_rad(base.u, fused.u, k));
    if (!applicable) {
        out.status = WedinStatus::NotApplicable;
        return out;
    }
    out.rhs = out.perturbation_norm / out.gap;
    out.status = out.lhs <= out.rhs * (1.0 + 1e-9) ? WedinStatus::Holds : WedinStatus::Violated;
    return out;
}

std::size_t default_subspace_rank(const Matrix& w) {
    return static_cast<std::size_t>(std::min<Eigen::Index>(16, std::min(w.rows(), w.cols())));
}

}  // namespace scf
