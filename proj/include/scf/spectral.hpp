#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "scf/tensor.hpp"

namespace scf {

using Matrix = Eigen::MatrixXd;

class SpectralError : public std::runtime_error {
public:
    enum class Kind { NonFinite, InvalidRank, NotOrthonormal, ZeroMatrix, ShapeMismatch, InvalidK, EmptySelection };

    SpectralError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Row-major tensor viewed as a [d0, d1 * ... * dn] matrix. Rank-1 tensors are
/// rejected.
Matrix as_matrix(const Tensor& t);

/// Thin SVD, W = U diag(sigma) V^T with sigma descending. U is m x r and V is
/// n x r for r = min(m, n); both have orthonormal columns even when W is rank
/// deficient (null directions are completed arbitrarily).
struct Svd {
    Eigen::VectorXd sigma;
    Matrix u;
    Matrix v;
};

/// One-sided (Hestenes) Jacobi. Tall inputs are first reduced by Householder QR
/// and wide inputs are handled through the transpose.
Svd svd_jacobi(const Matrix& w);

std::vector<double> singular_values(const Matrix& w);

/// Principal angles in degrees, descending, between span(u_a[:, :k]) and
/// span(u_b[:, :k]). Cosines come from sigma(U_a^T U_b) and sines from
/// sigma((I - U_a U_a^T) U_b); each angle is atan2(sine, cosine) so both ends
/// of [0, 90] keep full precision.
std::vector<double> principal_angles(const Matrix& u_a, const Matrix& u_b, std::size_t k);

/// Largest principal angle in radians (0 for k = 0 is not allowed; k >= 1).
double max_principal_angle_rad(const Matrix& u_a, const Matrix& u_b, std::size_t k);

/// ||s_f - s_b||_2 / ||s_b||_2 with the shorter spectrum zero-padded.
double nss(const std::vector<double>& sigma_base, const std::vector<double>& sigma_fused);
double nss(const Matrix& w_base, const Matrix& w_fused);

enum class WedinStatus { Holds, Violated, NotApplicable };
std::string_view wedin_status_name(WedinStatus status) noexcept;

struct WedinResult {
    std::size_t k = 0;
    double lhs = 0;                // sin of the largest principal angle
    double rhs = 0;                // ||E||_2 / gap (0 when not applicable)
    double gap = 0;                // sigma_k - sigma_{k+1} of the base
    double perturbation_norm = 0;  // ||E||_2
    WedinStatus status = WedinStatus::NotApplicable;

    bool holds() const noexcept { return status == WedinStatus::Holds; }
};

/// Compares the rank-k left singular subspaces of w_base and w_fused against
/// ||w_fused - w_base||_2 / (sigma_k - sigma_{k+1}). sigma_{k+1} is 0 when
/// k = min(m, n). A gap at or below 1e-9 * sigma_1 gives NotApplicable.
WedinResult wedin_check(const Matrix& w_base, const Matrix& w_fused, std::size_t k);
/// Same, reusing factorizations of w_base and w_fused.
WedinResult wedin_check(const Matrix& w_base, const Matrix& w_fused, const Svd& base, const Svd& fused, std::size_t k);

/// min(16, min(m, n)).
std::size_t default_subspace_rank(const Matrix& w);

}  // namespace scf
