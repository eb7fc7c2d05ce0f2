#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "scf/checkpoint.hpp"
#include "scf/tensor.hpp"

namespace scf {

// How a tensor is cut into softmax slices.
//  LastAxis: one distribution per leading multi-index (rank-1 tensors form a
//            single slice).
//  Flatten:  the whole tensor is one distribution.
enum class AxisPolicy { LastAxis, Flatten };

// What to do when Q3 == Q1 although the tensors differ.
//  FollowFormula: tau = median, so everything at or above the median is taken.
//  ForceBase:     select nothing; the tensor stays at its base values.
enum class DegenerateIqrPolicy { FollowFormula, ForceBase };

struct FusionConfig {
    double epsilon = 1e-8;
    double q_low = 0.25;
    double q_high = 0.75;
    double q_center = 0.5;
    double alpha = 1.5;
    AxisPolicy softmax_axis = AxisPolicy::LastAxis;
    DegenerateIqrPolicy degenerate_iqr = DegenerateIqrPolicy::FollowFormula;
    /// Importance arrays longer than this are thresholded on a strided subsample.
    std::size_t quantile_budget = std::size_t{1} << 27;

    /// Throws FusionError(InvalidConfig) when the invariants do not hold.
    void validate() const;
};

class FusionError : public std::runtime_error {
public:
    enum class Kind { InvalidConfig, ShapeMismatch, NonFinite, EmptyInput, EmptyIntersection, UnmatchedTensor };

    FusionError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::string_view axis_policy_name(AxisPolicy policy) noexcept;
std::string_view degenerate_policy_name(DegenerateIqrPolicy policy) noexcept;

/// Number of softmax slices and their length for a shape under `policy`.
struct SliceLayout {
    std::size_t count = 0;
    std::size_t length = 0;
};
SliceLayout slice_layout(const Shape& shape, AxisPolicy policy);

/// Max-shifted softmax over each slice, then `epsilon` added to every entry
/// with no renormalization (slices sum to 1 + length * epsilon).
Tensor stable_softmax(const Tensor& theta, AxisPolicy axis, double epsilon);

/// Sum_i q_i ln(q_i / p_i), compensated summation. Entries must be positive.
double reverse_kl(std::span<const double> q, std::span<const double> p);

struct ImportanceField {
    Tensor values;                    // |theta_s - theta_b| * slice RKL
    std::vector<double> per_slice_rkl;  // one RKL(q || p) per softmax slice
};

/// q = softmax(base) + eps, p = softmax(secondary) + eps, per slice.
ImportanceField importance(const Tensor& theta_base, const Tensor& theta_secondary, const FusionConfig& cfg);

/// Linear-interpolation quantile of an ascending array: h = (n-1)p,
/// v[floor h] + (h - floor h)(v[floor h + 1] - v[floor h]).
double sorted_quantile(std::span<const double> sorted, double p);

struct Threshold {
    double q1 = 0;
    double q3 = 0;
    double median = 0;
    double tau = 0;
    bool approximate = false;  // computed on a strided subsample
    std::size_t sample_count = 0;
};

Threshold iqr_threshold(std::span<const double> values, const FusionConfig& cfg);
Threshold iqr_threshold(const ImportanceField& field, const FusionConfig& cfg);

struct FusionMask {
    Shape shape;
    std::vector<std::uint8_t> bits;

    std::size_t selected() const noexcept;
};

/// bits[j] = values[j] >= tau.
FusionMask build_mask(const ImportanceField& field, double tau);

struct TensorFusionStats {
    std::string name;
    double q1 = 0;
    double q3 = 0;
    double median = 0;
    double tau = 0;
    std::size_t selected = 0;
    std::size_t total = 0;
    double sparsity = 0;  // selected / total
    double delta_l2 = 0;
    double masked_delta_l2 = 0;
    bool approximate_quantiles = false;
    bool degenerate_iqr = false;
    bool forced_base = false;
    std::size_t lossy_reencodes = 0;  // secondary values that changed when stored in the base dtype
};

struct FusedTensor {
    TensorEntry tensor;
    TensorFusionStats stats;
};

/// One pass of sparse complementary fusion. The result holds, per element,
/// the stored base value where the mask is 0 and the secondary value where it
/// is 1, in the base dtype. When both parents share a dtype the selected bytes
/// are copied verbatim.
FusedTensor fuse_tensor(const std::string& name, const TensorEntry& base, const TensorEntry& secondary,
                        const FusionConfig& cfg);

enum class UnmatchedPolicy { Error, CopySecondary, Skip };

std::string_view unmatched_policy_name(UnmatchedPolicy policy) noexcept;

struct CheckpointFusion {
    TensorMap fused;
    std::vector<TensorFusionStats> report;  // matched tensors, name order
    std::vector<std::string> copied_from_base;
    std::vector<std::string> copied_from_secondary;
    std::vector<std::string> skipped;
};

/// Fuses every matched tensor with its own threshold. Base-only tensors are
/// copied. Secondary-only tensors follow `policy`; shape mismatches are an
/// error unless `policy` is Skip, in which case the base tensor is kept.
CheckpointFusion fuse_checkpoint(const TensorMap& base, const TensorMap& secondary, const FusionConfig& cfg,
                                 UnmatchedPolicy policy, unsigned threads = 1);

}  // namespace scf
