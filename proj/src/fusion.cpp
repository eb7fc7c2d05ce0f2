#include "scf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "scf/parallel.hpp"

namespace scf {

namespace {

[[noreturn]] void fail(FusionError::Kind kind, const std::string& message) { throw FusionError(kind, message); }

// Neumaier-compensated running sum.
struct CompensatedSum {
    double sum = 0.0;
    double carry = 0.0;

    void add(double x) noexcept {
        const double t = sum + x;
        if (std::fabs(sum) >= std::fabs(x)) {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    double value() const noexcept { return sum + carry; }
};

void require_finite(std::span<const double> values, std::string_view what) {
    for (double v : values) {
        if (!std::isfinite(v)) fail(FusionError::Kind::NonFinite, fmt::format("{} contains a non-finite value", what));
    }
}

}  // namespace

void FusionConfig::validate() const {
    using K = FusionError::Kind;
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail(K::InvalidConfig, "epsilon must be positive and finite");
    if (!(q_low > 0.0 && q_low < q_center && q_center < q_high && q_high < 1.0)) {
        fail(K::InvalidConfig, fmt::format("quantiles must satisfy 0 < q_low < q_center < q_high < 1 (got {}, {}, {})",
                                           q_low, q_center, q_high));
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail(K::InvalidConfig, "alpha must be non-negative and finite");
    if (quantile_budget == 0) fail(K::InvalidConfig, "quantile budget must be positive");
}

std::string_view axis_policy_name(AxisPolicy policy) noexcept {
    return policy == AxisPolicy::LastAxis ? "last-axis" : "flatten";
}

std::string_view degenerate_policy_name(DegenerateIqrPolicy policy) noexcept {
    return policy == DegenerateIqrPolicy::FollowFormula ? "follow-formula" : "force-base";
}

std::string_view unmatched_policy_name(UnmatchedPolicy policy) noexcept {
    switch (policy) {
        case UnmatchedPolicy::Error: return "error";
        case UnmatchedPolicy::CopySecondary: return "copy-secondary";
        case UnmatchedPolicy::Skip: return "skip";
    }
    return "?";
}

SliceLayout slice_layout(const Shape& shape, AxisPolicy policy) {
    const std::size_t n = element_count(shape);
    if (policy == AxisPolicy::Flatten || shape.size() <= 1) return {1, n};
    const auto length = static_cast<std::size_t>(shape.back());
    return {n / length, length};
}

Tensor stable_softmax(const Tensor& theta, AxisPolicy axis, double epsilon) {
    validate_shape(theta.shape);
    require_finite(theta.values, "softmax input");
    const SliceLayout layout = slice_layout(theta.shape, axis);
    Tensor out{theta.shape, std::vector<double>(theta.size())};
    for (std::size_t s = 0; s < layout.count; ++s) {
        const double* x = theta.values.data() + s * layout.length;
        double* y = out.values.data() + s * layout.length;
        const double max = *std::max_element(x, x + layout.length);
        CompensatedSum total;
        for (std::size_t i = 0; i < layout.length; ++i) {
            y[i] = std::exp(x[i] - max);
            total.add(y[i]);
        }
        const double z = total.value();
        for (std::size_t i = 0; i < layout.length; ++i) y[i] = y[i] / z + epsilon;
    }
    return out;
}

double reverse_kl(std::span<const double> q, std::span<const double> p) {
    if (q.size() != p.size()) {
        fail(FusionError::Kind::ShapeMismatch, fmt::format("reverse_kl over slices of length {} and {}", q.size(), p.size()));
    }
    CompensatedSum total;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (!(q[i] > 0.0) || !(p[i] > 0.0) || !std::isfinite(q[i]) || !std::isfinite(p[i])) {
            fail(FusionError::Kind::NonFinite, "reverse_kl requires strictly positive finite entries");
        }
        total.add(q[i] * std::log(q[i] / p[i]));
    }
    return total.value();
}

ImportanceField importance(const Tensor& theta_base, const Tensor& theta_secondary, const FusionConfig& cfg) {
    if (theta_base.shape != theta_secondary.shape) {
        fail(FusionError::Kind::ShapeMismatch, fmt::format("importance over shapes {} and {}", shape_string(theta_base.shape),
                                                           shape_string(theta_secondary.shape)));
    }
    const Tensor q = stable_softmax(theta_base, cfg.softmax_axis, cfg.epsilon);
    const Tensor p = stable_softmax(theta_secondary, cfg.softmax_axis, cfg.epsilon);
    const SliceLayout layout = slice_layout(theta_base.shape, cfg.softmax_axis);

    ImportanceField field{Tensor{theta_base.shape, std::vector<double>(theta_base.size())},
                          std::vector<double>(layout.count)};
    for (std::size_t s = 0; s < layout.count; ++s) {
        const std::size_t offset = s * layout.length;
        const double rkl = reverse_kl(std::span(q.values).subspan(offset, layout.length),
                                      std::span(p.values).subspan(offset, layout.length));
        field.per_slice_rkl[s] = rkl;
        for (std::size_t i = offset; i < offset + layout.length; ++i) {
            field.values.values[i] = std::fabs(theta_secondary.values[i] - theta_base.values[i]) * rkl;
        }
    }
    return field;
}

double sorted_quantile(std::span<const double> sorted, double p) {
    if (sorted.empty()) fail(FusionError::Kind::EmptyInput, "quantile of an empty array");
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

Threshold iqr_threshold(std::span<const double> values, const FusionConfig& cfg) {
    if (values.empty()) fail(FusionError::Kind::EmptyInput, "importance field is empty");
    Threshold t;
    std::vector<double> sorted;
    if (values.size() > cfg.quantile_budget) {
        const std::size_t stride = (values.size() + cfg.quantile_budget - 1) / cfg.quantile_budget;
        sorted.reserve(values.size() / stride + 1);
        for (std::size_t i = 0; i < values.size(); i += stride) sorted.push_back(values[i]);
        t.approximate = true;
    } else {
        sorted.assign(values.begin(), values.end());
    }
    std::sort(sorted.begin(), sorted.end());
    t.sample_count = sorted.size();
    t.q1 = sorted_quantile(sorted, cfg.q_low);
    t.q3 = sorted_quantile(sorted, cfg.q_high);
    t.median = sorted_quantile(sorted, cfg.q_center);
    t.tau = t.median + cfg.alpha * (t.q3 - t.q1);
    return t;
}

Threshold iqr_threshold(const ImportanceField& field, const FusionConfig& cfg) {
    return iqr_threshold(field.values.values, cfg);
}

std::size_t FusionMask::selected() const noexcept {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

FusionMask build_mask(const ImportanceField& field, double tau) {
    FusionMask mask{field.values.shape, std::vector<std::uint8_t>(field.values.size())};
    for (std::size_t j = 0; j < mask.bits.size(); ++j) mask.bits[j] = field.values.values[j] >= tau ? 1 : 0;
    return mask;
}

FusedTensor fuse_tensor(const std::string& name, const TensorEntry& base, const TensorEntry& secondary,
                        const FusionConfig& cfg) {
    cfg.validate();
    if (base.shape() != secondary.shape()) {
        fail(FusionError::Kind::ShapeMismatch, fmt::format("'{}': base {} vs secondary {}", name,
                                                           shape_string(base.shape()), shape_string(secondary.shape())));
    }
    const Tensor theta_b = base.working();
    const Tensor theta_s = secondary.working();
    require_finite(theta_b.values, fmt::format("base tensor '{}'", name));
    require_finite(theta_s.values, fmt::format("secondary tensor '{}'", name));

    const ImportanceField field = importance(theta_b, theta_s, cfg);
    const Threshold threshold = iqr_threshold(field, cfg);

    TensorFusionStats stats;
    stats.name = name;
    stats.q1 = threshold.q1;
    stats.q3 = threshold.q3;
    stats.median = threshold.median;
    stats.tau = threshold.tau;
    stats.total = theta_b.size();
    stats.approximate_quantiles = threshold.approximate;

    double delta_sq = 0.0;
    for (std::size_t j = 0; j < theta_b.size(); ++j) {
        const double d = theta_s.values[j] - theta_b.values[j];
        delta_sq += d * d;
    }
    stats.delta_l2 = std::sqrt(delta_sq);
    stats.degenerate_iqr = threshold.q3 == threshold.q1 && delta_sq > 0.0;

    FusionMask mask;
    if (stats.degenerate_iqr && cfg.degenerate_iqr == DegenerateIqrPolicy::ForceBase) {
        mask = FusionMask{theta_b.shape, std::vector<std::uint8_t>(theta_b.size(), 0)};
        stats.forced_base = true;
    } else {
        mask = build_mask(field, threshold.tau);
    }

    const DType out_dtype = base.dtype();
    const std::size_t width = byte_width(out_dtype);
    const bool same_dtype = secondary.dtype() == out_dtype;
    std::vector<std::byte> raw(base.raw().begin(), base.raw().end());
    const std::byte* sec_raw = secondary.raw().data();

    double masked_sq = 0.0;
    for (std::size_t j = 0; j < mask.bits.size(); ++j) {
        const double d = theta_s.values[j] - theta_b.values[j];
        if (!mask.bits[j]) continue;
        masked_sq += d * d;
        ++stats.selected;
        std::byte* dst = raw.data() + j * width;
        if (same_dtype) {
            std::memcpy(dst, sec_raw + j * width, width);
        } else {
            store_element(out_dtype, theta_s.values[j], dst);
            if (!representable(out_dtype, theta_s.values[j])) ++stats.lossy_reencodes;
        }
    }
    stats.masked_delta_l2 = std::sqrt(masked_sq);
    stats.sparsity = static_cast<double>(stats.selected) / static_cast<double>(stats.total);

    return FusedTensor{TensorEntry(base.shape(), out_dtype, std::move(raw)), std::move(stats)};
}

CheckpointFusion fuse_checkpoint(const TensorMap& base, const TensorMap& secondary, const FusionConfig& cfg,
                                 UnmatchedPolicy policy, unsigned threads) {
    cfg.validate();
    const AlignmentReport alignment = align(base, secondary);
    if (alignment.matched.empty()) fail(FusionError::Kind::EmptyIntersection, "checkpoints share no tensor names");
    if (!alignment.shape_mismatch.empty() && policy != UnmatchedPolicy::Skip) {
        const auto& m = alignment.shape_mismatch.front();
        fail(FusionError::Kind::ShapeMismatch, fmt::format("'{}': base {} vs secondary {}", m.name,
                                                           shape_string(m.base_shape), shape_string(m.secondary_shape)));
    }
    if (!alignment.secondary_only.empty() && policy == UnmatchedPolicy::Error) {
        fail(FusionError::Kind::UnmatchedTensor,
             fmt::format("'{}' exists only in the secondary checkpoint", alignment.secondary_only.front()));
    }

    std::vector<FusedTensor> fused(alignment.matched.size());
    parallel_for(alignment.matched.size(), threads, [&](std::size_t i) {
        const std::string& name = alignment.matched[i];
        fused[i] = fuse_tensor(name, base.at(name), secondary.at(name), cfg);
    });

    CheckpointFusion out;
    out.fused.metadata() = base.metadata();
    for (std::size_t i = 0; i < fused.size(); ++i) {
        out.fused.insert(alignment.matched[i], std::move(fused[i].tensor));
        out.report.push_back(std::move(fused[i].stats));
    }
    for (const auto& name : alignment.base_only) {
        out.fused.insert(name, base.at(name));
        out.copied_from_base.push_back(name);
    }
    for (const auto& m : alignment.shape_mismatch) {
        out.fused.insert(m.name, base.at(m.name));
        out.skipped.push_back(m.name);
    }
    for (const auto& name : alignment.secondary_only) {
        if (policy == UnmatchedPolicy::CopySecondary) {
            out.fused.insert(name, secondary.at(name));
            out.copied_from_secondary.push_back(name);
        } else {
            out.skipped.push_back(name);
        }
    }
    return out;
}

}  // namespace scf
