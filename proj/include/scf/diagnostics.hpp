#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scf/fusion.hpp"
#include "scf/spectral.hpp"
#include "scf/tensor.hpp"

namespace scf {

// Per-element source of a fused value, decided on the f64 bit patterns of the
// stored values.
struct ProvenanceHistogram {
    std::size_t from_base = 0;
    std::size_t from_secondary = 0;
    std::size_t from_both = 0;  // base and secondary agree and the fused value equals them
    std::size_t from_neither = 0;
    std::size_t total = 0;

    ProvenanceHistogram& operator+=(const ProvenanceHistogram& other) noexcept;
};

ProvenanceHistogram provenance(const TensorEntry& base, const TensorEntry& secondary, const TensorEntry& fused);

struct EntropyProbe {
    std::size_t slices = 0;
    double h_base = 0;   // mean Shannon entropy of softmax(base) slices
    double h_fused = 0;  // same for the fused tensor
    double entropy_drop = 0;
    double masked_delta_l2 = 0;  // ||fused - base||_2
    std::optional<double> implied_lipschitz;  // entropy_drop / masked_delta_l2
};

/// Mean entropy of unsmoothed softmax slices.
double mean_slice_entropy(const Tensor& logits, AxisPolicy axis);

EntropyProbe entropy_probe(const Tensor& base, const Tensor& fused, AxisPolicy axis);

struct StabilityProbe {
    std::size_t slices = 0;
    double rkl_base_to_fused = 0;      // mean over slices of RKL(q || q_f)
    double rkl_base_to_secondary = 0;  // mean over slices of RKL(q || p)
    std::size_t violations = 0;        // slices with RKL(q || q_f) > RKL(q || p)
    double violation_rate = 0;
};

/// Slices are smoothed with `epsilon` exactly as the fusion importance is.
StabilityProbe stability_probe(const Tensor& base, const Tensor& secondary, const Tensor& fused, AxisPolicy axis,
                               double epsilon = FusionConfig{}.epsilon);

struct SpectralReport {
    std::string tensor_name;
    std::size_t rank_k = 0;
    std::vector<double> sigma_base;
    std::vector<double> sigma_secondary;
    std::vector<double> sigma_fused;
    std::optional<double> nss_vs_base;       // empty when the reference spectrum is zero
    std::optional<double> nss_vs_secondary;
    double max_angle_vs_base_deg = 0;
    double max_angle_vs_secondary_deg = 0;
    double max_angle_parents_deg = 0;  // base vs secondary, a reference level for the other two
    WedinResult wedin;                 // base -> fused
};

SpectralReport spectral_report(std::string name, const Matrix& base, const Matrix& secondary, const Matrix& fused,
                               std::size_t k);

/// Layer number used for ordering: the first run of digits in the name.
std::optional<long long> layer_index(std::string_view name);

/// shell-style wildcard match (*, ?, [...]).
bool name_matches(std::string_view pattern, std::string_view name);

/// One report per tensor of rank >= 2 whose name matches `selector` and that
/// exists in all three maps, ordered by layer index then name. k is clamped to
/// each matrix's smaller dimension; k = 0 picks default_subspace_rank.
std::vector<SpectralReport> layer_sweep(const TensorMap& base, const TensorMap& secondary, const TensorMap& fused,
                                        std::string_view selector, std::size_t k = 0, unsigned threads = 1);

}  // namespace scf
