#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scf/rng.hpp"

namespace scf {

// Dense and sparsified comparison merges. All operate on flat f64 views of a
// single tensor; `DeltaSet` holds one task vector (parent - base) per parent,
// in parent order.

enum class BaselineMethod { TaskArithmetic, DareLinear, Ties, DareTies, Sce };

std::string_view method_name(BaselineMethod method) noexcept;
std::optional<BaselineMethod> parse_baseline_method(std::string_view name) noexcept;

struct BaselineConfig {
    BaselineMethod method = BaselineMethod::TaskArithmetic;
    double lambda = 1.0;
    double density = 0.5;    // (0, 1]: fraction kept by magnitude / variance trimming
    double drop_rate = 0.5;  // [0, 1): DARE drop probability
    std::uint64_t seed = 0;

    void validate() const;
};

class BaselineError : public std::runtime_error {
public:
    enum class Kind { InvalidConfig, ShapeMismatch };

    BaselineError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

using DeltaSet = std::vector<std::vector<double>>;

/// Number of entries kept when trimming n entries to `density`.
std::size_t kept_count(std::size_t n, double density);

/// base + lambda * sum_k delta_k. Coordinates whose update is exactly zero
/// keep the base value's bits.
std::vector<double> task_arithmetic(std::span<const double> base, const DeltaSet& deltas, double lambda);

/// Drop-and-rescale: each entry survives with probability 1 - drop_rate and is
/// then divided by 1 - drop_rate. Draws come from `rng` at the flat index.
std::vector<double> dare_prune(std::span<const double> delta, double drop_rate, const CounterRng& rng);
std::vector<double> dare_prune(std::span<const double> delta, double drop_rate, std::uint64_t seed,
                               std::string_view tensor_name, std::uint64_t parent = 0);

/// Keeps the kept_count(n, density) largest-magnitude entries (higher index
/// wins ties) and zeroes the rest.
std::vector<double> magnitude_trim(std::span<const double> delta, double density);

/// Trim, elect sign, disjoint mean:
///  1. magnitude_trim each delta;
///  2. elected sign = sign of the summed trimmed deltas; on a zero sum the side
///     with larger total magnitude wins, and an exact tie contributes nothing;
///  3. mean of the nonzero trimmed entries that agree with the elected sign;
///  4. base + lambda * merged.
std::vector<double> ties_merge(std::span<const double> base, const DeltaSet& deltas, double density, double lambda);

/// dare_prune each delta (stream = parent index), then ties_merge.
std::vector<double> dare_ties(std::span<const double> base, const DeltaSet& deltas, double drop_rate, double density,
                              double lambda, std::uint64_t seed, std::string_view tensor_name);

/// dare_prune each delta, then task_arithmetic.
std::vector<double> dare_linear(std::span<const double> base, const DeltaSet& deltas, double drop_rate, double lambda,
                                std::uint64_t seed, std::string_view tensor_name);

/// Select, calculate, erase:
///  1. keep the kept_count(n, density) coordinates with the largest
///     cross-parent variance (higher index wins ties), zero the rest;
///  2. w_k proportional to the sum of squares of the kept delta_k;
///  3. per coordinate, drop entries whose sign disagrees with sum_k w_k delta_k
///     (a zero weighted sum drops everything);
///  4. base + lambda * (sum of the surviving w_k delta_k).
/// A single delta falls back to base + lambda * magnitude_trim(delta, density).
std::vector<double> sce_merge(std::span<const double> base, const DeltaSet& deltas, double density,
                              double lambda = 1.0);

/// Dispatches on cfg.method.
std::vector<double> merge_baseline(const BaselineConfig& cfg, std::span<const double> base, const DeltaSet& deltas,
                                   std::string_view tensor_name);

}  // namespace scf
