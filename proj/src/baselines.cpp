#include "scf/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace scf {

namespace {

[[noreturn]] void fail(BaselineError::Kind kind, const std::string& message) { throw BaselineError(kind, message); }

void check_shapes(std::span<const double> base, const DeltaSet& deltas) {
    if (deltas.empty()) fail(BaselineError::Kind::InvalidConfig, "at least one task vector is required");
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        if (deltas[k].size() != base.size()) {
            fail(BaselineError::Kind::ShapeMismatch,
                 fmt::format("task vector {} has {} entries, base has {}", k, deltas[k].size(), base.size()));
        }
    }
}

void check_density(double density) {
    if (!(density > 0.0 && density <= 1.0)) fail(BaselineError::Kind::InvalidConfig, "density must lie in (0, 1]");
}

void check_drop_rate(double drop_rate) {
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) fail(BaselineError::Kind::InvalidConfig, "drop rate must lie in [0, 1)");
}

// base[j] + update[j], leaving base bits alone where the update is zero.
std::vector<double> apply_update(std::span<const double> base, const std::vector<double>& update) {
    std::vector<double> out(base.begin(), base.end());
    for (std::size_t j = 0; j < out.size(); ++j) {
        if (update[j] != 0.0) out[j] = base[j] + update[j];
    }
    return out;
}

// Indices of the `keep` largest scores; equal scores prefer the higher index.
std::vector<std::size_t> top_indices(const std::vector<double>& score, std::size_t keep) {
    std::vector<std::size_t> order(score.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) { return score[a] > score[b] || (score[a] == score[b] && a > b); };
    if (keep < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
        order.resize(keep);
    }
    return order;
}

int sign_of(double x) noexcept { return (x > 0.0) - (x < 0.0); }

}  // namespace

std::string_view method_name(BaselineMethod method) noexcept {
    switch (method) {
        case BaselineMethod::TaskArithmetic: return "task-arithmetic";
        case BaselineMethod::DareLinear: return "dare-linear";
        case BaselineMethod::Ties: return "ties";
        case BaselineMethod::DareTies: return "dare-ties";
        case BaselineMethod::Sce: return "sce";
    }
    return "?";
}

std::optional<BaselineMethod> parse_baseline_method(std::string_view name) noexcept {
    for (auto m : {BaselineMethod::TaskArithmetic, BaselineMethod::DareLinear, BaselineMethod::Ties,
                   BaselineMethod::DareTies, BaselineMethod::Sce}) {
        if (method_name(m) == name) return m;
    }
    return std::nullopt;
}

void BaselineConfig::validate() const {
    if (!std::isfinite(lambda)) fail(BaselineError::Kind::InvalidConfig, "lambda must be finite");
    check_density(density);
    check_drop_rate(drop_rate);
}

std::size_t kept_count(std::size_t n, double density) {
    const double x = density * static_cast<double>(n);
    const double nearest = std::round(x);
    // 0.3 * 10 must keep 3, not ceil(3.0000000000000004) = 4.
    const double k = std::fabs(x - nearest) <= 1e-9 * std::max(1.0, x) ? nearest : std::ceil(x);
    return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n);
}

std::vector<double> task_arithmetic(std::span<const double> base, const DeltaSet& deltas, double lambda) {
    check_shapes(base, deltas);
    std::vector<double> update(base.size(), 0.0);
    for (std::size_t j = 0; j < base.size(); ++j) {
        double sum = 0.0;
        for (const auto& d : deltas) sum += d[j];
        update[j] = lambda * sum;
    }
    return apply_update(base, update);
}

std::vector<double> dare_prune(std::span<const double> delta, double drop_rate, const CounterRng& rng) {
    check_drop_rate(drop_rate);
    const double keep = 1.0 - drop_rate;
    std::vector<double> out(delta.size(), 0.0);
    for (std::size_t j = 0; j < delta.size(); ++j) {
        if (rng.uniform(j) >= drop_rate) out[j] = delta[j] / keep;
    }
    return out;
}

std::vector<double> dare_prune(std::span<const double> delta, double drop_rate, std::uint64_t seed,
                               std::string_view tensor_name, std::uint64_t parent) {
    return dare_prune(delta, drop_rate, CounterRng::for_tensor(seed, tensor_name, parent));
}

std::vector<double> magnitude_trim(std::span<const double> delta, double density) {
    check_density(density);
    if (delta.empty()) return {};
    std::vector<double> magnitude(delta.size());
    for (std::size_t j = 0; j < delta.size(); ++j) magnitude[j] = std::fabs(delta[j]);
    std::vector<double> out(delta.size(), 0.0);
    for (std::size_t j : top_indices(magnitude, kept_count(delta.size(), density))) out[j] = delta[j];
    return out;
}

std::vector<double> ties_merge(std::span<const double> base, const DeltaSet& deltas, double density, double lambda) {
    check_shapes(base, deltas);
    DeltaSet trimmed;
    trimmed.reserve(deltas.size());
    for (const auto& d : deltas) trimmed.push_back(magnitude_trim(d, density));

    std::vector<double> update(base.size(), 0.0);
    for (std::size_t j = 0; j < base.size(); ++j) {
        double sum = 0.0, positive = 0.0, negative = 0.0;
        for (const auto& t : trimmed) {
            sum += t[j];
            if (t[j] > 0.0) positive += t[j];
            if (t[j] < 0.0) negative -= t[j];
        }
        int elected = sign_of(sum);
        if (elected == 0) elected = sign_of(positive - negative);
        if (elected == 0) continue;

        double agreeing = 0.0;
        std::size_t count = 0;
        for (const auto& t : trimmed) {
            if (sign_of(t[j]) == elected) {
                agreeing += t[j];
                ++count;
            }
        }
        if (count > 0) update[j] = lambda * (agreeing / static_cast<double>(count));
    }
    return apply_update(base, update);
}

std::vector<double> dare_ties(std::span<const double> base, const DeltaSet& deltas, double drop_rate, double density,
                              double lambda, std::uint64_t seed, std::string_view tensor_name) {
    check_shapes(base, deltas);
    DeltaSet pruned;
    for (std::size_t k = 0; k < deltas.size(); ++k) pruned.push_back(dare_prune(deltas[k], drop_rate, seed, tensor_name, k));
    return ties_merge(base, pruned, density, lambda);
}

std::vector<double> dare_linear(std::span<const double> base, const DeltaSet& deltas, double drop_rate, double lambda,
                                std::uint64_t seed, std::string_view tensor_name) {
    check_shapes(base, deltas);
    DeltaSet pruned;
    for (std::size_t k = 0; k < deltas.size(); ++k) pruned.push_back(dare_prune(deltas[k], drop_rate, seed, tensor_name, k));
    return task_arithmetic(base, pruned, lambda);
}

std::vector<double> sce_merge(std::span<const double> base, const DeltaSet& deltas, double density, double lambda) {
    check_shapes(base, deltas);
    check_density(density);
    if (deltas.size() == 1) {
        std::vector<double> update = magnitude_trim(deltas.front(), density);
        for (auto& u : update) u *= lambda;
        return apply_update(base, update);
    }

    const std::size_t n = base.size();
    const auto parents = static_cast<double>(deltas.size());
    std::vector<double> variance(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (const auto& d : deltas) mean += d[j];
        mean /= parents;
        double ss = 0.0;
        for (const auto& d : deltas) ss += (d[j] - mean) * (d[j] - mean);
        variance[j] = ss / parents;
    }
    std::vector<std::uint8_t> selected(n, 0);
    for (std::size_t j : top_indices(variance, kept_count(n, density))) selected[j] = 1;

    std::vector<double> weight(deltas.size(), 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        for (std::size_t j = 0; j < n; ++j) {
            if (selected[j]) weight[k] += deltas[k][j] * deltas[k][j];
        }
        total += weight[k];
    }
    if (total == 0.0) return std::vector<double>(base.begin(), base.end());
    for (auto& w : weight) w /= total;

    std::vector<double> update(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (!selected[j]) continue;
        double weighted = 0.0;
        for (std::size_t k = 0; k < deltas.size(); ++k) weighted += weight[k] * deltas[k][j];
        const int elected = sign_of(weighted);
        if (elected == 0) continue;
        double kept = 0.0;
        for (std::size_t k = 0; k < deltas.size(); ++k) {
            if (sign_of(deltas[k][j]) == elected) kept += weight[k] * deltas[k][j];
        }
        update[j] = lambda * kept;
    }
    return apply_update(base, update);
}

std::vector<double> merge_baseline(const BaselineConfig& cfg, std::span<const double> base, const DeltaSet& deltas,
                                   std::string_view tensor_name) {
    cfg.validate();
    switch (cfg.method) {
        case BaselineMethod::TaskArithmetic: return task_arithmetic(base, deltas, cfg.lambda);
        case BaselineMethod::DareLinear:
            return dare_linear(base, deltas, cfg.drop_rate, cfg.lambda, cfg.seed, tensor_name);
        case BaselineMethod::Ties: return ties_merge(base, deltas, cfg.density, cfg.lambda);
        case BaselineMethod::DareTies:
            return dare_ties(base, deltas, cfg.drop_rate, cfg.density, cfg.lambda, cfg.seed, tensor_name);
        case BaselineMethod::Sce: return sce_merge(base, deltas, cfg.density, cfg.lambda);
    }
    return {};
}

}  // namespace scf
