#include "scf/fixture.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "scf/rng.hpp"

namespace scf {

namespace {

constexpr std::uint64_t kSlots = 32;

double irwin_hall(const CounterRng& rng, std::uint64_t element, std::uint64_t first_slot) {
    double sum = 0.0;
    for (std::uint64_t i = 0; i < 12; ++i) sum += rng.uniform(element * kSlots + first_slot + i);
    return sum - 6.0;
}

void add_pair(TensorMap& base, TensorMap& secondary, const std::string& name, const Shape& shape, double stddev,
              const FixtureSpec& spec) {
    const std::size_t n = element_count(shape);
    const auto base_rng = CounterRng::for_tensor(spec.seed, name, 0);
    std::vector<double> values(n);
    for (std::size_t j = 0; j < n; ++j) values[j] = stddev * irwin_hall(base_rng, j, 0);
    TensorEntry b = TensorEntry::encode(shape, spec.dtype, values);

    if (spec.scale == 0.0) {
        secondary.insert(name, b);
        base.insert(name, std::move(b));
        return;
    }
    const auto rng = CounterRng::for_tensor(spec.seed, name, 1);
    const std::vector<double> stored = b.values();
    for (std::size_t j = 0; j < n; ++j) {
        double delta = spec.drift * stored[j] + spec.noise * stddev * irwin_hall(rng, j, 0);
        if (rng.uniform(j * kSlots + 12) < spec.sparse_density) {
            delta += spec.tail * stddev * irwin_hall(rng, j, 13) / (rng.uniform(j * kSlots + 25) + 0.05);
        }
        values[j] = stored[j] + spec.scale * delta;
    }
    secondary.insert(name, TensorEntry::encode(shape, spec.dtype, values));
    base.insert(name, std::move(b));
}

}  // namespace

void FixtureSpec::validate() const {
    if (layers < 1) throw std::invalid_argument("fixture needs at least one layer");
    if (width < 1) throw std::invalid_argument("fixture width must be positive");
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw std::invalid_argument("perturbation scale must be finite and >= 0");
    if (!(sparse_density >= 0.0 && sparse_density <= 1.0)) throw std::invalid_argument("sparse density must lie in [0, 1]");
    if (!std::isfinite(drift) || !std::isfinite(noise) || !std::isfinite(tail)) {
        throw std::invalid_argument("fixture perturbation weights must be finite");
    }
}

std::pair<TensorMap, TensorMap> generate_fixture(const FixtureSpec& spec) {
    spec.validate();
    TensorMap base, secondary;
    const auto w = static_cast<std::int64_t>(spec.width);
    const double weight_std = 1.0 / std::sqrt(static_cast<double>(spec.width));
    const double bias_std = 0.1 * weight_std;
    for (int i = 0; i < spec.layers; ++i) {
        add_pair(base, secondary, fmt::format("layers.{}.weight", i), {w, w}, weight_std, spec);
        add_pair(base, secondary, fmt::format("layers.{}.bias", i), {w}, bias_std, spec);
    }
    add_pair(base, secondary, "head.weight", {w, w}, weight_std, spec);
    base.metadata()["fixture"] = "base";
    secondary.metadata()["fixture"] = "secondary";
    return {std::move(base), std::move(secondary)};
}

}  // namespace scf
