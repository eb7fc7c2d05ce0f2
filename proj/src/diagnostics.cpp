#include "scf/diagnostics.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <tuple>

#include <fmt/format.h>

#include "scf/parallel.hpp"

namespace scf {

namespace {

[[noreturn]] void fail(SpectralError::Kind kind, const std::string& message) { throw SpectralError(kind, message); }

void require_same_shape(const Shape& a, const Shape& b, std::string_view what) {
    if (a != b) {
        fail(SpectralError::Kind::ShapeMismatch, fmt::format("{}: shapes {} and {} differ", what, shape_string(a), shape_string(b)));
    }
}

struct Neumaier {
    double sum = 0.0;
    double carry = 0.0;

    void add(double x) noexcept {
        const double t = sum + x;
        carry += std::fabs(sum) >= std::fabs(x) ? (sum - t) + x : (x - t) + sum;
        sum = t;
    }
    double value() const noexcept { return sum + carry; }
};

std::vector<double> slice_entropies(const Tensor& logits, AxisPolicy axis) {
    const Tensor r = stable_softmax(logits, axis, 0.0);
    const SliceLayout layout = slice_layout(logits.shape, axis);
    std::vector<double> out(layout.count);
    for (std::size_t s = 0; s < layout.count; ++s) {
        Neumaier h;
        for (std::size_t i = s * layout.length; i < (s + 1) * layout.length; ++i) {
            const double p = r.values[i];
            if (p > 0.0) h.add(-p * std::log(p));
        }
        out[s] = h.value();
    }
    return out;
}

double mean(const std::vector<double>& v) {
    double total = 0.0;
    for (double x : v) total += x;
    return v.empty() ? 0.0 : total / static_cast<double>(v.size());
}

std::vector<double> spectrum(const Svd& s) { return {s.sigma.data(), s.sigma.data() + s.sigma.size()}; }

std::optional<double> optional_nss(const std::vector<double>& ref, const std::vector<double>& other) {
    if (std::all_of(ref.begin(), ref.end(), [](double x) { return x == 0.0; })) return std::nullopt;
    return nss(ref, other);
}

double max_angle_deg(const Svd& a, const Svd& b, std::size_t k) { return principal_angles(a.u, b.u, k).front(); }

}  // namespace

ProvenanceHistogram& ProvenanceHistogram::operator+=(const ProvenanceHistogram& other) noexcept {
    from_base += other.from_base;
    from_secondary += other.from_secondary;
    from_both += other.from_both;
    from_neither += other.from_neither;
    total += other.total;
    return *this;
}

ProvenanceHistogram provenance(const TensorEntry& base, const TensorEntry& secondary, const TensorEntry& fused) {
    require_same_shape(base.shape(), secondary.shape(), "provenance");
    require_same_shape(base.shape(), fused.shape(), "provenance");
    ProvenanceHistogram h;
    h.total = fused.size();
    for (std::size_t j = 0; j < h.total; ++j) {
        const auto f = std::bit_cast<std::uint64_t>(fused.value(j));
        const bool is_base = f == std::bit_cast<std::uint64_t>(base.value(j));
        const bool is_secondary = f == std::bit_cast<std::uint64_t>(secondary.value(j));
        if (is_base && is_secondary) ++h.from_both;
        else if (is_base) ++h.from_base;
        else if (is_secondary) ++h.from_secondary;
        else ++h.from_neither;
    }
    return h;
}

double mean_slice_entropy(const Tensor& logits, AxisPolicy axis) { return mean(slice_entropies(logits, axis)); }

EntropyProbe entropy_probe(const Tensor& base, const Tensor& fused, AxisPolicy axis) {
    require_same_shape(base.shape, fused.shape, "entropy probe");
    EntropyProbe p;
    p.slices = slice_layout(base.shape, axis).count;
    p.h_base = mean_slice_entropy(base, axis);
    p.h_fused = mean_slice_entropy(fused, axis);
    p.entropy_drop = p.h_base - p.h_fused;
    double ss = 0.0;
    for (std::size_t j = 0; j < base.size(); ++j) {
        const double d = fused.values[j] - base.values[j];
        ss += d * d;
    }
    p.masked_delta_l2 = std::sqrt(ss);
    if (p.masked_delta_l2 > 0.0) p.implied_lipschitz = p.entropy_drop / p.masked_delta_l2;
    return p;
}

StabilityProbe stability_probe(const Tensor& base, const Tensor& secondary, const Tensor& fused, AxisPolicy axis,
                               double epsilon) {
    require_same_shape(base.shape, secondary.shape, "stability probe");
    require_same_shape(base.shape, fused.shape, "stability probe");
    const Tensor q = stable_softmax(base, axis, epsilon);
    const Tensor p = stable_softmax(secondary, axis, epsilon);
    const Tensor qf = stable_softmax(fused, axis, epsilon);
    const SliceLayout layout = slice_layout(base.shape, axis);

    StabilityProbe out;
    out.slices = layout.count;
    double to_fused = 0.0, to_secondary = 0.0;
    for (std::size_t s = 0; s < layout.count; ++s) {
        const std::size_t off = s * layout.length;
        const auto qs = std::span(q.values).subspan(off, layout.length);
        const double rf = reverse_kl(qs, std::span(qf.values).subspan(off, layout.length));
        const double rs = reverse_kl(qs, std::span(p.values).subspan(off, layout.length));
        to_fused += rf;
        to_secondary += rs;
        if (rf > rs) ++out.violations;
    }
    if (layout.count > 0) {
        const auto n = static_cast<double>(layout.count);
        out.rkl_base_to_fused = to_fused / n;
        out.rkl_base_to_secondary = to_secondary / n;
        out.violation_rate = static_cast<double>(out.violations) / n;
    }
    return out;
}

SpectralReport spectral_report(std::string name, const Matrix& base, const Matrix& secondary, const Matrix& fused,
                               std::size_t k) {
    if (base.rows() != secondary.rows() || base.cols() != secondary.cols() || base.rows() != fused.rows() ||
        base.cols() != fused.cols()) {
        fail(SpectralError::Kind::ShapeMismatch, fmt::format("{}: base, secondary and fused differ in shape", name));
    }
    const Svd sb = svd_jacobi(base);
    const Svd ss = svd_jacobi(secondary);
    const Svd sf = svd_jacobi(fused);

    SpectralReport r;
    r.tensor_name = std::move(name);
    r.rank_k = k;
    r.sigma_base = spectrum(sb);
    r.sigma_secondary = spectrum(ss);
    r.sigma_fused = spectrum(sf);
    r.nss_vs_base = optional_nss(r.sigma_base, r.sigma_fused);
    r.nss_vs_secondary = optional_nss(r.sigma_secondary, r.sigma_fused);
    r.max_angle_vs_base_deg = max_angle_deg(sb, sf, k);
    r.max_angle_vs_secondary_deg = max_angle_deg(ss, sf, k);
    r.max_angle_parents_deg = max_angle_deg(sb, ss, k);
    r.wedin = wedin_check(base, fused, sb, sf, k);
    return r;
}

std::optional<long long> layer_index(std::string_view name) {
    const auto first = std::find_if(name.begin(), name.end(), [](unsigned char c) { return std::isdigit(c); });
    if (first == name.end()) return std::nullopt;
    long long value = 0;
    for (auto it = first; it != name.end() && std::isdigit(static_cast<unsigned char>(*it)); ++it) {
        if (value > (1LL << 58)) break;
        value = value * 10 + (*it - '0');
    }
    return value;
}

bool name_matches(std::string_view pattern, std::string_view name) {
    return fnmatch(std::string(pattern).c_str(), std::string(name).c_str(), 0) == 0;
}

std::vector<SpectralReport> layer_sweep(const TensorMap& base, const TensorMap& secondary, const TensorMap& fused,
                                        std::string_view selector, std::size_t k, unsigned threads) {
    std::vector<std::string> selected;
    for (const auto& [name, entry] : base) {
        if (!name_matches(selector, name) || entry.shape().size() < 2) continue;
        if (!secondary.contains(name) || !fused.contains(name)) continue;
        require_same_shape(entry.shape(), secondary.at(name).shape(), name);
        require_same_shape(entry.shape(), fused.at(name).shape(), name);
        selected.push_back(name);
    }
    if (selected.empty()) {
        fail(SpectralError::Kind::EmptySelection, fmt::format("selector '{}' matches no matrix present in all three checkpoints", selector));
    }
    std::stable_sort(selected.begin(), selected.end(), [](const std::string& a, const std::string& b) {
        const auto ia = layer_index(a), ib = layer_index(b);
        return std::make_tuple(!ia.has_value(), ia.value_or(0), std::string_view(a)) <
               std::make_tuple(!ib.has_value(), ib.value_or(0), std::string_view(b));
    });

    std::vector<SpectralReport> out(selected.size());
    parallel_for(selected.size(), threads, [&](std::size_t i) {
        const std::string& name = selected[i];
        const Matrix b = as_matrix(base.at(name).working());
        const Matrix s = as_matrix(secondary.at(name).working());
        const Matrix f = as_matrix(fused.at(name).working());
        const std::size_t limit = static_cast<std::size_t>(std::min(b.rows(), b.cols()));
        const std::size_t kk = k == 0 ? default_subspace_rank(b) : std::min(k, limit);
        out[i] = spectral_report(name, b, s, f, kk);
    });
    return out;
}

}  // namespace scf
