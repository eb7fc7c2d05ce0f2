#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cmath>
#include <random>

#include "scf/baselines.hpp"
#include "scf/diagnostics.hpp"
#include "scf/fixture.hpp"
#include "scf/fusion.hpp"

using namespace scf;

namespace {

TensorEntry entry(Shape shape, DType dtype, const std::vector<double>& values) {
    return TensorEntry::encode(std::move(shape), dtype, values);
}

std::vector<double> gaussian(std::size_t n, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

TensorMap task_arithmetic_map(const TensorMap& base, const TensorMap& secondary, double lambda) {
    TensorMap out;
    for (const auto& [name, b] : base) {
        const auto bv = b.values();
        const auto sv = secondary.at(name).values();
        std::vector<double> delta(bv.size());
        for (std::size_t j = 0; j < bv.size(); ++j) delta[j] = sv[j] - bv[j];
        out.insert(name, TensorEntry::encode(b.shape(), DType::F64, task_arithmetic(bv, {delta}, lambda)));
    }
    return out;
}

double mean_nss(const std::vector<SpectralReport>& reports) {
    double total = 0.0;
    for (const auto& r : reports) total += r.nss_vs_base.value();
    return total / static_cast<double>(reports.size());
}

}  // namespace

TEST_SUITE("provenance") {
    TEST_CASE("classification") {
        const auto b = entry({5}, DType::F64, {1, 2, 3, 4, 5});
        const auto s = entry({5}, DType::F64, {1, 7, 3, 8, 9});
        const auto f = entry({5}, DType::F64, {1, 7, 3, 4, 0.5});
        const ProvenanceHistogram h = provenance(b, s, f);
        CHECK_EQ(h.from_both, 2u);
        CHECK_EQ(h.from_secondary, 1u);
        CHECK_EQ(h.from_base, 1u);
        CHECK_EQ(h.from_neither, 1u);
        CHECK_EQ(h.total, 5u);
    }

    TEST_CASE("comparison is bitwise") {
        const auto b = entry({2}, DType::F64, {0.0, std::nan("")});
        const auto s = entry({2}, DType::F64, {1.0, 2.0});
        const auto f = entry({2}, DType::F64, {-0.0, std::nan("")});
        const ProvenanceHistogram h = provenance(b, s, f);
        CHECK_EQ(h.from_neither, 1u);  // -0.0 is not +0.0
        CHECK_EQ(h.from_base, 1u);     // same NaN payload
    }

    TEST_CASE("mixed storage dtypes compare on promoted values") {
        const auto b = entry({3}, DType::F16, {1.5, 2.0, 3.0});
        const auto s = entry({3}, DType::BF16, {1.5, 2.5, 4.0});
        const auto f = entry({3}, DType::F32, {1.5, 2.5, 3.0});
        const ProvenanceHistogram h = provenance(b, s, f);
        CHECK_EQ(h.from_both, 1u);
        CHECK_EQ(h.from_secondary, 1u);
        CHECK_EQ(h.from_base, 1u);
    }

    TEST_CASE("fused = base") {
        std::mt19937_64 rng(1);
        const auto b = entry({40}, DType::F32, gaussian(40, 1.0, rng));
        const auto s = entry({40}, DType::F32, gaussian(40, 1.0, rng));
        const ProvenanceHistogram h = provenance(b, s, b);
        CHECK_EQ(h.from_base + h.from_both, h.total);
        CHECK_EQ(h.from_neither, 0u);
    }

    TEST_CASE("partition, SCF output and dense interpolation") {
        std::mt19937_64 rng(2);
        for (DType dt : {DType::F64, DType::F32, DType::F16, DType::BF16}) {
            const auto bv = gaussian(32 * 16, 0.1, rng);
            auto sv = bv;
            for (auto& x : sv) x += 0.01 * std::normal_distribution<double>(0, 1)(rng);
            const auto b = entry({32, 16}, dt, bv);
            const auto s = entry({32, 16}, dt, sv);

            const FusedTensor fused = fuse_tensor("w", b, s, FusionConfig{});
            const ProvenanceHistogram h = provenance(b, s, fused.tensor);
            CHECK_EQ(h.from_base + h.from_secondary + h.from_both + h.from_neither, h.total);
            CHECK_EQ(h.from_neither, 0u);

            if (dt == DType::F64) {
                std::vector<double> delta(bv.size());
                for (std::size_t j = 0; j < bv.size(); ++j) delta[j] = s.value(j) - b.value(j);
                const auto ta = entry({32, 16}, dt, task_arithmetic(b.values(), {delta}, 0.5));
                const ProvenanceHistogram t = provenance(b, s, ta);
                CHECK(static_cast<double>(t.from_neither) / static_cast<double>(t.total) > 0.99);
            }
        }
    }

    TEST_CASE("shape mismatch") {
        const auto a = entry({4}, DType::F32, {1, 2, 3, 4});
        const auto b = entry({2, 2}, DType::F32, {1, 2, 3, 4});
        CHECK_THROWS_AS(provenance(a, a, b), SpectralError);
    }
}

TEST_SUITE("entropy_probe") {
    TEST_CASE("uniform logits give ln n") {
        for (std::int64_t n : {1, 2, 3, 7, 64, 1000, 4096}) {
            const Tensor z{{n}, std::vector<double>(static_cast<std::size_t>(n), 0.0)};
            CHECK(std::fabs(mean_slice_entropy(z, AxisPolicy::LastAxis) - std::log(static_cast<double>(n))) <= 1e-12);
            const Tensor c{{3, n}, std::vector<double>(static_cast<std::size_t>(3 * n), -4.25)};
            CHECK(std::fabs(mean_slice_entropy(c, AxisPolicy::LastAxis) - std::log(static_cast<double>(n))) <= 1e-12);
        }
    }

    TEST_CASE("two-point closed form") {
        // softmax(0, ln 3) = (1/4, 3/4)
        const Tensor t{{2}, {0.0, std::log(3.0)}};
        const double expected = -(0.25 * std::log(0.25) + 0.75 * std::log(0.75));
        CHECK(std::fabs(mean_slice_entropy(t, AxisPolicy::LastAxis) - expected) <= 1e-15);
    }

    TEST_CASE("bounds and fused = base") {
        std::mt19937_64 rng(3);
        const Tensor b{{8, 10}, gaussian(80, 3.0, rng)};
        const EntropyProbe p = entropy_probe(b, b, AxisPolicy::LastAxis);
        CHECK_EQ(p.entropy_drop, 0.0);
        CHECK_EQ(p.masked_delta_l2, 0.0);
        CHECK_FALSE(p.implied_lipschitz.has_value());
        CHECK(p.h_base >= 0.0);
        CHECK(p.h_base <= std::log(10.0));
        CHECK_EQ(p.slices, 8u);

        Tensor f = b;
        f.values[0] += 1.0;
        const EntropyProbe q = entropy_probe(b, f, AxisPolicy::Flatten);
        CHECK_EQ(q.slices, 1u);
        CHECK(q.h_fused <= std::log(80.0));
        CHECK_EQ(q.masked_delta_l2, 1.0);
        REQUIRE(q.implied_lipschitz.has_value());
        CHECK_EQ(*q.implied_lipschitz, q.entropy_drop);
    }
}

TEST_SUITE("stability_probe") {
    TEST_CASE("fused = base and fused = secondary") {
        std::mt19937_64 rng(4);
        const Tensor b{{6, 9}, gaussian(54, 1.0, rng)};
        const Tensor s{{6, 9}, gaussian(54, 1.0, rng)};
        const StabilityProbe same = stability_probe(b, s, b, AxisPolicy::LastAxis);
        CHECK_EQ(same.rkl_base_to_fused, 0.0);
        CHECK(same.rkl_base_to_secondary > 0.0);
        CHECK_EQ(same.violations, 0u);

        const StabilityProbe all = stability_probe(b, s, s, AxisPolicy::LastAxis);
        CHECK_EQ(all.rkl_base_to_fused, all.rkl_base_to_secondary);
        CHECK_EQ(all.violations, 0u);
        CHECK_EQ(all.slices, 6u);
    }

    TEST_CASE("violation counting") {
        // a constant shift leaves the softmax unchanged, a partial shift does not
        const Tensor b{{1, 3}, {0, 0, 0}};
        const Tensor s{{1, 3}, {5, 5, 5}};
        const Tensor f{{1, 3}, {5, 0, 0}};
        const StabilityProbe p = stability_probe(b, s, f, AxisPolicy::LastAxis);
        CHECK_EQ(p.violations, 1u);
        CHECK_EQ(p.violation_rate, 1.0);
        CHECK(p.rkl_base_to_secondary <= 1e-15);
    }
}

TEST_SUITE("fixture") {
    TEST_CASE("layout and parameter count") {
        const auto [base, secondary] = generate_fixture(FixtureSpec{});
        CHECK_EQ(base.size(), 9u);
        CHECK_EQ(secondary.size(), 9u);
        std::size_t params = 0;
        for (const auto& [name, e] : base) params += e.size();
        CHECK_EQ(params, 4u * (64 * 64 + 64) + 64 * 64);
        CHECK(base.contains("layers.3.bias"));
        CHECK(base.contains("head.weight"));
        CHECK(base.at("layers.0.weight").shape() == Shape{64, 64});
        CHECK(base.at("layers.0.bias").shape() == Shape{64});
        CHECK(base.at("head.weight").dtype() == DType::F32);
    }

    TEST_CASE("seeded and bit reproducible") {
        FixtureSpec spec;
        spec.seed = 42;
        spec.width = 16;
        const auto a = generate_fixture(spec);
        const auto b = generate_fixture(spec);
        for (const auto& [name, e] : a.first) CHECK(e.bit_equal(b.first.at(name)));
        for (const auto& [name, e] : a.second) CHECK(e.bit_equal(b.second.at(name)));
        spec.seed = 43;
        const auto c = generate_fixture(spec);
        CHECK_FALSE(c.first.at("head.weight").bit_equal(a.first.at("head.weight")));
    }

    TEST_CASE("zero perturbation scale gives identical parents") {
        for (DType dt : {DType::F64, DType::F32, DType::F16, DType::BF16}) {
            FixtureSpec spec;
            spec.scale = 0.0;
            spec.dtype = dt;
            spec.width = 8;
            const auto [base, secondary] = generate_fixture(spec);
            for (const auto& [name, e] : base) CHECK(e.bit_equal(secondary.at(name)));
        }
    }

    TEST_CASE("moments of the base and the perturbation") {
        const auto [base, secondary] = generate_fixture(FixtureSpec{});
        double ss = 0, n = 0, outliers = 0, elements = 0;
        for (const auto& [name, e] : base) {
            if (e.shape().size() != 2) continue;
            const auto b = e.values();
            const auto s = secondary.at(name).values();
            for (std::size_t j = 0; j < b.size(); ++j) {
                ss += b[j] * b[j];
                ++n;
                const double d = s[j] - 1.02 * b[j];
                if (std::fabs(d) > 6 * 0.01 / 8.0) ++outliers;  // beyond six noise sigmas
                ++elements;
            }
        }
        CHECK(std::fabs(ss / n - 1.0 / 64.0) < 0.05 / 64.0);
        CHECK(outliers / elements > 0.003);
        CHECK(outliers / elements < 0.011);
    }

    TEST_CASE("invalid spec") {
        FixtureSpec spec;
        spec.layers = 0;
        CHECK_THROWS_AS(generate_fixture(spec), std::invalid_argument);
        spec = FixtureSpec{};
        spec.scale = -1;
        CHECK_THROWS_AS(generate_fixture(spec), std::invalid_argument);
    }
}

TEST_SUITE("layer_sweep") {
    TEST_CASE("fused = base gives zero shift and rotation") {
        const auto [base, secondary] = generate_fixture(FixtureSpec{.layers = 2, .width = 12});
        const auto reports = layer_sweep(base, secondary, base, "*");
        REQUIRE_EQ(reports.size(), 3u);
        for (const auto& r : reports) {
            CHECK_EQ(r.nss_vs_base.value(), 0.0);
            CHECK_EQ(r.max_angle_vs_base_deg, 0.0);
            CHECK_EQ(r.wedin.lhs, 0.0);
            CHECK_EQ(r.rank_k, 12u);
            CHECK(r.max_angle_parents_deg == r.max_angle_vs_secondary_deg);
        }
    }

    TEST_CASE("selector and layer ordering") {
        FixtureSpec spec{.layers = 12, .width = 4};
        const auto [base, secondary] = generate_fixture(spec);
        const auto reports = layer_sweep(base, secondary, secondary, "layers.*.weight", 2);
        REQUIRE_EQ(reports.size(), 12u);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            CHECK_EQ(reports[i].tensor_name, "layers." + std::to_string(i) + ".weight");
            CHECK_EQ(reports[i].rank_k, 2u);
        }
        const auto all = layer_sweep(base, secondary, secondary, "*.weight");
        CHECK_EQ(all.size(), 13u);
        CHECK_EQ(all.back().tensor_name, "head.weight");
        CHECK_THROWS_AS(layer_sweep(base, secondary, secondary, "*.bias"), SpectralError);
        CHECK_THROWS_AS(layer_sweep(base, secondary, secondary, "nothing*"), SpectralError);
    }

    TEST_CASE("four weight matrices in layer order") {
        const auto [base, secondary] = generate_fixture(FixtureSpec{.width = 16});
        const auto reports = layer_sweep(base, secondary, secondary, "layers.*.weight");
        REQUIRE_EQ(reports.size(), 4u);
        for (const auto& r : reports) {
            CHECK(r.nss_vs_secondary.value() == 0.0);
            CHECK(r.max_angle_vs_secondary_deg == 0.0);
            CHECK(r.max_angle_vs_base_deg == r.max_angle_parents_deg);
            CHECK(r.max_angle_vs_base_deg >= 0.0);
            CHECK(r.max_angle_vs_base_deg <= 90.0);
            CHECK(r.wedin.lhs <= 1.0);
        }
    }

    TEST_CASE("report invariants and thread independence") {
        const auto [base, secondary] = generate_fixture(FixtureSpec{.width = 24});
        const auto fused = fuse_checkpoint(base, secondary, FusionConfig{}, UnmatchedPolicy::Error).fused;
        const auto one = layer_sweep(base, secondary, fused, "*", 0, 1);
        const auto four = layer_sweep(base, secondary, fused, "*", 0, 4);
        REQUIRE_EQ(one.size(), four.size());
        for (std::size_t i = 0; i < one.size(); ++i) {
            CHECK_EQ(one[i].tensor_name, four[i].tensor_name);
            CHECK(one[i].sigma_fused == four[i].sigma_fused);
            CHECK_EQ(one[i].wedin.lhs, four[i].wedin.lhs);
            for (const auto* s : {&one[i].sigma_base, &one[i].sigma_fused}) {
                for (std::size_t j = 0; j < s->size(); ++j) {
                    CHECK((*s)[j] >= 0.0);
                    if (j > 0) CHECK((*s)[j] <= (*s)[j - 1]);
                }
            }
            CHECK_EQ(one[i].rank_k, 16u);
        }
    }

    TEST_CASE("SCF-RKL shifts the spectrum less than task arithmetic") {
        for (std::uint64_t seed : {0u, 1u, 2u}) {
            const auto [base, secondary] = generate_fixture(FixtureSpec{.seed = seed});
            const auto scf = fuse_checkpoint(base, secondary, FusionConfig{}, UnmatchedPolicy::Error).fused;
            const auto ta = task_arithmetic_map(base, secondary, 0.5);
            const double a = mean_nss(layer_sweep(base, secondary, scf, "*"));
            const double b = mean_nss(layer_sweep(base, secondary, ta, "*"));
            MESSAGE("seed " << seed << ": mean NSS scf-rkl " << a << ", task-arithmetic " << b);
            CHECK(a < b);
        }
    }
}

TEST_SUITE("helpers") {
    TEST_CASE("layer index and wildcard matching") {
        CHECK_EQ(layer_index("layers.12.weight").value(), 12);
        CHECK_EQ(layer_index("blk3.attn7").value(), 3);
        CHECK_FALSE(layer_index("head.weight").has_value());
        CHECK(name_matches("*.weight", "layers.0.weight"));
        CHECK(name_matches("layers.?.bias", "layers.3.bias"));
        CHECK_FALSE(name_matches("layers.?.bias", "layers.10.bias"));
        CHECK(name_matches("layers.[0-1].*", "layers.1.weight"));
    }
}
