// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "baseline_oracle.hpp"
#include "oracle.hpp"
#include "scf/baselines.hpp"
#include "scf/diagnostics.hpp"
#include "scf/fixture.hpp"
#include "scf/fusion.hpp"
#include "scf/recipe.hpp"
#include "scf/spectral.hpp"
#include "spectral_trials.hpp"
#include "test_util.hpp"

using namespace scf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        if (ok) return;
        pass = false;
        if (failures.size() < 5) failures.push_back(what);
    }
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

constexpr DType kDtypes[] = {DType::F64, DType::F32, DType::F16, DType::BF16};

FixtureSpec small_fixture(int i) {
    FixtureSpec spec;
    spec.seed = static_cast<std::uint64_t>(i);
    spec.dtype = kDtypes[i % 4];
    spec.layers = 2 + i % 3;
    spec.width = 16 + 8 * (i % 4);
    return spec;
}

TensorMap baseline_map(const TensorMap& base, const TensorMap& secondary, const BaselineConfig& cfg) {
    TensorMap out;
    for (const auto& [name, b] : base) {
        const auto bv = b.values();
        auto delta = secondary.at(name).values();
        for (std::size_t j = 0; j < bv.size(); ++j) delta[j] -= bv[j];
        out.insert(name, TensorEntry::encode(b.shape(), b.dtype(), merge_baseline(cfg, bv, {delta}, name)));
    }
    return out;
}

TensorMap fuse_scf(const TensorMap& base, const TensorMap& secondary) {
    return fuse_checkpoint(base, secondary, FusionConfig{}, UnmatchedPolicy::Error).fused;
}

double mean_nss(const TensorMap& base, const TensorMap& secondary, const TensorMap& fused) {
    const auto reports = layer_sweep(base, secondary, fused, "*");
    double total = 0.0;
    for (const auto& r : reports) total += r.nss_vs_base.value();
    return total / static_cast<double>(reports.size());
}

// ---------------------------------------------------------------------------

Outcome discrete_composition() {
    Outcome o;
    const auto start = Clock::now();
    std::size_t elements = 0, composed = 0, neither = 0;
    for (int i = 0; i < 20; ++i) {
        const auto [base, sec] = generate_fixture(small_fixture(i));
        const TensorMap fused = fuse_scf(base, sec);
        for (const auto& [name, f] : fused) {
            const TensorEntry& b = base.at(name);
            const TensorEntry& s = sec.at(name);
            const auto fb = f.raw(), bb = b.raw(), sb = s.raw();
            const std::size_t w = byte_width(f.dtype());
            for (std::size_t j = 0; j < f.size(); ++j) {
                const auto at = j * w;
                const bool eq_b = std::equal(fb.begin() + at, fb.begin() + at + w, bb.begin() + at);
                const bool eq_s = std::equal(fb.begin() + at, fb.begin() + at + w, sb.begin() + at);
                composed += eq_b || eq_s;
            }
            elements += f.size();
            neither += provenance(b, s, f).from_neither;
        }
    }
    const double elapsed = seconds_since(start);
    o.expect(composed == elements, fmt::format("{} of {} elements equal a parent", composed, elements));
    o.expect(neither == 0, fmt::format("from_neither = {}", neither));
    o.expect(elapsed < 10.0, fmt::format("took {:.2f} s", elapsed));
    o.detail = fmt::format("20 fixtures, {} elements, {} composed, from_neither {}, {:.2f} s", elements, composed, neither, elapsed);
    return o;
}

Outcome idempotence() {
    Outcome o;
    std::size_t checks = 0;
    for (int i = 0; i < 20; ++i) {
        const auto [base, sec] = generate_fixture(small_fixture(i));
        const TensorMap scf = fuse_scf(base, base);
        for (const auto& [name, e] : base) {
            o.expect(scf.at(name).bit_equal(e), fmt::format("scf-rkl fixture {} tensor {}", i, name));
            ++checks;
        }
        for (auto method : {BaselineMethod::TaskArithmetic, BaselineMethod::DareLinear, BaselineMethod::Ties,
                            BaselineMethod::DareTies, BaselineMethod::Sce}) {
            BaselineConfig cfg;
            cfg.method = method;
            cfg.drop_rate = 0.5;
            cfg.density = 0.5;
            cfg.seed = static_cast<std::uint64_t>(i);
            const TensorMap same = baseline_map(base, base, cfg);
            cfg.lambda = 0.0;
            const TensorMap zero = baseline_map(base, sec, cfg);
            for (const auto& [name, e] : base) {
                o.expect(same.at(name).bit_equal(e), fmt::format("{} identical parents, fixture {} {}", method_name(method), i, name));
                o.expect(zero.at(name).bit_equal(e), fmt::format("{} lambda 0, fixture {} {}", method_name(method), i, name));
                checks += 2;
            }
        }
    }
    o.detail = fmt::format("{} tensor checks over 20 fixtures and 6 methods", checks);
    return o;
}

Outcome exponential_tail() {
    Outcome o;
    std::mt19937_64 rng(2025);
    std::exponential_distribution<double> exp1(1.0);
    ImportanceField field;
    field.values.shape = {1'000'000};
    field.values.values.resize(1'000'000);
    for (auto& v : field.values.values) v = exp1(rng);
    FusionConfig cfg;
    cfg.alpha = 1.5;
    cfg.q_low = 0.25;
    cfg.q_high = 0.75;
    const Threshold t = iqr_threshold(field, cfg);
    const FusionMask mask = build_mask(field, t.tau);
    const double fraction = static_cast<double>(mask.selected()) / 1e6;
    const double want_fraction = 0.5 * std::pow(3.0, -1.5);
    const double want_tau = std::log(2.0) + 1.5 * std::log(3.0);
    o.expect(std::fabs(fraction - want_fraction) <= 0.005, fmt::format("fraction {}", fraction));
    o.expect(std::fabs(t.tau - want_tau) <= 0.01, fmt::format("tau {}", t.tau));
    o.expect(fraction >= 0.05 && fraction <= 0.15, "fraction outside 5-15%");
    o.detail = fmt::format("fraction {:.5f} (want {:.5f} +- 0.005), tau {:.5f} (want {:.5f} +- 0.01)", fraction, want_fraction,
                           t.tau, want_tau);
    return o;
}

Outcome reverse_kl_accuracy() {
    Outcome o;
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::int64_t> length(2, 64);
    std::uniform_real_distribution<double> spread(0.05, 12.0);
    double worst = 0.0, lowest = 0.0;
    for (int trial = 0; trial < 10'000; ++trial) {
        const std::int64_t n = length(rng);
        std::normal_distribution<double> logit(0.0, spread(rng));
        Tensor a{{n}, std::vector<double>(static_cast<std::size_t>(n))};
        Tensor b = a;
        for (auto& v : a.values) v = logit(rng);
        for (auto& v : b.values) v = logit(rng);
        const std::vector<double> q = stable_softmax(a, AxisPolicy::LastAxis, 1e-8).values;
        const std::vector<double> p = stable_softmax(b, AxisPolicy::LastAxis, 1e-8).values;
        const double got = reverse_kl(q, p);
        const double want = static_cast<double>(oracle::reverse_kl_hp(q, p));
        worst = std::max(worst, std::fabs(got - want));
        lowest = std::min(lowest, got);
        o.expect(reverse_kl(q, q) == 0.0, fmt::format("trial {}: rkl(q, q) != 0", trial));
        o.expect(got >= -1e-12, fmt::format("trial {}: negative {}", trial, got));
    }
    o.expect(worst <= 1e-12, fmt::format("max abs error {}", worst));
    o.detail = fmt::format("10000 pairs, max abs error {:.3g}, min value {:.3g}, rkl(q,q) = 0 on all", worst, lowest);
    return o;
}

Outcome quantiles_exact() {
    Outcome o;
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> size(1, 10'000);
    std::uniform_int_distribution<int> kind(0, 3), small(-5, 5);
    std::normal_distribution<double> normal(0.0, 3.0);
    std::size_t ties = 0, constants = 0;
    const FusionConfig cfg;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = trial < 10 ? static_cast<std::size_t>(trial + 1) : size(rng);
        std::vector<double> v(n);
        switch (kind(rng)) {
            case 0: for (auto& x : v) x = normal(rng); break;
            case 1: for (auto& x : v) x = small(rng); ++ties; break;          // heavy ties
            case 2: std::fill(v.begin(), v.end(), normal(rng)); ++constants; break;
            default: for (auto& x : v) x = std::fabs(normal(rng)) * std::exp(normal(rng)); break;
        }
        const Threshold t = iqr_threshold(v, cfg);
        const oracle::Tukey want = oracle::tukey(v, cfg.q_low, cfg.q_center, cfg.q_high, cfg.alpha);
        o.expect(t.q1 == want.q1 && t.q3 == want.q3 && t.median == want.median && t.tau == want.tau,
                 fmt::format("trial {} (n = {}) differs", trial, n));
    }
    o.detail = fmt::format("1000 arrays of size 1..10000 ({} with heavy ties, {} constant), all bit-exact", ties, constants);
    return o;
}

Outcome wedin_suite() {
    Outcome o;
    std::mt19937_64 rng(31337);
    int holds = 0;
    double dense_sum = 0.0, sparse_sum = 0.0, worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto t = spectral_trials::make_wedin_trial(rng);
        const WedinResult dense = wedin_check(t.base, t.dense, t.k);
        const WedinResult sparse = wedin_check(t.base, t.sparse, t.k);
        o.expect(dense.status != WedinStatus::NotApplicable, fmt::format("trial {} has no gap", trial));
        holds += dense.holds();
        worst = std::max(worst, dense.lhs / dense.rhs);
        dense_sum += dense.lhs;
        sparse_sum += sparse.lhs;
    }
    o.expect(holds == 500, fmt::format("bound held in {} of 500", holds));
    o.expect(sparse_sum < dense_sum, "sparse mean not below dense mean");
    o.detail = fmt::format("bound held in {}/500 (max lhs/rhs {:.3f}); mean sin(theta) sparse {:.4g} < dense {:.4g}", holds, worst,
                           sparse_sum / 500, dense_sum / 500);
    return o;
}

Outcome nss_identities() {
    Outcome o;
    std::mt19937_64 rng(5);
    double worst = 0.0;
    for (auto [r, c] : {std::pair{8, 8}, std::pair{12, 5}, std::pair{3, 17}, std::pair{40, 40}}) {
        const Matrix w = spectral_trials::gaussian(rng, r, c);
        o.expect(nss(w, w) == 0.0, "nss(W, W) != 0");
        const Matrix scaled = 1.1 * w;
        worst = std::max(worst, std::fabs(nss(w, scaled) - 0.1));
    }
    o.expect(worst <= 1e-12, fmt::format("nss(W, 1.1W) off by {}", worst));

    const auto [base, sec] = generate_fixture(FixtureSpec{});
    BaselineConfig ta;
    ta.method = BaselineMethod::TaskArithmetic;
    ta.lambda = 0.5;
    const double scf = mean_nss(base, sec, fuse_scf(base, sec));
    const double dense = mean_nss(base, sec, baseline_map(base, sec, ta));
    o.expect(scf < dense, fmt::format("scf {} vs task arithmetic {}", scf, dense));
    o.detail = fmt::format("nss(W,W) = 0, |nss(W,1.1W) - 0.1| <= {:.2g}; MLP fixture mean NSS scf-rkl {:.5f} < task-arithmetic {:.5f}",
                           worst, scf, dense);
    return o;
}

Outcome principal_angle_cases() {
    Outcome o;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> angle(0.0, 90.0);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index m = 6 + trial % 10;
        const Eigen::Index k = 1 + trial % (m / 2);
        const Matrix q = spectral_trials::random_orthogonal(rng, m);
        std::vector<double> want(static_cast<std::size_t>(k));
        Matrix a = q.leftCols(k), b(m, k);
        for (Eigen::Index i = 0; i < k; ++i) {
            double deg = angle(rng);
            if (trial == 0) deg = i == 0 ? 1e-7 : 90.0 - 1e-7;
            want[static_cast<std::size_t>(i)] = deg;
            const double rad = deg * std::numbers::pi / 180.0;
            b.col(i) = std::cos(rad) * q.col(i) + std::sin(rad) * q.col(k + i);
        }
        std::sort(want.begin(), want.end(), std::greater<>());
        const auto got = principal_angles(a, b, static_cast<std::size_t>(k));
        for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));

        const auto same = principal_angles(a, a, static_cast<std::size_t>(k));
        for (double v : same) o.expect(v == 0.0, "identical bases give a nonzero angle");
        const auto complement = principal_angles(a, Matrix(q.middleCols(k, k)), static_cast<std::size_t>(k));
        for (double v : complement) worst = std::max(worst, std::fabs(v - 90.0));
    }
    o.expect(worst <= 1e-9, fmt::format("max error {} degrees", worst));
    o.detail = fmt::format("200 plane-rotation cases and complements, max error {:.3g} deg; identical bases exactly 0", worst);
    return o;
}

struct EnsembleTotals {
    double scf_drop = 0, dense_drop = 0;
    double rkl_fused = 0, rkl_secondary = 0;
    std::size_t slices = 0, violations = 0;
};

// Ten seeded MLP fixture pairs; SCF against dense fusion at lambda = 1.
EnsembleTotals ensemble() {
    EnsembleTotals e;
    BaselineConfig dense;
    dense.method = BaselineMethod::TaskArithmetic;
    dense.lambda = 1.0;
    for (int seed = 0; seed < 10; ++seed) {
        FixtureSpec spec;
        spec.seed = static_cast<std::uint64_t>(seed);
        spec.dtype = DType::F64;
        const auto [base, sec] = generate_fixture(spec);
        const TensorMap scf = fuse_scf(base, sec);
        const TensorMap full = baseline_map(base, sec, dense);
        for (const auto& [name, b] : base) {
            const Tensor tb = b.working(), ts = sec.at(name).working(), tf = scf.at(name).working();
            const EntropyProbe ps = entropy_probe(tb, tf, AxisPolicy::LastAxis);
            const EntropyProbe pd = entropy_probe(tb, full.at(name).working(), AxisPolicy::LastAxis);
            const StabilityProbe st = stability_probe(tb, ts, tf, AxisPolicy::LastAxis);
            const auto n = static_cast<double>(ps.slices);
            e.scf_drop += ps.entropy_drop * n;
            e.dense_drop += pd.entropy_drop * n;
            e.rkl_fused += st.rkl_base_to_fused * n;
            e.rkl_secondary += st.rkl_base_to_secondary * n;
            e.slices += st.slices;
            e.violations += st.violations;
        }
    }
    const auto n = static_cast<double>(e.slices);
    e.scf_drop /= n;
    e.dense_drop /= n;
    e.rkl_fused /= n;
    e.rkl_secondary /= n;
    return e;
}

const EnsembleTotals& shared_ensemble() {
    static const EnsembleTotals totals = ensemble();
    return totals;
}

Outcome entropy_probe_check(const EnsembleTotals& e) {
    Outcome o;
    double worst = 0.0;
    for (std::int64_t n : {1, 2, 3, 10, 64, 1000, 4097}) {
        for (double level : {0.0, -3.5, 250.0}) {
            Tensor t{{4, n}, std::vector<double>(static_cast<std::size_t>(4 * n), level)};
            worst = std::max(worst, std::fabs(mean_slice_entropy(t, AxisPolicy::LastAxis) - std::log(static_cast<double>(n))));
        }
    }
    o.expect(worst <= 1e-12, fmt::format("uniform entropy off by {}", worst));
    o.expect(e.scf_drop < e.dense_drop, fmt::format("scf drop {} vs dense {}", e.scf_drop, e.dense_drop));
    o.detail = fmt::format("uniform slices |H - ln n| <= {:.2g}; ensemble mean entropy drop scf-rkl {:.4g} < dense {:.4g}", worst,
                           e.scf_drop, e.dense_drop);
    return o;
}

Outcome stability_probe_check(const EnsembleTotals& e) {
    Outcome o;
    const double rate = static_cast<double>(e.violations) / static_cast<double>(e.slices);
    o.expect(e.rkl_fused <= e.rkl_secondary, fmt::format("fused {} vs secondary {}", e.rkl_fused, e.rkl_secondary));
    o.expect(rate < 0.05, fmt::format("violation rate {}", rate));
    o.detail = fmt::format("aggregate RKL base->fused {:.4g} <= base->secondary {:.4g}; violation rate {:.4f} ({} of {} slices)",
                           e.rkl_fused, e.rkl_secondary, rate, e.violations, e.slices);
    return o;
}

Outcome baseline_examples() {
    namespace bo = baseline_oracle;
    using Vec = std::vector<double>;
    Outcome o;
    int count = 0;
    auto same = [&](const Vec& got, const Vec& oracle, const Vec& stated, const std::string& what) {
        ++count;
        bool ok = got.size() == oracle.size() && got.size() == stated.size();
        for (std::size_t i = 0; ok && i < got.size(); ++i) {
            ok = std::bit_cast<std::uint64_t>(got[i]) == std::bit_cast<std::uint64_t>(oracle[i]) && got[i] == stated[i];
        }
        o.expect(ok, what);
    };
    const Vec base3{1, 2, 3}, delta3{0.5, -1, 2};

    // task arithmetic
    same(task_arithmetic(base3, {delta3}, 1.0), Vec{1.5, 1, 5}, Vec{1.5, 1, 5}, "ta one delta lambda 1");
    same(task_arithmetic(base3, {delta3}, 0.0), base3, base3, "ta lambda 0");
    same(task_arithmetic(Vec{0, 0}, {{2, -2}, {4, 2}}, 0.5), Vec{0.5 * (2 + 4), 0.5 * (-2 + 2)}, Vec{3, 0}, "ta two deltas");

    // dare
    const Vec d8{0.5, -1, 2, 0.25, -3, 4, -0.125, 1};
    same(dare_prune(d8, 0.0, 3, "w"), d8, d8, "dare drop 0");
    same(dare_prune(d8, 0.5, 3, "w"), bo::dare(d8, 0.5, 3, "w", 0), dare_prune(d8, 0.5, 3, "w"), "dare same seed");
    {
        const Vec ones(1'000'000, 1.0);
        const Vec out = dare_prune(ones, 0.5, 11, "w");
        double mean = 0.0;
        for (double v : out) mean += v;
        mean /= 1e6;
        ++count;
        o.expect(std::fabs(mean - 1.0) <= 0.01, fmt::format("dare mean {}", mean));
    }

    // ties
    same(ties_merge(base3, {delta3}, 1.0, 1.0), bo::ties(base3, {delta3}, 1.0, 1.0), Vec{1.5, 1, 5}, "ties single delta");
    same(ties_merge(Vec{7}, {{1}, {-1}}, 1.0, 1.0), bo::ties(Vec{7}, {{1}, {-1}}, 1.0, 1.0), Vec{7}, "ties sign tie");
    same(ties_merge(Vec{0, 0}, {{3, -1}, {1, 1}}, 0.5, 1.0), bo::ties(Vec{0, 0}, {{3, -1}, {1, 1}}, 0.5, 1.0), Vec{3, 1},
         "ties trim/elect/merge");
    same(ties_merge(Vec{10, 20}, {{3, -1}, {1, 1}}, 0.5, 0.5), bo::ties(Vec{10, 20}, {{3, -1}, {1, 1}}, 0.5, 0.5),
         Vec{11.5, 20.5}, "ties trim/elect/merge lambda 0.5");

    // dare-ties
    const Vec b8{1, 1, 1, 1, 1, 1, 1, 1}, e8{-0.5, 2, 1, -1, 0.75, -2, 3, 0.25};
    same(dare_ties(b8, {d8, e8}, 0.0, 0.5, 1.0, 4, "w"), bo::ties(b8, {d8, e8}, 0.5, 1.0), ties_merge(b8, {d8, e8}, 0.5, 1.0),
         "dare-ties drop 0");
    same(dare_ties(Vec{1, 1}, {{0.5, -0.5}}, 0.0, 1.0, 1.0, 5, "w"), Vec{1.5, 0.5}, Vec{1.5, 0.5}, "dare-ties single delta");
    same(dare_ties(b8, {d8, e8}, 0.5, 0.5, 1.0, 77, "blk"),
         bo::ties(b8, {bo::dare(d8, 0.5, 77, "blk", 0), bo::dare(e8, 0.5, 77, "blk", 1)}, 0.5, 1.0),
         dare_ties(b8, {d8, e8}, 0.5, 0.5, 1.0, 77, "blk"), "dare-ties composition");

    // sce
    const Vec d4{1, -2, 3, -4};
    same(sce_merge(Vec{0, 0, 0, 0}, {d4, d4}, 1.0), bo::sce(Vec{0, 0, 0, 0}, {d4, d4}, 1.0), d4, "sce identical deltas");
    same(sce_merge(Vec{5, 6}, {{1, 0}, {-1, 0}}, 1.0), bo::sce(Vec{5, 6}, {{1, 0}, {-1, 0}}, 1.0), Vec{5, 6}, "sce cancel");
    same(sce_merge(Vec{1, 1, 1, 1}, {{0.5, -3, 2, 0.25}}, 0.5), bo::add_where_nonzero(Vec{1, 1, 1, 1}, bo::trim({0.5, -3, 2, 0.25}, 0.5)),
         Vec{1, -2, 3, 1}, "sce single-delta fallback");

    o.detail = fmt::format("{} worked examples match the brute-force oracles and the stated outputs", count);
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
    }
    return files;
}

int shell(const fs::path& dir, const std::string& args) {
    const std::string cmd = fmt::format("cd '{}' && '{}' {} >/dev/null", dir.string(), SCFMERGE_BIN, args);
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end() {
    Outcome o;
    TempDir t;
    o.expect(shell(t.path(), "gen-fixture --out-base base.safetensors --out-secondary secondary.safetensors") == 0, "gen-fixture");
    const std::string compare = "compare --base base.safetensors --secondary secondary.safetensors --out-dir cmp --lambda 0.5 "
                                "--methods scf-rkl,task-arithmetic,dare-linear,ties,dare-ties,sce --threads ";
    std::vector<std::map<std::string, std::string>> runs;
    double slowest = 0.0;
    for (const char* threads : {"1", "1", "8"}) {
        fs::remove_all(t.path() / "cmp");
        const auto start = Clock::now();
        const int code = shell(t.path(), compare + threads);
        slowest = std::max(slowest, seconds_since(start));
        o.expect(code == 0, fmt::format("compare exited {}", code));
        runs.push_back(snapshot(t.path() / "cmp"));
    }
    o.expect(runs[0].size() == 1 + 6 * 9, fmt::format("{} output files", runs[0].size()));
    o.expect(runs[0] == runs[1], "two runs differ");
    o.expect(runs[0] == runs[2], "threads 1 and 8 differ");
    o.expect(slowest < 60.0, fmt::format("slowest run {:.2f} s", slowest));
    o.detail = fmt::format("6 methods, {} files byte-identical across two runs and threads 1/8, slowest {:.2f} s", runs[0].size(),
                           slowest);
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"discrete composition", discrete_composition},
        {"idempotence", idempotence},
        {"exponential-tail sparsity", exponential_tail},
        {"reverse-KL correctness", reverse_kl_accuracy},
        {"quantile correctness", quantiles_exact},
        {"Wedin-bound suite", wedin_suite},
        {"NSS identities and ordering", nss_identities},
        {"principal angles", principal_angle_cases},
        {"entropy probe", [] { return entropy_probe_check(shared_ensemble()); }},
        {"stability probe", [] { return stability_probe_check(shared_ensemble()); }},
        {"baseline oracles", baseline_examples},
        {"end-to-end compare", end_to_end},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.failures.push_back(std::string("threw: ") + e.what());
        }
        failed += !o.pass;
        std::cout << fmt::format("{} {:2d} {}: {}", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail) << '\n';
        for (const auto& f : o.failures) std::cout << "       " << f << '\n';
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - static_cast<std::size_t>(failed), criteria.size()) << '\n';
    return failed == 0 ? 0 : 1;
}
