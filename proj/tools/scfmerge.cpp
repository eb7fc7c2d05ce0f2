// scfmerge: merge, diagnose and compare safetensors checkpoints.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scf/commands.hpp"
#include "scf/dtype.hpp"

namespace {

using namespace scf;

// Flags shared by merge and compare. Values are only applied when given on the
// command line, so a recipe file supplies everything else.
struct RecipeFlags {
    std::string recipe_file;
    std::string method;
    std::string base;
    std::vector<std::string> secondary;
    std::string out;
    std::string report;
    std::string unmatched;
    std::string softmax_axis;
    std::string degenerate;
    double alpha = 0, epsilon = 0, q_low = 0, q_high = 0, q_center = 0;
    double lambda = 0, density = 0, drop_rate = 0;
    std::uint64_t seed = 0;
    std::size_t quantile_budget = 0;
    unsigned threads = 0;

    std::vector<std::pair<CLI::Option*, std::string>> options;

    void add(CLI::App* app, bool with_output) {
        app->add_option("--recipe", recipe_file, "JSON recipe; explicit flags override its fields");
        if (with_output) {
            track(app->add_option("--method", method, "scf-rkl, task-arithmetic, dare-linear, ties, dare-ties or sce"), "method");
        }
        track(app->add_option("--base", base, "base checkpoint"), "base");
        track(app->add_option("--secondary", secondary, "secondary checkpoint (repeatable)"), "secondary");
        if (with_output) {
            track(app->add_option("--out", out, "output checkpoint"), "out");
            track(app->add_option("--report", report, "manifest JSON path"), "report");
        }
        track(app->add_option("--unmatched-policy", unmatched, "error, copy-secondary or skip"), "unmatched_policy");
        track(app->add_option("--alpha", alpha, "IQR multiplier"), "alpha");
        track(app->add_option("--epsilon", epsilon, "softmax floor"), "epsilon");
        track(app->add_option("--q-low", q_low, "lower quantile"), "q_low");
        track(app->add_option("--q-high", q_high, "upper quantile"), "q_high");
        track(app->add_option("--q-center", q_center, "centre quantile"), "q_center");
        track(app->add_option("--softmax-axis", softmax_axis, "last-axis or flatten"), "softmax_axis");
        track(app->add_option("--degenerate-iqr", degenerate, "follow-formula or force-base"), "degenerate_iqr");
        track(app->add_option("--quantile-budget", quantile_budget, "largest exact quantile input"), "quantile_budget");
        track(app->add_option("--lambda", lambda, "task-vector scale"), "lambda");
        track(app->add_option("--density", density, "kept fraction for trimming"), "density");
        track(app->add_option("--drop-rate", drop_rate, "DARE drop probability"), "drop_rate");
        track(app->add_option("--seed", seed, "DARE seed"), "seed");
        track(app->add_option("--threads", threads, "worker threads (default: SCF_THREADS or 1)")->check(CLI::Range(1u, 1024u)),
              "threads");
    }

    void track(CLI::Option* opt, std::string key) { options.emplace_back(opt, std::move(key)); }

    MergeRecipe build() const {
        MergeRecipe r;
        if (threads == 0) r.threads = default_threads();
        if (!recipe_file.empty()) r = load_recipe(recipe_file, r);

        nlohmann::json overrides = nlohmann::json::object();
        for (const auto& [opt, key] : options) {
            if (opt->count() == 0) continue;
            if (key == "method") overrides[key] = method;
            else if (key == "base") overrides[key] = base;
            else if (key == "secondary") overrides[key] = secondary;
            else if (key == "out") overrides[key] = out;
            else if (key == "report") overrides[key] = report;
            else if (key == "unmatched_policy") overrides[key] = unmatched;
            else if (key == "alpha") overrides[key] = alpha;
            else if (key == "epsilon") overrides[key] = epsilon;
            else if (key == "q_low") overrides[key] = q_low;
            else if (key == "q_high") overrides[key] = q_high;
            else if (key == "q_center") overrides[key] = q_center;
            else if (key == "softmax_axis") overrides[key] = softmax_axis;
            else if (key == "degenerate_iqr") overrides[key] = degenerate;
            else if (key == "quantile_budget") overrides[key] = quantile_budget;
            else if (key == "lambda") overrides[key] = lambda;
            else if (key == "density") overrides[key] = density;
            else if (key == "drop_rate") overrides[key] = drop_rate;
            else if (key == "seed") overrides[key] = seed;
            else if (key == "threads") overrides[key] = threads;
        }
        apply_recipe_json(r, overrides);
        return r;
    }
};

AxisPolicy axis_or_throw(const std::string& text) {
    const auto p = parse_axis_policy(text);
    if (!p) throw CliError(ExitCode::Config, "unknown softmax axis '" + text + "'");
    return *p;
}

int run(int argc, char** argv) {
    CLI::App app{"Merge, diagnose and compare safetensors checkpoints"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    // merge
    auto* merge = app.add_subcommand("merge", "fuse a base with one or more secondaries");
    RecipeFlags merge_flags;
    merge_flags.add(merge, true);
    bool timing = false;
    merge->add_flag("--timing", timing, "record wall-clock seconds in the manifest");

    // diagnose
    auto* diagnose = app.add_subcommand("diagnose", "spectral, provenance, entropy and stability reports");
    DiagnoseOptions diag;
    std::string diag_axis = "last-axis";
    unsigned diag_threads = 0;
    diagnose->add_option("--base", diag.base_path, "base checkpoint")->required();
    diagnose->add_option("--secondary", diag.secondary_path, "secondary checkpoint")->required();
    diagnose->add_option("--fused", diag.fused_path, "fused checkpoint")->required();
    diagnose->add_option("--out-dir", diag.out_dir, "report directory")->required();
    diagnose->add_option("--selector", diag.selector, "glob over tensor names for the spectral section");
    diagnose->add_option("--k", diag.k, "subspace rank (0: min(16, min dim))");
    diagnose->add_option("--softmax-axis", diag_axis, "last-axis or flatten");
    diagnose->add_option("--epsilon", diag.epsilon, "softmax floor for the stability probe");
    diagnose->add_option("--threads", diag_threads, "worker threads")->check(CLI::Range(1u, 1024u));

    // compare
    auto* compare = app.add_subcommand("compare", "run several methods and diagnose each");
    RecipeFlags compare_flags;
    compare_flags.add(compare, false);
    CompareOptions cmp;
    compare->add_option("--methods", cmp.methods, "methods to run (comma separated or repeated)")
        ->delimiter(',')
        ->required();
    compare->add_option("--out-dir", cmp.out_dir, "output directory")->required();
    compare->add_option("--selector", cmp.selector, "glob over tensor names for the spectral section");
    compare->add_option("--k", cmp.k, "subspace rank (0: min(16, min dim))");

    // gen-fixture
    auto* gen = app.add_subcommand("gen-fixture", "write a seeded synthetic MLP checkpoint pair");
    GenFixtureOptions fixture;
    std::string dtype = "F32";
    gen->add_option("--out-base", fixture.base_out, "base checkpoint path")->required();
    gen->add_option("--out-secondary", fixture.secondary_out, "secondary checkpoint path")->required();
    gen->add_option("--layers", fixture.spec.layers, "hidden layers");
    gen->add_option("--width", fixture.spec.width, "layer width");
    gen->add_option("--seed", fixture.spec.seed, "generator seed");
    gen->add_option("--scale", fixture.spec.scale, "perturbation scale (0: secondary equals base)");
    gen->add_option("--dtype", dtype, "F64, F32, F16 or BF16");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << error_line(CliError(ExitCode::Config, e.what())) << '\n';
        return static_cast<int>(ExitCode::Config);
    }

    if (*merge) {
        const MergeRecipe recipe = merge_flags.build();
        const MergeResult result = run_merge(recipe, timing);
        std::cout << "merged " << result.tensors << " tensors into " << recipe.output_path << '\n';
    } else if (*diagnose) {
        diag.axis = axis_or_throw(diag_axis);
        diag.threads = diag_threads != 0 ? diag_threads : default_threads();
        const DiagnoseSummary s = run_diagnose(diag);
        std::cout << "diagnosed " << s.tensors << " tensors (" << s.matrices << " matrices) into " << diag.out_dir << '\n';
    } else if (*compare) {
        cmp.recipe = compare_flags.build();
        cmp.recipe.method = std::string(kScfMethod);
        run_compare(cmp);
        std::cout << "compared " << cmp.methods.size() << " methods into " << cmp.out_dir << '\n';
    } else if (*gen) {
        const auto d = parse_dtype(dtype);
        if (!d) throw CliError(ExitCode::Config, "unknown dtype '" + dtype + "'");
        fixture.spec.dtype = *d;
        try {
            fixture.spec.validate();
        } catch (const std::invalid_argument& e) {
            throw CliError(ExitCode::Config, e.what());
        }
        run_gen_fixture(fixture);
        std::cout << "wrote " << fixture.base_out << " and " << fixture.secondary_out << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        const CliError err = classify(e);
        std::cerr << error_line(err) << '\n';
        return static_cast<int>(err.code());
    } catch (...) {
        std::cerr << error_line(CliError(ExitCode::Internal, "unknown failure")) << '\n';
        return static_cast<int>(ExitCode::Internal);
    }
}
