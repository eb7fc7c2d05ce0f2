#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "scf/diagnostics.hpp"
#include "scf/fixture.hpp"
#include "scf/recipe.hpp"

namespace scf {

// The four subcommands as library calls. All of them throw; the CLI maps the
// exception through classify(). File outputs are written under temporary names
// and renamed once complete.

struct MergeResult {
    OrderedJson manifest;
    std::size_t tensors = 0;
};

/// Streams the base and secondary checkpoints tensor by tensor (recipe.threads
/// tensors at a time) into recipe.output_path, and writes the manifest to
/// recipe.report_path when set. Wall-clock time is only recorded with `timing`,
/// which makes the manifest run dependent.
MergeResult run_merge(const MergeRecipe& recipe, bool timing = false);

struct DiagnoseOptions {
    std::string base_path;
    std::string secondary_path;
    std::string fused_path;
    std::string out_dir;
    std::string selector = "*";
    std::size_t k = 0;  // 0: min(16, min dim)
    AxisPolicy axis = AxisPolicy::LastAxis;
    double epsilon = FusionConfig{}.epsilon;
    unsigned threads = 1;
};

struct DiagnoseSummary {
    std::size_t tensors = 0;
    std::size_t matrices = 0;
    ProvenanceHistogram provenance;
    double mean_nss_vs_base = 0;
    double mean_nss_vs_secondary = 0;
    double mean_max_angle_vs_base_deg = 0;
    double max_angle_vs_base_deg = 0;
    double mean_max_angle_vs_secondary_deg = 0;
    std::size_t wedin_holds = 0;
    std::size_t wedin_violated = 0;
    std::size_t wedin_not_applicable = 0;
    std::size_t slices = 0;
    double mean_entropy_drop = 0;       // over all softmax slices
    double rkl_base_to_fused = 0;       // over all softmax slices
    double rkl_base_to_secondary = 0;
    double stability_violation_rate = 0;
};

/// Writes report.json, spectra.csv, angles.csv, nss.csv, provenance.csv,
/// entropy.csv and stability.csv into out_dir (created if needed).
DiagnoseSummary run_diagnose(const DiagnoseOptions& options);

struct CompareOptions {
    MergeRecipe recipe;  // method, out and report are replaced per method
    std::vector<std::string> methods;
    std::string out_dir;
    std::string selector = "*";
    std::size_t k = 0;
};

/// Per method: out_dir/<method>/{merged.safetensors, manifest.json, diagnose
/// files}; then out_dir/comparison.csv with one (method, metric, value) row per
/// pair. Needs at least two distinct methods and exactly one secondary.
void run_compare(const CompareOptions& options);

struct GenFixtureOptions {
    FixtureSpec spec;
    std::string base_out;
    std::string secondary_out;
};

void run_gen_fixture(const GenFixtureOptions& options);

}  // namespace scf
