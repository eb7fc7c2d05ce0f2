#pragma once

#include <exception>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "scf/baselines.hpp"
#include "scf/fusion.hpp"
#include "scf/report_json.hpp"

namespace scf {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kScfMethod = "scf-rkl";

enum class ExitCode : int { Ok = 0, Internal = 1, Config = 2, Io = 3, Shape = 4 };

std::string_view exit_kind_name(ExitCode code) noexcept;

/// A failure carrying the process exit status it maps to.
class CliError : public std::runtime_error {
public:
    CliError(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

/// Maps library exceptions onto exit statuses: configuration problems -> 2,
/// unreadable or invalid input data and filesystem failures -> 3, tensor
/// shape / name alignment failures -> 4, anything else -> 1.
CliError classify(const std::exception& e);

/// The single stderr line printed for a failure.
std::string error_line(const CliError& e);

/// "scf-rkl" followed by the baseline ids.
std::vector<std::string> method_ids();
bool is_known_method(std::string_view id);

std::optional<UnmatchedPolicy> parse_unmatched_policy(std::string_view text);
std::optional<AxisPolicy> parse_axis_policy(std::string_view text);
std::optional<DegenerateIqrPolicy> parse_degenerate_policy(std::string_view text);

struct MergeRecipe {
    std::string method{kScfMethod};
    FusionConfig fusion;
    BaselineConfig baseline;
    std::string base_path;
    std::vector<std::string> secondary_paths;
    std::string output_path;
    UnmatchedPolicy unmatched_policy = UnmatchedPolicy::Error;
    std::optional<std::string> report_path;
    unsigned threads = 1;

    bool is_scf() const noexcept { return method == kScfMethod; }

    /// Throws CliError(Config).
    void validate() const;

    /// Flat object using the recipe-file keys. Thread count is left out so
    /// manifests do not depend on it.
    OrderedJson to_json() const;
};

/// Overlays the keys of a recipe document onto `recipe`. Unknown keys and
/// wrongly typed values are configuration errors.
void apply_recipe_json(MergeRecipe& recipe, const nlohmann::json& doc);

/// Reads a recipe file over `defaults` (missing file -> Io, bad JSON -> Config).
MergeRecipe load_recipe(const std::filesystem::path& path, MergeRecipe defaults = {});

/// Thread count from SCF_THREADS, or 1 when unset. Throws CliError(Config) on
/// a value that is not a positive integer.
unsigned default_threads();

}  // namespace scf
