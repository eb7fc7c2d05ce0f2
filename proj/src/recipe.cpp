#include "scf/recipe.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <system_error>

#include <fmt/format.h>

#include "scf/checkpoint.hpp"
#include "scf/spectral.hpp"

namespace scf {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw CliError(ExitCode::Config, message); }

template <typename T>
T typed(const nlohmann::json& v, std::string_view key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        config_error(fmt::format("recipe key '{}' has the wrong type", key));
    }
}

double number(const nlohmann::json& v, std::string_view key) {
    if (!v.is_number()) config_error(fmt::format("recipe key '{}' must be a number", key));
    return v.get<double>();
}

std::string normalized(const std::string& path) {
    std::error_code ec;
    const fs::path abs = fs::absolute(path, ec);
    return (ec ? fs::path(path) : abs).lexically_normal().string();
}

}  // namespace

std::string_view exit_kind_name(ExitCode code) noexcept {
    switch (code) {
        case ExitCode::Ok: return "ok";
        case ExitCode::Internal: return "internal";
        case ExitCode::Config: return "config";
        case ExitCode::Io: return "io";
        case ExitCode::Shape: return "shape";
    }
    return "?";
}

CliError classify(const std::exception& e) {
    if (const auto* c = dynamic_cast<const CliError*>(&e)) return *c;
    if (dynamic_cast<const CheckpointError*>(&e)) return {ExitCode::Io, e.what()};
    if (const auto* f = dynamic_cast<const FusionError*>(&e)) {
        switch (f->kind()) {
            case FusionError::Kind::InvalidConfig: return {ExitCode::Config, e.what()};
            case FusionError::Kind::ShapeMismatch:
            case FusionError::Kind::EmptyIntersection:
            case FusionError::Kind::UnmatchedTensor: return {ExitCode::Shape, e.what()};
            case FusionError::Kind::NonFinite:
            case FusionError::Kind::EmptyInput: return {ExitCode::Io, e.what()};
        }
    }
    if (const auto* b = dynamic_cast<const BaselineError*>(&e)) {
        return {b->kind() == BaselineError::Kind::InvalidConfig ? ExitCode::Config : ExitCode::Shape, e.what()};
    }
    if (const auto* s = dynamic_cast<const SpectralError*>(&e)) {
        switch (s->kind()) {
            case SpectralError::Kind::ShapeMismatch: return {ExitCode::Shape, e.what()};
            case SpectralError::Kind::EmptySelection:
            case SpectralError::Kind::InvalidK: return {ExitCode::Config, e.what()};
            default: return {ExitCode::Io, e.what()};
        }
    }
    if (dynamic_cast<const std::invalid_argument*>(&e)) return {ExitCode::Config, e.what()};
    if (dynamic_cast<const fs::filesystem_error*>(&e) || dynamic_cast<const std::ios_base::failure*>(&e)) {
        return {ExitCode::Io, e.what()};
    }
    return {ExitCode::Internal, e.what()};
}

std::string error_line(const CliError& e) {
    return fmt::format("scfmerge: error: kind={} exit={} message={}", exit_kind_name(e.code()), static_cast<int>(e.code()),
                       nlohmann::json(std::string(e.what())).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
}

std::vector<std::string> method_ids() {
    return {std::string(kScfMethod), "task-arithmetic", "dare-linear", "ties", "dare-ties", "sce"};
}

bool is_known_method(std::string_view id) { return id == kScfMethod || parse_baseline_method(id).has_value(); }

std::optional<UnmatchedPolicy> parse_unmatched_policy(std::string_view text) {
    for (auto p : {UnmatchedPolicy::Error, UnmatchedPolicy::CopySecondary, UnmatchedPolicy::Skip}) {
        if (unmatched_policy_name(p) == text) return p;
    }
    return std::nullopt;
}

std::optional<AxisPolicy> parse_axis_policy(std::string_view text) {
    for (auto p : {AxisPolicy::LastAxis, AxisPolicy::Flatten}) {
        if (axis_policy_name(p) == text) return p;
    }
    return std::nullopt;
}

std::optional<DegenerateIqrPolicy> parse_degenerate_policy(std::string_view text) {
    for (auto p : {DegenerateIqrPolicy::FollowFormula, DegenerateIqrPolicy::ForceBase}) {
        if (degenerate_policy_name(p) == text) return p;
    }
    return std::nullopt;
}

void MergeRecipe::validate() const {
    if (!is_known_method(method)) config_error(fmt::format("unknown method '{}'", method));
    if (base_path.empty()) config_error("a base checkpoint is required");
    if (secondary_paths.empty()) config_error("at least one secondary checkpoint is required");
    if (output_path.empty()) config_error("an output path is required");
    if (threads == 0 || threads > 1024) config_error("threads must lie in [1, 1024]");

    std::set<std::string> seen;
    auto distinct = [&](const std::string& p, std::string_view role) {
        if (!seen.insert(normalized(p)).second) config_error(fmt::format("{} path '{}' repeats another path", role, p));
    };
    distinct(base_path, "base");
    for (const auto& s : secondary_paths) distinct(s, "secondary");
    distinct(output_path, "output");
    if (report_path) distinct(*report_path, "report");

    try {
        if (is_scf()) fusion.validate();
        else baseline.validate();
    } catch (const std::exception& e) {
        config_error(e.what());
    }
}

OrderedJson MergeRecipe::to_json() const {
    OrderedJson j;
    j["method"] = method;
    j["base"] = base_path;
    j["secondary"] = secondary_paths;
    j["out"] = output_path;
    if (report_path) j["report"] = *report_path;
    j["unmatched_policy"] = unmatched_policy_name(unmatched_policy);
    if (is_scf()) {
        j["epsilon"] = fusion.epsilon;
        j["q_low"] = fusion.q_low;
        j["q_high"] = fusion.q_high;
        j["q_center"] = fusion.q_center;
        j["alpha"] = fusion.alpha;
        j["softmax_axis"] = axis_policy_name(fusion.softmax_axis);
        j["degenerate_iqr"] = degenerate_policy_name(fusion.degenerate_iqr);
        j["quantile_budget"] = fusion.quantile_budget;
    } else {
        j["lambda"] = baseline.lambda;
        j["density"] = baseline.density;
        j["drop_rate"] = baseline.drop_rate;
        j["seed"] = baseline.seed;
    }
    return j;
}

void apply_recipe_json(MergeRecipe& r, const nlohmann::json& doc) {
    if (!doc.is_object()) config_error("recipe must be a JSON object");
    for (const auto& [key, v] : doc.items()) {
        if (key == "method") r.method = typed<std::string>(v, key);
        else if (key == "base") r.base_path = typed<std::string>(v, key);
        else if (key == "secondary") {
            if (v.is_string()) r.secondary_paths = {v.get<std::string>()};
            else r.secondary_paths = typed<std::vector<std::string>>(v, key);
        } else if (key == "out") r.output_path = typed<std::string>(v, key);
        else if (key == "report") r.report_path = typed<std::string>(v, key);
        else if (key == "threads") {
            if (!v.is_number_unsigned()) config_error("recipe key 'threads' must be a positive integer");
            r.threads = v.get<unsigned>();
        } else if (key == "unmatched_policy") {
            const auto p = parse_unmatched_policy(typed<std::string>(v, key));
            if (!p) config_error(fmt::format("unknown unmatched policy {}", v.dump()));
            r.unmatched_policy = *p;
        } else if (key == "epsilon") r.fusion.epsilon = number(v, key);
        else if (key == "q_low") r.fusion.q_low = number(v, key);
        else if (key == "q_high") r.fusion.q_high = number(v, key);
        else if (key == "q_center") r.fusion.q_center = number(v, key);
        else if (key == "alpha") r.fusion.alpha = number(v, key);
        else if (key == "softmax_axis") {
            const auto p = parse_axis_policy(typed<std::string>(v, key));
            if (!p) config_error(fmt::format("unknown softmax axis {}", v.dump()));
            r.fusion.softmax_axis = *p;
        } else if (key == "degenerate_iqr") {
            const auto p = parse_degenerate_policy(typed<std::string>(v, key));
            if (!p) config_error(fmt::format("unknown degenerate-IQR policy {}", v.dump()));
            r.fusion.degenerate_iqr = *p;
        } else if (key == "quantile_budget") {
            if (!v.is_number_unsigned()) config_error("recipe key 'quantile_budget' must be a positive integer");
            r.fusion.quantile_budget = v.get<std::size_t>();
        } else if (key == "lambda") r.baseline.lambda = number(v, key);
        else if (key == "density") r.baseline.density = number(v, key);
        else if (key == "drop_rate") r.baseline.drop_rate = number(v, key);
        else if (key == "seed") {
            if (!v.is_number_unsigned()) config_error("recipe key 'seed' must be a non-negative integer");
            r.baseline.seed = v.get<std::uint64_t>();
        } else config_error(fmt::format("unknown recipe key '{}'", key));
    }
}

MergeRecipe load_recipe(const fs::path& path, MergeRecipe defaults) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError(ExitCode::Io, fmt::format("cannot open recipe {}", path.string()));
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        config_error(fmt::format("recipe {} is not valid JSON: {}", path.string(), e.what()));
    }
    apply_recipe_json(defaults, doc);
    return defaults;
}

unsigned default_threads() {
    const char* env = std::getenv("SCF_THREADS");
    if (env == nullptr || *env == '\0') return 1;
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (*end != '\0' || v == 0 || v > 1024 || env[0] == '-') {
        config_error(fmt::format("SCF_THREADS must be an integer in [1, 1024], got '{}'", env));
    }
    return static_cast<unsigned>(v);
}

}  // namespace scf
