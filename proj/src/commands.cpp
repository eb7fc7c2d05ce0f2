#include "scf/commands.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <system_error>

#include <fmt/format.h>

#include "scf/checkpoint.hpp"
#include "scf/parallel.hpp"

namespace scf {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- file output

// Writes every file under a temporary sibling name, then renames them all.
// Temporaries left by a failure are removed.
class FileBatch {
public:
    void add(fs::path path, std::string contents) { files_.emplace_back(std::move(path), std::move(contents)); }

    void commit() {
        std::vector<fs::path> temps;
        try {
            for (const auto& [path, contents] : files_) {
                fs::path temp = path;
                temp += ".partial";
                temps.push_back(temp);
                std::ofstream out(temp, std::ios::binary | std::ios::trunc);
                if (!out) throw CliError(ExitCode::Io, fmt::format("cannot write {}", temp.string()));
                out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
                out.close();
                if (!out) throw CliError(ExitCode::Io, fmt::format("write to {} failed", temp.string()));
            }
            for (std::size_t i = 0; i < files_.size(); ++i) fs::rename(temps[i], files_[i].first);
        } catch (...) {
            std::error_code ec;
            for (const auto& t : temps) fs::remove(t, ec);
            throw;
        }
    }

private:
    std::vector<std::pair<fs::path, std::string>> files_;
};

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw CliError(ExitCode::Io, fmt::format("cannot create directory {}", dir.string()));
}

void ensure_parent(const fs::path& file) {
    if (file.has_parent_path()) ensure_directory(file.parent_path());
}

// ---------------------------------------------------------------- json / csv

OrderedJson shape_json(const Shape& shape) {
    OrderedJson a = OrderedJson::array();
    for (auto d : shape) a.push_back(d);
    return a;
}

OrderedJson optional_number(const std::optional<double>& v) { return v ? OrderedJson(*v) : OrderedJson(nullptr); }

std::string csv_field(std::string_view text) {
    if (text.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(text);
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_number(double v) { return format_number(v) == "null" ? "" : format_number(v); }
std::string csv_number(const std::optional<double>& v) { return v ? csv_number(*v) : ""; }

class Csv {
public:
    explicit Csv(std::initializer_list<std::string_view> header) { row(header); }

    void row(std::initializer_list<std::string_view> cells) {
        bool first = true;
        for (auto c : cells) {
            if (!first) text_ += ',';
            first = false;
            text_ += c;
        }
        text_ += '\n';
    }
    const std::string& text() const noexcept { return text_; }

private:
    std::string text_;
};

std::string count(std::size_t n) { return std::to_string(n); }

// ---------------------------------------------------------------- merge

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

void require_finite_entry(const TensorEntry& e, const std::string& name, const std::string& path) {
    for (std::size_t j = 0; j < e.size(); ++j) {
        if (!std::isfinite(e.value(j))) {
            throw CliError(ExitCode::Io, fmt::format("tensor '{}' in {} holds non-finite values", name, path));
        }
    }
}

enum class Source { Merge, Base, Secondary };

struct PlanItem {
    std::string name;
    Source source = Source::Base;
    std::vector<std::size_t> parents;  // secondaries merged into the base, recipe order
    std::size_t copy_from = 0;         // secondary index for Source::Secondary
    TensorSpec spec;
    std::string note;                  // why a tensor was copied
};

struct ItemResult {
    TensorEntry tensor;
    OrderedJson row;
    std::vector<std::string> warnings;
};

struct MergePlan {
    std::vector<PlanItem> items;  // name order
    std::vector<std::string> warnings;
};

MergePlan plan_merge(const MergeRecipe& recipe, const CheckpointReader& base,
                     const std::vector<std::unique_ptr<CheckpointReader>>& secondaries) {
    MergePlan plan;
    std::size_t merged = 0;
    for (const TensorInfo& info : base.tensors()) {
        PlanItem item;
        item.name = info.name;
        item.spec = {info.name, info.dtype, info.shape};
        bool mismatch = false;
        for (std::size_t s = 0; s < secondaries.size(); ++s) {
            if (!secondaries[s]->contains(info.name)) continue;
            const TensorInfo& other = secondaries[s]->info(info.name);
            if (other.shape != info.shape) {
                if (recipe.unmatched_policy != UnmatchedPolicy::Skip) {
                    throw CliError(ExitCode::Shape,
                                   fmt::format("tensor '{}' has shape {} in the base but {} in {}", info.name,
                                               shape_string(info.shape), shape_string(other.shape), recipe.secondary_paths[s]));
                }
                mismatch = true;
                plan.warnings.push_back(fmt::format("tensor '{}': shape {} in {} does not match base {}; ignored",
                                                    info.name, shape_string(other.shape), recipe.secondary_paths[s],
                                                    shape_string(info.shape)));
                continue;
            }
            item.parents.push_back(s);
        }
        if (!item.parents.empty()) {
            item.source = Source::Merge;
            ++merged;
            if (item.parents.size() < secondaries.size() && !mismatch) {
                plan.warnings.push_back(fmt::format("tensor '{}': present in {} of {} secondaries", info.name,
                                                    item.parents.size(), secondaries.size()));
            }
        } else {
            item.note = mismatch ? "shape-mismatch" : "base-only";
            if (!mismatch) plan.warnings.push_back(fmt::format("tensor '{}': only in base; copied", info.name));
        }
        plan.items.push_back(std::move(item));
    }

    std::set<std::string> secondary_only;
    for (std::size_t s = 0; s < secondaries.size(); ++s) {
        for (const TensorInfo& info : secondaries[s]->tensors()) {
            if (base.contains(info.name) || !secondary_only.insert(info.name).second) continue;
            switch (recipe.unmatched_policy) {
                case UnmatchedPolicy::Error:
                    throw CliError(ExitCode::Shape, fmt::format("tensor '{}' exists in {} but not in the base", info.name,
                                                                recipe.secondary_paths[s]));
                case UnmatchedPolicy::Skip:
                    plan.warnings.push_back(fmt::format("tensor '{}': only in secondary; skipped", info.name));
                    break;
                case UnmatchedPolicy::CopySecondary: {
                    PlanItem item;
                    item.name = info.name;
                    item.source = Source::Secondary;
                    item.copy_from = s;
                    item.spec = {info.name, info.dtype, info.shape};
                    item.note = "secondary-only";
                    plan.warnings.push_back(fmt::format("tensor '{}': only in secondary; copied", info.name));
                    plan.items.push_back(std::move(item));
                    break;
                }
            }
        }
    }
    if (merged == 0) throw CliError(ExitCode::Shape, "base and secondary checkpoints share no mergeable tensor");
    std::sort(plan.items.begin(), plan.items.end(), [](const PlanItem& a, const PlanItem& b) { return a.name < b.name; });
    return plan;
}

OrderedJson stats_json(const TensorFusionStats& s, std::size_t secondary) {
    OrderedJson j;
    j["secondary"] = secondary;
    j["q1"] = s.q1;
    j["q3"] = s.q3;
    j["median"] = s.median;
    j["tau"] = s.tau;
    j["selected"] = s.selected;
    j["total"] = s.total;
    j["sparsity"] = s.sparsity;
    j["delta_l2"] = s.delta_l2;
    j["masked_delta_l2"] = s.masked_delta_l2;
    j["approximate_quantiles"] = s.approximate_quantiles;
    j["degenerate_iqr"] = s.degenerate_iqr;
    j["forced_base"] = s.forced_base;
    j["lossy_reencodes"] = s.lossy_reencodes;
    return j;
}

ItemResult merge_scf(const PlanItem& item, const TensorEntry& base, const std::vector<TensorEntry>& parents,
                     const MergeRecipe& recipe) {
    ItemResult out;
    out.row["steps"] = OrderedJson::array();
    TensorEntry current = base;
    for (std::size_t i = 0; i < parents.size(); ++i) {
        FusedTensor f = fuse_tensor(item.name, current, parents[i], recipe.fusion);
        const auto& s = f.stats;
        if (s.lossy_reencodes > 0) {
            out.warnings.push_back(fmt::format("tensor '{}': {} secondary value(s) rounded when stored as {}", item.name,
                                               s.lossy_reencodes, dtype_name(base.dtype())));
        }
        if (s.approximate_quantiles) {
            out.warnings.push_back(fmt::format("tensor '{}': quantiles estimated on a subsample of {} elements", item.name,
                                               recipe.fusion.quantile_budget));
        }
        if (s.degenerate_iqr) {
            out.warnings.push_back(fmt::format("tensor '{}': degenerate IQR (Q3 == Q1){}", item.name,
                                               s.forced_base ? "; kept base" : ""));
        }
        out.row["steps"].push_back(stats_json(s, item.parents[i]));
        current = std::move(f.tensor);
    }
    out.tensor = std::move(current);
    return out;
}

ItemResult merge_baseline_item(const PlanItem& item, const TensorEntry& base, const std::vector<TensorEntry>& parents,
                               const MergeRecipe& recipe) {
    ItemResult out;
    const std::vector<double> b = base.values();
    DeltaSet deltas;
    for (const auto& p : parents) {
        std::vector<double> d = p.values();
        for (std::size_t j = 0; j < d.size(); ++j) d[j] -= b[j];
        deltas.push_back(std::move(d));
    }
    BaselineConfig cfg = recipe.baseline;
    cfg.method = *parse_baseline_method(recipe.method);
    const std::vector<double> merged = merge_baseline(cfg, b, deltas, item.name);
    out.tensor = TensorEntry::encode(base.shape(), base.dtype(), merged);

    std::size_t changed = 0, lossy = 0;
    double ss = 0.0;
    for (std::size_t j = 0; j < merged.size(); ++j) {
        const double stored = out.tensor.value(j);
        if (!same_bits(stored, merged[j])) ++lossy;
        if (!same_bits(stored, b[j])) ++changed;
        ss += (stored - b[j]) * (stored - b[j]);
    }
    if (lossy > 0) {
        out.warnings.push_back(
            fmt::format("tensor '{}': {} merged value(s) rounded when stored as {}", item.name, lossy, dtype_name(base.dtype())));
    }
    out.row["changed"] = changed;
    out.row["total"] = merged.size();
    out.row["changed_fraction"] = merged.empty() ? 0.0 : static_cast<double>(changed) / static_cast<double>(merged.size());
    out.row["delta_l2"] = std::sqrt(ss);
    out.row["lossy_reencodes"] = lossy;
    return out;
}

}  // namespace

MergeResult run_merge(const MergeRecipe& recipe, bool timing) {
    const auto started = std::chrono::steady_clock::now();
    recipe.validate();

    CheckpointReader base(recipe.base_path);
    std::vector<std::unique_ptr<CheckpointReader>> secondaries;
    for (const auto& p : recipe.secondary_paths) secondaries.push_back(std::make_unique<CheckpointReader>(p));

    MergePlan plan = plan_merge(recipe, base, secondaries);
    std::vector<TensorSpec> layout;
    for (const auto& item : plan.items) layout.push_back(item.spec);

    ensure_parent(recipe.output_path);
    std::map<std::string, std::string> metadata{{"merge_method", recipe.method}, {"merge_tool", "scfmerge"}};
    CheckpointWriter writer(recipe.output_path, layout, metadata);

    OrderedJson rows = OrderedJson::array();
    std::vector<std::string> warnings = plan.warnings;
    std::size_t parameters = 0;
    const std::size_t batch = recipe.threads;

    for (std::size_t start = 0; start < plan.items.size(); start += batch) {
        const std::size_t stop = std::min(plan.items.size(), start + batch);
        // readers are not shared across threads: load the batch first
        std::vector<TensorEntry> bases(stop - start);
        std::vector<std::vector<TensorEntry>> parents(stop - start);
        for (std::size_t i = start; i < stop; ++i) {
            const PlanItem& item = plan.items[i];
            if (item.source == Source::Secondary) {
                bases[i - start] = secondaries[item.copy_from]->read(item.name);
                continue;
            }
            bases[i - start] = base.read(item.name);
            for (std::size_t s : item.parents) parents[i - start].push_back(secondaries[s]->read(item.name));
        }

        std::vector<ItemResult> results(stop - start);
        parallel_for(stop - start, recipe.threads, [&](std::size_t i) {
            const PlanItem& item = plan.items[start + i];
            ItemResult r;
            if (item.source == Source::Merge) {
                require_finite_entry(bases[i], item.name, recipe.base_path);
                for (std::size_t p = 0; p < item.parents.size(); ++p) {
                    require_finite_entry(parents[i][p], item.name, recipe.secondary_paths[item.parents[p]]);
                }
                r = recipe.is_scf() ? merge_scf(item, bases[i], parents[i], recipe)
                                    : merge_baseline_item(item, bases[i], parents[i], recipe);
                r.row["source"] = "merged";
            } else {
                r.tensor = std::move(bases[i]);
                r.row["source"] = item.source == Source::Base ? "base" : "secondary";
                r.row["reason"] = item.note;
            }
            OrderedJson row;
            row["name"] = item.name;
            row["dtype"] = dtype_name(r.tensor.dtype());
            row["shape"] = shape_json(r.tensor.shape());
            row.update(r.row);
            r.row = std::move(row);
            results[i] = std::move(r);
        });

        for (std::size_t i = start; i < stop; ++i) {
            ItemResult& r = results[i - start];
            writer.write(plan.items[i].name, r.tensor);
            parameters += r.tensor.size();
            rows.push_back(std::move(r.row));
            for (auto& w : r.warnings) warnings.push_back(std::move(w));
        }
    }

    MergeResult result;
    result.tensors = plan.items.size();
    OrderedJson& m = result.manifest;
    m["schema"] = 1;
    m["tool"] = "scfmerge";
    m["version"] = kToolVersion;
    m["command"] = "merge";
    m["recipe"] = recipe.to_json();
    m["output"] = {{"path", recipe.output_path}, {"tensors", plan.items.size()}, {"parameters", parameters}};
    m["tensors"] = std::move(rows);
    m["warnings"] = warnings;
    if (timing) {
        m["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }

    if (recipe.report_path) {
        ensure_parent(*recipe.report_path);
        FileBatch files;
        files.add(*recipe.report_path, dump_json(m));
        writer.commit();
        files.commit();
    } else {
        writer.commit();
    }
    return result;
}

// ---------------------------------------------------------------- diagnose

namespace {

struct TensorDiagnosis {
    std::string name;
    Shape shape;
    ProvenanceHistogram provenance;
    EntropyProbe entropy;
    StabilityProbe stability;
    std::optional<SpectralReport> spectral;
};

OrderedJson spectra_json(const std::vector<double>& s) {
    OrderedJson a = OrderedJson::array();
    for (double x : s) a.push_back(x);
    return a;
}

OrderedJson diagnosis_json(const TensorDiagnosis& d) {
    OrderedJson j;
    j["name"] = d.name;
    j["shape"] = shape_json(d.shape);
    const auto& p = d.provenance;
    j["provenance"] = {{"from_base", p.from_base},       {"from_secondary", p.from_secondary},
                       {"from_both", p.from_both},       {"from_neither", p.from_neither},
                       {"total", p.total}};
    const auto& e = d.entropy;
    j["entropy"] = {{"slices", e.slices},
                    {"h_base", e.h_base},
                    {"h_fused", e.h_fused},
                    {"entropy_drop", e.entropy_drop},
                    {"masked_delta_l2", e.masked_delta_l2},
                    {"implied_lipschitz", optional_number(e.implied_lipschitz)}};
    const auto& s = d.stability;
    j["stability"] = {{"slices", s.slices},
                      {"rkl_base_to_fused", s.rkl_base_to_fused},
                      {"rkl_base_to_secondary", s.rkl_base_to_secondary},
                      {"violations", s.violations},
                      {"violation_rate", s.violation_rate}};
    if (!d.spectral) {
        j["spectral"] = nullptr;
        return j;
    }
    const SpectralReport& r = *d.spectral;
    OrderedJson sp;
    sp["rank_k"] = r.rank_k;
    sp["sigma_base"] = spectra_json(r.sigma_base);
    sp["sigma_secondary"] = spectra_json(r.sigma_secondary);
    sp["sigma_fused"] = spectra_json(r.sigma_fused);
    sp["nss_vs_base"] = optional_number(r.nss_vs_base);
    sp["nss_vs_secondary"] = optional_number(r.nss_vs_secondary);
    sp["max_angle_vs_base_deg"] = r.max_angle_vs_base_deg;
    sp["max_angle_vs_secondary_deg"] = r.max_angle_vs_secondary_deg;
    sp["max_angle_parents_deg"] = r.max_angle_parents_deg;
    sp["wedin"] = {{"k", r.wedin.k},
                   {"lhs", r.wedin.lhs},
                   {"rhs", r.wedin.rhs},
                   {"gap", r.wedin.gap},
                   {"perturbation_norm", r.wedin.perturbation_norm},
                   {"status", wedin_status_name(r.wedin.status)}};
    j["spectral"] = std::move(sp);
    return j;
}

DiagnoseSummary summarize(const std::vector<TensorDiagnosis>& all) {
    DiagnoseSummary s;
    s.tensors = all.size();
    double drop = 0, to_fused = 0, to_secondary = 0, nss_b = 0, nss_s = 0, ang_b = 0, ang_s = 0;
    std::size_t violations = 0, n_nss_b = 0, n_nss_s = 0;
    for (const auto& d : all) {
        s.provenance += d.provenance;
        const auto slices = static_cast<double>(d.entropy.slices);
        drop += d.entropy.entropy_drop * slices;
        to_fused += d.stability.rkl_base_to_fused * slices;
        to_secondary += d.stability.rkl_base_to_secondary * slices;
        violations += d.stability.violations;
        s.slices += d.stability.slices;
        if (!d.spectral) continue;
        const SpectralReport& r = *d.spectral;
        ++s.matrices;
        if (r.nss_vs_base) nss_b += *r.nss_vs_base, ++n_nss_b;
        if (r.nss_vs_secondary) nss_s += *r.nss_vs_secondary, ++n_nss_s;
        ang_b += r.max_angle_vs_base_deg;
        ang_s += r.max_angle_vs_secondary_deg;
        s.max_angle_vs_base_deg = std::max(s.max_angle_vs_base_deg, r.max_angle_vs_base_deg);
        switch (r.wedin.status) {
            case WedinStatus::Holds: ++s.wedin_holds; break;
            case WedinStatus::Violated: ++s.wedin_violated; break;
            case WedinStatus::NotApplicable: ++s.wedin_not_applicable; break;
        }
    }
    if (s.slices > 0) {
        const auto n = static_cast<double>(s.slices);
        s.mean_entropy_drop = drop / n;
        s.rkl_base_to_fused = to_fused / n;
        s.rkl_base_to_secondary = to_secondary / n;
        s.stability_violation_rate = static_cast<double>(violations) / n;
    }
    if (n_nss_b) s.mean_nss_vs_base = nss_b / static_cast<double>(n_nss_b);
    if (n_nss_s) s.mean_nss_vs_secondary = nss_s / static_cast<double>(n_nss_s);
    if (s.matrices) {
        s.mean_max_angle_vs_base_deg = ang_b / static_cast<double>(s.matrices);
        s.mean_max_angle_vs_secondary_deg = ang_s / static_cast<double>(s.matrices);
    }
    return s;
}

double fraction(std::size_t part, std::size_t total) {
    return total == 0 ? 0.0 : static_cast<double>(part) / static_cast<double>(total);
}

OrderedJson summary_json(const DiagnoseSummary& s) {
    OrderedJson j;
    j["tensors"] = s.tensors;
    j["matrices"] = s.matrices;
    j["provenance"] = {{"from_base", s.provenance.from_base},
                       {"from_secondary", s.provenance.from_secondary},
                       {"from_both", s.provenance.from_both},
                       {"from_neither", s.provenance.from_neither},
                       {"total", s.provenance.total},
                       {"from_neither_fraction", fraction(s.provenance.from_neither, s.provenance.total)}};
    j["mean_nss_vs_base"] = s.mean_nss_vs_base;
    j["mean_nss_vs_secondary"] = s.mean_nss_vs_secondary;
    j["mean_max_angle_vs_base_deg"] = s.mean_max_angle_vs_base_deg;
    j["max_angle_vs_base_deg"] = s.max_angle_vs_base_deg;
    j["mean_max_angle_vs_secondary_deg"] = s.mean_max_angle_vs_secondary_deg;
    j["wedin"] = {{"holds", s.wedin_holds}, {"violated", s.wedin_violated}, {"not_applicable", s.wedin_not_applicable}};
    j["slices"] = s.slices;
    j["mean_entropy_drop"] = s.mean_entropy_drop;
    j["rkl_base_to_fused"] = s.rkl_base_to_fused;
    j["rkl_base_to_secondary"] = s.rkl_base_to_secondary;
    j["stability_violation_rate"] = s.stability_violation_rate;
    return j;
}

}  // namespace

DiagnoseSummary run_diagnose(const DiagnoseOptions& o) {
    if (o.threads == 0 || o.threads > 1024) throw CliError(ExitCode::Config, "threads must lie in [1, 1024]");
    if (o.out_dir.empty()) throw CliError(ExitCode::Config, "an output directory is required");
    if (!(o.epsilon > 0.0) || !std::isfinite(o.epsilon)) throw CliError(ExitCode::Config, "epsilon must be positive");

    CheckpointReader base(o.base_path);
    CheckpointReader secondary(o.secondary_path);
    CheckpointReader fused(o.fused_path);

    std::vector<std::string> names;
    std::vector<std::string> warnings;
    bool any_selected = false;
    for (const TensorInfo& info : fused.tensors()) {
        if (!base.contains(info.name) || !secondary.contains(info.name)) {
            warnings.push_back(fmt::format("tensor '{}': not present in all three checkpoints; skipped", info.name));
            continue;
        }
        for (const TensorInfo* other : {&base.info(info.name), &secondary.info(info.name)}) {
            if (other->shape != info.shape) {
                throw CliError(ExitCode::Shape, fmt::format("tensor '{}' has shapes {} (fused) and {}", info.name,
                                                            shape_string(info.shape), shape_string(other->shape)));
            }
        }
        if (info.shape.size() >= 2 && name_matches(o.selector, info.name)) any_selected = true;
        names.push_back(info.name);
    }
    for (const TensorInfo& info : base.tensors()) {
        if (!fused.contains(info.name)) warnings.push_back(fmt::format("tensor '{}': missing from the fused checkpoint", info.name));
    }
    if (names.empty()) throw CliError(ExitCode::Shape, "the three checkpoints share no tensor");
    if (!any_selected) {
        throw CliError(ExitCode::Config, fmt::format("selector '{}' matches no matrix in the checkpoints", o.selector));
    }

    std::vector<TensorDiagnosis> all(names.size());
    for (std::size_t start = 0; start < names.size(); start += o.threads) {
        const std::size_t stop = std::min(names.size(), start + o.threads);
        std::vector<std::array<TensorEntry, 3>> entries(stop - start);
        for (std::size_t i = start; i < stop; ++i) {
            entries[i - start] = {base.read(names[i]), secondary.read(names[i]), fused.read(names[i])};
        }
        parallel_for(stop - start, o.threads, [&](std::size_t i) {
            const auto& [b, s, f] = entries[i];
            TensorDiagnosis& d = all[start + i];
            d.name = names[start + i];
            d.shape = b.shape();
            d.provenance = provenance(b, s, f);
            const Tensor tb = b.working(), ts = s.working(), tf = f.working();
            d.entropy = entropy_probe(tb, tf, o.axis);
            d.stability = stability_probe(tb, ts, tf, o.axis, o.epsilon);
            if (d.shape.size() >= 2 && name_matches(o.selector, d.name)) {
                const Matrix mb = as_matrix(tb), ms = as_matrix(ts), mf = as_matrix(tf);
                const std::size_t limit = static_cast<std::size_t>(std::min(mb.rows(), mb.cols()));
                const std::size_t k = o.k == 0 ? default_subspace_rank(mb) : std::min(o.k, limit);
                d.spectral = spectral_report(d.name, mb, ms, mf, k);
            }
        });
    }

    // spectral rows in layer order, everything else in name order
    std::vector<const TensorDiagnosis*> layered;
    for (const auto& d : all) {
        if (d.spectral) layered.push_back(&d);
    }
    std::stable_sort(layered.begin(), layered.end(), [](const TensorDiagnosis* a, const TensorDiagnosis* b) {
        const auto ia = layer_index(a->name), ib = layer_index(b->name);
        return std::make_tuple(!ia.has_value(), ia.value_or(0), std::string_view(a->name)) <
               std::make_tuple(!ib.has_value(), ib.value_or(0), std::string_view(b->name));
    });

    const DiagnoseSummary summary = summarize(all);

    OrderedJson report;
    report["schema"] = 1;
    report["tool"] = "scfmerge";
    report["version"] = kToolVersion;
    report["command"] = "diagnose";
    report["inputs"] = {{"base", o.base_path}, {"secondary", o.secondary_path}, {"fused", o.fused_path}};
    report["options"] = {{"selector", o.selector},
                         {"k", o.k},
                         {"softmax_axis", axis_policy_name(o.axis)},
                         {"epsilon", o.epsilon}};
    report["summary"] = summary_json(summary);
    report["tensors"] = OrderedJson::array();
    for (const auto& d : all) report["tensors"].push_back(diagnosis_json(d));
    report["layer_order"] = OrderedJson::array();
    for (const auto* d : layered) report["layer_order"].push_back(d->name);
    report["warnings"] = warnings;

    Csv spectra({"tensor", "source", "index", "sigma"});
    Csv angles({"tensor", "rank_k", "max_angle_vs_base_deg", "max_angle_vs_secondary_deg", "max_angle_parents_deg",
                "wedin_lhs", "wedin_rhs", "wedin_gap", "perturbation_norm", "wedin_status"});
    Csv nss_csv({"tensor", "nss_vs_base", "nss_vs_secondary"});
    for (const auto* d : layered) {
        const SpectralReport& r = *d->spectral;
        const std::string name = csv_field(r.tensor_name);
        for (const auto& [label, sigma] : {std::pair{"base", &r.sigma_base}, std::pair{"secondary", &r.sigma_secondary},
                                           std::pair{"fused", &r.sigma_fused}}) {
            for (std::size_t i = 0; i < sigma->size(); ++i) spectra.row({name, label, count(i), csv_number((*sigma)[i])});
        }
        angles.row({name, count(r.rank_k), csv_number(r.max_angle_vs_base_deg), csv_number(r.max_angle_vs_secondary_deg),
                    csv_number(r.max_angle_parents_deg), csv_number(r.wedin.lhs), csv_number(r.wedin.rhs),
                    csv_number(r.wedin.gap), csv_number(r.wedin.perturbation_norm), wedin_status_name(r.wedin.status)});
        nss_csv.row({name, csv_number(r.nss_vs_base), csv_number(r.nss_vs_secondary)});
    }
    Csv prov({"tensor", "from_base", "from_secondary", "from_both", "from_neither", "total"});
    Csv entropy({"tensor", "slices", "h_base", "h_fused", "entropy_drop", "masked_delta_l2", "implied_lipschitz"});
    Csv stability({"tensor", "slices", "rkl_base_to_fused", "rkl_base_to_secondary", "violations", "violation_rate"});
    for (const auto& d : all) {
        const std::string name = csv_field(d.name);
        const auto& p = d.provenance;
        prov.row({name, count(p.from_base), count(p.from_secondary), count(p.from_both), count(p.from_neither), count(p.total)});
        const auto& e = d.entropy;
        entropy.row({name, count(e.slices), csv_number(e.h_base), csv_number(e.h_fused), csv_number(e.entropy_drop),
                     csv_number(e.masked_delta_l2), csv_number(e.implied_lipschitz)});
        const auto& s = d.stability;
        stability.row({name, count(s.slices), csv_number(s.rkl_base_to_fused), csv_number(s.rkl_base_to_secondary),
                       count(s.violations), csv_number(s.violation_rate)});
    }

    const fs::path dir(o.out_dir);
    ensure_directory(dir);
    FileBatch files;
    files.add(dir / "report.json", dump_json(report));
    files.add(dir / "spectra.csv", spectra.text());
    files.add(dir / "angles.csv", angles.text());
    files.add(dir / "nss.csv", nss_csv.text());
    files.add(dir / "provenance.csv", prov.text());
    files.add(dir / "entropy.csv", entropy.text());
    files.add(dir / "stability.csv", stability.text());
    files.commit();
    return summary;
}

// ---------------------------------------------------------------- compare

void run_compare(const CompareOptions& o) {
    if (o.methods.size() < 2) throw CliError(ExitCode::Config, "compare needs at least two methods");
    std::set<std::string> seen;
    for (const auto& m : o.methods) {
        if (!is_known_method(m)) throw CliError(ExitCode::Config, fmt::format("unknown method '{}'", m));
        if (!seen.insert(m).second) throw CliError(ExitCode::Config, fmt::format("method '{}' listed twice", m));
    }
    if (o.recipe.secondary_paths.size() != 1) throw CliError(ExitCode::Config, "compare takes exactly one secondary checkpoint");
    if (o.out_dir.empty()) throw CliError(ExitCode::Config, "an output directory is required");

    // validate every method's configuration before producing anything
    std::vector<MergeRecipe> recipes;
    const fs::path dir(o.out_dir);
    for (const auto& m : o.methods) {
        MergeRecipe r = o.recipe;
        r.method = m;
        r.output_path = (dir / m / "merged.safetensors").string();
        r.report_path = (dir / m / "manifest.json").string();
        r.validate();
        recipes.push_back(std::move(r));
    }

    Csv table({"method", "metric", "value"});
    for (const MergeRecipe& r : recipes) {
        run_merge(r);
        DiagnoseOptions d;
        d.base_path = r.base_path;
        d.secondary_path = r.secondary_paths.front();
        d.fused_path = r.output_path;
        d.out_dir = (dir / r.method).string();
        d.selector = o.selector;
        d.k = o.k;
        d.axis = r.fusion.softmax_axis;
        d.epsilon = r.fusion.epsilon;
        d.threads = r.threads;
        const DiagnoseSummary s = run_diagnose(d);

        const auto& p = s.provenance;
        const std::vector<std::pair<std::string_view, std::string>> metrics{
            {"mean_nss_vs_base", format_number(s.mean_nss_vs_base)},
            {"mean_nss_vs_secondary", format_number(s.mean_nss_vs_secondary)},
            {"mean_max_angle_vs_base_deg", format_number(s.mean_max_angle_vs_base_deg)},
            {"max_angle_vs_base_deg", format_number(s.max_angle_vs_base_deg)},
            {"mean_max_angle_vs_secondary_deg", format_number(s.mean_max_angle_vs_secondary_deg)},
            {"wedin_holds", count(s.wedin_holds)},
            {"wedin_violated", count(s.wedin_violated)},
            {"wedin_not_applicable", count(s.wedin_not_applicable)},
            {"from_base_fraction", format_number(fraction(p.from_base, p.total))},
            {"from_secondary_fraction", format_number(fraction(p.from_secondary, p.total))},
            {"from_both_fraction", format_number(fraction(p.from_both, p.total))},
            {"from_neither_fraction", format_number(fraction(p.from_neither, p.total))},
            {"mean_entropy_drop", format_number(s.mean_entropy_drop)},
            {"rkl_base_to_fused", format_number(s.rkl_base_to_fused)},
            {"rkl_base_to_secondary", format_number(s.rkl_base_to_secondary)},
            {"stability_violation_rate", format_number(s.stability_violation_rate)},
        };
        for (const auto& [metric, value] : metrics) table.row({r.method, metric, value});
    }
    FileBatch files;
    files.add(dir / "comparison.csv", table.text());
    files.commit();
}

// ---------------------------------------------------------------- fixtures

void run_gen_fixture(const GenFixtureOptions& o) {
    if (o.base_out.empty() || o.secondary_out.empty()) throw CliError(ExitCode::Config, "both output paths are required");
    if (fs::path(o.base_out).lexically_normal() == fs::path(o.secondary_out).lexically_normal()) {
        throw CliError(ExitCode::Config, "base and secondary outputs must differ");
    }
    const auto [base, secondary] = generate_fixture(o.spec);
    ensure_parent(o.base_out);
    ensure_parent(o.secondary_out);
    save_checkpoint(base, o.base_out);
    save_checkpoint(secondary, o.secondary_out);
}

}  // namespace scf
