#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcft/common.hpp"

namespace lcft {

inline constexpr const char* kVersion = "0.3.0";

struct ExperimentInfo {
    std::string kind;
    std::string description;
    /// Statement the experiment checks.
    std::string anchor;
    /// Side files written by a run, "name: col1,col2,...".
    std::vector<std::string> csv;
};

/// The ten experiment kinds, in a fixed order.
const std::vector<ExperimentInfo>& experiment_catalog();
const ExperimentInfo* find_experiment(const std::string& kind);

/// A validated configuration. `params` holds every parameter of the kind,
/// defaults filled in, so two configs that run the same computation
/// serialize identically.
struct ExperimentConfig {
    std::string kind;
    std::uint64_t seed = 1;
    /// 0 for the symbolic kinds.
    std::size_t replicas = 0;
    std::string out;
    nlohmann::json params = nlohmann::json::object();

    /// kind, seed, replicas and params; the output directory is excluded.
    nlohmann::json canonical() const;
    std::uint64_t fingerprint() const;
    std::string fingerprint_hex() const;
};

/// Parses JSON text. ParseError for malformed input.
nlohmann::json parse_config_text(const std::string& text);
/// std::runtime_error when the file cannot be opened.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Schema and precondition checks for a raw config; nothing is sampled.
/// ConfigError (unknown keys, wrong types, out-of-range values) and
/// PreconditionError (Seiberg bounds, geometry) carry the dotted field path,
/// e.g. "params.gamma" or "params.points[2]".
ExperimentConfig validate_config(const nlohmann::json& raw);

struct Scalar {
    std::string name;
    double value = 0.0;
    /// NaN when the quantity is exact.
    double stderr_ = 0.0;
};

/// Table written as <name>.csv; cells are numbers or strings.
struct Series {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<nlohmann::json>> rows;

    std::string csv() const;
};

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ResultRecord {
    ExperimentConfig config;
    std::vector<Scalar> scalars;
    std::vector<Series> series;
    std::vector<Check> checks;
    /// Free-form text outputs (operator tables, term lists).
    std::vector<std::pair<std::string, std::string>> text;
    double wall_clock = 0.0;
    std::string version = kVersion;

    bool passed() const;
    const Scalar* scalar(const std::string& name) const;
    const Check* check(const std::string& name) const;
    nlohmann::json to_json() const;
};

/// Validates (again) and executes. Errors from the modules keep their type,
/// with field paths prefixed by "params.".
ResultRecord run_experiment(const ExperimentConfig& config);

/// Writes result.json, one CSV per series and one .txt per text output into
/// `dir` (created if needed). Returns the paths written.
std::vector<std::filesystem::path> write_result(const ResultRecord& record, const std::filesystem::path& dir);

}  // namespace lcft
