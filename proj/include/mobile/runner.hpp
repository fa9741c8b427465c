#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mobile/config.hpp"
#include "mobile/metrics.hpp"
#include "mobile/trace.hpp"

namespace mobile {

/// Command-line overrides applied on top of the configuration files.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    std::optional<int> k_little;
    std::optional<int> lookahead;

    nlohmann::json to_json() const;
};

struct Configs {
    ModelSpec model;
    HardwareSpec hardware;
    PolicySpec policy;
    SyntheticTraceConfig synthetic;
};

struct ConfigPaths {
    std::string config;  // one file holding any of model/hardware/policy/synthetic
    std::string model;
    std::string hardware;
    std::string policy;
};

/// Built-in defaults, then `paths.config`, then the per-section files, then overrides.
/// `seed` replaces the model, policy, sampling and synthetic seeds.
Configs load_configs(const ConfigPaths& paths, const Overrides& overrides);

/// Everything needed to reproduce a CLI run.
struct RunManifest {
    std::string subcommand;
    ConfigPaths paths;
    std::string output_dir;
    Overrides overrides;
    Configs resolved;
    nlohmann::json extra = nlohmann::json::object();
    std::vector<std::string> artifacts;

    nlohmann::json to_json() const;
};

/// "3,14,15" or whitespace-separated ids; a leading '@' reads them from a file.
std::vector<int> parse_prompt(const std::string& text);

/// "0,0.5,0.7" -> {0, 0.5, 0.7}.
std::vector<double> parse_grid(const std::string& text);

/// One line per generated token: index,token,accepted_by,confidence.
void write_decision_log(std::ostream& out, const GenerationResult& run);

void write_text_file(const std::string& path, const std::string& body);
std::string read_text_file(const std::string& path);

/// Line chart of `y_columns` against `x_column` from a metrics CSV, as SVG.
std::string render_svg_chart(const std::string& csv, const std::string& x_column,
                             const std::vector<std::string>& y_columns, const std::string& title);

}  // namespace mobile
