// mobile-sim: functional runs, trace runs, trace synthesis, sweeps and charts for
// big-little MoE offloading.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "mobile/config.hpp"
#include "mobile/metrics.hpp"
#include "mobile/runner.hpp"
#include "mobile/sim.hpp"
#include "mobile/toy_moe.hpp"
#include "mobile/trace.hpp"

namespace fs = std::filesystem;
using namespace mobile;

namespace {

struct CommonArgs {
    ConfigPaths paths;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    std::optional<int> k_little;
    std::optional<int> lookahead;
    int jobs = 1;

    Overrides overrides() const { return {seed, gamma, k_little, lookahead}; }
};

void add_common(CLI::App* cmd, CommonArgs& a, const char* out_help) {
    cmd->add_option("--config", a.paths.config, "JSON file with any of model/hardware/policy/synthetic");
    cmd->add_option("--model", a.paths.model, "JSON file with the model section");
    cmd->add_option("--hw", a.paths.hardware, "JSON file with the hardware section");
    cmd->add_option("--policy", a.paths.policy, "JSON file with the policy section");
    cmd->add_option("--out", a.out, out_help)->required();
    cmd->add_option("--seed", a.seed, "Override every seed");
    cmd->add_option("--gamma", a.gamma, "Fallback threshold")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--k-little", a.k_little, "Experts per layer in the little pass");
    cmd->add_option("--lookahead", a.lookahead, "Prefetch lookahead depth in layers");
}

void write_manifest(RunManifest& manifest) {
    manifest.artifacts.push_back("manifest.json");
    write_text_file((fs::path(manifest.output_dir) / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
}

std::string metrics_csv(std::span<const RunMetrics> rows) {
    std::ostringstream ss;
    write_csv(ss, rows);
    return ss.str();
}

int cmd_run(const CommonArgs& a, const std::string& prompt_text, int max_len, bool event_log, bool save) {
    const Configs cfg = load_configs(a.paths, a.overrides());
    const auto prompt = parse_prompt(prompt_text);
    fs::create_directories(a.out);

    const ToyMoEModel model(cfg.model);
    const GenerationResult run = generate(model, prompt, cfg.policy, max_len);
    if (run.decisions.empty()) throw Error("generation produced no tokens (prompt ends with eos?)");

    EventLog log;
    SimOptions opts;
    if (event_log) opts.mobile_log = &log;
    const GenerationTiming timing = simulate_generation(run, cfg.model, cfg.hardware, cfg.policy, opts);
    const RunMetrics m = aggregate(timing, cfg.policy.gamma, cfg.model.k_little);

    RunManifest manifest{"run", a.paths, a.out, a.overrides(), cfg};
    manifest.extra = {{"prompt", prompt}, {"max_len", max_len}};
    const std::vector<RunMetrics> rows{m};
    write_text_file((fs::path(a.out) / "metrics.csv").string(), metrics_csv(rows));
    manifest.artifacts.push_back("metrics.csv");
    std::ostringstream decisions;
    write_decision_log(decisions, run);
    write_text_file((fs::path(a.out) / "decisions.log").string(), decisions.str());
    manifest.artifacts.push_back("decisions.log");
    if (event_log) {
        std::ostringstream ev;
        log.write(ev);
        write_text_file((fs::path(a.out) / "events.log").string(), ev.str());
        manifest.artifacts.push_back("events.log");
    }
    if (save) {
        save_trace((fs::path(a.out) / "trace.jsonl").string(), record_from_model(run));
        manifest.artifacts.push_back("trace.jsonl");
    }
    write_manifest(manifest);

    fmt::print("tokens={} fallbacks={} r={:.4f} speedup={:.4f} (analytic {:.4f})\n", m.tokens, m.fallbacks, m.r,
               m.speedup_measured, m.speedup_analytic);
    return 0;
}

int cmd_trace(const CommonArgs& a, const std::string& trace_path, std::optional<double> inject,
              std::uint64_t inject_seed) {
    const Configs cfg = load_configs(a.paths, a.overrides());
    const auto records = load_trace(trace_path);
    if (records.empty()) throw Error(fmt::format("trace '{}' is empty", trace_path));
    fs::create_directories(a.out);

    const auto steps = inject ? trace_steps(records, inject_fallback_mask(records.size(), *inject, inject_seed))
                              : trace_steps(records, cfg.policy.gamma);
    const RunMetrics m =
        aggregate(simulate_generation(steps, cfg.model, cfg.hardware, cfg.policy), cfg.policy.gamma, cfg.model.k_little);

    RunManifest manifest{"trace", a.paths, a.out, a.overrides(), cfg};
    manifest.extra = {{"trace", trace_path}};
    if (inject) manifest.extra["inject_fallback"] = {{"ratio", *inject}, {"seed", inject_seed}};
    const std::vector<RunMetrics> rows{m};
    write_text_file((fs::path(a.out) / "metrics.csv").string(), metrics_csv(rows));
    manifest.artifacts.push_back("metrics.csv");
    write_manifest(manifest);

    fmt::print("tokens={} fallbacks={} r={:.4f} speedup={:.4f} (analytic {:.4f}) baseline_stall_share={:.4f}\n",
               m.tokens, m.fallbacks, m.r, m.speedup_measured, m.speedup_analytic, m.baseline_stall_share);
    return 0;
}

int cmd_gen_trace(const CommonArgs& a, std::size_t n) {
    const Configs cfg = load_configs(a.paths, a.overrides());
    const auto records = gen_synthetic(cfg.synthetic, n);
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_trace(a.out, records);

    const double alpha = cfg.synthetic.confidence.alpha;
    const double beta = cfg.synthetic.confidence.beta;
    const double beta_mean = alpha / (alpha + beta);
    const double beta_sd = std::sqrt(alpha * beta / ((alpha + beta) * (alpha + beta) * (alpha + beta + 1.0)));
    double sum = 0.0;
    for (const auto& r : records) sum += r.confidence;
    const double mean = records.empty() ? 0.0 : sum / static_cast<double>(records.size());
    fmt::print("tokens={} layers={} experts={} seed={}\n", records.size(), cfg.synthetic.num_layers,
               cfg.synthetic.num_experts, cfg.synthetic.seed);
    fmt::print("mean_confidence={:.6f} beta_mean={:.6f} standard_error={:.6f}\n", mean, beta_mean,
               records.empty() ? 0.0 : beta_sd / std::sqrt(static_cast<double>(records.size())));
    return 0;
}

int cmd_sweep(const CommonArgs& a, const std::string& kind, const std::string& grid_text, const std::string& trace_path,
              std::size_t n, const std::string& prompt_text, int max_len) {
    const Configs cfg = load_configs(a.paths, a.overrides());
    fs::create_directories(a.out);

    const bool functional = !prompt_text.empty();
    std::vector<TraceRecord> records;
    std::vector<int> prompt;
    if (functional) {
        prompt = parse_prompt(prompt_text);
    } else if (!trace_path.empty()) {
        records = load_trace(trace_path);
    } else {
        records = gen_synthetic(cfg.synthetic, n);
    }
    if (!functional && records.empty()) throw Error("sweep: empty trace");

    // Functional points share the generation at the base policy unless the grid changes it.
    std::optional<GenerationResult> base_run;
    if (functional && kind != "gamma" && kind != "k_little") {
        base_run = generate(ToyMoEModel(cfg.model), prompt, cfg.policy, max_len);
    }
    auto evaluate = [&](const ModelSpec& m, const HardwareSpec& hw, const PolicySpec& p) {
        if (!functional) {
            const auto steps = trace_steps(records, p.gamma);
            return aggregate(simulate_generation(steps, m, hw, p), p.gamma, m.k_little);
        }
        if (base_run) return aggregate(simulate_generation(*base_run, m, hw, p), p.gamma, m.k_little);
        const auto run = generate(ToyMoEModel(m), prompt, p, max_len);
        if (run.decisions.empty()) throw Error("sweep: generation produced no tokens");
        return aggregate(simulate_generation(run, m, hw, p), p.gamma, m.k_little);
    };

    std::vector<std::string> labels;
    std::vector<RunMetrics> rows;
    bool grid_column = false;
    if (kind == "gamma") {
        const auto grid = parse_grid(grid_text);
        for (double g : grid) {
            if (!(g >= 0.0 && g <= 1.0)) throw ConfigError("grid", fmt::format("gamma {} outside [0, 1]", g));
        }
        rows = run_grid(grid.size(), a.jobs, [&](std::size_t i) {
            PolicySpec p = cfg.policy;
            p.gamma = grid[i];
            return evaluate(cfg.model, cfg.hardware, p);
        });
    } else if (kind == "k_little") {
        const auto grid = parse_grid(grid_text);
        std::vector<int> ks;
        for (double v : grid) {
            if (v != std::floor(v) || v < 1 || v > cfg.model.k_big)
                throw ConfigError("grid", fmt::format("k_little {} outside [1, {}]", v, cfg.model.k_big));
            ks.push_back(static_cast<int>(v));
        }
        rows = run_grid(ks.size(), a.jobs, [&](std::size_t i) {
            ModelSpec m = cfg.model;
            m.k_little = ks[i];
            return evaluate(m, cfg.hardware, cfg.policy);
        });
    } else if (kind == "bandwidth") {
        std::vector<double> grid;
        std::string tok;
        std::istringstream ss(grid_text);
        while (std::getline(ss, tok, ',')) {
            grid.push_back(parse_quantity(tok));
            labels.push_back(fmt::format("{:.9g}", grid.back()));
        }
        if (grid.empty()) throw ConfigError("grid", "empty grid");
        grid_column = true;
        rows = run_grid(grid.size(), a.jobs, [&](std::size_t i) {
            HardwareSpec hw = cfg.hardware;
            hw.pcie_bandwidth = grid[i];
            validate(hw);
            return evaluate(cfg.model, hw, cfg.policy);
        });
    } else if (kind == "lookahead") {
        const auto grid = parse_grid(grid_text);
        for (double v : grid) {
            if (v != std::floor(v) || v < 1) throw ConfigError("grid", fmt::format("lookahead {} must be a positive integer", v));
            labels.push_back(fmt::format("{}", static_cast<int>(v)));
        }
        grid_column = true;
        rows = run_grid(grid.size(), a.jobs, [&](std::size_t i) {
            HardwareSpec hw = cfg.hardware;
            hw.lookahead_depth = static_cast<int>(grid[i]);
            return evaluate(cfg.model, hw, cfg.policy);
        });
    } else {
        throw ConfigError("kind", fmt::format("unknown sweep kind '{}' (gamma, k_little, bandwidth, lookahead)", kind));
    }

    std::string csv;
    if (grid_column) {
        csv = std::string("grid_value,") + kCsvHeader + "\n";
        for (std::size_t i = 0; i < rows.size(); ++i) csv += labels[i] + "," + csv_row(rows[i]) + "\n";
    } else {
        csv = metrics_csv(rows);
    }
    const std::string name = fmt::format("sweep_{}.csv", kind);
    write_text_file((fs::path(a.out) / name).string(), csv);

    RunManifest manifest{"sweep", a.paths, a.out, a.overrides(), cfg};
    manifest.extra = {{"kind", kind}, {"grid", grid_text}, {"jobs", a.jobs}};
    if (functional) manifest.extra["prompt"] = prompt, manifest.extra["max_len"] = max_len;
    else if (!trace_path.empty()) manifest.extra["trace"] = trace_path;
    else manifest.extra["synthetic_tokens"] = n;
    manifest.artifacts.push_back(name);
    write_manifest(manifest);
    std::cout << csv;
    return 0;
}

int cmd_plot(const std::string& csv_path, const std::string& x, const std::string& ys, const std::string& out,
             const std::string& title) {
    std::vector<std::string> columns;
    std::string tok;
    std::istringstream ss(ys);
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) columns.push_back(tok);
    }
    if (columns.empty()) throw ConfigError("y", "no columns to plot");
    write_text_file(out, render_svg_chart(read_text_file(csv_path), x, columns, title));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Big-little MoE offloading simulator"};
    app.require_subcommand(1);

    CommonArgs run_args;
    std::string prompt = "1,2,3,4,5,6,7,8";
    int max_len = 64;
    bool event_log = false;
    bool save = false;
    auto* run = app.add_subcommand("run", "Functional generation on the toy model plus timing simulation");
    add_common(run, run_args, "Output directory");
    run->add_option("--prompt", prompt, "Token ids, comma separated, or @file");
    run->add_option("--max-len", max_len, "Maximum generated tokens")->check(CLI::PositiveNumber);
    run->add_flag("--event-log", event_log, "Write events.log for the MoBiLE run");
    run->add_flag("--save-trace", save, "Write the run as trace.jsonl");

    CommonArgs trace_args;
    std::string trace_path;
    std::optional<double> inject;
    std::uint64_t inject_seed = 0;
    auto* trace = app.add_subcommand("trace", "Timing simulation over a recorded or synthetic trace");
    add_common(trace, trace_args, "Output directory");
    trace->add_option("--trace", trace_path, "Trace file (.jsonl or .jsonl.gz)")->required();
    trace->add_option("--inject-fallback", inject, "Ignore confidences; fall back on this fraction of tokens")
        ->check(CLI::Range(0.0, 1.0));
    trace->add_option("--inject-seed", inject_seed, "Seed choosing the injected fallback positions");

    CommonArgs gen_args;
    std::size_t n_tokens = 1000;
    auto* gen = app.add_subcommand("gen-trace", "Write a synthetic router trace");
    add_common(gen, gen_args, "Output trace path (.jsonl or .jsonl.gz)");
    gen->add_option("--n", n_tokens, "Number of tokens");

    CommonArgs sweep_args;
    std::string kind;
    std::string grid;
    std::string sweep_trace;
    std::size_t sweep_n = 1000;
    std::string sweep_prompt;
    int sweep_max_len = 64;
    auto* sweep = app.add_subcommand("sweep", "One metrics row per grid point");
    add_common(sweep, sweep_args, "Output directory");
    sweep->add_option("--kind", kind, "gamma | k_little | bandwidth | lookahead")->required();
    sweep->add_option("--grid", grid, "Comma-separated grid values")->required();
    sweep->add_option("--trace", sweep_trace, "Trace file; defaults to a synthetic trace from the config");
    sweep->add_option("--n", sweep_n, "Synthetic trace length when no trace is given");
    sweep->add_option("--prompt", sweep_prompt, "Run functionally on the toy model with this prompt");
    sweep->add_option("--max-len", sweep_max_len, "Maximum generated tokens in functional mode");
    sweep->add_option("--jobs", sweep_args.jobs, "Concurrent grid points")->check(CLI::PositiveNumber);

    std::string csv_path, x_col = "gamma", y_cols = "speedup_measured", chart_out, title = "MoBiLE";
    auto* plot = app.add_subcommand("plot", "Render a metrics CSV as an SVG line chart");
    plot->add_option("--csv", csv_path, "Metrics or sweep CSV")->required();
    plot->add_option("--x", x_col, "X column");
    plot->add_option("--y", y_cols, "Comma-separated Y columns");
    plot->add_option("--out", chart_out, "Output .svg")->required();
    plot->add_option("--title", title, "Chart title");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(run_args, prompt, max_len, event_log, save);
        if (*trace) return cmd_trace(trace_args, trace_path, inject, inject_seed);
        if (*gen) return cmd_gen_trace(gen_args, n_tokens);
        if (*sweep) return cmd_sweep(sweep_args, kind, grid, sweep_trace, sweep_n, sweep_prompt, sweep_max_len);
        if (*plot) return cmd_plot(csv_path, x_col, y_cols, chart_out, title);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
