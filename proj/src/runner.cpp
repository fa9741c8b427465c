#include "mobile/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

namespace mobile {

namespace {

// Re-parses a section after layering `patch` over the current value.
template <typename Spec, typename From>
Spec merge(const Spec& base, const nlohmann::json& patch, From from_json) {
    nlohmann::json j = to_json(base);
    j.merge_patch(patch);
    return from_json(j);
}

ModelSpec merge_model(const ModelSpec& base, const nlohmann::json& patch) {
    nlohmann::json j = to_json(base);
    j.merge_patch(patch);
    // k_little follows K unless set explicitly.
    if (patch.is_object() && patch.contains("k_big") && !patch.contains("k_little")) j.erase("k_little");
    return model_from_json(j);
}

void apply_file(Configs& c, const nlohmann::json& doc) {
    auto pick = [&](const char* key) -> const nlohmann::json* {
        if (doc.contains(key)) return &doc.at(key);
        return nullptr;
    };
    if (const auto* m = pick("model")) c.model = merge_model(c.model, *m);
    if (const auto* h = pick("hardware")) c.hardware = merge(c.hardware, *h, hardware_from_json);
    if (const auto* p = pick("policy")) c.policy = merge(c.policy, *p, policy_from_json);
    if (const auto* s = pick("synthetic")) c.synthetic = merge(c.synthetic, *s, synthetic_from_json);
}

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == ',' || ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += ch;
        }
    }
    return out;
}

}  // namespace

nlohmann::json Overrides::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    if (seed) j["seed"] = *seed;
    if (gamma) j["gamma"] = *gamma;
    if (k_little) j["k_little"] = *k_little;
    if (lookahead) j["lookahead"] = *lookahead;
    return j;
}

Configs load_configs(const ConfigPaths& paths, const Overrides& o) {
    Configs c;
    if (!paths.config.empty()) apply_file(c, read_json_file(paths.config));
    if (!paths.model.empty()) {
        const auto doc = read_json_file(paths.model);
        c.model = merge_model(c.model, section(doc, "model"));
    }
    if (!paths.hardware.empty()) {
        const auto doc = read_json_file(paths.hardware);
        c.hardware = merge(c.hardware, section(doc, "hardware"), hardware_from_json);
    }
    if (!paths.policy.empty()) {
        const auto doc = read_json_file(paths.policy);
        c.policy = merge(c.policy, section(doc, "policy"), policy_from_json);
    }
    if (o.seed) {
        c.model.seed = *o.seed;
        c.policy.seed = *o.seed;
        c.policy.sampling.seed = *o.seed;
        c.synthetic.seed = *o.seed;
    }
    if (o.gamma) c.policy.gamma = *o.gamma;
    if (o.k_little) c.model.k_little = *o.k_little;
    if (o.lookahead) c.hardware.lookahead_depth = *o.lookahead;
    validate(c.model);
    validate(c.hardware);
    validate(c.policy);
    validate(c.synthetic);
    return c;
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["subcommand"] = subcommand;
    j["config_paths"] = {{"config", paths.config},
                         {"model", paths.model},
                         {"hardware", paths.hardware},
                         {"policy", paths.policy}};
    j["output_dir"] = output_dir;
    j["overrides"] = overrides.to_json();
    j["seeds"] = {{"model", resolved.model.seed},
                  {"policy", resolved.policy.seed},
                  {"sampling", resolved.policy.sampling.seed},
                  {"synthetic", resolved.synthetic.seed}};
    j["resolved"] = {{"model", mobile::to_json(resolved.model)},
                     {"hardware", mobile::to_json(resolved.hardware)},
                     {"policy", mobile::to_json(resolved.policy)},
                     {"synthetic", mobile::to_json(resolved.synthetic)}};
    j["extra"] = extra;
    j["artifacts"] = artifacts;
    return j;
}

std::vector<int> parse_prompt(const std::string& text) {
    std::string body = text;
    if (!body.empty() && body.front() == '@') body = read_text_file(body.substr(1));
    std::vector<int> out;
    for (const auto& tok : split_tokens(body)) {
        std::size_t used = 0;
        long v = 0;
        try {
            v = std::stol(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || v < 0 || v > std::numeric_limits<int>::max()) {
            throw ConfigError("prompt", fmt::format("'{}' is not a token id", tok));
        }
        out.push_back(static_cast<int>(v));
    }
    if (out.empty()) throw ConfigError("prompt", "no token ids given");
    return out;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    for (const auto& tok : split_tokens(text)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || !std::isfinite(v)) throw ConfigError("grid", fmt::format("'{}' is not a number", tok));
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("grid", "empty grid");
    return out;
}

void write_decision_log(std::ostream& out, const GenerationResult& run) {
    out << "index,token,accepted_by,confidence\n";
    for (std::size_t i = 0; i < run.decisions.size(); ++i) {
        const auto& d = run.decisions[i];
        out << fmt::format("{},{},{},{:.17g}\n", i, d.token,
                           d.accepted_by == AcceptedBy::Little ? "Little" : "BigFallback", d.confidence);
    }
}

void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write '{}'", path));
    out << body;
    if (!out) throw Error(fmt::format("write failed for '{}'", path));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string render_svg_chart(const std::string& csv, const std::string& x_column,
                             const std::vector<std::string>& y_columns, const std::string& title) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line)) throw Error("chart: empty CSV");
    const auto header = split_tokens(line);
    auto column = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error(fmt::format("chart: no column '{}'", name));
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t xi = column(x_column);
    std::vector<std::size_t> yi;
    for (const auto& y : y_columns) yi.push_back(column(y));

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        const auto cells = split_tokens(line);
        if (cells.size() != header.size()) continue;
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(std::stod(c));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw Error("chart: no data rows");

    double xmin = rows[0][xi], xmax = xmin, ymin = 0.0, ymax = 0.0;
    for (const auto& r : rows) {
        xmin = std::min(xmin, r[xi]);
        xmax = std::max(xmax, r[xi]);
        for (auto c : yi) ymax = std::max(ymax, r[c]);
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;
    ymax *= 1.1;

    const double w = 640, h = 400, left = 60, right = 20, top = 40, bottom = 50;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (w - left - right); };
    auto py = [&](double y) { return h - bottom - (y - ymin) / (ymax - ymin) * (h - top - bottom); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        w, h);
    svg += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n", w / 2,
                       xml_escape(title));
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, h - bottom,
                       w - right);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top,
                       h - bottom);
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", left - 6, py(yv) + 4, yv);
        svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", px(xv), h - bottom + 18,
                           xv);
    }
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", w / 2, h - 10,
                       xml_escape(x_column));
    for (std::size_t s = 0; s < yi.size(); ++s) {
        const char* color = colors[s % 6];
        std::string points;
        for (const auto& r : rows) points += fmt::format("{:.2f},{:.2f} ", px(r[xi]), py(r[yi[s]]));
        svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, points);
        for (const auto& r : rows) {
            svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", px(r[xi]), py(r[yi[s]]),
                               color);
        }
        svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", left + 10, top + 14 + 16 * s, color,
                           xml_escape(y_columns[s]));
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace mobile
