// tiadc_cli: runs time-interleaved ADC experiments from a JSON config.
//
//   tiadc_cli simulate  --config cfg.json [--out-dir dir] [--seed n] [--format csv|json]
//   tiadc_cli identify  ...
//   tiadc_cli calibrate ...
//   tiadc_cli sweep     ...
//   tiadc_cli validate  --config cfg.json
//
// Exit codes: 0 success, 1 config error, 2 runtime or estimator error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "tiadc/tiadc.hpp"

namespace {

namespace ex = tiadc::experiment;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Options {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string format = "json";
};

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return std::nullopt;
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int report_issues(const std::vector<ex::ConfigIssue>& issues, const std::string& source) {
    for (const ex::ConfigIssue& i : issues) std::cerr << i.format(source) << "\n";
    return kExitConfig;
}

std::optional<ex::Scenario> scenario_for(const std::string& verb, ex::Scenario configured) {
    if (verb == "simulate") {
        return configured == ex::Scenario::bandwidth_demo ? configured : ex::Scenario::spectrum;
    }
    if (verb == "identify") return ex::Scenario::identify;
    if (verb == "calibrate") return ex::Scenario::calibrate;
    if (verb == "sweep") return ex::Scenario::sweep;
    return std::nullopt;
}

int execute(const std::string& verb, const Options& opt) {
    std::string text;
    std::string source = "<defaults>";
    if (!opt.config_path.empty()) {
        auto content = read_file(opt.config_path);
        if (!content) {
            std::cerr << opt.config_path << ": cannot read config\n";
            return kExitConfig;
        }
        text = std::move(*content);
        source = opt.config_path;
    }
    ex::ValidationResult v = ex::validate(text);
    if (!v.ok()) return report_issues(v.issues, source);
    ex::ExperimentConfig cfg = *v.config;
    if (opt.seed) cfg.master_seed = *opt.seed;

    if (verb == "validate") {
        std::cout << ex::serialize(cfg);
        return 0;
    }
    cfg.scenario = *scenario_for(verb, cfg.scenario);
    // Re-check scenario-specific rules after the verb picked the scenario.
    v = ex::validate(ex::serialize(cfg));
    if (!v.ok()) return report_issues(v.issues, source);
    cfg = *v.config;

    ex::RunOptions run_opt;
    run_opt.out_dir = opt.out_dir;
    const ex::RunResult res = ex::run(cfg, run_opt);

    if (opt.format == "json") {
        std::cout << res.report.dump(2) << "\n";
    } else {
        const std::filesystem::path csv = res.files.front();
        std::cout << read_file(csv.string()).value_or("");
    }
    if (res.excluded_trials > 0) {
        std::cerr << "excluded " << res.excluded_trials << " trial(s) after estimator failures\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-interleaved ADC simulator: mismatch identification and calibration experiments"};
    app.require_subcommand(1);

    Options opt;
    const char* verbs[][2] = {
        {"simulate", "Simulate and analyze one spectrum"},
        {"identify", "Identify channel mismatches against the reference channel"},
        {"calibrate", "Identify, calibrate and analyze the corrected spectrum"},
        {"sweep", "Monte-Carlo SINAD sweep over a mismatch standard deviation"},
        {"validate", "Print the normalized config or the list of violations"},
    };
    for (const auto& [name, help] : verbs) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config_path, "JSON config file (empty: all defaults)");
        if (std::string(name) == "validate") continue;
        sub->add_option("--out-dir", opt.out_dir, "Artifact directory (overrides output_dir)");
        sub->add_option("--seed", opt.seed, "Master seed (overrides master_seed)");
        sub->add_option("--format", opt.format, "Summary printed to stdout")
            ->check(CLI::IsMember({"csv", "json"}));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    CLI::App* chosen = app.get_subcommands().front();

    try {
        return execute(chosen->get_name(), opt);
    } catch (const tiadc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
