// Command line runner for the experiment catalog.
//
//   lcft list
//   lcft validate <config.json> [--seed N] [--replicas N]
//   lcft run <config.json> [--seed N] [--replicas N] [--out DIR] [--strict]
//
// Exit codes: 0 ok, 1 usage or I/O, 2 config error, 3 precondition error,
// 4 numerical degeneracy, 5 a built-in check failed (run --strict only).
#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "lcft/experiments.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kPrecondition = 3, kDegenerate = 4, kCheckFailed = 5 };

int report(const char* category, const lcft::Error& e, int code) {
    std::cerr << category << " error";
    if (!e.field().empty()) std::cerr << " at " << e.field();
    std::cerr << ": " << e.what() << "\n";
    return code;
}

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> replicas;
};

lcft::ExperimentConfig load(const std::string& path, const Overrides& o) {
    nlohmann::json raw = lcft::read_config_file(path);
    if (raw.is_object()) {
        if (o.seed) raw["seed"] = *o.seed;
        if (o.replicas) raw["replicas"] = *o.replicas;
    }
    return lcft::validate_config(raw);
}

void print_list() {
    for (const lcft::ExperimentInfo& e : lcft::experiment_catalog()) {
        std::printf("%-15s %s\n", e.kind.c_str(), e.description.c_str());
        std::printf("%-15s anchor: %s\n", "", e.anchor.c_str());
        for (const std::string& c : e.csv) std::printf("%-15s csv: %s\n", "", c.c_str());
    }
}

int run(const std::string& path, const Overrides& o, const std::string& out, bool strict) {
    const lcft::ExperimentConfig cfg = load(path, o);
    const lcft::ResultRecord rec = lcft::run_experiment(cfg);
    std::string dir = !out.empty() ? out : !cfg.out.empty() ? cfg.out : "lcft-out/" + cfg.kind + "-" + cfg.fingerprint_hex();
    const auto files = lcft::write_result(rec, dir);
    std::printf("%s %s (%.1f s)\n", cfg.kind.c_str(), cfg.fingerprint_hex().c_str(), rec.wall_clock);
    for (const lcft::Scalar& s : rec.scalars) {
        if (s.stderr_ == s.stderr_)
            std::printf("  %-32s %.10g +- %.3g\n", s.name.c_str(), s.value, s.stderr_);
        else
            std::printf("  %-32s %.10g\n", s.name.c_str(), s.value);
    }
    for (const lcft::Check& c : rec.checks)
        std::printf("  [%s] %s: %s\n", c.pass ? "pass" : "FAIL", c.name.c_str(), c.detail.c_str());
    std::printf("  wrote %zu files to %s\n", files.size(), dir.c_str());
    return strict && !rec.passed() ? kCheckFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Liouville CFT numerical lab"};
    app.require_subcommand(1);
    Overrides o;
    std::string config, out;
    bool strict = false;
    std::uint64_t seed = 0;
    std::size_t replicas = 0;

    app.add_subcommand("list", "print the experiment catalog");
    auto* validate = app.add_subcommand("validate", "check a config without running it");
    auto* runner = app.add_subcommand("run", "run an experiment and write its result files");
    for (auto* sub : {validate, runner}) {
        sub->add_option("config", config, "config file (JSON)")->required();
        sub->add_option("--seed", seed, "override the master seed");
        sub->add_option("--replicas", replicas, "override the replica budget");
    }
    runner->add_option("--out", out, "output directory");
    runner->add_flag("--strict", strict, "exit 5 when a built-in check fails");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }
    if (validate->count("--seed") || runner->count("--seed")) o.seed = seed;
    if (validate->count("--replicas") || runner->count("--replicas")) o.replicas = replicas;

    try {
        if (app.got_subcommand("list")) {
            print_list();
            return kOk;
        }
        if (app.got_subcommand("validate")) {
            const lcft::ExperimentConfig cfg = load(config, o);
            std::printf("ok %s %s\n", cfg.kind.c_str(), cfg.fingerprint_hex().c_str());
            std::printf("%s\n", cfg.canonical().dump(2).c_str());
            return kOk;
        }
        return run(config, o, out, strict);
    } catch (const lcft::ConfigError& e) {
        return report("config", e, kConfig);
    } catch (const lcft::PreconditionError& e) {
        return report("precondition", e, kPrecondition);
    } catch (const lcft::DegeneracyError& e) {
        return report("numerical degeneracy", e, kDegenerate);
    } catch (const lcft::DomainError& e) {
        return report("numerical degeneracy", e, kDegenerate);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
}
