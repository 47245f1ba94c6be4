#include <CLI11.hpp>

#include <iostream>

#include "rseq/cli/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"rseq: train, evaluate and gradient-check sequence models"};
    app.require_subcommand(1);

    rseq::cli::Options opt;
    std::optional<std::string> seed, threads, precision, out, max_epochs;
    std::vector<std::string> assignments;

    for (const auto* name : {"train", "eval", "gradcheck"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", opt.config_path, "key = value config file");
        sub->add_option("--seed", seed, "RNG seed");
        sub->add_option("--threads", threads, "worker threads for matrix products (0 = auto)");
        sub->add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
        sub->add_option("--out", out, "output directory");
        sub->add_option("--max-epochs", max_epochs, "epoch limit");
        sub->add_option("--checkpoint", opt.checkpoint, "checkpoint to evaluate or resume from");
        sub->add_option("--split", opt.split, "evaluation split (val or test)");
        sub->add_option("overrides", assignments, "key=value overrides");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : rseq::cli::kInvalid;
    }

    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) {
            std::cerr << "error: expected key=value, got '" << a << "'\n";
            return rseq::cli::kInvalid;
        }
        opt.overrides.emplace_back(a.substr(0, eq), a.substr(eq + 1));
    }
    // Explicit flags win over key=value overrides.
    if (seed) opt.overrides.emplace_back("seed", *seed);
    if (threads) opt.overrides.emplace_back("threads", *threads);
    if (precision) opt.overrides.emplace_back("precision", *precision);
    if (out) opt.overrides.emplace_back("out", *out);
    if (max_epochs) opt.overrides.emplace_back("max_epochs", *max_epochs);

    return rseq::cli::run_command(app.get_subcommands().front()->get_name(), opt, std::cout, std::cerr);
}
