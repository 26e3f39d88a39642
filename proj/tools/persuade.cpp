#include <CLI11.hpp>

#include <persuasion/cli.hpp>

int main(int argc, char** argv) {
    using namespace persuasion;
    CLI::App app{"Bayesian persuasion solver and verifier"};
    app.set_version_flag("--version", cli::kToolVersion);
    cli::RunArgs args;
    std::uint64_t seed = 0;
    int threads = 0;
    app.add_option("command", args.command, "solve | project | verify | closed-form | linearize | oracle | pools")
        ->required()
        ->check(CLI::IsMember(cli::commands()));
    app.add_option("--config", args.configPath, "JSON run configuration")->required();
    app.add_option("--out", args.outDir, "output directory for artifacts");
    auto* seedOpt = app.add_option("--seed", seed, "overrides sampling.seed");
    auto* threadOpt = app.add_option("--threads", threads, "cap on worker threads");
    app.add_option("--set", args.overrides, "override a config entry, key.path=value")->take_all();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::kInvalidConfig;
    }
    if (*seedOpt) args.seed = seed;
    if (*threadOpt) args.threads = threads;
    return cli::run(args);
}
