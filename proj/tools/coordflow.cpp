#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "coordflow/experiment.hpp"

namespace {

coordflow::ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return coordflow::parse_config(ss.str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tensor-train PDE solver with rank-reducing linear coordinate flows"};
    app.require_subcommand(1);

    std::string config_path, output_dir, benchmark, run_dir, bench_out;
    std::uint64_t seed = 0;

    auto* run = app.add_subcommand("run", "integrate an experiment and write CSV/snapshot outputs");
    run->add_option("config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    run->add_option("--output-dir", output_dir, "override output_dir");
    run->add_option("--benchmark", benchmark, "full-grid benchmark snapshot file")->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "override the error-sampling seed");

    auto* bench = app.add_subcommand("bench", "solve the problem on the full grid and write benchmark records");
    bench->add_option("config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    bench->add_option("-o,--output", bench_out, "output file (default <output_dir>/bench.bin)");

    auto* compare = app.add_subcommand("compare", "recompute error.csv of a run against a benchmark");
    compare->add_option("run-dir", run_dir, "run output directory")->required()->check(CLI::ExistingDirectory);
    compare->add_option("bench", benchmark, "benchmark snapshot file")->required()->check(CLI::ExistingFile);
    compare->add_option("--seed", seed, "error-sampling seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            coordflow::RunOptions opts;
            if (!output_dir.empty())
                opts.output_dir = output_dir;
            if (!benchmark.empty())
                opts.benchmark = benchmark;
            if (run->count("--seed"))
                opts.seed = seed;
            const auto out = coordflow::run_experiment(load(config_path), opts);
            const auto& last = out.result.records.back();
            std::printf("t = %.17g  rank_1norm = %ld  mass = %.17g\n", last.t, static_cast<long>(last.rank_1norm),
                        last.mass);
            if (!out.errors.empty())
                std::printf("final linf error = %.17g\n", out.errors.back().second.linf);
        } else if (bench->parsed()) {
            const auto cfg = load(config_path);
            if (bench_out.empty()) {
                std::filesystem::create_directories(cfg.output_dir);
                bench_out = (std::filesystem::path(cfg.output_dir) / "bench.bin").string();
            }
            const auto sol = coordflow::run_benchmark(cfg, bench_out);
            std::printf("wrote %s (t = %.17g)\n", bench_out.c_str(), sol.time);
        } else if (compare->parsed()) {
            const auto errs = coordflow::compare_run(run_dir, benchmark, seed);
            for (const auto& [t, e] : errs)
                std::printf("%.17g %.17g %.17g\n", t, e.linf, e.l2);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "coordflow: %s\n", e.what());
        return 1;
    }
    return 0;
}
