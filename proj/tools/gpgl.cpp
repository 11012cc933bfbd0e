// Command-line entry point: train one mode, compare both modes over
// seeds, run the GP and gradient self-checks, or re-emit metrics as
// plot-friendly columns.
//
// Exit codes: 0 success, 1 self-check failure, 2 usage/config error,
// 3 numeric runtime failure.

#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "gpgl/config.hpp"
#include "gpgl/metrics.hpp"
#include "gpgl/selftest.hpp"
#include "gpgl/trainer.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::string preset;
    std::optional<uint64_t> seed;
    std::optional<int> seed_count;
    std::string mode;
    std::string out_dir;
    std::optional<long> epochs;
    std::optional<long> batch_size;
    std::optional<double> length_scale;
    std::optional<int> anchor_per_class;
    std::string c_cor;
    std::optional<int> top_k;
    bool swap_norm_denominators = false;
    std::optional<double> pin_mu;
    std::optional<double> target_error;
};

void add_experiment_flags(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "experiment config file (JSON)");
    cmd->add_option("--preset", o.preset, "built-in preset: blobs10, spiral2, blobs3-fast");
    cmd->add_option("--seed", o.seed, "root seed; all randomness derives from it");
    cmd->add_option("--seed-count", o.seed_count, "number of runs (compare)");
    cmd->add_option("--mode", o.mode, "baseline or gpgl")
        ->check(CLI::IsMember({"baseline", "gpgl"}));
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--batch-size", o.batch_size, "mini-batch size");
    cmd->add_option("--length-scale", o.length_scale, "RBF kernel length scale");
    cmd->add_option("--anchor-per-class", o.anchor_per_class, "anchors sampled per class");
    cmd->add_option("--c-cor", o.c_cor, "neighbor classes per query class, or \"all\"");
    cmd->add_option("--top-k", o.top_k, "context-label components kept");
    cmd->add_flag("--swap-norm-denominators", o.swap_norm_denominators,
                  "swap the |ce2| and |kl| weight denominators");
    cmd->add_option("--pin-mu", o.pin_mu, "freeze the error-rate weight at this value");
    cmd->add_option("--target-error", o.target_error, "epochs-to-threshold target");
}

gpgl::ExperimentConfig assemble_config(const Overrides& o) {
    if (!o.config_path.empty() && !o.preset.empty())
        throw gpgl::ConfigError("--config and --preset are mutually exclusive");
    gpgl::ExperimentConfig cfg;
    if (!o.preset.empty()) cfg = gpgl::preset_by_name(o.preset);
    if (!o.config_path.empty()) cfg = gpgl::load_config(o.config_path);

    if (o.seed) cfg.seed = *o.seed;
    if (o.seed_count) cfg.seed_count = *o.seed_count;
    if (!o.mode.empty()) cfg.mode = o.mode;
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (o.epochs) cfg.optimizer.epochs = *o.epochs;
    if (o.batch_size) cfg.optimizer.batch_size = *o.batch_size;
    if (o.length_scale) cfg.kernel.length_scale = *o.length_scale;
    if (o.anchor_per_class) cfg.anchors.per_class_count = *o.anchor_per_class;
    if (!o.c_cor.empty()) {
        if (o.c_cor == "all") {
            cfg.anchors.c_cor = gpgl::AnchorSpec::kAllClasses;
        } else {
            try {
                cfg.anchors.c_cor = std::stoi(o.c_cor);
            } catch (const std::exception&) {
                throw gpgl::ConfigError("--c-cor must be an integer or \"all\"");
            }
        }
    }
    if (o.top_k) cfg.anchors.top_k = *o.top_k;
    if (o.swap_norm_denominators) cfg.swap_norm_denominators = true;
    if (o.pin_mu) cfg.pin_mu = *o.pin_mu;
    if (o.target_error) cfg.target_error = *o.target_error;
    cfg.validate();
    return cfg;
}

int cmd_train(const Overrides& o) {
    gpgl::ExperimentConfig cfg = assemble_config(o);
    if (cfg.mode == "both") cfg.mode = "gpgl";
    const gpgl::Mode mode = cfg.mode == "baseline" ? gpgl::Mode::baseline : gpgl::Mode::gpgl;

    gpgl::echo_config(cfg, cfg.out_dir);
    const uint64_t run_seed = gpgl::derive_seed(cfg.seed, "run", 0);
    const gpgl::PreparedData data = gpgl::prepare_data(cfg, run_seed);
    const gpgl::RunHistory history = gpgl::run_single(cfg, mode, run_seed, data);

    gpgl::write_metrics(gpgl::run_records(run_seed, history, cfg.target_error),
                        cfg.out_dir + "/metrics.jsonl");

    std::printf("mode=%s epochs=%zu initial_mu=%.6f final_val_error=%.6f\n",
                gpgl::mode_name(mode), history.epochs.size(), history.initial_mu,
                history.final_val_error);
    for (const auto& e : history.epochs)
        std::printf("  epoch %3ld  train %.4f  val %.4f  gv %.4f  top%d %.4f  (%.2fs)\n",
                    e.epoch, e.train_error, e.val_error, e.mean_gv, cfg.anchors.top_k,
                    e.mean_topk_mass, e.wall_seconds);
    std::printf("metrics: %s/metrics.jsonl\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_compare(const Overrides& o) {
    gpgl::ExperimentConfig cfg = assemble_config(o);
    cfg.mode = "both";
    gpgl::echo_config(cfg, cfg.out_dir);

    const gpgl::CompareResult result = gpgl::run_compare(cfg);
    gpgl::write_metrics(gpgl::compare_records(result, cfg.target_error),
                        cfg.out_dir + "/metrics.jsonl");

    std::printf("%-20s %-12s %-12s %-12s %-10s %-10s\n", "seed", "baseline", "gpgl",
                "threshold", "base-e2t", "gpgl-e2t");
    const auto e2t = [](long e) { return e < 0 ? std::string("not reached") : std::to_string(e); };
    for (const auto& s : result.seeds)
        std::printf("%-20llu %-12.6f %-12.6f %-12.6f %-10s %-10s\n",
                    static_cast<unsigned long long>(s.run_seed), s.baseline.final_val_error,
                    s.gpgl.final_val_error, s.relative_threshold,
                    e2t(s.baseline_epochs_to_rel).c_str(), e2t(s.gpgl_epochs_to_rel).c_str());
    std::printf("%-20s %-12.6f %-12.6f %-12s %-10.2f %-10.2f\n", "mean",
                result.mean_final_baseline, result.mean_final_gpgl, "-",
                result.mean_epochs_to_rel_baseline, result.mean_epochs_to_rel_gpgl);
    std::printf("metrics: %s/metrics.jsonl\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_gp_selftest(uint64_t seed, long cases, const std::string& config_path,
                    std::optional<double> length_scale, std::optional<double> noise_variance) {
    gpgl::KernelConfig kernel;
    if (!config_path.empty()) kernel = gpgl::load_config(config_path).kernel;
    if (length_scale) kernel.length_scale = *length_scale;
    if (noise_variance) kernel.noise_variance = *noise_variance;
    kernel.validate();

    const gpgl::SelftestReport report = gpgl::gp_selftest(seed, cases, kernel);
    std::printf("oracle equivalence: %ld cases, %ld failures, max abs err %.3e\n",
                report.oracle_cases, report.oracle_failures, report.oracle_max_abs_err);
    if (!report.failing_seeds.empty()) {
        std::printf("  failing case seeds:");
        for (uint64_t s : report.failing_seeds)
            std::printf(" %llu", static_cast<unsigned long long>(s));
        std::printf("\n");
    }
    std::printf("interpolation identity: %s (max err %.3e)\n",
                report.interpolation_ok ? "ok" : "FAILED", report.interpolation_max_err);
    std::printf("snapshot round-trip: %s\n", report.roundtrip_ok ? "ok" : "FAILED");
    std::printf("gp-selftest: %s\n", report.ok() ? "PASS" : "FAIL");
    return report.ok() ? 0 : 1;
}

int cmd_gradcheck(uint64_t seed, long seeds, double step) {
    double worst = 0.0;
    std::string worst_param;
    uint64_t worst_seed = 0;
    for (long i = 0; i < seeds; ++i) {
        const uint64_t s = seed + static_cast<uint64_t>(i);
        const gpgl::GradcheckReport r = gpgl::triangle_gradcheck(s, step);
        std::printf("seed %llu: max rel err %.3e over %ld coordinates (worst: %s)\n",
                    static_cast<unsigned long long>(s), r.max_rel_error, r.coords_checked,
                    r.worst_param.c_str());
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            worst_param = r.worst_param;
            worst_seed = s;
        }
    }
    const bool ok = worst < 1e-3;
    std::printf("gradcheck: %s (worst %.3e at seed %llu, %s)\n", ok ? "PASS" : "FAIL", worst,
                static_cast<unsigned long long>(worst_seed), worst_param.c_str());
    return ok ? 0 : 1;
}

int cmd_emit_plot_data(const std::string& metrics_path, const std::string& out_path) {
    gpgl::emit_plot_data(metrics_path, out_path);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"epoch-evolving Gaussian-process guided learning, desk scale"};
    app.require_subcommand(1);

    Overrides train_o, compare_o;
    CLI::App* train = app.add_subcommand("train", "run one training mode end to end");
    add_experiment_flags(train, train_o);
    CLI::App* compare =
        app.add_subcommand("compare", "run baseline and gpgl on identical seeds");
    add_experiment_flags(compare, compare_o);

    uint64_t st_seed = 1;
    long st_cases = 200;
    std::string st_config;
    std::optional<double> st_length_scale, st_noise;
    CLI::App* selftest = app.add_subcommand("gp-selftest", "GP oracle and identity checks");
    selftest->add_option("--seed", st_seed, "root seed for the random cases");
    selftest->add_option("--cases", st_cases, "number of oracle-equivalence cases");
    selftest->add_option("--config", st_config, "take the kernel settings from this config");
    selftest->add_option("--length-scale", st_length_scale, "RBF kernel length scale");
    selftest->add_option("--noise-variance", st_noise, "observation noise variance");

    uint64_t gc_seed = 1;
    long gc_seeds = 5;
    double gc_step = 1e-5;
    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "triangle-loss gradient vs finite differences");
    gradcheck->add_option("--seed", gc_seed, "first seed");
    gradcheck->add_option("--seeds", gc_seeds, "number of seeds");
    gradcheck->add_option("--step", gc_step, "central-difference step");

    std::string plot_metrics, plot_out = "plot.tsv";
    CLI::App* plot = app.add_subcommand("emit-plot-data",
                                        "metrics file -> per-mode (epoch, errors) columns");
    plot->add_option("--metrics", plot_metrics, "metrics.jsonl produced by train/compare")
        ->required();
    plot->add_option("--out", plot_out, "output TSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_o);
        if (compare->parsed()) return cmd_compare(compare_o);
        if (selftest->parsed())
            return cmd_gp_selftest(st_seed, st_cases, st_config, st_length_scale, st_noise);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_seeds, gc_step);
        if (plot->parsed()) return cmd_emit_plot_data(plot_metrics, plot_out);
    } catch (const gpgl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gpgl::Error& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
