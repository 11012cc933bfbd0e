#pragma once

#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "gpgl/errors.hpp"
#include "gpgl/trainer.hpp"

namespace gpgl {

using json = nlohmann::json;

// Line-delimited records: one "epoch" record per epoch per mode, one
// "summary" record per seed, one "aggregate" record for multi-seed runs.
// Wall-clock timing is deliberately left out so identical seeds produce
// byte-identical files.

inline json epoch_record(uint64_t run_seed, Mode mode, const EpochStats& s) {
    json j;
    j["kind"] = "epoch";
    j["seed"] = run_seed;
    j["mode"] = mode_name(mode);
    j["epoch"] = s.epoch;
    j["train_error"] = s.train_error;
    j["val_error"] = s.val_error;
    j["mag_ce1"] = s.mag_ce1;
    j["mag_kl"] = s.mag_kl;
    j["mag_ce2"] = s.mag_ce2;
    j["mean_gv"] = s.mean_gv;
    j["mean_topk_mass"] = s.mean_topk_mass;
    return j;
}

inline json mode_summary(const RunHistory& h, const std::optional<double>& target_error) {
    json j;
    j["final_val_error"] = h.final_val_error;
    j["initial_mu"] = h.initial_mu;
    j["epochs_run"] = h.epochs.size();
    if (target_error) {
        const long e = h.epochs_to_threshold(*target_error);
        j["epochs_to_target"] = e < 0 ? json(nullptr) : json(e);
    }
    return j;
}

inline std::vector<json> run_records(uint64_t run_seed, const RunHistory& h,
                                     const std::optional<double>& target_error) {
    std::vector<json> records;
    for (const auto& e : h.epochs) records.push_back(epoch_record(run_seed, h.mode, e));
    json summary;
    summary["kind"] = "summary";
    summary["seed"] = run_seed;
    summary[mode_name(h.mode)] = mode_summary(h, target_error);
    if (target_error) summary["target_error"] = *target_error;
    records.push_back(summary);
    return records;
}

inline std::vector<json> compare_records(const CompareResult& result,
                                         const std::optional<double>& target_error) {
    std::vector<json> records;
    for (const auto& cmp : result.seeds) {
        for (const auto& e : cmp.baseline.epochs)
            records.push_back(epoch_record(cmp.run_seed, Mode::baseline, e));
        for (const auto& e : cmp.gpgl.epochs)
            records.push_back(epoch_record(cmp.run_seed, Mode::gpgl, e));
        json summary;
        summary["kind"] = "summary";
        summary["seed"] = cmp.run_seed;
        summary["baseline"] = mode_summary(cmp.baseline, target_error);
        summary["gpgl"] = mode_summary(cmp.gpgl, target_error);
        summary["relative_threshold"] = cmp.relative_threshold;
        summary["baseline_epochs_to_relative"] =
            cmp.baseline_epochs_to_rel < 0 ? json(nullptr) : json(cmp.baseline_epochs_to_rel);
        summary["gpgl_epochs_to_relative"] =
            cmp.gpgl_epochs_to_rel < 0 ? json(nullptr) : json(cmp.gpgl_epochs_to_rel);
        if (target_error) summary["target_error"] = *target_error;
        records.push_back(summary);
    }
    if (result.seeds.size() > 1) {
        json agg;
        agg["kind"] = "aggregate";
        agg["seeds"] = result.seeds.size();
        agg["mean_final_baseline"] = result.mean_final_baseline;
        agg["mean_final_gpgl"] = result.mean_final_gpgl;
        agg["mean_epochs_to_relative_baseline"] = result.mean_epochs_to_rel_baseline;
        agg["mean_epochs_to_relative_gpgl"] = result.mean_epochs_to_rel_gpgl;
        records.push_back(agg);
    }
    return records;
}

inline void write_metrics(const std::vector<json>& records, const std::string& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("write_metrics: cannot open '" + path + "'");
    for (const auto& r : records) out << r.dump() << '\n';
    if (!out) throw ConfigError("write_metrics: write failure for '" + path + "'");
}

inline std::vector<json> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("read_metrics: cannot open '" + path + "'");
    std::vector<json> records;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ConfigError("read_metrics: line " + std::to_string(line_no) +
                              ": invalid record");
        records.push_back(std::move(j));
    }
    return records;
}

// Tab-separated (mode, epoch, train error, val error) rows for plotting.
inline void emit_plot_data(const std::string& metrics_path, const std::string& out_path) {
    const std::vector<json> records = read_metrics(metrics_path);
    std::ofstream out(out_path);
    if (!out) throw ConfigError("emit_plot_data: cannot open '" + out_path + "'");
    out << "mode\tepoch\ttrain_error\tval_error\n";
    long line_no = 0;
    for (const auto& r : records) {
        ++line_no;
        if (!r.contains("kind"))
            throw ConfigError("emit_plot_data: record " + std::to_string(line_no) +
                              ": missing kind");
        if (r["kind"] != "epoch") continue;
        try {
            out << r.at("mode").get<std::string>() << '\t' << r.at("epoch").get<long>() << '\t'
                << r.at("train_error").get<double>() << '\t' << r.at("val_error").get<double>()
                << '\n';
        } catch (const json::exception& e) {
            throw ConfigError("emit_plot_data: record " + std::to_string(line_no) + ": " +
                              e.what());
        }
    }
    if (!out) throw ConfigError("emit_plot_data: write failure for '" + out_path + "'");
}

}  // namespace gpgl
