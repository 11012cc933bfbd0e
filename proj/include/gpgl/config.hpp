#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "gpgl/errors.hpp"
#include "gpgl/trainer.hpp"

namespace gpgl {

using json = nlohmann::json;

// JSON (de)serialization of ExperimentConfig. Writing is exhaustive:
// every knob appears with its effective value so the echoed config in the
// output directory fully reproduces a run.

inline json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["dataset"] = {{"kind", cfg.dataset.kind},
                    {"classes", cfg.dataset.classes},
                    {"per_class", cfg.dataset.per_class},
                    {"dim", cfg.dataset.dim},
                    {"separation", cfg.dataset.separation},
                    {"noise", cfg.dataset.noise},
                    {"csv_path", cfg.dataset.csv_path},
                    {"csv_has_header", cfg.dataset.csv_has_header},
                    {"standardize", cfg.dataset.standardize_enabled()}};
    j["model"] = {{"arch", cfg.model.arch},
                  {"hidden_widths", cfg.model.hidden_widths},
                  {"feature_dim", cfg.model.feature_dim()}};
    json schedule = json::array();
    for (const auto& [frac, rate] : cfg.optimizer.lr_schedule)
        schedule.push_back({frac, rate});
    j["optimizer"] = {{"lr_schedule", schedule},
                      {"momentum", cfg.optimizer.momentum},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"batch_size", cfg.optimizer.batch_size},
                      {"epochs", cfg.optimizer.epochs},
                      {"magnitude_floor", cfg.optimizer.magnitude_floor}};
    j["kernel"] = {{"length_scale", cfg.kernel.length_scale},
                   {"noise_variance", cfg.kernel.noise_variance},
                   {"jitter_start", cfg.kernel.jitter_start},
                   {"jitter_max", cfg.kernel.jitter_max}};
    j["anchors"] = {{"per_class", cfg.anchors.per_class_count},
                    {"c_cor", cfg.anchors.c_cor == AnchorSpec::kAllClasses
                                  ? json("all")
                                  : json(cfg.anchors.c_cor)},
                    {"top_k", cfg.anchors.top_k},
                    {"epsilon", cfg.anchors.epsilon}};
    j["run"] = {{"seed", cfg.seed},
                {"seed_count", cfg.seed_count},
                {"mode", cfg.mode},
                {"out_dir", cfg.out_dir},
                {"val_fraction", cfg.val_fraction},
                {"target_error", cfg.target_error ? json(*cfg.target_error) : json(nullptr)},
                {"pin_mu", cfg.pin_mu ? json(*cfg.pin_mu) : json(nullptr)},
                {"swap_norm_denominators", cfg.swap_norm_denominators}};
    return j;
}

namespace detail {
template <class T>
void read_into(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: field '") + key + "': " + e.what());
    }
}
}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        detail::read_into(d, "kind", cfg.dataset.kind);
        detail::read_into(d, "classes", cfg.dataset.classes);
        detail::read_into(d, "per_class", cfg.dataset.per_class);
        detail::read_into(d, "dim", cfg.dataset.dim);
        detail::read_into(d, "separation", cfg.dataset.separation);
        detail::read_into(d, "noise", cfg.dataset.noise);
        detail::read_into(d, "csv_path", cfg.dataset.csv_path);
        detail::read_into(d, "csv_has_header", cfg.dataset.csv_has_header);
        if (d.contains("standardize") && !d.at("standardize").is_null()) {
            bool v = false;
            detail::read_into(d, "standardize", v);
            cfg.dataset.standardize = v;
        }
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        detail::read_into(m, "arch", cfg.model.arch);
        detail::read_into(m, "hidden_widths", cfg.model.hidden_widths);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        if (o.contains("lr_schedule")) {
            cfg.optimizer.lr_schedule.clear();
            for (const auto& entry : o.at("lr_schedule")) {
                if (!entry.is_array() || entry.size() != 2)
                    throw ConfigError("config: lr_schedule entries must be [fraction, rate]");
                cfg.optimizer.lr_schedule.emplace_back(entry[0].get<double>(),
                                                       entry[1].get<double>());
            }
        }
        detail::read_into(o, "momentum", cfg.optimizer.momentum);
        detail::read_into(o, "weight_decay", cfg.optimizer.weight_decay);
        detail::read_into(o, "batch_size", cfg.optimizer.batch_size);
        detail::read_into(o, "epochs", cfg.optimizer.epochs);
        detail::read_into(o, "magnitude_floor", cfg.optimizer.magnitude_floor);
    }
    if (j.contains("kernel")) {
        const json& k = j.at("kernel");
        detail::read_into(k, "length_scale", cfg.kernel.length_scale);
        detail::read_into(k, "noise_variance", cfg.kernel.noise_variance);
        detail::read_into(k, "jitter_start", cfg.kernel.jitter_start);
        detail::read_into(k, "jitter_max", cfg.kernel.jitter_max);
    }
    if (j.contains("anchors")) {
        const json& a = j.at("anchors");
        detail::read_into(a, "per_class", cfg.anchors.per_class_count);
        if (a.contains("c_cor")) {
            const json& c = a.at("c_cor");
            if (c.is_string() && c.get<std::string>() == "all")
                cfg.anchors.c_cor = AnchorSpec::kAllClasses;
            else if (c.is_number_integer())
                cfg.anchors.c_cor = c.get<int>();
            else
                throw ConfigError("config: anchors.c_cor must be an integer or \"all\"");
        }
        detail::read_into(a, "top_k", cfg.anchors.top_k);
        detail::read_into(a, "epsilon", cfg.anchors.epsilon);
    }
    if (j.contains("run")) {
        const json& r = j.at("run");
        detail::read_into(r, "seed", cfg.seed);
        detail::read_into(r, "seed_count", cfg.seed_count);
        detail::read_into(r, "mode", cfg.mode);
        detail::read_into(r, "out_dir", cfg.out_dir);
        detail::read_into(r, "val_fraction", cfg.val_fraction);
        if (r.contains("target_error") && !r.at("target_error").is_null())
            cfg.target_error = r.at("target_error").get<double>();
        if (r.contains("pin_mu") && !r.at("pin_mu").is_null())
            cfg.pin_mu = r.at("pin_mu").get<double>();
        detail::read_into(r, "swap_norm_denominators", cfg.swap_norm_denominators);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_config: cannot open '" + path + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("load_config: '" + path + "' is not valid JSON");
    return config_from_json(j);
}

// The effective config is always echoed next to the metrics so a run
// directory is self-describing.
inline void echo_config(const ExperimentConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/config.json";
    std::ofstream out(path);
    if (!out) throw ConfigError("echo_config: cannot open '" + path + "'");
    out << config_to_json(cfg).dump(2) << '\n';
}

// ----- presets ----------------------------------------------------------

// 10 Gaussian blobs in 8 dimensions with moderate overlap; the anchor
// budget of 128 is split evenly across classes.
inline ExperimentConfig preset_blobs10() {
    ExperimentConfig cfg;
    cfg.dataset.kind = "blobs";
    cfg.dataset.classes = 10;
    cfg.dataset.per_class = 200;
    cfg.dataset.dim = 8;
    cfg.dataset.separation = 2.0;
    cfg.dataset.noise = 1.5;
    cfg.dataset.standardize = true;
    cfg.model.hidden_widths = {32, 32};
    cfg.optimizer.epochs = 50;
    cfg.optimizer.batch_size = 32;
    cfg.kernel.length_scale = 8.0;
    cfg.kernel.noise_variance = 0.01;
    cfg.anchors.per_class_count = 12;  // 128 total budget over 10 classes
    cfg.anchors.c_cor = AnchorSpec::kAllClasses;
    cfg.anchors.top_k = 5;
    cfg.seed_count = 5;
    return cfg;
}

// Two interleaved spirals; not linearly separable.
inline ExperimentConfig preset_spiral2() {
    ExperimentConfig cfg;
    cfg.dataset.kind = "interleaved";
    cfg.dataset.classes = 2;
    cfg.dataset.per_class = 300;
    cfg.dataset.dim = 2;
    cfg.dataset.noise = 0.08;
    cfg.dataset.standardize = true;
    cfg.model.hidden_widths = {32, 32};
    cfg.optimizer.epochs = 80;
    cfg.optimizer.batch_size = 32;
    cfg.kernel.length_scale = 4.0;
    cfg.anchors.per_class_count = 24;
    cfg.anchors.c_cor = AnchorSpec::kAllClasses;
    cfg.anchors.top_k = 2;
    // with two classes mu starts at 0.5, so the context terms carry real
    // weight from epoch 1; the wider floor bounds their log-gradients
    // while the feature space is still forming
    cfg.anchors.epsilon = 5e-3;
    cfg.seed_count = 3;
    return cfg;
}

// Three well-separated blobs, tiny budget; for smoke runs and tests.
inline ExperimentConfig preset_blobs3_fast() {
    ExperimentConfig cfg;
    cfg.dataset.kind = "blobs";
    cfg.dataset.classes = 3;
    cfg.dataset.per_class = 60;
    cfg.dataset.dim = 2;
    cfg.dataset.separation = 4.0;
    cfg.dataset.noise = 0.8;
    cfg.dataset.standardize = true;
    cfg.model.hidden_widths = {16, 16};
    cfg.optimizer.epochs = 3;
    cfg.optimizer.batch_size = 16;
    cfg.kernel.length_scale = 4.0;
    cfg.anchors.per_class_count = 10;
    cfg.anchors.c_cor = AnchorSpec::kAllClasses;
    cfg.anchors.top_k = 3;
    cfg.seed_count = 1;
    return cfg;
}

inline ExperimentConfig preset_by_name(const std::string& name) {
    if (name == "blobs10") return preset_blobs10();
    if (name == "spiral2") return preset_spiral2();
    if (name == "blobs3-fast") return preset_blobs3_fast();
    throw ConfigError("unknown preset '" + name +
                      "' (available: blobs10, spiral2, blobs3-fast)");
}

}  // namespace gpgl
