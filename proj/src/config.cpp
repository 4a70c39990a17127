// SPDX-License-Identifier: Apache-2.0

#include "cap/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "cap/json_util.hpp"

namespace cap {

std::string to_string(Method m) {
    switch (m) {
        case Method::first_order: return "first_order";
        case Method::cap_f: return "cap_f";
        case Method::movement: return "movement";
        case Method::cap_m: return "cap_m";
        case Method::soft_movement: return "soft_movement";
        case Method::cap_soft: return "cap_soft";
        case Method::magnitude: return "magnitude";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "first_order") return Method::first_order;
    if (s == "cap_f") return Method::cap_f;
    if (s == "movement") return Method::movement;
    if (s == "cap_m") return Method::cap_m;
    if (s == "soft_movement") return Method::soft_movement;
    if (s == "cap_soft") return Method::cap_soft;
    if (s == "magnitude") return Method::magnitude;
    throw ConfigError("method: unknown value '" + s + "'");
}

Criterion criterion_of(Method m) {
    switch (m) {
        case Method::first_order:
        case Method::cap_f: return Criterion::first_order;
        case Method::movement:
        case Method::cap_m: return Criterion::movement;
        case Method::soft_movement:
        case Method::cap_soft: return Criterion::soft_movement;
        case Method::magnitude: return Criterion::magnitude;
    }
    return Criterion::movement;
}

ScheduleKind schedule_kind_of(Method m) {
    return criterion_of(m) == Criterion::first_order ? ScheduleKind::milestones
                                                     : ScheduleKind::cubic;
}

bool is_cap_method(Method m) {
    return m == Method::cap_f || m == Method::cap_m || m == Method::cap_soft;
}

ScheduleKind RunConfig::resolved_schedule_kind() const { return schedule_kind_of(method); }

void RunConfig::validate() const {
    if (!(target_sparsity > 0.0 && target_sparsity < 100.0)) {
        throw ConfigError("target_sparsity: must lie in (0, 100)");
    }
    if (schedule_kind != "auto") {
        const ScheduleKind wanted =
            schedule_kind == "milestones"
                ? ScheduleKind::milestones
                : (schedule_kind == "cubic"
                       ? ScheduleKind::cubic
                       : throw ConfigError("schedule_kind: unknown value '" + schedule_kind + "'"));
        if (wanted != schedule_kind_of(method)) {
            throw ConfigError("schedule_kind: '" + schedule_kind + "' does not match method '" +
                              to_string(method) + "'");
        }
    }
    try {
        model.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("model.") + e.what());
    }
    try {
        contrastive.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("contrastive.") + e.what());
    }
    if (loss.lambda_ce <= 0.0) throw ConfigError("loss.lambda_ce: must be positive");
    for (const auto& [name, v] :
         {std::pair<const char*, double>{"loss.lambda_prc", loss.lambda_prc},
          {"loss.lambda_snc", loss.lambda_snc},
          {"loss.lambda_fic", loss.lambda_fic},
          {"loss.kd_weight", loss.kd_weight}}) {
        if (v < 0.0) throw ConfigError(std::string(name) + ": must be non-negative");
        // Bare criteria are the contrastive-free baselines by definition.
        if (v > 0.0 && !is_cap_method(method)) {
            throw ConfigError(std::string(name) + ": must be 0 for baseline method '" +
                              to_string(method) + "'");
        }
    }
    if (!(loss.kd_temperature > 0.0)) throw ConfigError("loss.kd_temperature: must be positive");
    if (data.kind != "synthetic" && data.kind != "tsv") {
        throw ConfigError("data.kind: unknown value '" + data.kind + "'");
    }
    if (data.kind == "synthetic") {
        synthetic_family_from_string(data.family);
        if (data.n_examples <= 0) throw ConfigError("data.n_examples: must be positive");
    } else if (data.train_tsv.empty() || data.dev_tsv.empty()) {
        throw ConfigError("data.train_tsv/dev_tsv: required for tsv datasets");
    }
    if (train.batch_size <= 0) throw ConfigError("train.batch_size: must be positive");
    if (contrastive.unsup_enabled && contrastive.bank_size < train.batch_size) {
        throw ConfigError(
            "contrastive.bank_size: must cover the anchor batch when unsupervised contrast is on");
    }
    if (train.topk_scope != "global" && train.topk_scope != "per_site") {
        throw ConfigError("train.topk_scope: unknown value '" + train.topk_scope + "'");
    }
    if (train.regularizer_weight < 0.0) {
        throw ConfigError("train.regularizer_weight: must be non-negative");
    }
    if (train.mask_update_interval < 1) {
        throw ConfigError("train.mask_update_interval: must be at least 1");
    }
    if (train.warmup_steps < 0 || train.ramp_steps <= 0 || train.cooldown_steps < 0) {
        throw ConfigError("train: cubic schedule steps must be non-negative (ramp positive)");
    }
}

namespace {

nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["method"] = to_string(c.method);
    j["target_sparsity"] = c.target_sparsity;
    j["schedule_kind"] = c.schedule_kind;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["model"] = model_config_to_json(c.model);

    nlohmann::ordered_json d;
    d["kind"] = c.data.kind;
    d["family"] = c.data.family;
    d["n_examples"] = c.data.n_examples;
    d["n_classes"] = c.data.n_classes;
    d["n_dev"] = c.data.n_dev;
    d["train_tsv"] = c.data.train_tsv;
    d["dev_tsv"] = c.data.dev_tsv;
    j["data"] = d;

    nlohmann::ordered_json k;
    k["temperature"] = c.contrastive.temperature;
    k["bank_size"] = c.contrastive.bank_size;
    k["prc"] = c.contrastive.prc;
    k["snc"] = c.contrastive.snc;
    k["fic"] = c.contrastive.fic;
    k["sup_enabled"] = c.contrastive.sup_enabled;
    k["unsup_enabled"] = c.contrastive.unsup_enabled;
    k["snc_pooled"] = c.contrastive.snc_pooled;
    k["resample_fetch"] = c.contrastive.resample_fetch;
    j["contrastive"] = k;

    nlohmann::ordered_json w;
    w["lambda_ce"] = c.loss.lambda_ce;
    w["lambda_prc"] = c.loss.lambda_prc;
    w["lambda_snc"] = c.loss.lambda_snc;
    w["lambda_fic"] = c.loss.lambda_fic;
    w["kd_weight"] = c.loss.kd_weight;
    w["kd_temperature"] = c.loss.kd_temperature;
    j["loss"] = w;

    nlohmann::ordered_json t;
    t["batch_size"] = c.train.batch_size;
    t["lr"] = c.train.lr;
    t["score_lr"] = c.train.score_lr;
    t["finetune_epochs"] = c.train.finetune_epochs;
    t["pretrain_steps"] = c.train.pretrain_steps;
    t["mask_update_interval"] = c.train.mask_update_interval;
    t["topk_scope"] = c.train.topk_scope;
    t["threshold"] = c.train.threshold;
    t["regularizer_weight"] = c.train.regularizer_weight;
    t["eval_every"] = c.train.eval_every;
    t["first_order_abs_per_batch"] = c.train.first_order_abs_per_batch;
    t["drop_snapshot_weights"] = c.train.drop_snapshot_weights;
    t["retrain_epochs_per_milestone"] = c.train.retrain_epochs_per_milestone;
    t["retrain_steps_per_milestone"] = c.train.retrain_steps_per_milestone;
    t["milestone_fraction"] = c.train.milestone_fraction;
    t["warmup_steps"] = c.train.warmup_steps;
    t["ramp_steps"] = c.train.ramp_steps;
    t["cooldown_steps"] = c.train.cooldown_steps;
    t["snapshot_crossings"] = c.train.snapshot_crossings;
    j["train"] = t;
    return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
    RunConfig c;
    StrictReader r(j, "");
    std::string method = to_string(c.method);
    r.read("method", method);
    c.method = method_from_string(method);
    r.read("target_sparsity", c.target_sparsity);
    r.read("schedule_kind", c.schedule_kind);
    r.read("seed", c.seed);
    r.read("output_dir", c.output_dir);

    if (r.has("model")) {
        c.model = model_config_from_json(j.at("model"), "model.");
        (void)r.child("model");
    }

    {
        StrictReader d = r.child("data");
        d.read("kind", c.data.kind);
        d.read("family", c.data.family);
        d.read("n_examples", c.data.n_examples);
        d.read("n_classes", c.data.n_classes);
        d.read("n_dev", c.data.n_dev);
        d.read("train_tsv", c.data.train_tsv);
        d.read("dev_tsv", c.data.dev_tsv);
        d.finish();
    }
    {
        StrictReader k = r.child("contrastive");
        k.read("temperature", c.contrastive.temperature);
        k.read("bank_size", c.contrastive.bank_size);
        k.read("prc", c.contrastive.prc);
        k.read("snc", c.contrastive.snc);
        k.read("fic", c.contrastive.fic);
        k.read("sup_enabled", c.contrastive.sup_enabled);
        k.read("unsup_enabled", c.contrastive.unsup_enabled);
        k.read("snc_pooled", c.contrastive.snc_pooled);
        k.read("resample_fetch", c.contrastive.resample_fetch);
        k.finish();
    }
    {
        // Contrastive weights default to 1 for cap_* methods and 0 for the
        // bare baselines; explicit values are kept and validated later.
        if (!is_cap_method(c.method)) {
            c.loss.lambda_prc = 0.0;
            c.loss.lambda_snc = 0.0;
            c.loss.lambda_fic = 0.0;
        }
        StrictReader w = r.child("loss");
        w.read("lambda_ce", c.loss.lambda_ce);
        w.read("lambda_prc", c.loss.lambda_prc);
        w.read("lambda_snc", c.loss.lambda_snc);
        w.read("lambda_fic", c.loss.lambda_fic);
        w.read("kd_weight", c.loss.kd_weight);
        w.read("kd_temperature", c.loss.kd_temperature);
        w.finish();
    }
    {
        StrictReader t = r.child("train");
        t.read("batch_size", c.train.batch_size);
        t.read("lr", c.train.lr);
        t.read("score_lr", c.train.score_lr);
        t.read("finetune_epochs", c.train.finetune_epochs);
        t.read("pretrain_steps", c.train.pretrain_steps);
        t.read("mask_update_interval", c.train.mask_update_interval);
        t.read("topk_scope", c.train.topk_scope);
        t.read("threshold", c.train.threshold);
        t.read("regularizer_weight", c.train.regularizer_weight);
        t.read("eval_every", c.train.eval_every);
        t.read("first_order_abs_per_batch", c.train.first_order_abs_per_batch);
        t.read("drop_snapshot_weights", c.train.drop_snapshot_weights);
        t.read("retrain_epochs_per_milestone", c.train.retrain_epochs_per_milestone);
        t.read("retrain_steps_per_milestone", c.train.retrain_steps_per_milestone);
        t.read("milestone_fraction", c.train.milestone_fraction);
        t.read("warmup_steps", c.train.warmup_steps);
        t.read("ramp_steps", c.train.ramp_steps);
        t.read("cooldown_steps", c.train.cooldown_steps);
        t.read("snapshot_crossings", c.train.snapshot_crossings);
        t.finish();
    }
    r.finish();

    if (!(c.contrastive.temperature > 0.0)) {
        throw ConfigError("contrastive.temperature: must be positive");
    }
    c.validate();
    return c;
}

}  // namespace

RunConfig parse_config(const std::string& document) {
    nlohmann::json j;
    try {
        j = document.empty() ? nlohmann::json::object() : nlohmann::json::parse(document);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

std::string serialize_config(const RunConfig& cfg) { return config_to_json(cfg).dump(2); }

std::string resolve_output_dir(const std::string& output_dir) {
    const char* root = std::getenv("CAP_OUTPUT_ROOT");
    if (root == nullptr || *root == '\0') return output_dir;
    const std::filesystem::path p(output_dir);
    if (p.is_absolute()) return output_dir;
    return (std::filesystem::path(root) / p).string();
}

}  // namespace cap
