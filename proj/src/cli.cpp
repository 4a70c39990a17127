// SPDX-License-Identifier: Apache-2.0

#include "cap/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cap/checkpoint.hpp"
#include "cap/evalprobe.hpp"
#include "cap/orchestrator.hpp"

namespace fs = std::filesystem;

namespace cap {

namespace {

nlohmann::json load_config_document(const std::string& config_path) {
    if (config_path.empty()) return nlohmann::json::object();
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file: " + config_path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

// --set key.path=value overrides, applied onto the document before parsing so
// strict-keys validation still covers them.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key.path=value: " + kv);
        std::string pointer = "/" + kv.substr(0, eq);
        for (auto& c : pointer) {
            if (c == '.') c = '/';
        }
        const std::string raw = kv.substr(eq + 1);
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::exception&) {
            value = raw;  // plain string
        }
        doc[nlohmann::json::json_pointer(pointer)] = value;
    }
}

RunConfig assemble_config(const std::string& config_path, const std::vector<std::string>& sets) {
    nlohmann::json doc = load_config_document(config_path);
    apply_overrides(doc, sets);
    return parse_config(doc.dump());
}

Dataset make_probe_target(const std::string& family, const ModelConfig& model, int n_examples,
                          std::uint64_t seed, Dataset* dev_out) {
    const SyntheticSplits s =
        generate_synthetic_task(synthetic_family_from_string(family), n_examples, 2, seed,
                                model.vocab_size, model.max_seq_len);
    *dev_out = s.dev;
    return s.train;
}

int cmd_finetune(const std::string& config_path, const std::vector<std::string>& sets) {
    const RunConfig cfg = assemble_config(config_path, sets);
    const std::string run_dir = resolve_output_dir(cfg.output_dir);
    fs::create_directories(run_dir);
    {
        RunConfig echoed = cfg;
        echoed.output_dir = run_dir;
        std::ofstream resolved(fs::path(run_dir) / "config.resolved");
        resolved << serialize_config(echoed) << "\n";
    }

    const RunDatasets data = load_run_datasets(cfg);
    Rng init_rng = make_rng(cfg.seed, "model.init");
    Model pretrained(cfg.model, init_rng);
    pretrain_encoder(pretrained, data.train, cfg.train.pretrain_steps, cfg.train.batch_size,
                     cfg.train.lr, cfg.seed);
    save_checkpoint(pretrained, (fs::path(run_dir) / "pretrained").string(),
                    {SourceRole::pretrained, 0, 0.0});

    const Model fine = fine_tune_dense(pretrained, data.train, cfg.train.finetune_epochs,
                                       cfg.train.batch_size, cfg.train.lr, cfg.seed);
    save_checkpoint(fine, (fs::path(run_dir) / "finetuned").string(),
                    {SourceRole::finetuned, 0, 0.0});

    const EvalMetrics train_m = evaluate(fine, data.train);
    const EvalMetrics dev_m = evaluate(fine, data.dev);
    nlohmann::ordered_json summary;
    summary["task"] = data.train.task_name;
    summary["train_accuracy"] = train_m.accuracy;
    summary["dev_accuracy"] = dev_m.accuracy;
    if (dev_m.has_f1) summary["dev_f1"] = dev_m.f1;
    std::ofstream out(fs::path(run_dir) / "summary.json");
    out << summary.dump(2) << "\n";
    std::cout << "finetuned: dev_accuracy=" << dev_m.accuracy << " -> " << run_dir << "\n";
    return 0;
}

int cmd_prune(const std::string& config_path, const std::vector<std::string>& sets) {
    const RunConfig cfg = assemble_config(config_path, sets);
    const RunArtifacts art = run_cap(cfg);
    std::cout << "pruned: method=" << to_string(cfg.method)
              << " target=" << cfg.target_sparsity << "% measured=" << art.measured_sparsity
              << "% dev_accuracy=" << art.dev_accuracy << " -> " << art.run_dir << "\n";
    return 0;
}

int cmd_probe(const std::vector<std::string>& runs, const std::string& baseline_run,
              const std::vector<std::string>& targets, int n_examples, int epochs, double lr,
              std::uint64_t seed, const std::string& out_path) {
    if (runs.empty()) throw ConfigError("probe: at least one --run is required");
    std::string csv = "source_task,method,sparsity,target_task,score,baseline_score,delta\n";

    for (const auto& run_dir : runs) {
        const LoadedCheckpoint ck = load_checkpoint((fs::path(run_dir) / "final").string());
        std::string source_task = "?", method = "?";
        {
            std::ifstream in(fs::path(run_dir) / "summary.json");
            if (in) {
                const nlohmann::json s = nlohmann::json::parse(in);
                source_task = s.value("task", "?");
                method = s.value("method", "?");
            }
        }
        std::optional<LoadedCheckpoint> baseline;
        if (!baseline_run.empty()) {
            baseline = load_checkpoint((fs::path(baseline_run) / "final").string());
        }

        for (const auto& family : targets) {
            Dataset target_dev;
            const Dataset target_train =
                make_probe_target(family, ck.model.config, n_examples, seed, &target_dev);
            ProbeResult r = probe_transfer(ck.model, target_train, target_dev, epochs, lr, seed);
            r.source_task = source_task;
            r.method = method;
            r.sparsity = ck.meta.sparsity;
            if (baseline) {
                const ProbeResult b =
                    probe_transfer(baseline->model, target_train, target_dev, epochs, lr, seed);
                r.baseline_score = b.score;
            }
            r.delta = r.score - r.baseline_score;
            char line[256];
            std::snprintf(line, sizeof(line), "%s,%s,%.2f,%s,%.4f,%.4f,%+.4f\n",
                          r.source_task.c_str(), r.method.c_str(), r.sparsity, family.c_str(),
                          r.score, r.baseline_score, r.delta);
            csv += line;
        }
    }
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        fs::create_directories(fs::path(out_path).parent_path());
        std::ofstream out(out_path);
        if (!out) throw RunError("cannot write probe matrix: " + out_path);
        out << csv;
        std::cout << "probe matrix -> " << out_path << "\n";
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& sets,
               std::vector<std::string> toggles, std::vector<double> sparsities) {
    RunConfig base = assemble_config(config_path, sets);
    if (toggles.empty()) toggles = {"-prc", "-snc", "-fic", "-sup", "-unsup"};
    if (sparsities.empty()) sparsities = {50.0, 90.0};
    base.output_dir = resolve_output_dir(base.output_dir);

    const AblationTable table = run_ablation(base, toggles, sparsities);
    fs::create_directories(base.output_dir);
    const std::string csv_path = (fs::path(base.output_dir) / "ablation.csv").string();
    std::ofstream out(csv_path);
    out << table.to_csv();
    std::cout << table.to_csv();
    std::cout << "teachers byte-identical across variants: pretrained="
              << hex64(table.pretrained_digest) << " finetuned=" << hex64(table.finetuned_digest)
              << "\n";
    std::cout << "ablation grid -> " << csv_path << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_dir) {
    if (runs.empty()) throw ConfigError("report: at least one --run is required");
    fs::create_directories(out_dir);
    const std::string csv = (fs::path(out_dir) / "report.csv").string();
    const std::string svg = (fs::path(out_dir) / "report.svg").string();
    write_report(runs, csv, svg);
    std::cout << "report -> " << csv << ", " << svg << "\n";
    return 0;
}

int cmd_sparsity_report(const std::string& checkpoint_dir) {
    const LoadedCheckpoint ck = load_checkpoint(checkpoint_dir);
    const SparsityReport rep = measured_sparsity(ck.model);
    std::printf("%-18s %10s %10s %10s %9s\n", "site", "entries", "nonzero", "zero", "sparsity");
    for (const auto& s : rep.sites) {
        std::printf("%-18s %10lld %10lld %10lld %8.3f%%\n", s.site_id.c_str(),
                    static_cast<long long>(s.total), static_cast<long long>(s.total - s.zeros),
                    static_cast<long long>(s.zeros), s.percent);
    }
    std::printf("%-18s %10lld %10lld %10lld %8.3f%%\n", "global",
                static_cast<long long>(rep.census), static_cast<long long>(rep.census - rep.zeros),
                static_cast<long long>(rep.zeros), rep.global_percent);
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"contrastive pruning toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;

    auto add_config_opts = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run config (defaults apply when omitted)");
        cmd->add_option("--set", sets, "override config keys, e.g. --set train.lr=1e-3")
            ->take_all();
    };

    CLI::App* finetune = app.add_subcommand("finetune", "pre-train and fine-tune the dense model");
    add_config_opts(finetune);

    CLI::App* prune = app.add_subcommand("prune", "run the full prune-and-train pipeline");
    add_config_opts(prune);

    CLI::App* probe = app.add_subcommand("probe", "linear probing of a pruned encoder");
    std::vector<std::string> probe_runs;
    std::string baseline_run, probe_out;
    std::vector<std::string> probe_targets{"keyword", "pair_agreement", "prefix_pattern"};
    int probe_examples = 512;
    int probe_epochs = 10;
    double probe_lr = 1e-2;
    std::uint64_t probe_seed = 1;
    probe->add_option("--run", probe_runs, "run directory (repeatable)")->take_all();
    probe->add_option("--baseline-run", baseline_run, "baseline run for deltas");
    probe->add_option("--targets", probe_targets, "target synthetic families")->take_all();
    probe->add_option("--examples", probe_examples, "target task train size");
    probe->add_option("--epochs", probe_epochs, "probe classifier epochs");
    probe->add_option("--probe-lr", probe_lr, "probe classifier learning rate");
    probe->add_option("--seed", probe_seed, "probe seed");
    probe->add_option("--out", probe_out, "output csv path (stdout when omitted)");

    CLI::App* ablate = app.add_subcommand("ablate", "module/objective ablation grid");
    add_config_opts(ablate);
    std::vector<std::string> toggles;
    std::vector<double> sparsities;
    ablate->add_option("--toggles", toggles, "variants, e.g. -prc -snc -fic -sup -unsup")
        ->take_all();
    ablate->add_option("--sparsities", sparsities, "target sparsities")->take_all();

    CLI::App* report = app.add_subcommand("report", "render score-vs-sparsity artifacts");
    std::vector<std::string> report_runs;
    std::string report_out = "report";
    report->add_option("--run", report_runs, "run directory (repeatable)")->take_all();
    report->add_option("--out", report_out, "output directory");

    CLI::App* sparsity = app.add_subcommand("sparsity-report", "per-site nonzero counts");
    std::string checkpoint_dir;
    sparsity->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (finetune->parsed()) return cmd_finetune(config_path, sets);
        if (prune->parsed()) return cmd_prune(config_path, sets);
        if (probe->parsed()) {
            return cmd_probe(probe_runs, baseline_run, probe_targets, probe_examples,
                             probe_epochs, probe_lr, probe_seed, probe_out);
        }
        if (ablate->parsed()) return cmd_ablate(config_path, sets, toggles, sparsities);
        if (report->parsed()) return cmd_report(report_runs, report_out);
        if (sparsity->parsed()) return cmd_sparsity_report(checkpoint_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "run error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace cap
