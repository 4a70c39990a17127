// SPDX-License-Identifier: Apache-2.0

#include "cap/evalprobe.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "cap/checkpoint.hpp"
#include "cap/orchestrator.hpp"

namespace fs = std::filesystem;

namespace cap {

EvalMetrics score_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                              int n_classes) {
    if (predictions.empty() || predictions.size() != labels.size()) {
        throw InputError("score_predictions: prediction/label size mismatch");
    }
    std::int64_t correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == labels[i]) ++correct;
        if (n_classes == 2) {
            if (predictions[i] == 1 && labels[i] == 1) ++tp;
            if (predictions[i] == 1 && labels[i] != 1) ++fp;
            if (predictions[i] != 1 && labels[i] == 1) ++fn;
        }
    }
    EvalMetrics m;
    m.count = static_cast<std::int64_t>(predictions.size());
    m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
    if (n_classes == 2) {
        m.has_f1 = true;
        if (tp + fp + fn == 0) {
            m.f1 = 1.0;  // positive class absent from predictions and labels
        } else if (tp == 0) {
            m.f1 = 0.0;
        } else {
            const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
            m.f1 = 2.0 * precision * recall / (precision + recall);
        }
    }
    return m;
}

EvalMetrics evaluate(const Model& model, const Dataset& dataset, int batch_size) {
    if (dataset.size() == 0) throw InputError("evaluate: empty dataset");
    if (dataset.n_classes > model.config.n_classes) {
        throw InputError("evaluate: dataset has more classes than the model head");
    }
    std::vector<int> predictions, labels;
    for (const Batch& batch : sequential_batches(dataset, batch_size)) {
        const Mat logits = model.logits(model.forward(batch).pooled);
        for (int b = 0; b < batch.batch_size; ++b) {
            Eigen::Index pred = 0;
            logits.row(b).maxCoeff(&pred);
            predictions.push_back(static_cast<int>(pred));
            labels.push_back(batch.labels[static_cast<std::size_t>(b)]);
        }
    }
    return score_predictions(predictions, labels, model.config.n_classes);
}

SparsityReport measured_sparsity(const Model& model) {
    SparsityReport r;
    for (const auto* s : model.prunable_sites()) {
        SiteSparsity site;
        site.site_id = s->site_id;
        site.total = s->entry_count();
        site.zeros = site.total - static_cast<std::int64_t>(s->mask.sum());
        site.percent = site.total == 0
                           ? 0.0
                           : 100.0 * static_cast<double>(site.zeros) / static_cast<double>(site.total);
        r.census += site.total;
        r.zeros += site.zeros;
        r.sites.push_back(site);
    }
    r.global_percent =
        r.census == 0 ? 0.0 : 100.0 * static_cast<double>(r.zeros) / static_cast<double>(r.census);
    return r;
}

double task_score(const EvalMetrics& m, const std::string& task_name) {
    if (m.has_f1 && task_name.find("pair") != std::string::npos) return m.f1;
    return m.accuracy;
}

ProbeResult probe_transfer(const Model& pruned_model, const Dataset& target_train,
                           const Dataset& target_dev, int probe_epochs, double lr,
                           std::uint64_t seed) {
    if (target_train.size() == 0 || target_dev.size() == 0) {
        throw InputError("probe_transfer: empty target split");
    }
    const std::uint64_t digest_before = pruned_model.weights_digest();

    // Pre-encode pooled representations once; the encoder stays frozen.
    auto encode_all = [&](const Dataset& ds, std::vector<int>& labels) {
        Mat reps(static_cast<Eigen::Index>(ds.size()), pruned_model.config.d_model);
        labels.clear();
        Eigen::Index at = 0;
        for (const Batch& batch : sequential_batches(ds, 64)) {
            const Mat pooled = encode(pruned_model, batch);
            reps.middleRows(at, pooled.rows()) = pooled;
            at += pooled.rows();
            labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
        }
        return reps;
    };
    std::vector<int> train_labels, dev_labels;
    const Mat train_reps = encode_all(target_train, train_labels);
    const Mat dev_reps = encode_all(target_dev, dev_labels);

    const int n_classes = target_train.n_classes;
    Rng rng = make_rng(seed, "probe.head");
    std::normal_distribution<double> nd(0.0, 0.02);
    Mat w(pruned_model.config.d_model, n_classes);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
    Mat b = Mat::Zero(1, n_classes);

    // Full-batch gradient descent at a fixed learning rate.
    for (int epoch = 0; epoch < probe_epochs; ++epoch) {
        Mat logits = train_reps * w;
        logits.rowwise() += Eigen::RowVectorXd(b.row(0));
        const Mat g = cross_entropy_grad(logits, train_labels);
        w -= lr * (train_reps.transpose() * g);
        b.row(0) -= lr * g.colwise().sum();
    }

    Mat dev_logits = dev_reps * w;
    dev_logits.rowwise() += Eigen::RowVectorXd(b.row(0));
    std::vector<int> predictions;
    for (Eigen::Index i = 0; i < dev_logits.rows(); ++i) {
        Eigen::Index pred = 0;
        dev_logits.row(i).maxCoeff(&pred);
        predictions.push_back(static_cast<int>(pred));
    }

    ProbeResult out;
    out.source_task = "";
    out.target_task = target_train.task_name;
    out.metrics = score_predictions(predictions, dev_labels, n_classes);
    out.score = task_score(out.metrics, target_train.task_name);

    if (pruned_model.weights_digest() != digest_before) {
        throw StateError("probe_transfer: encoder mutated during probing");
    }
    return out;
}

namespace {

RunConfig apply_toggle(RunConfig cfg, const std::string& toggle) {
    std::string t = toggle;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "full" || t.empty()) return cfg;
    if (t == "-prc") {
        cfg.loss.lambda_prc = 0.0;
    } else if (t == "-snc") {
        cfg.loss.lambda_snc = 0.0;
    } else if (t == "-fic") {
        cfg.loss.lambda_fic = 0.0;
    } else if (t == "-sup") {
        cfg.contrastive.sup_enabled = false;
    } else if (t == "-unsup") {
        cfg.contrastive.unsup_enabled = false;
    } else if (t == "-kd") {
        cfg.loss.kd_weight = 0.0;
    } else {
        throw ConfigError("unknown ablation toggle: " + toggle);
    }
    return cfg;
}

double mean_delta(const EvalMetrics& variant, const EvalMetrics& full) {
    double sum = variant.accuracy - full.accuracy;
    int n = 1;
    if (variant.has_f1 && full.has_f1) {
        sum += variant.f1 - full.f1;
        n += 1;
    }
    return sum / n;
}

}  // namespace

std::string AblationTable::to_csv() const {
    std::string csv = "variant,sparsity,accuracy,f1,delta\n";
    char line[160];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%s,%.1f,%.4f,%.4f,%+.4f\n", r.variant.c_str(),
                      r.sparsity, r.metrics.accuracy, r.metrics.has_f1 ? r.metrics.f1 : 0.0,
                      r.delta);
        csv += line;
    }
    return csv;
}

AblationTable run_ablation(const RunConfig& base_config, const std::vector<std::string>& toggles,
                           const std::vector<double>& sparsities) {
    AblationTable table;
    bool digests_set = false;
    for (double sparsity : sparsities) {
        RunConfig base = base_config;
        base.target_sparsity = sparsity;
        char tag[32];
        std::snprintf(tag, sizeof(tag), "r%04.1f", sparsity);

        RunConfig full_cfg = base;
        full_cfg.output_dir =
            (fs::path(base_config.output_dir) / tag / "full").string();
        const RunArtifacts full = run_cap(full_cfg);
        EvalMetrics full_metrics;
        full_metrics.accuracy = full.dev_accuracy;
        full_metrics.f1 = full.dev_f1;
        full_metrics.has_f1 = full.dev_f1 != 0.0 || base.model.n_classes == 2;
        table.rows.push_back({"full", sparsity, full_metrics, 0.0, full.run_dir});

        const std::uint64_t pre_digest = checkpoint_digest(full.pretrained_dir);
        const std::uint64_t fine_digest = checkpoint_digest(full.finetuned_dir);
        if (!digests_set) {
            table.pretrained_digest = pre_digest;
            table.finetuned_digest = fine_digest;
            digests_set = true;
        }

        for (const auto& toggle : toggles) {
            RunConfig variant_cfg = apply_toggle(base, toggle);
            variant_cfg.output_dir = (fs::path(base_config.output_dir) / tag / toggle).string();
            const RunArtifacts art = run_cap(variant_cfg);

            // Shared seeds must reproduce the exact same teachers.
            if (checkpoint_digest(art.pretrained_dir) != pre_digest ||
                checkpoint_digest(art.finetuned_dir) != fine_digest) {
                throw RunError("ablation variant " + toggle + " produced different teachers");
            }

            EvalMetrics m;
            m.accuracy = art.dev_accuracy;
            m.f1 = art.dev_f1;
            m.has_f1 = full_metrics.has_f1;
            table.rows.push_back({toggle, sparsity, m, mean_delta(m, full_metrics), art.run_dir});
        }
    }
    return table;
}

void write_report(const std::vector<std::string>& run_dirs, const std::string& csv_path,
                  const std::string& svg_path) {
    struct Point {
        double sparsity;
        double score;
    };
    std::map<std::string, std::vector<Point>> by_method;
    std::string csv = "method,task,target_sparsity,measured_sparsity,dev_accuracy,dev_f1,score\n";
    for (const auto& dir : run_dirs) {
        std::ifstream in(fs::path(dir) / "summary.json");
        if (!in) throw InputError("missing summary.json in " + dir);
        const nlohmann::json s = nlohmann::json::parse(in);
        const std::string method = s.at("method").get<std::string>();
        const std::string task = s.value("task", "");
        const double target = s.at("target_sparsity").get<double>();
        const double measured = s.at("measured_sparsity").get<double>();
        const double acc = s.at("dev_accuracy").get<double>();
        const double f1 = s.value("dev_f1", 0.0);
        EvalMetrics m;
        m.accuracy = acc;
        m.f1 = f1;
        m.has_f1 = s.contains("dev_f1");
        const double score = task_score(m, task);
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%s,%.1f,%.3f,%.4f,%.4f,%.4f\n", method.c_str(),
                      task.c_str(), target, measured, acc, f1, score);
        csv += line;
        by_method[method].push_back({target, score});
    }
    {
        std::ofstream out(csv_path);
        if (!out) throw RunError("cannot write report csv: " + csv_path);
        out << csv;
    }

    // Minimal score-vs-sparsity line chart.
    const int width = 640, height = 420, margin = 60;
    std::string svg;
    svg += "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(width) +
           "' height='" + std::to_string(height) + "'>\n";
    svg += "<rect width='100%' height='100%' fill='white'/>\n";
    svg += "<line x1='60' y1='360' x2='600' y2='360' stroke='black'/>\n";
    svg += "<line x1='60' y1='40' x2='60' y2='360' stroke='black'/>\n";
    svg += "<text x='280' y='400' font-size='14'>sparsity (%)</text>\n";
    svg += "<text x='12' y='200' font-size='14' transform='rotate(-90 12,200)'>score</text>\n";
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
                            "#17becf"};
    int ci = 0;
    auto x_of = [&](double sp) { return margin + sp / 100.0 * (width - 2.0 * margin); };
    auto y_of = [&](double sc) { return 360.0 - sc * 320.0; };
    for (auto& [method, pts] : by_method) {
        std::sort(pts.begin(), pts.end(),
                  [](const Point& a, const Point& b) { return a.sparsity < b.sparsity; });
        std::string poly;
        for (const auto& p : pts) {
            poly += std::to_string(x_of(p.sparsity)) + "," + std::to_string(y_of(p.score)) + " ";
        }
        const char* color = colors[ci % 7];
        svg += "<polyline fill='none' stroke='" + std::string(color) + "' stroke-width='2' points='" +
               poly + "'/>\n";
        for (const auto& p : pts) {
            svg += "<circle cx='" + std::to_string(x_of(p.sparsity)) + "' cy='" +
                   std::to_string(y_of(p.score)) + "' r='3' fill='" + color + "'/>\n";
        }
        svg += "<text x='" + std::to_string(width - margin + 4) + "' y='" +
               std::to_string(40 + 18 * ci) + "' font-size='12' fill='" + color + "'>" + method +
               "</text>\n";
        ++ci;
    }
    svg += "</svg>\n";
    std::ofstream out(svg_path);
    if (!out) throw RunError("cannot write report svg: " + svg_path);
    out << svg;
}

}  // namespace cap
