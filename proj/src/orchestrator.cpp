// SPDX-License-Identifier: Apache-2.0

#include "cap/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "cap/checkpoint.hpp"
#include "cap/evalprobe.hpp"
#include "cap/optim.hpp"
#include "cap/pruners.hpp"

namespace fs = std::filesystem;

namespace cap {

void SnapshotRegistry::add(SnapshotRecord record) {
    if (!records_.empty() && !(record.sparsity > records_.back().sparsity)) {
        throw StateError("snapshot sparsities must be strictly increasing");
    }
    records_.push_back(std::move(record));
}

std::vector<const SnapshotRecord*> SnapshotRegistry::usable_below(double sparsity) const {
    std::vector<const SnapshotRecord*> out;
    for (const auto& r : records_) {
        if (r.sparsity < sparsity) out.push_back(&r);
    }
    return out;
}

void SnapshotRegistry::save_manifest(const std::string& path) const {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& r : records_) {
        nlohmann::ordered_json e;
        e["sparsity"] = r.sparsity;
        e["step"] = r.step;
        e["checkpoint_dir"] = r.checkpoint_dir;
        e["bank_path"] = r.bank_path;
        j.push_back(e);
    }
    std::ofstream out(path);
    if (!out) throw RunError("cannot write snapshot manifest: " + path);
    out << j.dump(2) << "\n";
}

namespace {

Mat softened_softmax(const Mat& logits, double temperature) {
    Mat p(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
        const Eigen::RowVectorXd z = logits.row(b) / temperature;
        const double m = z.maxCoeff();
        Eigen::RowVectorXd e = (z.array() - m).exp();
        p.row(b) = e / e.sum();
    }
    return p;
}

}  // namespace

double kd_loss(const Mat& student_logits, const Mat& teacher_logits, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("kd_temperature: must be positive");
    if (student_logits.rows() != teacher_logits.rows() ||
        student_logits.cols() != teacher_logits.cols()) {
        throw StateError("kd_loss shape mismatch");
    }
    const Mat qs = softened_softmax(student_logits, temperature);
    const Mat qt = softened_softmax(teacher_logits, temperature);
    double kl = 0.0;
    for (Eigen::Index b = 0; b < qs.rows(); ++b) {
        for (Eigen::Index c = 0; c < qs.cols(); ++c) {
            kl += qt(b, c) * (std::log(qt(b, c)) - std::log(qs(b, c)));
        }
    }
    return temperature * temperature * kl / static_cast<double>(qs.rows());
}

Mat kd_loss_grad(const Mat& student_logits, const Mat& teacher_logits, double temperature) {
    const Mat qs = softened_softmax(student_logits, temperature);
    const Mat qt = softened_softmax(teacher_logits, temperature);
    return (temperature / static_cast<double>(qs.rows())) * (qs - qt);
}

void pretrain_encoder(Model& model, const Dataset& corpus, int steps, int batch_size, double lr,
                      std::uint64_t seed) {
    if (steps <= 0) return;
    const int d = model.config.d_model;
    const int vocab = model.config.vocab_size;

    Rng head_rng = make_rng(seed, "pretrain.head");
    std::normal_distribution<double> nd(0.0, 0.02);
    Mat mlm_w(d, vocab), mlm_b = Mat::Zero(1, vocab);
    for (Eigen::Index i = 0; i < mlm_w.size(); ++i) mlm_w.data()[i] = nd(head_rng);
    Mat mlm_w_grad = Mat::Zero(d, vocab), mlm_b_grad = Mat::Zero(1, vocab);

    AdamOptimizer opt(lr);
    opt.attach_model(model);
    opt.attach(&mlm_w, &mlm_w_grad);
    opt.attach(&mlm_b, &mlm_b_grad);

    BatchSampler sampler(corpus, batch_size, make_rng(seed, "pretrain.batches"));
    Rng mask_rng = make_rng(seed, "pretrain.mask");
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    for (int step = 0; step < steps; ++step) {
        Batch batch = sampler.next();
        std::vector<std::pair<int, std::int32_t>> targets;  // (flat position, original id)
        for (std::size_t i = 0; i < batch.ids.size(); ++i) {
            if (!batch.real[i]) continue;
            if (batch.ids[i] == tok::kCls) continue;
            if (coin(mask_rng) < 0.15) {
                targets.emplace_back(static_cast<int>(i), batch.ids[i]);
                batch.ids[i] = tok::kMask;
            }
        }
        if (targets.empty()) continue;

        model.zero_grads();
        mlm_w_grad.setZero();
        mlm_b_grad.setZero();
        const ForwardCache cache = model.forward(batch);

        const double inv_n = 1.0 / static_cast<double>(targets.size());
        Mat d_hidden = Mat::Zero(cache.hidden.rows(), cache.hidden.cols());
        double loss = 0.0;
        for (const auto& [pos, original] : targets) {
            const Eigen::RowVectorXd logits =
                cache.hidden.row(pos) * mlm_w + mlm_b.row(0);
            const double m = logits.maxCoeff();
            Eigen::RowVectorXd p = (logits.array() - m).exp();
            const double z = p.sum();
            p /= z;
            loss -= (logits(original) - m - std::log(z)) * inv_n;

            Eigen::RowVectorXd dl = p * inv_n;
            dl(original) -= inv_n;
            mlm_w_grad += cache.hidden.row(pos).transpose() * dl;
            mlm_b_grad.row(0) += dl;
            d_hidden.row(pos) = dl * mlm_w.transpose();
        }
        if (!std::isfinite(loss)) throw RunError("pre-training loss diverged");
        model.backward(cache, d_hidden);
        opt.step();
    }
}

Model fine_tune_dense(const Model& pretrained_model, const Dataset& task_data, int epochs,
                      int batch_size, double lr, std::uint64_t seed) {
    Model fine = pretrained_model;
    Rng head_rng = make_rng(seed, "finetune.head");
    fine.reinit_classifier(head_rng);
    if (epochs <= 0) return fine;

    AdamOptimizer opt(lr);
    opt.attach_model(fine);
    BatchSampler sampler(task_data, batch_size, make_rng(seed, "finetune.batches"));
    const int steps = epochs * sampler.batches_per_epoch();
    for (int step = 0; step < steps; ++step) {
        const Batch batch = sampler.next();
        fine.zero_grads();
        const ForwardCache cache = fine.forward(batch);
        const Mat logits = fine.logits(cache.pooled);
        const double loss = cross_entropy_loss(logits, batch.labels);
        if (!std::isfinite(loss)) throw RunError("fine-tuning loss diverged");
        const Mat d_pooled = fine.classifier_backward(cache.pooled, cross_entropy_grad(logits, batch.labels));
        fine.backward(cache, fine.pooled_to_hidden_grad(cache, d_pooled));
        opt.step();
    }
    return fine;
}

LossTerms total_loss(Model& model, const Batch& batch, const ContrastContext& ctx,
                     const LossWeights& weights, const ContrastiveConfig& contrastive,
                     const Model* kd_teacher, double regularizer_value, bool with_grad) {
    LossTerms terms;
    const ForwardCache cache = model.forward(batch);
    const Mat logits = model.logits(cache.pooled);
    terms.ce = cross_entropy_loss(logits, batch.labels);

    const auto run_module = [&](ContrastModule module, const std::vector<FetchedView>& views,
                                double lambda) {
        if (lambda == 0.0) return ModuleLossResult{0.0, Mat::Zero(cache.pooled.rows(),
                                                                  cache.pooled.cols())};
        return module_loss(module, cache.pooled, batch.example_indices, batch.labels, views,
                           contrastive, ctx.current_sparsity, with_grad);
    };
    const ModuleLossResult prc = run_module(ContrastModule::prc, ctx.prc_views, weights.lambda_prc);
    const ModuleLossResult snc = run_module(ContrastModule::snc, ctx.snc_views, weights.lambda_snc);
    const ModuleLossResult fic = run_module(ContrastModule::fic, ctx.fic_views, weights.lambda_fic);
    terms.prc = prc.loss;
    terms.snc = snc.loss;
    terms.fic = fic.loss;

    Mat teacher_logits;
    if (kd_teacher != nullptr && weights.kd_weight > 0.0) {
        teacher_logits = kd_teacher->logits(kd_teacher->forward(batch).pooled);
        terms.kd = kd_loss(logits, teacher_logits, weights.kd_temperature);
    }
    terms.regularizer = regularizer_value;

    terms.total = weights.lambda_ce * terms.ce + weights.lambda_prc * terms.prc +
                  weights.lambda_snc * terms.snc + weights.lambda_fic * terms.fic +
                  weights.kd_weight * terms.kd + terms.regularizer;

    const std::pair<const char*, double> checked[] = {
        {"ce", terms.ce}, {"prc", terms.prc}, {"snc", terms.snc},
        {"fic", terms.fic}, {"kd", terms.kd}, {"regularizer", terms.regularizer}};
    for (const auto& [name, v] : checked) {
        if (!std::isfinite(v)) {
            throw RunError(std::string("non-finite ") + name + " loss term");
        }
    }

    if (with_grad) {
        model.zero_grads();
        Mat d_logits = weights.lambda_ce * cross_entropy_grad(logits, batch.labels);
        if (kd_teacher != nullptr && weights.kd_weight > 0.0) {
            d_logits += weights.kd_weight * kd_loss_grad(logits, teacher_logits, weights.kd_temperature);
        }
        Mat d_pooled = model.classifier_backward(cache.pooled, d_logits);
        d_pooled += weights.lambda_prc * prc.d_anchors;
        d_pooled += weights.lambda_snc * snc.d_anchors;
        d_pooled += weights.lambda_fic * fic.d_anchors;
        model.backward(cache, model.pooled_to_hidden_grad(cache, d_pooled));
    }
    return terms;
}

RunDatasets load_run_datasets(const RunConfig& cfg) {
    RunDatasets out;
    if (cfg.data.kind == "synthetic") {
        const SyntheticSplits s = generate_synthetic_task(
            synthetic_family_from_string(cfg.data.family), cfg.data.n_examples,
            cfg.data.n_classes, cfg.seed, cfg.model.vocab_size, cfg.model.max_seq_len,
            cfg.data.n_dev);
        out.train = s.train;
        out.dev = s.dev;
        return out;
    }
    TsvDatasets t = load_tsv_dataset(cfg.data.train_tsv, cfg.data.dev_tsv, cfg.model.max_seq_len);
    if (t.vocab_size > cfg.model.vocab_size) {
        throw ConfigError("model.vocab_size: " + std::to_string(t.vocab_size) +
                          " tokens required by the tsv dataset");
    }
    out.train = std::move(t.train);
    out.dev = std::move(t.dev);
    return out;
}

namespace {

constexpr std::int64_t kBankCorpusCap = 8192;

Dataset bank_corpus(const Dataset& train, std::uint64_t seed) {
    if (static_cast<std::int64_t>(train.size()) <= kBankCorpusCap) return train;
    // Fixed uniformly sampled subset, chosen once per run.
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(seed, "bank.corpus");
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(kBankCorpusCap);
    std::sort(order.begin(), order.end());
    Dataset out;
    out.n_classes = train.n_classes;
    out.task_name = train.task_name;
    for (std::size_t i : order) out.examples.push_back(train.examples[i]);
    return out;
}

struct EffectiveModules {
    bool prc = false;
    bool snc = false;
    bool fic = false;
    bool any() const { return prc || snc || fic; }
};

EffectiveModules effective_modules(const RunConfig& cfg) {
    EffectiveModules m;
    const bool modes = cfg.contrastive.sup_enabled || cfg.contrastive.unsup_enabled;
    m.prc = modes && cfg.contrastive.prc && cfg.loss.lambda_prc > 0.0;
    m.snc = modes && cfg.contrastive.snc && cfg.loss.lambda_snc > 0.0;
    m.fic = modes && cfg.contrastive.fic && cfg.loss.lambda_fic > 0.0;
    return m;
}

// State shared by the prune-train loop.
struct LoopState {
    std::unordered_map<const RepresentationBank*, FetchedView> fixed_fetches;
    std::uint64_t mask_seq_digest = 0xcbf29ce484222325ULL;
};

FetchedView fetch_view(const RepresentationBank& bank, const RunConfig& cfg,
                       const Batch& batch, Rng& rng, LoopState& state) {
    const std::vector<std::int64_t> include =
        cfg.contrastive.unsup_enabled ? batch.example_indices : std::vector<std::int64_t>{};
    if (cfg.contrastive.resample_fetch) {
        return fetch(bank, cfg.contrastive.bank_size, rng, include).view;
    }
    // Fixed fetch: one sample per bank, reused every step. Anchor entries are
    // not guaranteed present, so unsupervised anchors may skip.
    auto it = state.fixed_fetches.find(&bank);
    if (it == state.fixed_fetches.end()) {
        Rng fixed = make_rng(cfg.seed, "fetch.fixed." + std::to_string(bank.created_at_step) +
                                           to_string(bank.source_role));
        it = state.fixed_fetches
                 .emplace(&bank, fetch(bank, cfg.contrastive.bank_size, fixed, {}).view)
                 .first;
    }
    return it->second;
}

std::string format_sparsity_tag(double r) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%05.1f", r);
    return std::string(buf);
}

}  // namespace

RunArtifacts run_cap(const RunConfig& cfg) {
    cfg.validate();
    const std::string run_dir = resolve_output_dir(cfg.output_dir);
    fs::create_directories(run_dir);
    fs::create_directories(fs::path(run_dir) / "banks");

    {
        RunConfig echoed = cfg;
        echoed.output_dir = run_dir;
        std::ofstream resolved(fs::path(run_dir) / "config.resolved");
        if (!resolved) throw RunError("run directory is not writable: " + run_dir);
        resolved << serialize_config(echoed) << "\n";
    }
    MetricsWriter metrics((fs::path(run_dir) / "metrics.jsonl").string());

    RunArtifacts art;
    art.run_dir = run_dir;
    art.metrics_path = metrics.path();

    const RunDatasets data = load_run_datasets(cfg);
    const Dataset corpus = bank_corpus(data.train, cfg.seed);

    // Stage 0: the dense, task-agnostic encoder.
    Rng init_rng = make_rng(cfg.seed, "model.init");
    Model pretrained(cfg.model, init_rng);
    pretrain_encoder(pretrained, corpus, cfg.train.pretrain_steps, cfg.train.batch_size,
                     cfg.train.lr, cfg.seed);
    art.pretrained_dir = (fs::path(run_dir) / "pretrained").string();
    save_checkpoint(pretrained, art.pretrained_dir, {SourceRole::pretrained, 0, 0.0});

    // Stage 1: the fine-tuned teacher.
    const Model finetuned = fine_tune_dense(pretrained, data.train, cfg.train.finetune_epochs,
                                            cfg.train.batch_size, cfg.train.lr, cfg.seed);
    art.finetuned_dir = (fs::path(run_dir) / "finetuned").string();
    save_checkpoint(finetuned, art.finetuned_dir, {SourceRole::finetuned, 0, 0.0});

    // Stage 2: banks for the frozen dense models.
    const EffectiveModules mods = effective_modules(cfg);
    RepresentationBank bank_pre, bank_fine;
    if (mods.prc) {
        bank_pre = encode_bank(pretrained, corpus, SourceRole::pretrained, 0.0, 0);
        save_bank(bank_pre, (fs::path(run_dir) / "banks" / "pretrained.bank").string());
    }
    if (mods.fic) {
        bank_fine = encode_bank(finetuned, corpus, SourceRole::finetuned, 0.0, 0);
        save_bank(bank_fine, (fs::path(run_dir) / "banks" / "finetuned.bank").string());
    }
    std::vector<RepresentationBank> snapshot_banks;

    // Stage 3: the trainable model starts from the pre-trained encoder with a
    // fresh task head and is pruned progressively.
    Model model = pretrained;
    Rng head_rng = make_rng(cfg.seed, "prune.head");
    model.reinit_classifier(head_rng);

    AdamOptimizer opt(cfg.train.lr);
    opt.attach_model(model);

    BatchSampler sampler(data.train, cfg.train.batch_size, make_rng(cfg.seed, "prune.batches"));
    Rng fetch_rng = make_rng(cfg.seed, "fetch");

    const Criterion criterion = criterion_of(cfg.method);
    const ScheduleKind kind = cfg.resolved_schedule_kind();
    SparsitySchedule schedule;
    if (kind == ScheduleKind::milestones) {
        const std::int64_t window =
            cfg.train.retrain_steps_per_milestone >= 0
                ? cfg.train.retrain_steps_per_milestone
                : static_cast<std::int64_t>(cfg.train.retrain_epochs_per_milestone) *
                      sampler.batches_per_epoch();
        schedule = milestone_schedule(cfg.target_sparsity, std::max<std::int64_t>(1, window),
                                      cfg.train.milestone_fraction);
    } else {
        schedule = cubic_schedule(0.0, cfg.target_sparsity, cfg.train.warmup_steps,
                                  cfg.train.warmup_steps + cfg.train.ramp_steps,
                                  cfg.train.cooldown_steps);
    }
    const std::vector<PruneMilestone> snapshots =
        snapshot_points(schedule, cfg.train.snapshot_crossings);

    const BlockPartition partition = block_partition(model);
    std::vector<std::string> alive_blocks = partition.block_ids;
    ImportanceAccumulator importance;
    importance.abs_per_batch = cfg.train.first_order_abs_per_batch;

    const ThresholdConfig threshold_cfg{cfg.train.threshold, cfg.train.regularizer_weight};
    const TopkScope scope =
        cfg.train.topk_scope == "global" ? TopkScope::global : TopkScope::per_site;
    const std::int64_t census = prunable_census(model);

    LoopState state;
    SnapshotRegistry registry;
    const Model* kd_teacher = cfg.loss.kd_weight > 0.0 ? &finetuned : nullptr;

    auto masks_changed = [&]() {
        state.mask_seq_digest = fnv1a64("mask", 4, state.mask_seq_digest);
        for (const auto* s : model.prunable_sites()) {
            state.mask_seq_digest = hash_matrix(s->mask, state.mask_seq_digest);
        }
    };

    auto update_unstructured_masks = [&](double target) {
        if (criterion == Criterion::magnitude) {
            for (auto* s : model.prunable_sites()) s->score = magnitude_scores(*s);
        }
        if (criterion == Criterion::soft_movement) {
            bool degenerate = false;
            for (auto* s : model.prunable_sites()) {
                const auto r = threshold_mask(s->score, threshold_cfg);
                s->mask = r.mask;
                degenerate = degenerate || r.degenerate;
            }
            if (degenerate) {
                metrics.emit({{"event", "warning"},
                              {"message", "threshold mask degenerated to all-zero at a site"}});
            }
        } else {
            apply_topk_masks(model, target, scope);
        }
        masks_changed();
    };

    double current_sparsity = 0.0;
    auto refresh_measured = [&]() {
        std::int64_t zeros = 0;
        for (const auto* s : model.prunable_sites()) {
            zeros += s->entry_count() - static_cast<std::int64_t>(s->mask.sum());
        }
        current_sparsity = 100.0 * static_cast<double>(zeros) / static_cast<double>(census);
    };

    double soft_reg_value = 0.0;
    auto soft_regularizer = [&]() {
        if (criterion != Criterion::soft_movement) return 0.0;
        double sum = 0.0;
        for (const auto* s : model.prunable_sites()) {
            sum += s->score.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }).sum();
        }
        return cfg.train.regularizer_weight * sum;
    };

    EvalMetrics dev_metrics;
    auto emit_record = [&](std::int64_t step, double target, const LossTerms& terms,
                           bool with_eval) {
        if (with_eval) dev_metrics = evaluate(model, data.dev);
        nlohmann::ordered_json rec;
        rec["step"] = step;
        rec["target_sparsity"] = target;
        rec["sparsity"] = current_sparsity;
        rec["loss"] = terms.total;
        rec["loss_ce"] = terms.ce;
        rec["loss_prc"] = terms.prc;
        rec["loss_snc"] = terms.snc;
        rec["loss_fic"] = terms.fic;
        rec["loss_kd"] = terms.kd;
        rec["loss_reg"] = terms.regularizer;
        rec["dev_accuracy"] = dev_metrics.accuracy;
        if (dev_metrics.has_f1) rec["dev_f1"] = dev_metrics.f1;
        rec["mask_seq_digest"] = hex64(state.mask_seq_digest);
        if (kind == ScheduleKind::milestones) {
            rec["alive_blocks"] = alive_blocks.size();
        }
        metrics.emit(rec);
    };

    std::size_t next_snapshot = 0;
    std::size_t next_milestone = 0;

    for (std::int64_t t = 0; t < schedule.total_steps; ++t) {
        const double target = scheduled_sparsity(t, schedule);

        // Mask recomputation / structured prune events happen before the step.
        if (kind == ScheduleKind::milestones) {
            if (next_milestone < schedule.milestones.size() &&
                t == schedule.milestones[next_milestone].step) {
                const double wanted_zeros =
                    schedule.milestones[next_milestone].sparsity / 100.0 *
                    static_cast<double>(census);
                refresh_measured();
                const double have_zeros = current_sparsity / 100.0 * static_cast<double>(census);
                const double fraction = (wanted_zeros - have_zeros) / static_cast<double>(census);
                if (fraction > 0.0) {
                    const auto imp = first_order_block_importance(importance, partition);
                    const StructuredPruneResult res =
                        structured_prune_step(imp, alive_blocks, fraction, model, partition);
                    for (const auto& id : res.removed) {
                        mask_out_block(model, partition, id);
                        alive_blocks.erase(
                            std::remove(alive_blocks.begin(), alive_blocks.end(), id),
                            alive_blocks.end());
                    }
                    masks_changed();
                }
                importance.reset();
                next_milestone += 1;
                metrics.flush();
            }
        } else if (t % cfg.train.mask_update_interval == 0) {
            update_unstructured_masks(target);
        }
        refresh_measured();

        // Assemble the step's contrast sets.
        const Batch batch = sampler.next();
        ContrastContext ctx;
        ctx.current_sparsity = current_sparsity;
        if (mods.prc) ctx.prc_views.push_back(fetch_view(bank_pre, cfg, batch, fetch_rng, state));
        if (mods.fic) ctx.fic_views.push_back(fetch_view(bank_fine, cfg, batch, fetch_rng, state));
        if (mods.snc) {
            for (const auto& bank : snapshot_banks) {
                if (bank.source_sparsity < current_sparsity) {
                    ctx.snc_views.push_back(fetch_view(bank, cfg, batch, fetch_rng, state));
                }
            }
            if (cfg.contrastive.snc_pooled && ctx.snc_views.size() > 1) {
                ctx.snc_views = {pool_views(ctx.snc_views)};
            }
        }

        soft_reg_value = soft_regularizer();
        LossTerms terms;
        try {
            terms = total_loss(model, batch, ctx, cfg.loss, cfg.contrastive, kd_teacher,
                               soft_reg_value, true);
        } catch (const RunError& e) {
            metrics.emit({{"event", "run_error"}, {"step", t}, {"message", e.what()}});
            metrics.flush();
            throw;
        }

        // Criterion bookkeeping rides on the straight-through gradients.
        if (criterion == Criterion::movement || criterion == Criterion::soft_movement) {
            for (auto* s : model.prunable_sites()) {
                movement_update(*s, s->grad_eff, cfg.train.score_lr);
            }
            if (criterion == Criterion::soft_movement) {
                for (auto* s : model.prunable_sites()) {
                    soft_movement_regularizer_update(*s, cfg.train.regularizer_weight,
                                                     cfg.train.score_lr);
                }
            }
        } else if (criterion == Criterion::first_order) {
            accumulate_first_order(importance, model, partition);
        }

        opt.step();

        if (t == 0 || (cfg.train.eval_every > 0 && (t + 1) % cfg.train.eval_every == 0)) {
            emit_record(t, target, terms, true);
        }

        // Snapshot capture at the end of the step.
        if (next_snapshot < snapshots.size() && t == snapshots[next_snapshot].step) {
            refresh_measured();
            const Model frozen = model;
            const std::string tag = format_sparsity_tag(current_sparsity);
            SnapshotRecord rec;
            rec.sparsity = current_sparsity;
            rec.step = t;
            if (!cfg.train.drop_snapshot_weights) {
                rec.checkpoint_dir = (fs::path(run_dir) / "snapshots" / ("r" + tag)).string();
                save_checkpoint(frozen, rec.checkpoint_dir,
                                {SourceRole::snapshot, t, current_sparsity});
            }
            if (mods.snc) {
                RepresentationBank bank =
                    encode_bank(frozen, corpus, SourceRole::snapshot, current_sparsity, t);
                rec.bank_path =
                    (fs::path(run_dir) / "banks" / ("snapshot_r" + tag + ".bank")).string();
                save_bank(bank, rec.bank_path);
                snapshot_banks.push_back(std::move(bank));
            }
            registry.add(std::move(rec));
            next_snapshot += 1;
            metrics.flush();
        }
    }

    // Final mask refresh for Top-K criteria so the emitted model reflects the
    // end-of-ramp scores exactly.
    if (kind == ScheduleKind::cubic && criterion != Criterion::soft_movement) {
        update_unstructured_masks(schedule.final_sparsity);
    }
    refresh_measured();

    dev_metrics = evaluate(model, data.dev);
    art.dev_accuracy = dev_metrics.accuracy;
    art.dev_f1 = dev_metrics.has_f1 ? dev_metrics.f1 : 0.0;
    art.measured_sparsity = current_sparsity;
    art.mask_sequence_digest = state.mask_seq_digest;

    art.final_dir = (fs::path(run_dir) / "final").string();
    save_checkpoint(model, art.final_dir,
                    {SourceRole::pruned, schedule.total_steps, current_sparsity});
    registry.save_manifest((fs::path(run_dir) / "registry.json").string());
    art.registry = registry;

    {
        nlohmann::ordered_json summary;
        summary["method"] = to_string(cfg.method);
        summary["task"] = data.train.task_name;
        summary["target_sparsity"] = cfg.target_sparsity;
        summary["measured_sparsity"] = current_sparsity;
        summary["dev_accuracy"] = art.dev_accuracy;
        if (dev_metrics.has_f1) summary["dev_f1"] = dev_metrics.f1;
        summary["snapshots"] = registry.records().size();
        summary["mask_seq_digest"] = hex64(state.mask_seq_digest);
        summary["seed"] = cfg.seed;
        std::ofstream out(fs::path(run_dir) / "summary.json");
        out << summary.dump(2) << "\n";
    }

    nlohmann::ordered_json final_rec;
    final_rec["event"] = "final";
    final_rec["step"] = schedule.total_steps;
    final_rec["sparsity"] = current_sparsity;
    final_rec["dev_accuracy"] = art.dev_accuracy;
    if (dev_metrics.has_f1) final_rec["dev_f1"] = dev_metrics.f1;
    final_rec["mask_seq_digest"] = hex64(state.mask_seq_digest);
    metrics.emit(final_rec);
    metrics.flush();
    return art;
}

}  // namespace cap
