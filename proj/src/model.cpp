// SPDX-License-Identifier: Apache-2.0

#include "cap/model.hpp"

#include <cmath>

namespace cap {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kAttnMaskValue = -1e30;
constexpr double kInitStd = 0.02;

Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double std_dev) {
    std::normal_distribution<double> dist(0.0, std_dev);
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
    }
    return m;
}

ParamTensor make_param(std::string name, Eigen::Index rows, Eigen::Index cols, Rng& rng,
                       double std_dev) {
    ParamTensor p;
    p.name = std::move(name);
    p.value = normal_matrix(rows, cols, rng, std_dev);
    p.grad = Mat::Zero(rows, cols);
    return p;
}

ParamTensor make_const_param(std::string name, Eigen::Index rows, Eigen::Index cols, double fill) {
    ParamTensor p;
    p.name = std::move(name);
    p.value = Mat::Constant(rows, cols, fill);
    p.grad = Mat::Zero(rows, cols);
    return p;
}

MaskedParameterSite make_site(std::string id, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    MaskedParameterSite s;
    s.site_id = std::move(id);
    s.weight = normal_matrix(rows, cols, rng, kInitStd);
    s.score = Mat::Zero(rows, cols);
    s.mask = Mat::Ones(rows, cols);
    s.grad_eff = Mat::Zero(rows, cols);
    return s;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

// y = xhat .* g + b rowwise; xhat = (x - mean) * inv_std.
Mat layer_norm_forward(const Mat& x, const ParamTensor& g, const ParamTensor& b,
                       LayerNormCache& cache) {
    const Eigen::Index rows = x.rows(), cols = x.cols();
    cache.xhat.resize(rows, cols);
    cache.inv_std.resize(rows);
    Mat y(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_std(r) = inv_std;
        cache.xhat.row(r) = (x.row(r).array() - mu) * inv_std;
        y.row(r) = cache.xhat.row(r).cwiseProduct(g.value.row(0)) + b.value.row(0);
    }
    return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, ParamTensor& g,
                        ParamTensor& b) {
    const Eigen::Index rows = dy.rows(), cols = dy.cols();
    Mat dx(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        g.grad.row(0) += dy.row(r).cwiseProduct(cache.xhat.row(r));
        b.grad.row(0) += dy.row(r);
        const Eigen::RowVectorXd a = dy.row(r).cwiseProduct(g.value.row(0));
        const double mean_a = a.mean();
        const double mean_ax = a.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) =
            (cache.inv_std(r) * (a.array() - mean_a - cache.xhat.row(r).array() * mean_ax))
                .matrix();
    }
    return dx;
}

}  // namespace

std::string to_string(Pooling p) { return p == Pooling::cls ? "cls" : "mean"; }

Pooling pooling_from_string(const std::string& s) {
    if (s == "cls") return Pooling::cls;
    if (s == "mean") return Pooling::mean;
    throw ConfigError("unknown pooling: " + s);
}

void ModelConfig::validate() const {
    if (vocab_size <= tok::kFirstContent) throw ConfigError("vocab_size too small");
    if (d_model <= 0 || n_layers < 0 || d_ffn <= 0) throw ConfigError("bad model dimensions");
    if (n_heads <= 0 || d_model % n_heads != 0) {
        throw ConfigError("d_model must be divisible by n_heads");
    }
    if (max_seq_len <= 1) throw ConfigError("max_seq_len too small");
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
}

Model::Model(const ModelConfig& cfg, Rng& rng) : config(cfg) {
    cfg.validate();
    const int d = cfg.d_model;
    tok_emb = make_param("tok_emb", cfg.vocab_size, d, rng, kInitStd);
    pos_emb = make_param("pos_emb", cfg.max_seq_len, d, rng, kInitStd);
    emb_ln_g = make_const_param("emb_ln_g", 1, d, 1.0);
    emb_ln_b = make_const_param("emb_ln_b", 1, d, 0.0);
    layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& L = layers[static_cast<std::size_t>(l)];
        const std::string p = "layer" + std::to_string(l) + ".";
        L.n_heads = cfg.n_heads;
        L.d_head = d / cfg.n_heads;
        L.wq = make_site(p + "attn.wq", d, d, rng);
        L.wk = make_site(p + "attn.wk", d, d, rng);
        L.wv = make_site(p + "attn.wv", d, d, rng);
        L.wo = make_site(p + "attn.wo", d, d, rng);
        L.w1 = make_site(p + "ffn.w1", d, cfg.d_ffn, rng);
        L.w2 = make_site(p + "ffn.w2", cfg.d_ffn, d, rng);
        L.bq = make_const_param(p + "attn.bq", 1, d, 0.0);
        L.bk = make_const_param(p + "attn.bk", 1, d, 0.0);
        L.bv = make_const_param(p + "attn.bv", 1, d, 0.0);
        L.bo = make_const_param(p + "attn.bo", 1, d, 0.0);
        L.b1 = make_const_param(p + "ffn.b1", 1, cfg.d_ffn, 0.0);
        L.b2 = make_const_param(p + "ffn.b2", 1, d, 0.0);
        L.ln1_g = make_const_param(p + "ln1_g", 1, d, 1.0);
        L.ln1_b = make_const_param(p + "ln1_b", 1, d, 0.0);
        L.ln2_g = make_const_param(p + "ln2_g", 1, d, 1.0);
        L.ln2_b = make_const_param(p + "ln2_b", 1, d, 0.0);
    }
    cls_w = make_param("cls_w", d, cfg.n_classes, rng, kInitStd);
    cls_b = make_const_param("cls_b", 1, cfg.n_classes, 0.0);
}

void Model::reinit_classifier(Rng& rng) {
    cls_w.value = normal_matrix(cls_w.value.rows(), cls_w.value.cols(), rng, kInitStd);
    cls_b.value.setZero();
    cls_w.grad.setZero();
    cls_b.grad.setZero();
}

std::vector<MaskedParameterSite*> Model::prunable_sites() {
    std::vector<MaskedParameterSite*> out;
    for (auto& L : layers) {
        out.push_back(&L.wq);
        out.push_back(&L.wk);
        out.push_back(&L.wv);
        out.push_back(&L.wo);
        out.push_back(&L.w1);
        out.push_back(&L.w2);
    }
    return out;
}

std::vector<const MaskedParameterSite*> Model::prunable_sites() const {
    std::vector<const MaskedParameterSite*> out;
    for (const auto& L : layers) {
        out.push_back(&L.wq);
        out.push_back(&L.wk);
        out.push_back(&L.wv);
        out.push_back(&L.wo);
        out.push_back(&L.w1);
        out.push_back(&L.w2);
    }
    return out;
}

std::vector<ParamTensor*> Model::dense_params() {
    std::vector<ParamTensor*> out{&tok_emb, &pos_emb, &emb_ln_g, &emb_ln_b};
    for (auto& L : layers) {
        for (ParamTensor* p : {&L.bq, &L.bk, &L.bv, &L.bo, &L.b1, &L.b2, &L.ln1_g, &L.ln1_b,
                               &L.ln2_g, &L.ln2_b}) {
            out.push_back(p);
        }
    }
    out.push_back(&cls_w);
    out.push_back(&cls_b);
    return out;
}

std::vector<const ParamTensor*> Model::dense_params() const {
    auto* self = const_cast<Model*>(this);
    std::vector<const ParamTensor*> out;
    for (auto* p : self->dense_params()) out.push_back(p);
    return out;
}

void Model::zero_grads() {
    for (auto* p : dense_params()) p->grad.setZero();
    for (auto* s : prunable_sites()) s->grad_eff.setZero();
}

Mat Model::encode_embeddings(const Batch& batch) const {
    const int d = config.d_model;
    const std::size_t n = batch.ids.size();
    Mat emb(static_cast<Eigen::Index>(n), d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::int32_t id = batch.ids[i];
        if (id < 0 || id >= config.vocab_size) {
            throw InputError("token id out of range: " + std::to_string(id));
        }
        const int t = static_cast<int>(i % static_cast<std::size_t>(batch.seq_len));
        emb.row(static_cast<Eigen::Index>(i)) = tok_emb.value.row(id) + pos_emb.value.row(t);
    }
    return emb;
}

ForwardCache Model::forward(const Batch& batch) const {
    if (batch.seq_len > config.max_seq_len) {
        throw InputError("sequence length exceeds max_seq_len");
    }
    ForwardCache c;
    c.batch_size = batch.batch_size;
    c.seq_len = batch.seq_len;
    c.ids = batch.ids;
    c.real = batch.real;
    c.n_real.resize(static_cast<std::size_t>(batch.batch_size), 0);
    for (int b = 0; b < batch.batch_size; ++b) {
        for (int t = 0; t < batch.seq_len; ++t) {
            c.n_real[static_cast<std::size_t>(b)] +=
                batch.real[static_cast<std::size_t>(b * batch.seq_len + t)];
        }
    }

    c.emb = encode_embeddings(batch);
    c.x0 = layer_norm_forward(c.emb, emb_ln_g, emb_ln_b, c.emb_ln);

    const int B = batch.batch_size, T = batch.seq_len;
    Mat x = c.x0;
    c.layers.resize(layers.size());
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& L = layers[li];
        auto& lc = c.layers[li];
        lc.x_in = x;

        const Mat wq = L.wq.effective(), wk = L.wk.effective(), wv = L.wv.effective();
        lc.q = x * wq;
        lc.q.rowwise() += Eigen::RowVectorXd(L.bq.value.row(0));
        lc.k = x * wk;
        lc.k.rowwise() += Eigen::RowVectorXd(L.bk.value.row(0));
        lc.v = x * wv;
        lc.v.rowwise() += Eigen::RowVectorXd(L.bv.value.row(0));

        const int H = L.n_heads, dh = L.d_head;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        lc.ctx = Mat::Zero(x.rows(), L.attn_width());
        lc.probs.assign(static_cast<std::size_t>(B * H), Mat());
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const auto qb = lc.q.block(b * T, h * dh, T, dh);
                const auto kb = lc.k.block(b * T, h * dh, T, dh);
                const auto vb = lc.v.block(b * T, h * dh, T, dh);
                Mat scores = qb * kb.transpose() * scale;
                for (int j = 0; j < T; ++j) {
                    if (!batch.real[static_cast<std::size_t>(b * T + j)]) {
                        scores.col(j).setConstant(kAttnMaskValue);
                    }
                }
                Mat& p = lc.probs[static_cast<std::size_t>(b * H + h)];
                p.resize(T, T);
                for (int i = 0; i < T; ++i) {
                    const double m = scores.row(i).maxCoeff();
                    p.row(i) = (scores.row(i).array() - m).exp();
                    p.row(i) /= p.row(i).sum();
                }
                lc.ctx.block(b * T, h * dh, T, dh) = p * vb;
            }
        }

        Mat attn_out = lc.ctx * L.wo.effective();
        attn_out.rowwise() += Eigen::RowVectorXd(L.bo.value.row(0));
        lc.x_mid = layer_norm_forward(lc.x_in + attn_out, L.ln1_g, L.ln1_b, lc.ln1);

        lc.h_pre = lc.x_mid * L.w1.effective();
        lc.h_pre.rowwise() += Eigen::RowVectorXd(L.b1.value.row(0));
        lc.h_act = lc.h_pre.unaryExpr([](double v) { return gelu(v); });
        Mat ffn_out = lc.h_act * L.w2.effective();
        ffn_out.rowwise() += Eigen::RowVectorXd(L.b2.value.row(0));
        lc.x_out = layer_norm_forward(lc.x_mid + ffn_out, L.ln2_g, L.ln2_b, lc.ln2);
        x = lc.x_out;
    }
    c.hidden = x;

    c.pooled.resize(B, config.d_model);
    for (int b = 0; b < B; ++b) {
        if (config.pooling == Pooling::cls) {
            c.pooled.row(b) = c.hidden.row(b * T);
        } else {
            Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(config.d_model);
            for (int t = 0; t < T; ++t) {
                if (batch.real[static_cast<std::size_t>(b * T + t)]) acc += c.hidden.row(b * T + t);
            }
            c.pooled.row(b) = acc / static_cast<double>(c.n_real[static_cast<std::size_t>(b)]);
        }
    }
    return c;
}

Mat Model::logits(const Mat& pooled) const {
    Mat out = pooled * cls_w.value;
    out.rowwise() += Eigen::RowVectorXd(cls_b.value.row(0));
    return out;
}

Mat Model::pooled_to_hidden_grad(const ForwardCache& cache, const Mat& d_pooled) const {
    const int B = cache.batch_size, T = cache.seq_len;
    Mat d_hidden = Mat::Zero(cache.hidden.rows(), cache.hidden.cols());
    for (int b = 0; b < B; ++b) {
        if (config.pooling == Pooling::cls) {
            d_hidden.row(b * T) = d_pooled.row(b);
        } else {
            const double inv = 1.0 / static_cast<double>(cache.n_real[static_cast<std::size_t>(b)]);
            for (int t = 0; t < T; ++t) {
                if (cache.real[static_cast<std::size_t>(b * T + t)]) {
                    d_hidden.row(b * T + t) = d_pooled.row(b) * inv;
                }
            }
        }
    }
    return d_hidden;
}

Mat Model::classifier_backward(const Mat& pooled, const Mat& d_logits) {
    cls_w.grad += pooled.transpose() * d_logits;
    cls_b.grad.row(0) += d_logits.colwise().sum();
    return d_logits * cls_w.value.transpose();
}

void Model::backward(const ForwardCache& c, const Mat& d_hidden) {
    const int B = c.batch_size, T = c.seq_len;
    Mat dx = d_hidden;
    for (std::size_t li = layers.size(); li-- > 0;) {
        auto& L = layers[li];
        const auto& lc = c.layers[li];

        // x_out = LN2(x_mid + ffn_out)
        Mat dr2 = layer_norm_backward(dx, lc.ln2, L.ln2_g, L.ln2_b);
        Mat d_x_mid = dr2;

        // ffn_out = gelu(x_mid*W1 + b1)*W2 + b2
        L.w2.grad_eff += lc.h_act.transpose() * dr2;
        L.b2.grad.row(0) += dr2.colwise().sum();
        Mat d_h_act = dr2 * L.w2.effective().transpose();
        Mat d_h_pre =
            d_h_act.cwiseProduct(lc.h_pre.unaryExpr([](double v) { return gelu_grad(v); }));
        L.w1.grad_eff += lc.x_mid.transpose() * d_h_pre;
        L.b1.grad.row(0) += d_h_pre.colwise().sum();
        d_x_mid += d_h_pre * L.w1.effective().transpose();

        // x_mid = LN1(x_in + attn_out)
        Mat dr1 = layer_norm_backward(d_x_mid, lc.ln1, L.ln1_g, L.ln1_b);
        Mat d_x_in = dr1;

        // attn_out = ctx*Wo + bo
        L.wo.grad_eff += lc.ctx.transpose() * dr1;
        L.bo.grad.row(0) += dr1.colwise().sum();
        Mat d_ctx = dr1 * L.wo.effective().transpose();

        const int H = L.n_heads, dh = L.d_head;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Mat dq = Mat::Zero(lc.q.rows(), lc.q.cols());
        Mat dk = Mat::Zero(lc.k.rows(), lc.k.cols());
        Mat dv = Mat::Zero(lc.v.rows(), lc.v.cols());
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < H; ++h) {
                const auto qb = lc.q.block(b * T, h * dh, T, dh);
                const auto kb = lc.k.block(b * T, h * dh, T, dh);
                const auto vb = lc.v.block(b * T, h * dh, T, dh);
                const Mat& p = lc.probs[static_cast<std::size_t>(b * H + h)];
                const auto d_ctx_b = d_ctx.block(b * T, h * dh, T, dh);

                Mat dp = d_ctx_b * vb.transpose();
                dv.block(b * T, h * dh, T, dh) += p.transpose() * d_ctx_b;
                Mat ds(T, T);
                for (int i = 0; i < T; ++i) {
                    const double dot = dp.row(i).dot(p.row(i));
                    ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
                }
                dq.block(b * T, h * dh, T, dh) += ds * kb * scale;
                dk.block(b * T, h * dh, T, dh) += ds.transpose() * qb * scale;
            }
        }

        L.wq.grad_eff += lc.x_in.transpose() * dq;
        L.bq.grad.row(0) += dq.colwise().sum();
        d_x_in += dq * L.wq.effective().transpose();
        L.wk.grad_eff += lc.x_in.transpose() * dk;
        L.bk.grad.row(0) += dk.colwise().sum();
        d_x_in += dk * L.wk.effective().transpose();
        L.wv.grad_eff += lc.x_in.transpose() * dv;
        L.bv.grad.row(0) += dv.colwise().sum();
        d_x_in += dv * L.wv.effective().transpose();

        dx = d_x_in;
    }

    Mat d_emb = layer_norm_backward(dx, c.emb_ln, emb_ln_g, emb_ln_b);
    for (Eigen::Index i = 0; i < d_emb.rows(); ++i) {
        const std::int32_t id = c.ids[static_cast<std::size_t>(i)];
        const int t = static_cast<int>(i % T);
        tok_emb.grad.row(id) += d_emb.row(i);
        pos_emb.grad.row(t) += d_emb.row(i);
    }
}

std::uint64_t Model::weights_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : dense_params()) h = hash_matrix(p->value, h);
    for (const auto* s : prunable_sites()) {
        h = hash_matrix(s->weight, h);
        h = hash_matrix(s->mask, h);
        h = hash_matrix(s->score, h);
    }
    return h;
}

std::int64_t prunable_census(const Model& model) {
    std::int64_t n = 0;
    for (const auto* s : model.prunable_sites()) n += s->entry_count();
    return n;
}

Mat encode(const Model& model, const Batch& batch) { return model.forward(batch).pooled; }

double cross_entropy_loss(const Mat& logits, const std::vector<int>& labels) {
    const Eigen::Index B = logits.rows();
    double total = 0.0;
    for (Eigen::Index b = 0; b < B; ++b) {
        const double m = logits.row(b).maxCoeff();
        const double lse = m + std::log((logits.row(b).array() - m).exp().sum());
        total += lse - logits(b, labels[static_cast<std::size_t>(b)]);
    }
    return total / static_cast<double>(B);
}

Mat cross_entropy_grad(const Mat& logits, const std::vector<int>& labels) {
    const Eigen::Index B = logits.rows();
    Mat g(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < B; ++b) {
        const double m = logits.row(b).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(b).array() - m).exp();
        g.row(b) = e / e.sum();
        g(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
    }
    return g / static_cast<double>(B);
}

}  // namespace cap
