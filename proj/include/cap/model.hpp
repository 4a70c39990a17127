// SPDX-License-Identifier: Apache-2.0
//
// A small transformer encoder classifier with explicitly maskable encoder
// weight matrices. Forward always computes with weight .* mask at prunable
// sites; backward produces the gradient with respect to that masked product,
// which is what both the weight updates (after re-masking) and the
// straight-through score updates consume.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cap/common.hpp"
#include "cap/data.hpp"

namespace cap {

enum class Pooling { cls, mean };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

struct ModelConfig {
    int vocab_size = 1000;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ffn = 128;
    int max_seq_len = 32;
    int n_classes = 2;
    Pooling pooling = Pooling::cls;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// One prunable encoder weight matrix together with its importance scores and
// binary mask. Scores are kept in double so long additive accumulations stay
// faithful to an fp64 replay.
struct MaskedParameterSite {
    std::string site_id;
    Mat weight;
    Mat score;     // same shape as weight
    Mat mask;      // entries in {0, 1}
    Mat grad_eff;  // dL/d(weight .* mask), filled by backward()
    bool prunable = true;

    Mat effective() const { return weight.cwiseProduct(mask); }
    std::int64_t entry_count() const { return weight.size(); }
};

// Dense (never pruned) parameter: embeddings, biases, layer norms, classifier.
struct ParamTensor {
    std::string name;
    Mat value;
    Mat grad;
};

struct LayerNormCache {
    Mat xhat;
    Vec inv_std;
};

struct LayerCache {
    Mat x_in;
    Mat q, k, v;
    std::vector<Mat> probs;  // batch*heads attention matrices, each T x T
    Mat ctx;
    LayerNormCache ln1;
    Mat x_mid;
    Mat h_pre;
    Mat h_act;
    LayerNormCache ln2;
    Mat x_out;
};

struct ForwardCache {
    int batch_size = 0;
    int seq_len = 0;
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> real;
    std::vector<int> n_real;
    Mat emb;
    LayerNormCache emb_ln;
    Mat x0;
    std::vector<LayerCache> layers;
    Mat hidden;  // final hidden states, (batch*seq) x d_model
    Mat pooled;  // batch x d_model
};

struct EncoderLayer {
    MaskedParameterSite wq, wk, wv, wo, w1, w2;
    ParamTensor bq, bk, bv, bo, b1, b2;
    ParamTensor ln1_g, ln1_b, ln2_g, ln2_b;
    int n_heads = 0;
    int d_head = 0;

    int attn_width() const { return n_heads * d_head; }
    int ffn_width() const { return static_cast<int>(w1.weight.cols()); }
};

class Model {
public:
    Model() = default;
    Model(const ModelConfig& config, Rng& rng);

    ModelConfig config;
    ParamTensor tok_emb, pos_emb;
    ParamTensor emb_ln_g, emb_ln_b;
    std::vector<EncoderLayer> layers;
    ParamTensor cls_w, cls_b;

    // Registries walk parameters in a stable order (serialization, optimizer,
    // hashing all rely on it).
    std::vector<MaskedParameterSite*> prunable_sites();
    std::vector<const MaskedParameterSite*> prunable_sites() const;
    std::vector<ParamTensor*> dense_params();
    std::vector<const ParamTensor*> dense_params() const;

    void reinit_classifier(Rng& rng);
    void zero_grads();

    ForwardCache forward(const Batch& batch) const;
    Mat logits(const Mat& pooled) const;

    // Accumulates grads for every parameter given dL/d(final hidden states).
    void backward(const ForwardCache& cache, const Mat& d_hidden);

    // Maps dL/d(pooled) to dL/d(hidden) under the configured pooling.
    Mat pooled_to_hidden_grad(const ForwardCache& cache, const Mat& d_pooled) const;

    // Classifier backward; returns dL/d(pooled).
    Mat classifier_backward(const Mat& pooled, const Mat& d_logits);

    std::uint64_t weights_digest() const;  // weights + masks + scores

private:
    Mat encode_embeddings(const Batch& batch) const;
};

// Total count of prunable encoder weight entries. Embeddings, layer norms,
// biases, and the classifier head are excluded; masking does not change it.
std::int64_t prunable_census(const Model& model);

// Convenience: forward + pooling only, no gradient state retained.
Mat encode(const Model& model, const Batch& batch);

Mat cross_entropy_grad(const Mat& logits, const std::vector<int>& labels);
double cross_entropy_loss(const Mat& logits, const std::vector<int>& labels);

}  // namespace cap
