// SPDX-License-Identifier: Apache-2.0

#include "cap/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <vector>

#include "cap/json_util.hpp"

namespace fs = std::filesystem;

namespace cap {

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["vocab_size"] = cfg.vocab_size;
    j["d_model"] = cfg.d_model;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["d_ffn"] = cfg.d_ffn;
    j["max_seq_len"] = cfg.max_seq_len;
    j["n_classes"] = cfg.n_classes;
    j["pooling"] = to_string(cfg.pooling);
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path) {
    ModelConfig cfg;
    StrictReader r(j, path);
    r.read("vocab_size", cfg.vocab_size);
    r.read("d_model", cfg.d_model);
    r.read("n_layers", cfg.n_layers);
    r.read("n_heads", cfg.n_heads);
    r.read("d_ffn", cfg.d_ffn);
    r.read("max_seq_len", cfg.max_seq_len);
    r.read("n_classes", cfg.n_classes);
    std::string pooling = to_string(cfg.pooling);
    r.read("pooling", pooling);
    cfg.pooling = pooling_from_string(pooling);
    r.finish();
    return cfg;
}

namespace {

struct TensorRef {
    std::string name;
    const Mat* mat;
};

std::vector<TensorRef> tensor_registry(const Model& model) {
    std::vector<TensorRef> out;
    for (const auto* p : model.dense_params()) out.push_back({p->name, &p->value});
    for (const auto* s : model.prunable_sites()) {
        out.push_back({s->site_id + ".weight", &s->weight});
        out.push_back({s->site_id + ".score", &s->score});
        out.push_back({s->site_id + ".mask", &s->mask});
    }
    return out;
}

std::vector<std::pair<std::string, Mat*>> tensor_registry_mut(Model& model) {
    std::vector<std::pair<std::string, Mat*>> out;
    for (auto* p : model.dense_params()) out.emplace_back(p->name, &p->value);
    for (auto* s : model.prunable_sites()) {
        out.emplace_back(s->site_id + ".weight", &s->weight);
        out.emplace_back(s->site_id + ".score", &s->score);
        out.emplace_back(s->site_id + ".mask", &s->mask);
    }
    return out;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& dir, const CheckpointMeta& meta) {
    fs::create_directories(dir);
    const auto registry = tensor_registry(model);

    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    std::int64_t offset = 0;
    for (const auto& t : registry) {
        nlohmann::ordered_json e;
        e["name"] = t.name;
        e["rows"] = t.mat->rows();
        e["cols"] = t.mat->cols();
        e["offset"] = offset;
        manifest.push_back(e);
        offset += t.mat->size();
    }

    nlohmann::ordered_json md;
    md["format"] = "cap-checkpoint-v1";
    md["role"] = to_string(meta.role);
    md["step"] = meta.step;
    md["sparsity"] = meta.sparsity;
    md["config"] = model_config_to_json(model.config);
    md["tensors"] = manifest;

    std::ofstream mf(fs::path(dir) / "metadata.json");
    if (!mf) throw RunError("cannot write checkpoint metadata in " + dir);
    mf << md.dump(2) << "\n";

    std::ofstream bf(fs::path(dir) / "tensors.bin", std::ios::binary);
    if (!bf) throw RunError("cannot write checkpoint tensors in " + dir);
    for (const auto& t : registry) {
        bf.write(reinterpret_cast<const char*>(t.mat->data()),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.mat->size())));
    }
    if (!bf) throw RunError("short write on checkpoint tensors in " + dir);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "metadata.json");
    if (!mf) throw InputError("missing checkpoint metadata in " + dir);
    const nlohmann::json md = nlohmann::json::parse(mf);
    if (md.at("format").get<std::string>() != "cap-checkpoint-v1") {
        throw InputError("unrecognized checkpoint format in " + dir);
    }

    LoadedCheckpoint out;
    out.meta.role = source_role_from_string(md.at("role").get<std::string>());
    out.meta.step = md.at("step").get<std::int64_t>();
    out.meta.sparsity = md.at("sparsity").get<double>();
    const ModelConfig cfg = model_config_from_json(md.at("config"), "config.");

    Rng rng = make_rng(0, "checkpoint.load");
    out.model = Model(cfg, rng);

    std::ifstream bf(fs::path(dir) / "tensors.bin", std::ios::binary);
    if (!bf) throw InputError("missing checkpoint tensors in " + dir);

    auto registry = tensor_registry_mut(out.model);
    const auto& manifest = md.at("tensors");
    if (manifest.size() != registry.size()) {
        throw InputError("checkpoint manifest does not match the model layout in " + dir);
    }
    for (std::size_t i = 0; i < registry.size(); ++i) {
        const auto& e = manifest.at(i);
        auto& [name, mat] = registry[i];
        if (e.at("name").get<std::string>() != name ||
            e.at("rows").get<Eigen::Index>() != mat->rows() ||
            e.at("cols").get<Eigen::Index>() != mat->cols()) {
            throw InputError("checkpoint tensor mismatch at " + name + " in " + dir);
        }
        bf.read(reinterpret_cast<char*>(mat->data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(mat->size())));
    }
    if (!bf) throw InputError("truncated checkpoint tensors in " + dir);
    return out;
}

std::uint64_t checkpoint_digest(const std::string& dir) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char* file : {"metadata.json", "tensors.bin"}) {
        std::ifstream in(fs::path(dir) / file, std::ios::binary);
        if (!in) throw InputError(std::string("missing checkpoint file ") + file + " in " + dir);
        char buf[1 << 16];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
            h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
        }
    }
    return h;
}

}  // namespace cap
