#include "hlab/model/config.hpp"

#include <algorithm>
#include <set>

namespace hlab::model {

using blocks::AttentionKind;
using blocks::AttentionSpec;

const char* to_string(NormStyle s) { return s == NormStyle::qk_reorder ? "qk_reorder" : "pre_ln"; }

void ModelConfig::validate() const {
    const std::pair<const char*, std::size_t> dims[] = {
        {"d_model", d_model},   {"n_layers", n_layers}, {"n_heads", n_heads},       {"n_kv_heads", n_kv_heads},
        {"head_size", head_size}, {"ffn_dim", ffn_dim},   {"vocab_size", vocab_size}, {"max_seq", max_seq}};
    for (auto [name, v] : dims)
        if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    if (unit_size() == 0) throw ConfigError("hybrid ratio must have a positive local+global unit");
    if (n_layers % unit_size() != 0)
        throw ConfigError("n_layers (" + std::to_string(n_layers) + ") not divisible by the " +
                          std::to_string(hybrid_local) + ":" + std::to_string(hybrid_global) + " unit");
    if (head_size * n_heads != d_model)
        throw ConfigError("head_size * n_heads must equal d_model (" + std::to_string(head_size * n_heads) +
                          " vs " + std::to_string(d_model) + ")");
    if (n_heads % n_kv_heads != 0) throw ConfigError("n_heads not divisible by n_kv_heads");
    if (hybrid_local > 0) {
        if (window == 0) throw ConfigError("window must be positive when local layers exist");
        if (!(rope_theta > 0.0)) throw ConfigError("rope_theta must be positive when local layers exist");
        if (head_size % 2 != 0) throw ConfigError("head_size must be even for rotary local layers");
    }
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
}

AttentionSpec ModelConfig::attention_spec(AttentionKind kind) const {
    if (kind == AttentionKind::local) return AttentionSpec::local(window, n_heads, n_kv_heads, head_size, rope_theta);
    return AttentionSpec::global(n_heads, n_kv_heads, head_size);
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"d_model", c.d_model},
            {"n_layers", c.n_layers},
            {"hybrid_ratio", {c.hybrid_local, c.hybrid_global}},
            {"window", c.window},
            {"n_heads", c.n_heads},
            {"n_kv_heads", c.n_kv_heads},
            {"head_size", c.head_size},
            {"ffn_dim", c.ffn_dim},
            {"vocab_size", c.vocab_size},
            {"max_seq", c.max_seq},
            {"rope_theta", c.rope_theta},
            {"tied_embeddings", c.tied_embeddings},
            {"norm_style", to_string(c.norm_style)},
            {"global_phase", c.global_phase == GlobalPhase::end ? "end" : "start"},
            {"init_scale", c.init_scale}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    static const std::set<std::string> known = {"d_model",   "n_layers",   "hybrid_ratio", "window",
                                                "n_heads",   "n_kv_heads", "head_size",    "ffn_dim",
                                                "vocab_size", "max_seq",   "rope_theta",   "tied_embeddings",
                                                "norm_style", "global_phase", "init_scale"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown model config key '" + it.key() + "'");
    ModelConfig c;
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        get("d_model", c.d_model);
        get("n_layers", c.n_layers);
        get("window", c.window);
        get("n_heads", c.n_heads);
        get("n_kv_heads", c.n_kv_heads);
        get("head_size", c.head_size);
        get("ffn_dim", c.ffn_dim);
        get("vocab_size", c.vocab_size);
        get("max_seq", c.max_seq);
        get("rope_theta", c.rope_theta);
        get("tied_embeddings", c.tied_embeddings);
        get("init_scale", c.init_scale);
        if (j.contains("hybrid_ratio")) {
            auto r = j.at("hybrid_ratio").get<std::vector<std::size_t>>();
            if (r.size() != 2) throw ConfigError("hybrid_ratio must be [local, global]");
            c.hybrid_local = r[0];
            c.hybrid_global = r[1];
        }
        if (j.contains("norm_style")) {
            auto s = j.at("norm_style").get<std::string>();
            if (s == "qk_reorder")
                c.norm_style = NormStyle::qk_reorder;
            else if (s == "pre_ln")
                c.norm_style = NormStyle::pre_ln;
            else
                throw ConfigError("norm_style must be qk_reorder or pre_ln");
        }
        if (j.contains("global_phase")) {
            auto s = j.at("global_phase").get<std::string>();
            if (s != "end" && s != "start") throw ConfigError("global_phase must be end or start");
            c.global_phase = s == "end" ? GlobalPhase::end : GlobalPhase::start;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t LayerSchedule::count(AttentionKind kind) const {
    return static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), kind));
}

std::string LayerSchedule::str() const {
    std::string s;
    for (auto k : kinds) s += k == AttentionKind::local ? 'L' : 'G';
    return s;
}

LayerSchedule build_schedule(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<AttentionKind> unit;
    if (cfg.global_phase == GlobalPhase::start) unit.insert(unit.end(), cfg.hybrid_global, AttentionKind::global);
    unit.insert(unit.end(), cfg.hybrid_local, AttentionKind::local);
    if (cfg.global_phase == GlobalPhase::end) unit.insert(unit.end(), cfg.hybrid_global, AttentionKind::global);
    LayerSchedule s;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) s.kinds.push_back(unit[l % unit.size()]);
    return s;
}

}  // namespace hlab::model
