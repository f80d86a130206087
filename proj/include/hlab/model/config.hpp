#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hlab/blocks/blocks.hpp"
#include "json.hpp"

namespace hlab::model {

enum class NormStyle { qk_reorder, pre_ln };
// Where the global layer sits inside each repeating unit.
enum class GlobalPhase { end, start };

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 8;
    std::size_t hybrid_local = 3;
    std::size_t hybrid_global = 1;
    std::size_t window = 16;
    std::size_t n_heads = 4;
    std::size_t n_kv_heads = 2;
    std::size_t head_size = 16;
    std::size_t ffn_dim = 128;
    std::size_t vocab_size = 512;
    std::size_t max_seq = 256;
    double rope_theta = 1'000'000.0;
    bool tied_embeddings = true;
    NormStyle norm_style = NormStyle::qk_reorder;
    GlobalPhase global_phase = GlobalPhase::end;
    // Projection weights ~ N(0, (init_scale / sqrt(fan_in))^2).
    double init_scale = 1.0;

    void validate() const;
    std::size_t unit_size() const { return hybrid_local + hybrid_global; }
    blocks::AttentionSpec attention_spec(blocks::AttentionKind kind) const;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Strict: unknown keys and out-of-range values raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

const char* to_string(NormStyle s);

struct LayerSchedule {
    std::vector<blocks::AttentionKind> kinds;

    std::size_t count(blocks::AttentionKind kind) const;
    std::string str() const;  // e.g. "LLLG"
};

LayerSchedule build_schedule(const ModelConfig& cfg);

}  // namespace hlab::model
