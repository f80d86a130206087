#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hlab/blocks/blocks.hpp"
#include "hlab/model/config.hpp"

namespace hlab::model {

inline constexpr int kIgnoreIndex = -1;

// Hybrid-schedule decoder-only transformer: embeddings, scheduled blocks, final
// RMSNorm, then a tied or separate output projection.
class Model {
   public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const LayerSchedule& schedule() const { return schedule_; }

    // Logits [seq x vocab].
    Tensor forward(std::span<const int> tokens) const;

    struct Trace {
        Tensor logits;
        std::vector<Tensor> hidden;  // output of each block, in order
    };
    Trace forward_trace(std::span<const int> tokens) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;

    Tensor& embedding() { return embedding_; }
    const Tensor& embedding() const { return embedding_; }
    // Empty when embeddings are tied.
    Tensor& lm_head() { return lm_head_; }
    std::vector<blocks::BlockParams>& layers() { return layers_; }
    const std::vector<blocks::BlockParams>& layers() const { return layers_; }

    // Context limit used by forward(); progressive context extension raises it.
    void set_max_seq(std::size_t n);

    // Deep copy; the clone shares no storage with this model.
    Model clone() const;

   private:
    Model() = default;
    void check_tokens(std::span<const int> tokens) const;

    ModelConfig cfg_;
    LayerSchedule schedule_;
    Tensor embedding_;  // [vocab x d]
    Tensor lm_head_;    // [d x vocab] when untied
    Tensor final_norm_gain_;
    std::vector<blocks::BlockParams> layers_;
};

// Mean negative log-likelihood over positions whose target is not kIgnoreIndex.
Tensor ce_loss(const Tensor& logits, std::span<const int> targets);

// Per-block hidden-state variance (population variance over all elements).
std::vector<double> variance_profile(const Model& model, std::span<const int> tokens);

}  // namespace hlab::model
