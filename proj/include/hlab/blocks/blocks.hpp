#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hlab/numcore/rng.hpp"
#include "hlab/numcore/tensor.hpp"

namespace hlab::blocks {

enum class AttentionKind { local, global };

const char* to_string(AttentionKind kind);

struct AttentionSpec {
    AttentionKind kind = AttentionKind::global;
    std::size_t window = 0;  // local only
    std::size_t n_heads = 1;
    std::size_t n_kv_heads = 1;
    std::size_t head_size = 2;
    double rope_theta = 0.0;  // local only; global layers use no positional encoding

    static AttentionSpec local(std::size_t window, std::size_t n_heads, std::size_t n_kv_heads,
                               std::size_t head_size, double rope_theta);
    static AttentionSpec global(std::size_t n_heads, std::size_t n_kv_heads, std::size_t head_size);

    // Throws ConfigError on head divisibility or kind-specific field violations.
    void validate() const;
    std::size_t group_size() const { return n_heads / n_kv_heads; }
};

inline constexpr double kRmsNormEps = 1e-6;

// y = gain * x / sqrt(mean(x^2) + eps) over the last dimension.
Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps = kRmsNormEps);

// Rotary embedding on a [seq x heads x head_size] tensor. Adjacent pairs
// (2i, 2i+1) rotate by position * theta^(-2i/head_size).
Tensor rope_apply(const Tensor& qk, std::span<const int> positions, double theta);

// Causal mask, optionally restricted to a trailing window: i may attend j iff
// i - w < j <= i. A window of 0 means unrestricted.
class AttentionMask {
   public:
    AttentionMask(std::size_t seq_len, std::size_t window) : seq_len_(seq_len), window_(window) {}

    std::size_t seq_len() const { return seq_len_; }
    std::size_t window() const { return window_; }
    bool allows(std::size_t i, std::size_t j) const {
        return j <= i && (window_ == 0 || i - j < window_);
    }
    std::size_t first_allowed(std::size_t i) const {
        return (window_ == 0 || i + 1 <= window_) ? 0 : i + 1 - window_;
    }
    // Row-major seq x seq matrix of allowed entries.
    std::vector<bool> dense() const;

   private:
    std::size_t seq_len_;
    std::size_t window_;
};

AttentionMask sliding_window_mask(std::size_t seq_len, std::size_t w);
AttentionMask causal_mask(std::size_t seq_len);
AttentionMask mask_for(const AttentionSpec& spec, std::size_t seq_len);

// Scaled dot-product attention with key/value heads shared across query-head
// groups. q: [seq x n_heads x hs]; k, v: [seq x n_kv_heads x hs]. Local specs
// rotate q and k by `positions` first (0..seq-1 when empty).
Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec,
                     const AttentionMask& mask, std::span<const int> positions = {});

// Post-softmax weights [n_heads x seq x seq] for inspection; no graph.
std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionSpec& spec,
                                      const AttentionMask& mask, std::span<const int> positions = {});

struct FfnParams {
    Tensor gate;  // [d x ffn]
    Tensor up;    // [d x ffn]
    Tensor down;  // [ffn x d]
};

// down(silu(x gate) * (x up)); no biases.
Tensor swiglu_ffn(const Tensor& x, const FfnParams& p);

struct BlockParams {
    Tensor wq, wk, wv, wo;
    Tensor q_norm_gain;          // [head_size]
    Tensor k_norm_gain;          // [head_size]
    Tensor post_attn_norm_gain;  // [d]   qk_reorder only
    Tensor attn_norm_gain;       // [d]   pre_ln only
    Tensor ffn_norm_gain;        // [d]
    FfnParams ffn;
};

struct InitOptions {
    // Weights ~ N(0, (scale / sqrt(fan_in))^2); gains start at 1.
    double weight_scale = 1.0;
};

BlockParams init_block_params(std::size_t d_model, std::size_t ffn_dim, const AttentionSpec& spec, RngStream& rng,
                              const InitOptions& opts = {});

// QK-Reorder-LN block: per-head RMSNorm on projected q and k, RMSNorm on the
// projected attention output before its residual add, then a pre-normed SwiGLU
// sub-block with its own residual.
Tensor qk_reorder_block(const Tensor& x, const BlockParams& p, const AttentionSpec& spec,
                        std::span<const int> positions = {});

// Conventional Pre-LN block used as the comparison baseline.
Tensor pre_ln_block(const Tensor& x, const BlockParams& p, const AttentionSpec& spec,
                    std::span<const int> positions = {});

}  // namespace hlab::blocks
