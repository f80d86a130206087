#include "hlab/blocks/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hlab/numcore/ops.hpp"

namespace hlab::blocks {

const char* to_string(AttentionKind kind) { return kind == AttentionKind::local ? "local" : "global"; }

AttentionSpec AttentionSpec::local(std::size_t window, std::size_t n_heads, std::size_t n_kv_heads,
                                   std::size_t head_size, double rope_theta) {
    AttentionSpec s{AttentionKind::local, window, n_heads, n_kv_heads, head_size, rope_theta};
    s.validate();
    return s;
}

AttentionSpec AttentionSpec::global(std::size_t n_heads, std::size_t n_kv_heads, std::size_t head_size) {
    AttentionSpec s{AttentionKind::global, 0, n_heads, n_kv_heads, head_size, 0.0};
    s.validate();
    return s;
}

void AttentionSpec::validate() const {
    if (n_heads == 0 || n_kv_heads == 0 || head_size == 0) throw ConfigError("attention dims must be positive");
    if (n_heads % n_kv_heads != 0)
        throw ConfigError("n_heads (" + std::to_string(n_heads) + ") not divisible by n_kv_heads (" +
                          std::to_string(n_kv_heads) + ")");
    if (kind == AttentionKind::local) {
        if (window == 0) throw ConfigError("local attention needs a positive window");
        if (!(rope_theta > 0.0)) throw ConfigError("local attention needs a positive rope_theta");
    } else if (rope_theta != 0.0 || window != 0) {
        throw ConfigError("global attention carries no window or positional-encoding parameters");
    }
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
    const std::size_t d = x.rank() ? x.shape().back() : 0;
    if (d == 0) throw ShapeError("rmsnorm: empty feature dimension");
    if (gain.size() != d)
        throw ShapeError("rmsnorm: gain of size " + std::to_string(gain.size()) + " for feature dim " +
                         std::to_string(d));
    const std::size_t rows = x.size() / d;
    auto in = x.data();
    auto g = gain.data();
    std::vector<double> out(in.size());
    std::vector<double> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double ms = 0.0;
        for (std::size_t j = 0; j < d; ++j) ms += row[j] * row[j];
        ms /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(ms + eps);
        inv_rms[r] = inv;
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = g[j] * row[j] * inv;
    }
    return make_op("rmsnorm", x.shape(), std::move(out), {x, gain},
                   [x, gain, inv_rms = std::move(inv_rms), d, rows](std::span<const double> dy, const GradSink& s) {
                       auto in = x.data();
                       auto g = gain.data();
                       for (std::size_t r = 0; r < rows; ++r) {
                           const double* row = in.data() + r * d;
                           const double* dyr = dy.data() + r * d;
                           const double inv = inv_rms[r];
                           if (s.wants(0)) {
                               double dot = 0.0;
                               for (std::size_t j = 0; j < d; ++j) dot += g[j] * dyr[j] * row[j];
                               const double c = inv * inv * inv * dot / static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) s[0][r * d + j] += inv * g[j] * dyr[j] - c * row[j];
                           }
                           if (s.wants(1))
                               for (std::size_t j = 0; j < d; ++j) s[1][j] += dyr[j] * row[j] * inv;
                       }
                   });
}

namespace {

std::vector<int> default_positions(std::size_t seq) {
    std::vector<int> p(seq);
    std::iota(p.begin(), p.end(), 0);
    return p;
}

void require_rank3(const Tensor& t, const char* what) {
    if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected [seq x heads x head_size], got " +
                                        shape_str(t.shape()));
}

// Rotation tables: cos/sin for each (position, pair).
struct RopeTable {
    std::vector<double> cos, sin;
};

RopeTable rope_table(std::span<const int> positions, std::size_t head_size, double theta) {
    const std::size_t half = head_size / 2;
    RopeTable t;
    t.cos.resize(positions.size() * half);
    t.sin.resize(positions.size() * half);
    for (std::size_t s = 0; s < positions.size(); ++s) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_size));
            const double angle = static_cast<double>(positions[s]) * freq;
            t.cos[s * half + i] = std::cos(angle);
            t.sin[s * half + i] = std::sin(angle);
        }
    }
    return t;
}

// Softmax attention probabilities over allowed keys. Rows store the full seq
// width; masked entries are exactly zero.
std::vector<double> attention_probs(std::span<const double> q, std::span<const double> k, std::size_t seq,
                                    std::size_t n_heads, std::size_t n_kv, std::size_t hs,
                                    const AttentionMask& mask) {
    const std::size_t group = n_heads / n_kv;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    std::vector<double> probs(n_heads * seq * seq, 0.0);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t kvh = h / group;
        for (std::size_t i = 0; i < seq; ++i) {
            double* p = probs.data() + (h * seq + i) * seq;
            const double* qi = q.data() + (i * n_heads + h) * hs;
            const std::size_t lo = mask.first_allowed(i);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = lo; j <= i; ++j) {
                const double* kj = k.data() + (j * n_kv + kvh) * hs;
                double dot = 0.0;
                for (std::size_t c = 0; c < hs; ++c) dot += qi[c] * kj[c];
                p[j] = dot * scale;
                mx = std::max(mx, p[j]);
            }
            double z = 0.0;
            for (std::size_t j = lo; j <= i; ++j) z += (p[j] = std::exp(p[j] - mx));
            for (std::size_t j = lo; j <= i; ++j) p[j] /= z;
        }
    }
    return probs;
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec,
                        const AttentionMask& mask) {
    const std::size_t seq = q.dim(0), nh = spec.n_heads, nkv = spec.n_kv_heads, hs = spec.head_size;
    auto probs = attention_probs(q.data(), k.data(), seq, nh, nkv, hs, mask);
    const std::size_t group = nh / nkv;
    std::vector<double> out(seq * nh * hs, 0.0);
    auto vd = v.data();
    for (std::size_t h = 0; h < nh; ++h) {
        const std::size_t kvh = h / group;
        for (std::size_t i = 0; i < seq; ++i) {
            const double* p = probs.data() + (h * seq + i) * seq;
            double* o = out.data() + (i * nh + h) * hs;
            for (std::size_t j = mask.first_allowed(i); j <= i; ++j) {
                const double* vj = vd.data() + (j * nkv + kvh) * hs;
                for (std::size_t c = 0; c < hs; ++c) o[c] += p[j] * vj[c];
            }
        }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    return make_op(
        "gqa_attention", {seq, nh, hs}, std::move(out), {q, k, v},
        [q, k, v, probs = std::move(probs), mask, seq, nh, nkv, hs, group, scale](std::span<const double> g,
                                                                                  const GradSink& s) {
            auto qd = q.data(), kd = k.data(), vd = v.data();
            std::vector<double> dlogit(seq);
            for (std::size_t h = 0; h < nh; ++h) {
                const std::size_t kvh = h / group;
                for (std::size_t i = 0; i < seq; ++i) {
                    const double* p = probs.data() + (h * seq + i) * seq;
                    const double* go = g.data() + (i * nh + h) * hs;
                    const std::size_t lo = mask.first_allowed(i);
                    double dot_pd = 0.0;
                    for (std::size_t j = lo; j <= i; ++j) {
                        const double* vj = vd.data() + (j * nkv + kvh) * hs;
                        double dp = 0.0;
                        for (std::size_t c = 0; c < hs; ++c) dp += go[c] * vj[c];
                        dlogit[j] = dp;
                        dot_pd += p[j] * dp;
                        if (s.wants(2)) {
                            double* dv = s[2].data() + (j * nkv + kvh) * hs;
                            for (std::size_t c = 0; c < hs; ++c) dv[c] += p[j] * go[c];
                        }
                    }
                    const double* qi = qd.data() + (i * nh + h) * hs;
                    for (std::size_t j = lo; j <= i; ++j) {
                        const double ds = p[j] * (dlogit[j] - dot_pd) * scale;
                        if (ds == 0.0) continue;
                        const double* kj = kd.data() + (j * nkv + kvh) * hs;
                        if (s.wants(0)) {
                            double* dq = s[0].data() + (i * nh + h) * hs;
                            for (std::size_t c = 0; c < hs; ++c) dq[c] += ds * kj[c];
                        }
                        if (s.wants(1)) {
                            double* dk = s[1].data() + (j * nkv + kvh) * hs;
                            for (std::size_t c = 0; c < hs; ++c) dk[c] += ds * qi[c];
                        }
                    }
                }
            }
        });
}

void check_qk(const Tensor& q, const Tensor& k, const AttentionSpec& spec, const AttentionMask& mask) {
    spec.validate();
    require_rank3(q, "gqa_attention q");
    require_rank3(k, "gqa_attention k");
    const std::size_t seq = q.dim(0);
    if (q.dim(1) != spec.n_heads || q.dim(2) != spec.head_size)
        throw ShapeError("gqa_attention: q shape " + shape_str(q.shape()) + " does not match spec");
    if (k.shape() != Shape{seq, spec.n_kv_heads, spec.head_size})
        throw ShapeError("gqa_attention: k shape " + shape_str(k.shape()) + " does not match spec");
    if (mask.seq_len() != seq) throw ShapeError("gqa_attention: mask length differs from sequence length");
}

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec,
               const AttentionMask& mask) {
    check_qk(q, k, spec, mask);
    if (v.shape() != k.shape()) throw ShapeError("gqa_attention: v shape must equal k shape");
}

}  // namespace

std::vector<bool> AttentionMask::dense() const {
    std::vector<bool> m(seq_len_ * seq_len_);
    for (std::size_t i = 0; i < seq_len_; ++i)
        for (std::size_t j = 0; j < seq_len_; ++j) m[i * seq_len_ + j] = allows(i, j);
    return m;
}

AttentionMask sliding_window_mask(std::size_t seq_len, std::size_t w) {
    if (seq_len == 0 || w == 0) throw ConfigError("sliding_window_mask: seq_len and w must be >= 1");
    return AttentionMask(seq_len, w >= seq_len ? 0 : w);
}

AttentionMask causal_mask(std::size_t seq_len) { return AttentionMask(seq_len, 0); }

AttentionMask mask_for(const AttentionSpec& spec, std::size_t seq_len) {
    return spec.kind == AttentionKind::local ? sliding_window_mask(seq_len, spec.window) : causal_mask(seq_len);
}

Tensor rope_apply(const Tensor& qk, std::span<const int> positions, double theta) {
    require_rank3(qk, "rope_apply");
    const std::size_t seq = qk.dim(0), heads = qk.dim(1), hs = qk.dim(2);
    if (hs % 2 != 0) throw ShapeError("rope_apply: head_size must be even, got " + std::to_string(hs));
    if (positions.size() != seq) throw ShapeError("rope_apply: positions length differs from sequence length");
    for (std::size_t i = 0; i < seq; ++i) {
        if (positions[i] < 0) throw InputError("rope_apply: negative position");
        if (i > 0 && positions[i] <= positions[i - 1]) throw InputError("rope_apply: positions must increase");
    }
    auto table = rope_table(positions, hs, theta);
    const std::size_t half = hs / 2;
    auto in = qk.data();
    std::vector<double> out(in.size());
    for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < half; ++i) {
                const std::size_t base = (s * heads + h) * hs + 2 * i;
                const double c = table.cos[s * half + i], sn = table.sin[s * half + i];
                out[base] = in[base] * c - in[base + 1] * sn;
                out[base + 1] = in[base] * sn + in[base + 1] * c;
            }
    return make_op("rope_apply", qk.shape(), std::move(out), {qk},
                   [table = std::move(table), seq, heads, hs, half](std::span<const double> g, const GradSink& s) {
                       for (std::size_t p = 0; p < seq; ++p)
                           for (std::size_t h = 0; h < heads; ++h)
                               for (std::size_t i = 0; i < half; ++i) {
                                   const std::size_t base = (p * heads + h) * hs + 2 * i;
                                   const double c = table.cos[p * half + i], sn = table.sin[p * half + i];
                                   s[0][base] += g[base] * c + g[base + 1] * sn;
                                   s[0][base + 1] += -g[base] * sn + g[base + 1] * c;
                               }
                   });
}

Tensor gqa_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionSpec& spec,
                     const AttentionMask& mask, std::span<const int> positions) {
    check_qkv(q, k, v, spec, mask);
    if (spec.kind == AttentionKind::global) return masked_attention(q, k, v, spec, mask);
    std::vector<int> owned;
    if (positions.empty()) {
        owned = default_positions(q.dim(0));
        positions = owned;
    }
    return masked_attention(rope_apply(q, positions, spec.rope_theta), rope_apply(k, positions, spec.rope_theta), v,
                            spec, mask);
}

std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const AttentionSpec& spec,
                                      const AttentionMask& mask, std::span<const int> positions) {
    check_qk(q, k, spec, mask);
    NoGradGuard guard;
    Tensor qr = q, kr = k;
    if (spec.kind == AttentionKind::local) {
        std::vector<int> owned;
        if (positions.empty()) {
            owned = default_positions(q.dim(0));
            positions = owned;
        }
        qr = rope_apply(q, positions, spec.rope_theta);
        kr = rope_apply(k, positions, spec.rope_theta);
    }
    return attention_probs(qr.data(), kr.data(), q.dim(0), spec.n_heads, spec.n_kv_heads, spec.head_size, mask);
}

Tensor swiglu_ffn(const Tensor& x, const FfnParams& p) {
    return matmul(mul(silu(matmul(x, p.gate)), matmul(x, p.up)), p.down);
}

BlockParams init_block_params(std::size_t d_model, std::size_t ffn_dim, const AttentionSpec& spec, RngStream& rng,
                              const InitOptions& opts) {
    spec.validate();
    auto weight = [&](std::size_t in, std::size_t out) {
        const double std = opts.weight_scale / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * out);
        for (auto& x : w) x = rng.normal(0.0, std);
        return Tensor::from({in, out}, std::move(w), true);
    };
    auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };
    const std::size_t hs = spec.head_size;
    BlockParams p;
    p.wq = weight(d_model, spec.n_heads * hs);
    p.wk = weight(d_model, spec.n_kv_heads * hs);
    p.wv = weight(d_model, spec.n_kv_heads * hs);
    p.wo = weight(spec.n_heads * hs, d_model);
    p.q_norm_gain = ones(hs);
    p.k_norm_gain = ones(hs);
    p.post_attn_norm_gain = ones(d_model);
    p.attn_norm_gain = ones(d_model);
    p.ffn_norm_gain = ones(d_model);
    p.ffn.gate = weight(d_model, ffn_dim);
    p.ffn.up = weight(d_model, ffn_dim);
    p.ffn.down = weight(ffn_dim, d_model);
    return p;
}

namespace {

Tensor attention_sublayer(const Tensor& x_in, const BlockParams& p, const AttentionSpec& spec,
                          std::span<const int> positions, bool qk_norm) {
    const std::size_t seq = x_in.dim(0), hs = spec.head_size;
    Tensor q = reshape(matmul(x_in, p.wq), {seq, spec.n_heads, hs});
    Tensor k = reshape(matmul(x_in, p.wk), {seq, spec.n_kv_heads, hs});
    Tensor v = reshape(matmul(x_in, p.wv), {seq, spec.n_kv_heads, hs});
    if (qk_norm) {
        q = rmsnorm(q, p.q_norm_gain);
        k = rmsnorm(k, p.k_norm_gain);
    }
    Tensor attn = gqa_attention(q, k, v, spec, mask_for(spec, seq), positions);
    return matmul(reshape(attn, {seq, spec.n_heads * hs}), p.wo);
}

void require_seq_by_d(const Tensor& x, const BlockParams& p) {
    if (x.rank() != 2 || x.dim(1) != p.wq.dim(0))
        throw ShapeError("block input must be [seq x d_model], got " + shape_str(x.shape()));
}

}  // namespace

Tensor qk_reorder_block(const Tensor& x, const BlockParams& p, const AttentionSpec& spec,
                        std::span<const int> positions) {
    require_seq_by_d(x, p);
    Tensor h = add(x, rmsnorm(attention_sublayer(x, p, spec, positions, true), p.post_attn_norm_gain));
    return add(h, swiglu_ffn(rmsnorm(h, p.ffn_norm_gain), p.ffn));
}

Tensor pre_ln_block(const Tensor& x, const BlockParams& p, const AttentionSpec& spec,
                    std::span<const int> positions) {
    require_seq_by_d(x, p);
    Tensor h = add(x, attention_sublayer(rmsnorm(x, p.attn_norm_gain), p, spec, positions, false));
    return add(h, swiglu_ffn(rmsnorm(h, p.ffn_norm_gain), p.ffn));
}

}  // namespace hlab::blocks
