#include "hlab/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hlab/numcore/ops.hpp"
#include "hlab/numcore/rng.hpp"

namespace hlab::model {

using blocks::AttentionKind;

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), schedule_(build_schedule(cfg_)) {
    const std::size_t d = cfg_.d_model;
    RngStream rng(seed, 0xe3b);
    std::vector<double> emb(cfg_.vocab_size * d);
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& x : emb) x = rng.normal(0.0, emb_std);
    embedding_ = Tensor::from({cfg_.vocab_size, d}, std::move(emb), true);
    if (!cfg_.tied_embeddings) {
        std::vector<double> head(d * cfg_.vocab_size);
        for (auto& x : head) x = rng.normal(0.0, cfg_.init_scale / std::sqrt(static_cast<double>(d)));
        lm_head_ = Tensor::from({d, cfg_.vocab_size}, std::move(head), true);
    }
    final_norm_gain_ = Tensor::full({d}, 1.0, true);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        RngStream layer_rng(seed, 1000 + l);
        layers_.push_back(blocks::init_block_params(d, cfg_.ffn_dim, cfg_.attention_spec(schedule_.kinds[l]),
                                                    layer_rng, {.weight_scale = cfg_.init_scale}));
    }
}

void Model::set_max_seq(std::size_t n) {
    if (n == 0) throw ConfigError("max_seq must be positive");
    cfg_.max_seq = n;
}

void Model::check_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) throw InputError("forward: empty token sequence");
    if (tokens.size() > cfg_.max_seq)
        throw LengthError("forward: sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq " +
                          std::to_string(cfg_.max_seq));
    for (int t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size)
            throw InputError("forward: token id " + std::to_string(t) + " outside vocabulary");
}

Model::Trace Model::forward_trace(std::span<const int> tokens) const {
    check_tokens(tokens);
    std::vector<int> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    Trace trace;
    Tensor h = hlab::embedding(embedding_, tokens);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto spec = cfg_.attention_spec(schedule_.kinds[l]);
        h = cfg_.norm_style == NormStyle::qk_reorder ? blocks::qk_reorder_block(h, layers_[l], spec, positions)
                                                     : blocks::pre_ln_block(h, layers_[l], spec, positions);
        trace.hidden.push_back(h);
    }
    Tensor normed = blocks::rmsnorm(h, final_norm_gain_);
    trace.logits = cfg_.tied_embeddings ? matmul_bt(normed, embedding_) : matmul(normed, lm_head_);
    return trace;
}

Tensor Model::forward(std::span<const int> tokens) const { return forward_trace(tokens).logits; }

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embed", embedding_);
    if (!cfg_.tied_embeddings) out.emplace_back("lm_head", lm_head_);
    out.emplace_back("final_norm", final_norm_gain_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& p = layers_[l];
        const std::string pre = "layers." + std::to_string(l) + ".";
        out.emplace_back(pre + "wq", p.wq);
        out.emplace_back(pre + "wk", p.wk);
        out.emplace_back(pre + "wv", p.wv);
        out.emplace_back(pre + "wo", p.wo);
        if (cfg_.norm_style == NormStyle::qk_reorder) {
            out.emplace_back(pre + "q_norm", p.q_norm_gain);
            out.emplace_back(pre + "k_norm", p.k_norm_gain);
            out.emplace_back(pre + "post_attn_norm", p.post_attn_norm_gain);
        } else {
            out.emplace_back(pre + "attn_norm", p.attn_norm_gain);
        }
        out.emplace_back(pre + "ffn_norm", p.ffn_norm_gain);
        out.emplace_back(pre + "ffn_gate", p.ffn.gate);
        out.emplace_back(pre + "ffn_up", p.ffn.up);
        out.emplace_back(pre + "ffn_down", p.ffn.down);
    }
    return out;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Model Model::clone() const {
    Model m;
    m.cfg_ = cfg_;
    m.schedule_ = schedule_;
    auto copy = [](const Tensor& t) {
        if (!t.defined()) return Tensor();
        return Tensor::from(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad());
    };
    m.embedding_ = copy(embedding_);
    m.lm_head_ = copy(lm_head_);
    m.final_norm_gain_ = copy(final_norm_gain_);
    for (const auto& p : layers_) {
        blocks::BlockParams q;
        q.wq = copy(p.wq);
        q.wk = copy(p.wk);
        q.wv = copy(p.wv);
        q.wo = copy(p.wo);
        q.q_norm_gain = copy(p.q_norm_gain);
        q.k_norm_gain = copy(p.k_norm_gain);
        q.post_attn_norm_gain = copy(p.post_attn_norm_gain);
        q.attn_norm_gain = copy(p.attn_norm_gain);
        q.ffn_norm_gain = copy(p.ffn_norm_gain);
        q.ffn = {copy(p.ffn.gate), copy(p.ffn.up), copy(p.ffn.down)};
        m.layers_.push_back(std::move(q));
    }
    return m;
}

Tensor ce_loss(const Tensor& logits, std::span<const int> targets) {
    if (logits.rank() != 2) throw ShapeError("ce_loss: logits must be [seq x vocab]");
    const std::size_t rows = logits.dim(0), v = logits.dim(1);
    if (targets.size() != rows) throw ShapeError("ce_loss: targets length differs from logits rows");
    std::vector<int> tgt(targets.begin(), targets.end());
    std::size_t count = 0;
    for (int t : tgt) {
        if (t == kIgnoreIndex) continue;
        if (t < 0 || static_cast<std::size_t>(t) >= v) throw InputError("ce_loss: target id out of range");
        ++count;
    }
    if (count == 0) throw ContractError("ce_loss: every position is masked");
    auto x = logits.data();
    std::vector<double> probs(rows * v, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (tgt[r] == kIgnoreIndex) continue;
        const double* row = x.data() + r * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += (probs[r * v + j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
        total += -(row[tgt[r]] - mx - std::log(z));
    }
    const double inv_n = 1.0 / static_cast<double>(count);
    return make_op("ce_loss", {1}, {total * inv_n}, {logits},
                   [probs = std::move(probs), tgt = std::move(tgt), v, inv_n](std::span<const double> g,
                                                                               const GradSink& s) {
                       const double c = g[0] * inv_n;
                       for (std::size_t r = 0; r < tgt.size(); ++r) {
                           if (tgt[r] == kIgnoreIndex) continue;
                           for (std::size_t j = 0; j < v; ++j) s[0][r * v + j] += c * probs[r * v + j];
                           s[0][r * v + tgt[r]] -= c;
                       }
                   });
}

std::vector<double> variance_profile(const Model& model, std::span<const int> tokens) {
    NoGradGuard guard;
    auto trace = model.forward_trace(tokens);
    std::vector<double> out;
    for (const auto& h : trace.hidden) {
        auto d = h.data();
        const double n = static_cast<double>(d.size());
        double mu = 0.0;
        for (double v : d) mu += v;
        mu /= n;
        double var = 0.0;
        for (double v : d) var += (v - mu) * (v - mu);
        out.push_back(var / n);
    }
    return out;
}

}  // namespace hlab::model
