#include "hlab/harness/gradsuite.hpp"

#include <numeric>

#include "hlab/agapo/loss.hpp"
#include "hlab/blocks/blocks.hpp"
#include "hlab/model/model.hpp"
#include "hlab/numcore/ops.hpp"

namespace hlab::harness {

namespace {

using blocks::AttentionSpec;

Tensor randn(Shape shape, RngStream& rng, bool requires_grad = true) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed, const GradCheckOptions& opts) {
    RngStream rng(seed, 0x67c);
    std::vector<GradSuiteEntry> out;
    auto add_entry = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> params,
                         const GradCheckOptions& o) { out.push_back({name, grad_check(f, std::move(params), o)}); };

    {
        auto x = randn({3, 6}, rng), g = randn({6}, rng), w = randn({3, 6}, rng, false);
        add_entry("rmsnorm", [&] { return sum(mul(blocks::rmsnorm(x, g), w)); }, {x, g}, opts);
    }
    {
        auto x = randn({5, 2, 4}, rng), w = randn({5, 2, 4}, rng, false);
        std::vector<int> pos(5);
        std::iota(pos.begin(), pos.end(), 3);
        add_entry("rope", [&] { return sum(mul(blocks::rope_apply(x, pos, 100.0), w)); }, {x}, opts);
    }
    {
        blocks::FfnParams p{randn({4, 6}, rng), randn({4, 6}, rng), randn({6, 4}, rng)};
        auto x = randn({3, 4}, rng), w = randn({3, 4}, rng, false);
        add_entry("swiglu", [&] { return sum(mul(blocks::swiglu_ffn(x, p), w)); }, {x, p.gate, p.up, p.down}, opts);
    }
    const std::size_t seq = 5, hs = 4;
    for (auto spec : {AttentionSpec::local(2, 4, 2, hs, 100.0), AttentionSpec::global(4, 2, hs)}) {
        auto q = randn({seq, 4, hs}, rng), k = randn({seq, 2, hs}, rng), v = randn({seq, 2, hs}, rng);
        auto w = randn({seq, 4, hs}, rng, false);
        const auto mask = blocks::mask_for(spec, seq);
        add_entry(std::string("gqa_attention_") + blocks::to_string(spec.kind),
                  [&] { return sum(mul(blocks::gqa_attention(q, k, v, spec, mask), w)); }, {q, k, v}, opts);
    }
    for (auto spec : {AttentionSpec::local(3, 2, 1, 4, 1e4), AttentionSpec::global(2, 1, 4)}) {
        const std::size_t d = 8;
        auto p = blocks::init_block_params(d, 12, spec, rng);
        auto x = randn({seq, d}, rng), w = randn({seq, d}, rng, false);
        add_entry(std::string("qk_reorder_block_") + blocks::to_string(spec.kind),
                  [&] { return sum(mul(blocks::qk_reorder_block(x, p, spec), w)); },
                  {x, p.wq, p.wk, p.wv, p.wo, p.q_norm_gain, p.k_norm_gain, p.post_attn_norm_gain, p.ffn_norm_gain,
                   p.ffn.gate, p.ffn.up, p.ffn.down},
                  opts);
        add_entry(std::string("pre_ln_block_") + blocks::to_string(spec.kind),
                  [&] { return sum(mul(blocks::pre_ln_block(x, p, spec), w)); },
                  {x, p.wq, p.wk, p.wv, p.wo, p.attn_norm_gain, p.ffn_norm_gain, p.ffn.gate, p.ffn.up, p.ffn.down},
                  opts);
    }
    {
        model::ModelConfig c;
        c.d_model = 16;
        c.n_layers = 4;
        c.n_heads = 4;
        c.n_kv_heads = 2;
        c.head_size = 4;
        c.ffn_dim = 24;
        c.window = 3;
        c.vocab_size = 40;
        c.max_seq = 32;
        model::Model m(c, seed);
        const std::vector<int> tok{1, 5, 9, 3, 7, 2, 11};
        const std::vector<int> tgt{5, 9, 3, 7, 2, 11, model::kIgnoreIndex};
        auto o = opts;
        if (o.max_entries_per_param == 0) o.max_entries_per_param = 24;
        add_entry("model_ce_4_layers", [&] { return model::ce_loss(m.forward(tok), tgt); }, m.parameters(), o);
    }
    {
        auto la = randn({4, 6}, rng), lb = randn({4, 6}, rng);
        auto ref = log_softmax_lastdim(randn({4, 6}, rng, false));
        std::vector<double> refv(ref.data().begin(), ref.data().end());
        std::vector<agapo::ResponseTerm> terms{{la, {0, 5, 2, 2}, {true, false, true, true}, refv, {}},
                                               {lb, {3, 1, 1, 4}, {true, true, true, true}, refv, {}}};
        const std::vector<double> adv{0.7, -0.7};
        add_entry("agapo_loss", [&] { return agapo::agapo_objective(terms, adv, 2, {.beta = 0.3}); }, {la, lb}, opts);
    }
    return out;
}

}  // namespace hlab::harness
