#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hlab/agapo/advantage.hpp"
#include "hlab/agapo/loss.hpp"
#include "hlab/agapo/task.hpp"
#include "hlab/agapo/trainer.hpp"
#include "hlab/numcore/grad_check.hpp"
#include "hlab/numcore/ops.hpp"

using namespace hlab;
using namespace hlab::agapo;
using model::Tokenizer;

namespace {

Task math_task(const std::string& prompt, const std::string& answer) {
    return {prompt, prompt, Category::math, {{"answer", answer}}};
}

// Answers `text` then EOS with probability p_right, otherwise `wrong` then EOS.
class AnswerPredictor : public inference::TokenPredictor {
   public:
    AnswerPredictor(std::string right, std::string wrong, double p_right)
        : right_(std::move(right)), wrong_(std::move(wrong)), p_(p_right) {}

    std::vector<double> next_logits(std::span<const int> ctx) const override {
        const auto& tok = model::default_tokenizer();
        std::vector<double> l(tok.size(), -50.0);
        // position inside the answer = tokens after the last prompt byte '='
        std::size_t start = ctx.size();
        while (start > 0 && ctx[start - 1] != tok.byte_id('=')) --start;
        const std::size_t i = ctx.size() - start;
        if (i == 0) {
            l[tok.byte_id(right_[0])] = std::log(p_);
            l[tok.byte_id(wrong_[0])] = std::log(1 - p_);
            return l;
        }
        const bool right = ctx[start] == tok.byte_id(right_[0]);
        const auto& s = right ? right_ : wrong_;
        l[i < s.size() ? tok.byte_id(s[i]) : Tokenizer::kEos] = 0.0;
        return l;
    }
    std::size_t vocab_size() const override { return model::default_tokenizer().size(); }
    std::size_t max_context() const override { return 64; }

   private:
    std::string right_, wrong_;
    double p_;
};

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

model::ModelConfig tiny_model() {
    model::ModelConfig c;
    c.d_model = 16;
    c.n_layers = 4;
    c.head_size = 4;
    c.ffn_dim = 24;
    c.window = 4;
    c.vocab_size = model::default_tokenizer().size();
    c.max_seq = 48;
    return c;
}

}  // namespace

TEST_CASE("verify: math, instruction, code, science") {
    auto t = math_task("17+25=", "42");
    CHECK(verify(t, "let me see... answer: 42").reward == 1.0);
    CHECK(verify(t, "42").reward == 1.0);
    CHECK(verify(t, "Answer: 42.0").reward == 1.0);
    CHECK(verify(t, "answer: 41").reward == 0.0);
    auto empty = verify(t, "");
    CHECK(empty.reward == 0.0);
    CHECK_FALSE(empty.diagnostic.empty());

    Task ins{"i1", "describe", Category::instruction_following,
             {{"constraints",
               {{{"type", "word_count"}, {"n", 3}}, {{"type", "lowercase"}}, {{"type", "contains"}, {"text", "cat"}}}}}};
    CHECK(verify(ins, "the quiet cat").reward == 1.0);
    // two of three satisfied
    CHECK(verify(ins, "the quiet dog").reward == 0.0);
    CHECK(verify(ins, "The quiet cat").reward == 0.0);

    nlohmann::json tests = nlohmann::json::array();
    for (int x = 0; x < 5; ++x) tests.push_back({{"x", x}, {"expected", 2 * x + 1}});
    Task code{"c1", "write f", Category::code, {{"tests", tests}}};
    CHECK(verify(code, "here:\n```\n2*x+1\n```").reward == 1.0);
    CHECK(verify(code, "```toy\nx*x+1\n```\nfinal:\n```\n(x+x) + 1\n```").reward == 1.0);
    // x*x+1 == 2x+1 only for x in {0, 2}; make a 4/5 case instead
    nlohmann::json four = tests;
    four[4]["expected"] = 0;
    Task code4{"c2", "write f", Category::code, {{"tests", four}}};
    CHECK(verify(code4, "```\n2*x+1\n```").reward == 0.0);
    CHECK(verify(code4, "```\n2*x+1\n```", {.partial_credit = true}).reward == doctest::Approx(0.8));
    auto malformed = verify(code, "```\n2*x+\n```");
    CHECK(malformed.reward == 0.0);
    CHECK(malformed.diagnostic.find("toy expr") != std::string::npos);
    CHECK(verify(code, "no block").reward == 0.0);

    Task sci{"s1", "which?", Category::science, {{"choice", "B"}}};
    CHECK(verify(sci, "answer: (B)").reward == 1.0);
    CHECK(verify(sci, "answer: C").reward == 0.0);
}

TEST_CASE("toy expression language") {
    CHECK(eval_toy_expr("1 + 2 * 3", 0) == 7);
    CHECK(eval_toy_expr("(1 + 2) * 3", 0) == 9);
    CHECK(eval_toy_expr("-x - -2", 5) == -3);
    CHECK_THROWS_AS(eval_toy_expr("x x", 1), InputError);
    CHECK_THROWS_AS(eval_toy_expr("9999999999 * 9999999999", 1), InputError);
}

TEST_CASE("task json round trip and strictness") {
    auto t = math_task("2+2=", "4");
    CHECK(task_from_json(to_json(t)).verifier_spec == t.verifier_spec);
    auto j = to_json(t);
    j["extra"] = true;
    CHECK_THROWS_AS(task_from_json(j), ConfigError);
    Task bad{"b", "p", Category::instruction_following, {{"constraints", {{{"type", "rhymes"}}}}}};
    CHECK_THROWS_AS(validate_task(bad), ConfigError);
}

TEST_CASE("prefilter keeps everything except all-correct tasks") {
    const auto& tok = model::default_tokenizer();
    std::vector<Task> tasks{math_task("1+1=", "2"), math_task("0+2=", "2"), math_task("2+0=", "2")};
    auto sampler = default_rollout_sampler();
    inference::GenerateOptions gen;

    AnswerPredictor always("2", "7", 1.0 - 1e-15);
    auto all = prefilter(tasks, always, tok, sampler, gen, 1);
    CHECK(all.kept.empty());
    CHECK(all.dropped == 3);

    AnswerPredictor never("2", "7", 1e-15);
    auto none = prefilter(tasks, never, tok, sampler, gen, 1);
    CHECK(none.kept.size() == 3);
    for (auto c : none.correct_counts) CHECK(c == 0);

    AnswerPredictor mixed("2", "7", 0.75);
    auto mix = prefilter(tasks, mixed, tok, sampler, gen, 3);
    for (std::size_t t = 0; t < 3; ++t) {
        const bool kept = std::any_of(mix.kept.begin(), mix.kept.end(), [&](const Task& k) { return k.id == tasks[t].id; });
        CHECK(kept == (mix.correct_counts[t] < 8));
    }
    CHECK(std::any_of(mix.correct_counts.begin(), mix.correct_counts.end(), [](auto c) { return c > 0 && c < 8; }));
}

TEST_CASE("loo advantage examples and zero-sum property") {
    std::vector<double> r{1, 0, 0, 0};
    auto a = loo_advantage(r);
    CHECK(a[0] == 1.0);
    for (int i = 1; i < 4; ++i) CHECK(std::abs(a[i] + 1.0 / 3.0) <= 1e-15);
    std::vector<double> z{0, 0};
    CHECK(loo_advantage(z) == std::vector<double>{0, 0});
    CHECK(loo_advantage(z, -0.1) == std::vector<double>{-0.1, -0.1});
    std::vector<double> one{1};
    CHECK_THROWS_AS(loo_advantage(one), ConfigError);

    RngStream rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t g = 2 + rng.below(15);
        std::vector<double> rr(g);
        for (auto& v : rr) v = trial % 2 ? static_cast<double>(rng.below(2)) : rng.uniform();
        auto aa = loo_advantage(rr);
        double s = 0.0;
        for (double v : aa) s += v;
        CHECK(std::abs(s) <= 1e-12);
    }
}

TEST_CASE("global normalization examples and contract") {
    auto a = loo_advantage(std::vector<double>{1, 0});
    auto b = loo_advantage(std::vector<double>{1, 0});
    std::vector<double> batch(a);
    batch.insert(batch.end(), b.begin(), b.end());
    CHECK(global_normalize(batch) == std::vector<double>{1, -1, 1, -1});

    auto c = loo_advantage(std::vector<double>{0, 0});
    std::vector<double> mixed(a);
    mixed.insert(mixed.end(), c.begin(), c.end());
    auto n = global_normalize(mixed);
    CHECK(std::abs(n[0] - std::sqrt(2.0)) <= 1e-15);
    CHECK(std::abs(n[1] + std::sqrt(2.0)) <= 1e-15);
    CHECK(n[2] == 0.0);
    CHECK(n[3] == 0.0);

    CHECK(global_normalize(std::vector<double>{0.3, 0.3, 0.3}) == std::vector<double>{0, 0, 0});

    RngStream rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(2 + rng.below(40));
        for (auto& x : v) x = rng.normal(0.5, 3.0);
        auto o = global_normalize(v);
        double mu = 0.0, var = 0.0;
        for (double x : o) mu += x;
        mu /= static_cast<double>(o.size());
        for (double x : o) var += (x - mu) * (x - mu);
        CHECK(std::abs(mu) <= 1e-10);
        CHECK(std::abs(std::sqrt(var / static_cast<double>(o.size())) - 1.0) <= 1e-10);
    }
}

TEST_CASE("sequence cumulative KL") {
    std::vector<std::vector<double>> p{{std::log(0.9), std::log(0.1)}};
    std::vector<std::vector<double>> q{{std::log(0.5), std::log(0.5)}};
    const double expect = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
    CHECK(std::abs(seq_cumulative_kl(p, q) - expect) <= 1e-15);
    CHECK(seq_cumulative_kl(p, p) == 0.0);

    // summed, not averaged, over positions
    auto pp = p, qq = q;
    pp.push_back(p[0]);
    qq.push_back(q[0]);
    CHECK(std::abs(seq_cumulative_kl(pp, qq) - 2 * expect) <= 1e-15);
    pp.pop_back();
    CHECK_THROWS_AS(seq_cumulative_kl(pp, qq), ContractError);

    RngStream rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> a(6), b(6);
        for (auto& x : a) x = rng.normal(0, 2);
        for (auto& x : b) x = rng.normal(0, 2);
        CHECK(seq_cumulative_kl({inference::log_softmax(a)}, {inference::log_softmax(b)}) >= 0.0);
    }
}

TEST_CASE("agapo objective: zero advantages, single response, KL at equality") {
    RngStream rng(6);
    std::vector<double> v(3 * 5);
    for (auto& x : v) x = rng.normal();
    auto logits = Tensor::from({3, 5}, v, true);
    ResponseTerm term{logits, {1, 4, 2}, {true, true, true}, {}, {}};

    std::vector<ResponseTerm> two{term, term};
    std::vector<double> zeros{0.0, 0.0};
    auto l0 = agapo_objective(two, zeros, 2, {.beta = 0.0});
    CHECK(l0.item() == 0.0);
    backward(l0);
    for (double g : logits.grad()) CHECK(g == 0.0);
    logits.zero_grad();

    std::vector<ResponseTerm> single{term};
    std::vector<double> one{1.0};
    auto l1 = agapo_objective(single, one, 1, {.beta = 0.0});
    double logp = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
        auto row = inference::log_softmax(std::span<const double>(v).subspan(t * 5, 5));
        logp += row[term.tokens[t]];
    }
    CHECK(std::abs(l1.item() + logp) <= 1e-12);
    auto report = grad_check([&] { return agapo_objective(single, one, 1, {.beta = 0.0}); }, {logits});
    CHECK(report.passed);

    // reference equal to the policy: KL term vanishes
    NoGradGuard guard;
    auto lp = log_softmax_lastdim(logits);
    ResponseTerm with_ref = term;
    with_ref.ref_logprobs.assign(lp.data().begin(), lp.data().end());
    std::vector<ResponseTerm> r1{with_ref};
    CHECK(std::abs(agapo_objective(r1, one, 1, {.beta = 0.5}).item() - l1.item()) <= 1e-14);
    CHECK_THROWS_AS(agapo_objective(single, one, 1, {.beta = 0.5}), ConfigError);
}

TEST_CASE("agapo objective with KL passes grad_check") {
    RngStream rng(7);
    std::vector<double> v(4 * 6), r(4 * 6);
    for (auto& x : v) x = rng.normal();
    for (auto& x : r) x = rng.normal();
    auto logits_a = Tensor::from({4, 6}, v, true);
    auto logits_b = Tensor::from({4, 6}, std::vector<double>(v.rbegin(), v.rend()), true);
    auto ref = log_softmax_lastdim(Tensor::from({4, 6}, r));
    std::vector<double> refv(ref.data().begin(), ref.data().end());
    std::vector<ResponseTerm> terms{{logits_a, {0, 5, 2, 2}, {true, false, true, true}, refv, {}},
                                    {logits_b, {3, 1, 1, 4}, {true, true, true, true}, refv, {}}};
    std::vector<double> adv{0.7, -0.7};
    for (bool norm : {false, true}) {
        auto report = grad_check([&] { return agapo_objective(terms, adv, 2, {.beta = 0.3, .length_normalize = norm}); },
                                 {logits_a, logits_b});
        CHECK(report.passed);
    }
}

TEST_CASE("grpo clipping contract and reduction to the clip-free objective") {
    auto logits = Tensor::from({2, 3}, {0.2, -0.1, 0.5, 1.0, 0.0, -1.0}, true);
    std::vector<double> lp_now;
    {
        NoGradGuard g;
        auto lp = log_softmax_lastdim(logits);
        lp_now = {lp.at(0 * 3 + 2), lp.at(1 * 3 + 0)};
    }
    ResponseTerm in_band{logits, {2, 0}, {true, true}, {}, lp_now};
    std::vector<ResponseTerm> t1{in_band};
    std::vector<double> a{1.3};

    // ratio 1: gradient equals the unclipped surrogate's, A * grad log pi / T
    backward(grpo_objective(t1, a, 1, {.clip_eps = 0.2}));
    auto g_clip = grad_of(logits);
    logits.zero_grad();
    backward(agapo_objective(t1, a, 1, {.beta = 0.0, .length_normalize = true}));
    auto g_free = grad_of(logits);
    logits.zero_grad();
    for (std::size_t i = 0; i < g_clip.size(); ++i) CHECK(std::abs(g_clip[i] - g_free[i]) <= 1e-12);

    // ratio far above 1 + eps with positive advantage: no gradient
    ResponseTerm out_band = in_band;
    out_band.old_logprobs = {lp_now[0] - 1.0, lp_now[1] - 1.0};
    std::vector<ResponseTerm> t2{out_band};
    backward(grpo_objective(t2, a, 1, {.clip_eps = 0.01}));
    for (double g : logits.grad()) CHECK(g == 0.0);
    logits.zero_grad();

    // clip disabled, same advantages, old == current: gradients agree
    backward(grpo_objective(t1, a, 1, {.clip_eps = kNoClip}));
    auto g_inf = grad_of(logits);
    logits.zero_grad();
    for (std::size_t i = 0; i < g_inf.size(); ++i) CHECK(std::abs(g_inf[i] - g_free[i]) <= 1e-10);
}

TEST_CASE("trainer: all-correct batches are skipped, runs are deterministic") {
    model::Model base(tiny_model(), 1);
    Task easy{"e", "say anything", Category::instruction_following,
              {{"constraints", {{{"type", "max_words"}, {"n", 1000}}}}}};
    AgapoConfig cfg;
    cfg.group_size = 2;
    cfg.batch_groups = 2;
    cfg.beta = 0.0;
    cfg.rollout.max_new_tokens = 3;
    {
        auto policy = base.clone();
        Trainer tr(policy, nullptr, {easy}, cfg);
        auto m = tr.step();
        CHECK(m.skipped);
        CHECK(m.mean_reward == 1.0);
    }

    std::vector<Task> pool{math_task("1+2=", "3"), math_task("2+2=", "4")};
    cfg.beta = 1e-3;
    auto run = [&] {
        auto policy = base.clone();
        auto ref = base.clone();
        Trainer tr(policy, &ref, pool, cfg);
        std::vector<nlohmann::json> out;
        for (int s = 0; s < 3; ++s) out.push_back(tr.step().to_json());
        return out;
    };
    CHECK(run() == run());

    auto policy = base.clone();
    CHECK_THROWS_AS(Trainer(policy, nullptr, pool, cfg), ConfigError);
    CHECK(agapo_config_from_json(to_json(cfg)).beta == cfg.beta);
}
