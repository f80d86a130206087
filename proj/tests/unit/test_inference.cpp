#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hlab/inference/generate.hpp"
#include "hlab/inference/sampler.hpp"

using namespace hlab;
using namespace hlab::inference;
using model::Tokenizer;

namespace {

// Emits a fixed continuation after the prompt, then EOS forever.
class ScriptPredictor : public TokenPredictor {
   public:
    ScriptPredictor(std::size_t prompt_len, std::vector<int> script, std::size_t vocab = 300,
                    std::size_t max_ctx = 256)
        : prompt_len_(prompt_len), script_(std::move(script)), vocab_(vocab), max_ctx_(max_ctx) {}

    std::vector<double> next_logits(std::span<const int> ctx) const override {
        std::vector<double> l(vocab_, 0.0);
        const std::size_t i = ctx.size() - prompt_len_;
        l[i < script_.size() ? script_[i] : Tokenizer::kEos] = 60.0;
        return l;
    }
    std::size_t vocab_size() const override { return vocab_; }
    std::size_t max_context() const override { return max_ctx_; }

   private:
    std::size_t prompt_len_;
    std::vector<int> script_;
    std::size_t vocab_;
    std::size_t max_ctx_;
};

// Thinks with `think` (then closes) and answers with `answer` (then EOS);
// the answer phase starts after any think-close marker in the context.
class PhasePredictor : public TokenPredictor {
   public:
    PhasePredictor(std::vector<int> think, std::vector<int> answer) : think_(std::move(think)), answer_(std::move(answer)) {}

    std::vector<double> next_logits(std::span<const int> ctx) const override {
        std::vector<double> l(300, 0.0);
        auto close = std::find(ctx.begin(), ctx.end(), Tokenizer::kThinkClose);
        auto open = std::find(ctx.begin(), ctx.end(), Tokenizer::kThinkOpen);
        int id;
        if (close != ctx.end()) {
            const int newline = Tokenizer::kByteBase + '\n';
            const auto i = static_cast<std::size_t>(std::count_if(close + 1, ctx.end(), [&](int t) { return t != newline; }));
            id = i < answer_.size() ? answer_[i] : Tokenizer::kEos;
        } else {
            const auto i = static_cast<std::size_t>(ctx.end() - open - 1);
            id = i < think_.size() ? think_[i] : Tokenizer::kThinkClose;
        }
        l[id] = 60.0;
        return l;
    }
    std::size_t vocab_size() const override { return 300; }
    std::size_t max_context() const override { return 256; }

   private:
    std::vector<int> think_, answer_;
};

// Always emits the same token, never EOS.
class ConstantPredictor : public TokenPredictor {
   public:
    explicit ConstantPredictor(int id, std::size_t max_ctx) : id_(id), max_ctx_(max_ctx) {}
    std::vector<double> next_logits(std::span<const int>) const override {
        std::vector<double> l(300, 0.0);
        l[id_] = 60.0;
        return l;
    }
    std::size_t vocab_size() const override { return 300; }
    std::size_t max_context() const override { return max_ctx_; }

   private:
    int id_;
    std::size_t max_ctx_;
};

model::ModelConfig small_model() {
    model::ModelConfig c;
    c.d_model = 16;
    c.n_layers = 4;
    c.head_size = 4;
    c.ffn_dim = 32;
    c.window = 4;
    c.vocab_size = 300;
    c.max_seq = 96;
    return c;
}

SamplerConfig plain_sampler(double temperature = 1.0) {
    SamplerConfig c;
    c.temperature = temperature;
    c.top_p = 1.0;
    c.presence_penalty = 0.0;
    c.max_new_tokens = 12;
    return c;
}

}  // namespace

TEST_CASE("sampler config validation and json round trip") {
    SamplerConfig c;
    CHECK(c.temperature == 0.6);
    CHECK(c.top_p == 0.95);
    CHECK(c.presence_penalty == 1.5);
    CHECK(reference_sampler_preset().max_new_tokens == kReferenceAnswerCap);
    CHECK(sampler_config_from_json(to_json(c)).top_p == 0.95);
    c.top_p = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    auto j = to_json(SamplerConfig{});
    j["beam"] = 4;
    CHECK_THROWS_AS(sampler_config_from_json(j), ConfigError);
}

TEST_CASE("temperature 0 is argmax and consumes no randomness") {
    std::vector<double> logits{0.1, 2.0, -1.0, 1.9};
    RngStream a(1), b(1);
    auto cfg = greedy_sampler();
    for (int i = 0; i < 5; ++i) CHECK(sample_token(logits, cfg, {}, a) == 1);
    CHECK(a.next_u64() == b.next_u64());
    cfg.presence_penalty = 1.0;
    CHECK(sample_token(logits, cfg, {1}, a) == 3);
}

TEST_CASE("unpenalized sampling matches softmax frequencies within 3 sigma") {
    std::vector<double> logits{0.3, -1.2, 1.1, 0.0, -0.4};
    auto lp = log_softmax(logits);
    auto cfg = plain_sampler();
    RngStream rng(2024);
    const int n = 100000;
    std::vector<int> counts(5, 0);
    for (int i = 0; i < n; ++i) ++counts[sample_token(logits, cfg, {}, rng)];
    for (int k = 0; k < 5; ++k) {
        const double p = std::exp(lp[k]);
        const double sigma = std::sqrt(n * p * (1 - p));
        CHECK(std::abs(counts[k] - n * p) <= 3 * sigma);
    }
}

TEST_CASE("presence penalty of 1.5 on [0,0] gives sigmoid(1.5)") {
    std::vector<double> logits{0.0, 0.0};
    auto cfg = plain_sampler();
    cfg.presence_penalty = 1.5;
    auto s = nucleus_support(logits, cfg, {0});
    REQUIRE(s.ids.size() == 2);
    CHECK(s.ids[0] == 1);
    CHECK(std::abs(s.probs[0] - 1.0 / (1.0 + std::exp(-1.5))) <= 1e-12);
    CHECK(s.probs[0] == doctest::Approx(0.8176).epsilon(1e-4));

    // binary presence: repeated occurrences do not stack
    auto twice = apply_presence_penalty(logits, {0, 0}, 1.5);
    CHECK(twice[0] == -1.5);
}

TEST_CASE("nucleus draws stay inside the minimal top-p prefix") {
    RngStream data(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> logits(12);
        for (auto& v : logits) v = data.normal(0.0, 1.5);
        SamplerConfig cfg = plain_sampler(0.8);
        cfg.top_p = 0.5 + 0.45 * data.uniform();
        cfg.presence_penalty = 0.7;
        TokenHistory hist{2, 5};

        // independent oracle
        std::vector<double> z(logits);
        for (int h : hist) z[h] -= 0.7;
        double zmax = *std::max_element(z.begin(), z.end()), total = 0.0;
        std::vector<double> p(12);
        for (int i = 0; i < 12; ++i) total += (p[i] = std::exp((z[i] - zmax) / 0.8));
        for (auto& x : p) x /= total;
        std::vector<int> order(12);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
        std::vector<bool> allowed(12, false);
        double mass = 0.0;
        for (int id : order) {
            allowed[id] = true;
            mass += p[id];
            if (mass >= cfg.top_p) break;
        }

        RngStream rng(100 + trial);
        for (int i = 0; i < 1000; ++i) CHECK(allowed[sample_token(logits, cfg, hist, rng)]);
    }
}

TEST_CASE("non-finite logits are rejected") {
    std::vector<double> logits{0.0, NAN};
    RngStream rng(1);
    CHECK_THROWS_AS(sample_token(logits, plain_sampler(), {}, rng), InputError);
}

TEST_CASE("hand-off text tokenizes to the exact byte sequence") {
    const std::string expected =
        "Considering the limited time by the user, I have to give the solution based on the thinking directly now."
        "\n</think>\n\n";
    CHECK(handoff_text() == expected);
    const auto& tok = model::default_tokenizer();
    auto ids = tok.encode(handoff_text());
    CHECK(tok.decode(ids) == expected);
    CHECK(std::count(ids.begin(), ids.end(), Tokenizer::kThinkClose) == 1);
}

TEST_CASE("reasoning mode: natural close, forced hand-off at budget 1") {
    const std::vector<int> prompt{Tokenizer::kBos, 20, 21};
    // think: 3 tokens then close; answer: 2 tokens then EOS
    PhasePredictor p({40, 41, 42}, {50, 51});
    GenerateOptions opts;
    opts.mode = Mode::reasoning;
    opts.budget = 10;
    RngStream rng(1);
    auto t = generate(p, prompt, plain_sampler(), opts, rng);
    CHECK_FALSE(t.forced_handoff);
    CHECK(t.think_ids == std::vector<int>{40, 41, 42});
    CHECK(t.answer_ids == std::vector<int>{50, 51});
    CHECK(t.budget_used == 3);
    CHECK(t.finished);

    opts.budget = 1;
    RngStream rng2(1);
    auto f = generate(p, prompt, plain_sampler(), opts, rng2);
    CHECK(f.forced_handoff);
    CHECK(f.think_ids == std::vector<int>{40});
    CHECK(f.budget_used == 1);
    CHECK(model::default_tokenizer().decode(f.handoff_ids) == handoff_text());
    CHECK(f.answer_ids == std::vector<int>{50, 51});
    CHECK(std::count(f.sampled.begin(), f.sampled.end(), false) ==
          static_cast<std::ptrdiff_t>(1 + f.handoff_ids.size()));
}

TEST_CASE("non-reasoning mode has no think segment") {
    const std::vector<int> prompt{Tokenizer::kBos, 20};
    ScriptPredictor p(prompt.size(), {60, 61});
    GenerateOptions opts;
    RngStream rng(3);
    auto t = generate(p, prompt, plain_sampler(), opts, rng);
    CHECK(t.think_ids.empty());
    CHECK(t.answer_ids == std::vector<int>{60, 61});
    CHECK(t.generated.size() == 3);
}

TEST_CASE("answer cap and context overflow") {
    const std::vector<int> prompt{Tokenizer::kBos};
    ConstantPredictor p(70, 256);
    auto cfg = plain_sampler();
    cfg.max_new_tokens = 5;
    RngStream rng(4);
    auto t = generate(p, prompt, cfg, {}, rng);
    CHECK(t.answer_ids.size() == 5);
    CHECK_FALSE(t.finished);

    ConstantPredictor tight(70, 8);
    cfg.max_new_tokens = 50;
    RngStream rng2(4);
    try {
        generate(tight, prompt, cfg, {}, rng2);
        FAIL("expected TruncationError");
    } catch (const TruncationError& e) {
        CHECK(e.partial().answer_ids.size() == 7);
        CHECK(e.partial().full_ids().size() == 8);
    }
}

TEST_CASE("budget accounting over random budgets on a real model") {
    model::Model m(small_model(), 5);
    ModelPredictor pred(m);
    const auto& tok = model::default_tokenizer();
    auto cfg = plain_sampler(1.0);
    cfg.max_new_tokens = 4;
    RngStream pick(9);
    for (int trial = 0; trial < 15; ++trial) {
        GenerateOptions opts;
        opts.mode = Mode::reasoning;
        opts.budget = 1 + pick.below(8);
        RngStream rng(trial, 1);
        GenerationTrace t;
        try {
            t = generate(pred, std::vector<int>{Tokenizer::kBos, 30, 31}, cfg, opts, rng);
        } catch (const TruncationError& e) {
            t = e.partial();
        }
        CHECK(t.think_ids.size() <= *opts.budget);
        CHECK((t.think_ids.size() == *opts.budget) == t.forced_handoff);
        if (t.forced_handoff) CHECK(tok.decode(t.handoff_ids) == handoff_text());
    }
}

TEST_CASE("equal seeds give identical traces") {
    model::Model m(small_model(), 6);
    ModelPredictor pred(m);
    GenerateOptions opts;
    opts.mode = Mode::reasoning;
    opts.budget = 6;
    SamplerConfig cfg;
    cfg.max_new_tokens = 6;
    RngStream a(42, 3), b(42, 3);
    auto ta = generate(pred, std::vector<int>{1, 40}, cfg, opts, a);
    auto tb = generate(pred, std::vector<int>{1, 40}, cfg, opts, b);
    CHECK(ta.generated == tb.generated);
    CHECK(ta.logprobs == tb.logprobs);
}

TEST_CASE("repeat_eval: greedy determinism, constant stub, seed decomposition") {
    model::Model m(small_model(), 7);
    ModelPredictor pred(m);
    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < 6; ++i) prompts.push_back({1, 10 + i, 20 + i});
    auto parity = [](std::size_t, const GenerationTrace& t) { return t.answer_ids.size() % 2 == 0 ? 1.0 : 0.0; };
    GenerateOptions opts;

    std::vector<std::uint64_t> one{11};
    auto g1 = repeat_eval(pred, prompts, greedy_sampler(), opts, one, parity);
    auto g2 = repeat_eval(pred, prompts, greedy_sampler(), opts, one, parity);
    CHECK(g1.mean_accuracy == g2.mean_accuracy);

    ScriptPredictor right(3, {60});
    auto always = [](std::size_t, const GenerationTrace& t) { return t.answer_ids == std::vector<int>{60} ? 1.0 : 0.0; };
    std::vector<std::uint64_t> many{1, 2, 3, 4, 5};
    CHECK(repeat_eval(right, prompts, plain_sampler(), opts, many, always).mean_accuracy == 1.0);

    std::vector<std::uint64_t> four{21, 22, 23, 24};
    auto cfg = plain_sampler(1.0);
    cfg.max_new_tokens = 5;
    auto joint = repeat_eval(pred, prompts, cfg, opts, four, parity);
    double sum = 0.0;
    for (auto s : four) {
        std::vector<std::uint64_t> single{s};
        sum += repeat_eval(pred, prompts, cfg, opts, single, parity).mean_accuracy;
    }
    CHECK(std::abs(joint.mean_accuracy - sum / 4.0) <= 1e-12);

    auto failing = [](std::size_t t, const GenerationTrace&) -> double {
        if (t == 2) throw InputError("unparseable");
        return 1.0;
    };
    auto r = repeat_eval(pred, prompts, cfg, opts, one, failing);
    CHECK(r.invalid == 1);
    CHECK_FALSE(r.per_task[2].has_value());
    CHECK(r.mean_accuracy == 1.0);
}
