#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "hlab/longctx/niah.hpp"

using namespace hlab;
using namespace hlab::longctx;
using model::Tokenizer;

namespace {

const Tokenizer& tok() { return model::default_tokenizer(); }

// Reads the key from the question and copies the value that follows it in the needle.
class EchoPredictor : public inference::TokenPredictor {
   public:
    explicit EchoPredictor(std::size_t max_ctx = 1024) : max_ctx_(max_ctx) {}
    std::vector<double> next_logits(std::span<const int> ctx) const override {
        std::vector<double> l(tok().size(), 0.0);
        const int key = ctx[ctx.size() - 2];
        const int is = tok().word_id(" is");
        for (std::size_t i = 0; i + 2 < ctx.size(); ++i)
            if (ctx[i] == key && ctx[i + 1] == is) l[static_cast<std::size_t>(ctx[i + 2])] = 10.0;
        return l;
    }
    std::size_t vocab_size() const override { return tok().size(); }
    std::size_t max_context() const override { return max_ctx_; }

   private:
    std::size_t max_ctx_;
};

// Sentence boundaries of the haystack, BOS excluded, question excluded.
std::vector<std::vector<int>> sentences(const NiahCase& c) {
    std::vector<std::vector<int>> out(1);
    const int dot = tok().byte_id('.');
    for (std::size_t i = 1; i + 8 < c.prompt_ids.size(); ++i) {
        out.back().push_back(c.prompt_ids[i]);
        if (c.prompt_ids[i] == dot) out.emplace_back();
    }
    out.pop_back();
    return out;
}

bool is_needle(const std::vector<int>& s) {
    return std::find(s.begin(), s.end(), tok().word_id(" secret")) != s.end();
}

}  // namespace

TEST_CASE("case layout: lengths and needle placement") {
    for (std::size_t len : {18, 22, 40, 57, 128, 300}) {
        for (double depth : {0.0, 0.3, 0.5, 1.0}) {
            RngStream rng(9, len);
            auto c = make_niah_case(len, depth, rng);
            CHECK(c.prompt_ids.size() + c.answer_ids.size() == len);
            auto ss = sentences(c);
            REQUIRE(ss.size() == c.n_sentences);
            CHECK(std::count_if(ss.begin(), ss.end(), is_needle) == 1);
            CHECK(is_needle(ss[c.needle_sentence]));
            CHECK(c.answer_ids == std::vector<int>{tok().word_id(" " + c.value)});
        }
    }
    RngStream r0(1, 2), r1(1, 2);
    auto first = make_niah_case(128, 0.0, r0);
    CHECK(first.needle_sentence == 0);
    auto last = make_niah_case(128, 1.0, r1);
    CHECK(last.needle_sentence == last.n_sentences - 1);
    CHECK(tok().decode({first.prompt_ids.end() - 8, first.prompt_ids.end()}) ==
          " What is the secret code for " + first.key + "?");
}

TEST_CASE("case errors and determinism") {
    RngStream rng(1, 1);
    CHECK_THROWS_AS(make_niah_case(17, 0.5, rng), ConfigError);
    CHECK_THROWS_AS(make_niah_case(20, 0.5, rng), ConfigError);
    CHECK_THROWS_AS(make_niah_case(64, 1.5, rng), ConfigError);
    RngStream a(4, 7), b(4, 7);
    CHECK(make_niah_case(100, 0.4, a).prompt_ids == make_niah_case(100, 0.4, b).prompt_ids);
}

TEST_CASE("echo stub scores 1 everywhere; context limit marks cells unsupported") {
    EchoPredictor echo(200);
    auto g = eval_niah_grid(echo, {64, 128, 256}, {0.0, 0.5, 1.0}, 5, 3);
    CHECK(g.cells[0] == std::vector<std::optional<double>>{1.0, 1.0, 1.0});
    CHECK(g.cells[1] == std::vector<std::optional<double>>{1.0, 1.0, 1.0});
    CHECK_FALSE(g.cells[2][0].has_value());
    CHECK(*g.min() == 1.0);
    CHECK(g.green(0.95));
    auto back = niah_grid_from_json(g.to_json());
    CHECK(back.cells == g.cells);
    CHECK(back.lengths == g.lengths);
}

TEST_CASE("untrained model retrieves near chance") {
    model::ModelConfig c;
    c.d_model = 16;
    c.n_layers = 4;
    c.n_heads = 2;
    c.n_kv_heads = 1;
    c.head_size = 8;
    c.ffn_dim = 32;
    c.window = 4;
    c.vocab_size = tok().size();
    c.max_seq = 64;
    model::Model m(c, 5);
    inference::ModelPredictor pred(m);
    auto g = eval_niah_grid(pred, {64}, {0.0, 0.5, 1.0}, 10, 1);
    double mean = *g.row_mean(64);
    CHECK(mean <= 0.2);
}

TEST_CASE("grid min, green and row mean") {
    NiahGrid g{{128, 256}, {0.0, 1.0}, 4, {{1.0, 0.75}, {0.5, std::nullopt}}};
    CHECK(*g.min() == 0.5);
    CHECK_FALSE(g.green(0.95));
    CHECK(*g.row_mean(128) == doctest::Approx(0.875));
    CHECK(*g.row_mean(256) == 0.5);
    CHECK_FALSE(g.row_mean(512).has_value());
    NiahGrid none{{64}, {0.0}, 1, {{std::nullopt}}};
    CHECK_FALSE(none.min().has_value());
    CHECK_FALSE(none.green(0.0));
    CHECK_THROWS_AS(niah_grid_from_json({{"lengths", {1}}, {"depths", {0.0}}, {"m", 1}, {"cells", nlohmann::json::array()}}),
                    InputError);
}

TEST_CASE("extension schedule validates stages and gates on the grid") {
    model::ModelConfig c;
    c.d_model = 16;
    c.n_layers = 4;
    c.n_heads = 2;
    c.n_kv_heads = 1;
    c.head_size = 8;
    c.ffn_dim = 32;
    c.window = 4;
    c.vocab_size = tok().size();
    c.max_seq = 32;
    model::Model m(c, 2);
    ExtensionOptions o;
    o.m = 2;
    o.max_retries = 0;
    CHECK_THROWS_AS(extension_schedule(m, {{64, 1}, {32, 1}}, o), ConfigError);
    CHECK_THROWS_AS(extension_schedule(m, {}, o), ConfigError);
    o.min_len = 10;
    CHECK_THROWS_AS(extension_schedule(m, {{64, 1}}, o), ConfigError);

    o = ExtensionOptions{};
    o.m = 2;
    o.max_retries = 1;
    o.green_threshold = 1.01;
    std::size_t calls = 0;
    auto rep = extension_schedule(m, {{32, 3}, {64, 3}}, o, [&](std::size_t st, std::size_t, double loss) {
        CHECK(st == 0);
        CHECK(std::isfinite(loss));
        ++calls;
    });
    CHECK(rep.halted);
    CHECK(rep.stages.size() == 1);
    CHECK(rep.stages[0].attempts == 2);
    CHECK(rep.stages[0].steps_run == 6);
    CHECK(calls == 6);
    CHECK(m.config().max_seq == 32);
}
