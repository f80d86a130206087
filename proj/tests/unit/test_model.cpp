#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "hlab/model/checkpoint.hpp"
#include "hlab/model/model.hpp"
#include "hlab/model/tokenizer.hpp"
#include "hlab/numcore/grad_check.hpp"
#include "hlab/numcore/ops.hpp"

using namespace hlab;
using namespace hlab::model;
using blocks::AttentionKind;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.d_model = 16;
    c.n_layers = 4;
    c.n_heads = 4;
    c.n_kv_heads = 2;
    c.head_size = 4;
    c.ffn_dim = 24;
    c.window = 3;
    c.vocab_size = 40;
    c.max_seq = 32;
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "hlab_test_model";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("build_schedule: repeating unit, all-global, divisibility") {
    ModelConfig c = tiny_config();
    c.n_layers = 8;
    CHECK(build_schedule(c).str() == "LLLGLLLG");
    c.global_phase = GlobalPhase::start;
    CHECK(build_schedule(c).str() == "GLLLGLLL");

    c = tiny_config();
    c.hybrid_local = 0;
    c.hybrid_global = 1;
    c.n_layers = 5;
    CHECK(build_schedule(c).str() == "GGGGG");

    c = tiny_config();
    c.n_layers = 6;
    CHECK_THROWS_AS(build_schedule(c), ConfigError);
}

TEST_CASE("schedule exactness: one global per three local") {
    for (std::size_t units = 1; units <= 6; ++units) {
        ModelConfig c = tiny_config();
        c.n_layers = 4 * units;
        auto s = build_schedule(c);
        CHECK(s.count(AttentionKind::global) * 3 == s.count(AttentionKind::local));
    }
}

TEST_CASE("model config json is strict") {
    auto j = to_json(tiny_config());
    CHECK(model_config_from_json(j).d_model == 16);
    j["unexpected"] = 1;
    CHECK_THROWS_AS(model_config_from_json(j), ConfigError);
    auto k = to_json(tiny_config());
    k["head_size"] = 3;
    CHECK_THROWS_AS(model_config_from_json(k), ConfigError);
}

TEST_CASE("forward: zero output head yields uniform logits") {
    ModelConfig c = tiny_config();
    c.tied_embeddings = false;
    Model m(c, 1);
    for (auto& v : m.lm_head().mutable_data()) v = 0.0;
    std::vector<int> tok{5};
    auto logits = m.forward(tok);
    CHECK(logits.shape() == Shape{1, 40});
    for (double v : logits.data()) CHECK(v == logits.at(0));
}

TEST_CASE("forward: tied embeddings share the output matrix") {
    Model m(tiny_config(), 2);
    std::vector<int> tok{1, 2, 3, 4};
    auto before = m.forward(tok);
    auto row = m.embedding().mutable_data().subspan(7 * 16, 16);
    for (auto& v : row) v += 0.5;
    auto after = m.forward(tok);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t j = 0; j < 40; ++j) {
            const bool changed = before.at(t * 40 + j) != after.at(t * 40 + j);
            CHECK(changed == (j == 7));
        }
}

TEST_CASE("forward: input validation") {
    Model m(tiny_config(), 3);
    std::vector<int> too_long(33, 1);
    CHECK_THROWS_AS(m.forward(too_long), LengthError);
    std::vector<int> bad{1, 40};
    CHECK_THROWS_AS(m.forward(bad), InputError);
}

TEST_CASE("causality: suffix edits never change earlier logits") {
    Model m(tiny_config(), 4);
    RngStream rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> a(12);
        for (auto& t : a) t = static_cast<int>(rng.below(40));
        const std::size_t cut = 1 + rng.below(11);
        auto b = a;
        for (std::size_t i = cut; i < b.size(); ++i) b[i] = static_cast<int>(rng.below(40));
        auto la = m.forward(a), lb = m.forward(b);
        for (std::size_t i = 0; i < cut * 40; ++i) CHECK(std::abs(la.at(i) - lb.at(i)) <= 1e-12);
    }
}

TEST_CASE("ce_loss: analytic cases and scalar oracle") {
    auto uniform = Tensor::zeros({3, 10});
    std::vector<int> t{1, 4, 9};
    CHECK(ce_loss(uniform, t).item() == doctest::Approx(std::log(10.0)).epsilon(1e-14));

    std::vector<double> confident(10, 0.0);
    confident[2] = 60.0;
    std::vector<int> t2{2};
    CHECK(ce_loss(Tensor::from({1, 10}, confident), t2).item() < 1e-20);

    RngStream rng(6);
    std::vector<double> v(4 * 7);
    for (auto& x : v) x = rng.normal(0.0, 2.0);
    auto logits = Tensor::from({4, 7}, v);
    std::vector<int> t3{3, kIgnoreIndex, 0, 6};
    double ref = 0.0;
    for (std::size_t r : {0u, 2u, 3u}) {
        double z = 0.0;
        for (std::size_t j = 0; j < 7; ++j) z += std::exp(v[r * 7 + j]);
        ref += std::log(z) - v[r * 7 + t3[r]];
    }
    CHECK(std::abs(ce_loss(logits, t3).item() - ref / 3.0) <= 1e-12);

    std::vector<int> none{kIgnoreIndex, kIgnoreIndex, kIgnoreIndex, kIgnoreIndex};
    CHECK_THROWS_AS(ce_loss(logits, none), ContractError);
}

TEST_CASE("full 4-layer model CE loss passes grad_check") {
    Model m(tiny_config(), 7);
    std::vector<int> tok{1, 5, 9, 3, 7, 2};
    std::vector<int> tgt{5, 9, 3, 7, 2, kIgnoreIndex};
    GradCheckOptions opts;
    opts.max_entries_per_param = 24;
    auto report = grad_check([&] { return ce_loss(m.forward(tok), tgt); }, m.parameters(), opts);
    INFO("rel_err " << report.max_rel_err);
    CHECK(report.passed);
}

TEST_CASE("checkpoint round trip") {
    Model m(tiny_config(), 8);
    auto path = temp_path("rt.ckpt");
    save_checkpoint(m, path, {{"stage", "unit"}});
    auto loaded = load_checkpoint(path);
    std::vector<int> tok{3, 1, 4, 1, 5, 9, 2, 6};
    auto a = m.forward(tok), b = loaded.forward(tok);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.at(i) - b.at(i)) <= 1e-6);

    // stored precision is reproduced exactly
    auto path2 = temp_path("rt2.ckpt");
    save_checkpoint(loaded, path2, {{"stage", "unit"}});
    auto again = load_checkpoint(path2);
    auto c = again.forward(tok);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b.at(i) == c.at(i));

    auto header = read_checkpoint_header(path);
    CHECK(header.config.d_model == 16);
    CHECK(header.meta["stage"] == "unit");
    CHECK(header.manifest.size() == m.named_parameters().size());
}

TEST_CASE("checkpoint load errors") {
    Model m(tiny_config(), 9);
    auto path = temp_path("err.ckpt");
    save_checkpoint(m, path);
    const auto full = std::filesystem::file_size(path);

    auto truncated = temp_path("trunc.ckpt");
    std::filesystem::copy_file(path, truncated, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(truncated, 30);
    try {
        load_checkpoint(truncated);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("manifest") != std::string::npos);
    }

    std::filesystem::copy_file(path, truncated, std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(truncated, full - 8);
    try {
        load_checkpoint(truncated);
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("layers.3.ffn_down") != std::string::npos);
    }

    auto bad_version = temp_path("ver.ckpt");
    std::filesystem::copy_file(path, bad_version, std::filesystem::copy_options::overwrite_existing);
    {
        std::fstream f(bad_version, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const std::uint32_t v = 99;
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    CHECK_THROWS_AS(load_checkpoint(bad_version), LoadError);
}

TEST_CASE("variance profile") {
    ModelConfig c = tiny_config();
    c.n_layers = 1;
    c.hybrid_local = 0;
    c.hybrid_global = 1;
    Model one(c, 10);
    std::vector<int> tok{1, 2, 3};
    CHECK(variance_profile(one, tok).size() == 1);

    Model m(tiny_config(), 11);
    for (auto& v : m.embedding().mutable_data()) v = 0.0;
    for (double v : variance_profile(m, tok)) CHECK(v == 0.0);
}

TEST_CASE("tokenizer round-trips arbitrary bytes and uses word tokens") {
    const auto& tok = default_tokenizer();
    RngStream rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        std::string s(rng.below(40), '\0');
        for (auto& ch : s) ch = static_cast<char>(rng.below(256));
        CHECK(tok.decode(tok.encode(s)) == s);
    }
    const std::string text = " The secret code for alpha is zorblin. 12+7=19 <think>x</think>";
    auto ids = tok.encode(text);
    CHECK(tok.decode(ids) == text);
    CHECK(ids[0] == tok.word_id(" The"));
    CHECK(std::count(ids.begin(), ids.end(), Tokenizer::kThinkClose) == 1);
    // partial words fall back to bytes
    auto there = tok.encode(" there");
    CHECK(there.size() == 6);
    CHECK(tok.size() <= 512);
}
