#include "hlab/longctx/niah.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "hlab/numcore/ops.hpp"
#include "hlab/numcore/optim.hpp"

namespace hlab::longctx {

namespace {

using model::Tokenizer;
namespace vocab = model::vocab;

constexpr std::size_t kNeedleTokens = 8;
constexpr std::size_t kQuestionTokens = 8;

int word(const Tokenizer& tok, const std::string& w) {
    const int id = tok.word_id(w);
    if (id < 0) throw ContractError("niah: word '" + w + "' missing from the vocabulary");
    return id;
}

template <typename T>
const T& pick(const std::vector<T>& v, RngStream& rng) {
    return v[rng.below(v.size())];
}

// Filler sentence of 4 to 7 tokens built from words that never occur in a needle.
std::vector<int> filler_sentence(std::size_t size, RngStream& rng, const Tokenizer& tok) {
    auto noun = [&] { return word(tok, " " + pick(vocab::filler_nouns(), rng)); };
    auto adj = [&] { return word(tok, " " + pick(vocab::filler_adjectives(), rng)); };
    auto verb = [&] { return word(tok, " " + pick(vocab::filler_verbs(), rng)); };
    const int the = word(tok, " The"), a = word(tok, " a"), dot = tok.byte_id('.');
    switch (size) {
        case 4: return {the, noun(), verb(), dot};
        case 5: return {the, adj(), noun(), verb(), dot};
        case 6: return {the, noun(), verb(), a, noun(), dot};
        case 7: return {the, adj(), noun(), verb(), a, noun(), dot};
    }
    throw ContractError("niah: unsupported filler sentence size");
}

std::uint64_t case_key(std::size_t length, double depth, std::size_t c) {
    return splitmix64(splitmix64(length) ^ std::bit_cast<std::uint64_t>(depth)) ^ splitmix64(c + 0x9e37);
}

}  // namespace

std::size_t min_niah_length() { return 1 + kNeedleTokens + kQuestionTokens + 1; }

NiahCase make_niah_case(std::size_t length, double depth, RngStream& rng, const Tokenizer& tok) {
    if (!(depth >= 0.0 && depth <= 1.0)) throw ConfigError("niah: depth must lie in [0, 1]");
    if (length < min_niah_length())
        throw ConfigError("niah: length " + std::to_string(length) + " cannot hold the needle and question (minimum " +
                          std::to_string(min_niah_length()) + ")");
    std::size_t rest = length - min_niah_length();
    if (rest > 0 && rest < 4)
        throw ConfigError("niah: length " + std::to_string(length) + " leaves " + std::to_string(rest) +
                          " filler tokens, fewer than one sentence");

    NiahCase c;
    c.length = length;
    c.depth = depth;
    c.key = pick(vocab::needle_keys(), rng);
    c.value = pick(vocab::needle_values(), rng);
    const int key = word(tok, " " + c.key), value = word(tok, " " + c.value);

    std::vector<std::vector<int>> sentences;
    while (rest > 0) {
        std::size_t size;
        if (rest >= 11)
            size = 4 + rng.below(4);
        else if (rest >= 8)
            size = 4;
        else
            size = rest;
        sentences.push_back(filler_sentence(size, rng, tok));
        rest -= size;
    }
    const std::vector<int> needle{word(tok, " The"), word(tok, " secret"), word(tok, " code"), word(tok, " for"),
                                  key,               word(tok, " is"),     value,              tok.byte_id('.')};
    const auto slot = static_cast<std::size_t>(std::llround(depth * static_cast<double>(sentences.size())));
    sentences.insert(sentences.begin() + static_cast<std::ptrdiff_t>(slot), needle);
    c.needle_sentence = slot;
    c.n_sentences = sentences.size();

    c.prompt_ids.push_back(Tokenizer::kBos);
    for (const auto& s : sentences) c.prompt_ids.insert(c.prompt_ids.end(), s.begin(), s.end());
    const std::vector<int> question{word(tok, " What"), word(tok, " is"),  word(tok, " the"), word(tok, " secret"),
                                    word(tok, " code"), word(tok, " for"), key,               tok.byte_id('?')};
    c.prompt_ids.insert(c.prompt_ids.end(), question.begin(), question.end());
    c.answer_ids = {value};
    return c;
}

std::optional<double> NiahGrid::min() const {
    std::optional<double> m;
    for (const auto& row : cells)
        for (const auto& v : row)
            if (v && (!m || *v < *m)) m = v;
    return m;
}

bool NiahGrid::green(double threshold) const {
    const auto m = min();
    return m && *m >= threshold;
}

std::optional<double> NiahGrid::row_mean(std::size_t length) const {
    for (std::size_t l = 0; l < lengths.size(); ++l) {
        if (lengths[l] != length) continue;
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& v : cells[l])
            if (v) {
                s += *v;
                ++n;
            }
        return n ? std::optional<double>(s / static_cast<double>(n)) : std::nullopt;
    }
    return std::nullopt;
}

nlohmann::json NiahGrid::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : cells) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& v : row) r.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
        rows.push_back(r);
    }
    const auto mn = min();
    return {{"lengths", lengths},
            {"depths", depths},
            {"m", m},
            {"cells", rows},
            {"min", mn ? nlohmann::json(*mn) : nlohmann::json(nullptr)}};
}

NiahGrid niah_grid_from_json(const nlohmann::json& j) {
    NiahGrid g;
    try {
        g.lengths = j.at("lengths").get<std::vector<std::size_t>>();
        g.depths = j.at("depths").get<std::vector<double>>();
        g.m = j.at("m").get<std::size_t>();
        for (const auto& row : j.at("cells")) {
            std::vector<std::optional<double>> r;
            for (const auto& v : row) r.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
            g.cells.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("niah grid: ") + e.what());
    }
    if (g.cells.size() != g.lengths.size()) throw InputError("niah grid: row count differs from lengths");
    for (const auto& r : g.cells)
        if (r.size() != g.depths.size()) throw InputError("niah grid: column count differs from depths");
    return g;
}

NiahGrid eval_niah_grid(const inference::TokenPredictor& predictor, const std::vector<std::size_t>& lengths,
                        const std::vector<double>& depths, std::size_t m, std::uint64_t seed, const Tokenizer& tok) {
    if (m == 0) throw ConfigError("niah: m must be >= 1");
    NiahGrid g{lengths, depths, m, {}};
    for (std::size_t length : lengths) {
        std::vector<std::optional<double>> row;
        for (double depth : depths) {
            if (length > predictor.max_context()) {
                row.push_back(std::nullopt);
                continue;
            }
            std::size_t hits = 0;
            for (std::size_t c = 0; c < m; ++c) {
                RngStream rng(seed, case_key(length, depth, c));
                const auto nc = make_niah_case(length, depth, rng, tok);
                auto ctx = nc.prompt_ids;
                bool ok = true;
                for (int want : nc.answer_ids) {
                    const auto logits = predictor.next_logits(ctx);
                    const int got = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
                    if (got != want) {
                        ok = false;
                        break;
                    }
                    ctx.push_back(got);
                }
                hits += ok;
            }
            row.push_back(static_cast<double>(hits) / static_cast<double>(m));
        }
        g.cells.push_back(std::move(row));
    }
    return g;
}

Tensor niah_loss(const model::Model& model, const std::vector<NiahCase>& batch) {
    if (batch.empty()) throw ContractError("niah_loss: empty batch");
    Tensor total;
    for (const auto& c : batch) {
        std::vector<int> input(c.prompt_ids);
        input.insert(input.end(), c.answer_ids.begin(), c.answer_ids.end() - 1);
        std::vector<int> targets(input.size(), model::kIgnoreIndex);
        const std::size_t first = c.prompt_ids.size() - 1;
        for (std::size_t i = 0; i < c.answer_ids.size(); ++i) targets[first + i] = c.answer_ids[i];
        auto l = model::ce_loss(model.forward(input), targets);
        total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(batch.size()));
}

nlohmann::json ExtensionReport::to_json() const {
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stages)
        st.push_back({{"max_len", s.max_len},
                      {"steps_run", s.steps_run},
                      {"attempts", s.attempts},
                      {"green", s.green},
                      {"short_accuracy", s.short_accuracy},
                      {"grid", s.grid.to_json()}});
    return {{"stages", st},
            {"baseline_short", baseline_short},
            {"max_short_regression", max_short_regression},
            {"short_guard_ok", short_guard_ok},
            {"halted", halted},
            {"reason", reason}};
}

ExtensionReport extension_schedule(model::Model& model, const std::vector<ExtensionStage>& stages,
                                   const ExtensionOptions& opts, const StepHook& hook) {
    if (stages.empty()) throw ConfigError("extension: no stages");
    for (std::size_t i = 1; i < stages.size(); ++i)
        if (stages[i].max_len <= stages[i - 1].max_len)
            throw ConfigError("extension: stage lengths must be strictly increasing");
    if (opts.min_len < min_niah_length() + 4 || opts.min_len > stages[0].max_len)
        throw ConfigError("extension: min_len must lie in [" + std::to_string(min_niah_length() + 4) +
                          ", first stage length]");
    if (!(opts.mix_fraction >= 0.0 && opts.mix_fraction <= 1.0))
        throw ConfigError("extension: mix_fraction must lie in [0, 1]");
    if (opts.batch == 0) throw ConfigError("extension: batch must be >= 1");

    auto params = model.parameters();
    Adam opt(params, opts.lr);
    const std::size_t base_len = stages[0].max_len;
    std::vector<std::size_t> reached;
    ExtensionReport rep;
    std::size_t global_step = 0;

    for (std::size_t si = 0; si < stages.size(); ++si) {
        const auto& stage = stages[si];
        model.set_max_seq(stage.max_len);
        reached.push_back(stage.max_len);
        const std::size_t lo = si == 0 ? opts.min_len : stages[si - 1].max_len + 1;

        StageReport sr;
        sr.max_len = stage.max_len;
        for (std::size_t attempt = 0; attempt <= opts.max_retries; ++attempt) {
            ++sr.attempts;
            for (std::size_t s = 0; s < stage.steps; ++s, ++global_step) {
                std::vector<NiahCase> batch;
                for (std::size_t b = 0; b < opts.batch; ++b) {
                    RngStream rng(opts.seed, splitmix64(global_step) ^ (b + 1));
                    const bool short_case = si == 0 || rng.uniform() < opts.mix_fraction;
                    const std::size_t a = short_case ? opts.min_len : lo;
                    const std::size_t z = short_case ? base_len : stage.max_len;
                    const std::size_t len = a + rng.below(z - a + 1);
                    batch.push_back(make_niah_case(len, rng.uniform(), rng));
                }
                auto loss = niah_loss(model, batch);
                opt.zero_grad();
                backward(loss);
                opt.step();
                if (hook) hook(si, global_step, loss.item());
            }
            sr.steps_run += stage.steps;
            inference::ModelPredictor pred(model);
            sr.grid = eval_niah_grid(pred, reached, opts.depths, opts.m, splitmix64(opts.seed) ^ 0xe7a1);
            sr.green = sr.grid.green(opts.green_threshold);
            if (sr.green) break;
        }
        sr.short_accuracy = sr.grid.row_mean(base_len).value_or(0.0);
        if (si == 0) {
            rep.baseline_short = sr.short_accuracy;
        } else {
            rep.max_short_regression = std::max(rep.max_short_regression, rep.baseline_short - sr.short_accuracy);
            if (rep.baseline_short - sr.short_accuracy > opts.short_slack) rep.short_guard_ok = false;
        }
        rep.stages.push_back(sr);
        if (!sr.green) {
            rep.halted = true;
            rep.reason = "stage " + std::to_string(stage.max_len) + " not green after " + std::to_string(sr.attempts) +
                         " attempts (grid min " + std::to_string(sr.grid.min().value_or(0.0)) + ")";
            break;
        }
    }
    return rep;
}

}  // namespace hlab::longctx
