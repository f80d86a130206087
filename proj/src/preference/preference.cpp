#include "hlab/preference/preference.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hlab/agapo/trainer.hpp"

namespace hlab::preference {

const char* to_string(Stage s) { return s == Stage::stage1 ? "stage1" : "stage2"; }

HybridRewardWeights HybridRewardWeights::stage1(double verifiable, double conciseness) {
    HybridRewardWeights w;
    w.w_verifiable = verifiable;
    w.w_conciseness = conciseness;
    w.stage = Stage::stage1;
    return w;
}

HybridRewardWeights HybridRewardWeights::stage2(double preference, double language) {
    HybridRewardWeights w;
    w.w_preference = preference;
    w.w_language = language;
    w.stage = Stage::stage2;
    return w;
}

void HybridRewardWeights::validate() const {
    for (double v : {w_verifiable, w_preference, w_language, w_conciseness})
        if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("hybrid reward weights must be finite and >= 0");
    if (stage == Stage::stage1 && (w_preference != 0.0 || w_language != 0.0))
        throw ConfigError("stage1 weights use only the verifiable and conciseness terms");
    if (stage == Stage::stage2 && (w_verifiable != 0.0 || w_conciseness != 0.0))
        throw ConfigError("stage2 weights use only the preference and language terms");
}

std::optional<Script> script_for_language(std::string_view lang) {
    static const std::vector<std::pair<std::string_view, Script>> table = {
        {"en", Script::latin}, {"fr", Script::latin}, {"de", Script::latin},    {"es", Script::latin},
        {"it", Script::latin}, {"pt", Script::latin}, {"nl", Script::latin},    {"el", Script::greek},
        {"ru", Script::cyrillic}, {"uk", Script::cyrillic}, {"zh", Script::han}};
    for (const auto& [code, script] : table)
        if (code == lang) return script;
    return std::nullopt;
}

namespace {

// Next code point, or -1 for an invalid sequence (one byte consumed).
long next_code_point(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    int len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) {
        ++i;
        return -1;
    }
    long cp = len == 1 ? b0 : b0 & (0x7F >> len);
    for (int k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b >> 6) != 0x2) {
            ++i;
            return -1;
        }
        cp = (cp << 6) | (b & 0x3F);
    }
    i += len;
    return cp;
}

std::optional<Script> script_of(long cp) {
    if ((cp >= 'A' && cp <= 'Z') || (cp >= 'a' && cp <= 'z')) return Script::latin;
    if (cp >= 0xC0 && cp <= 0x24F && cp != 0xD7 && cp != 0xF7) return Script::latin;
    if (cp >= 0x1E00 && cp <= 0x1EFF) return Script::latin;
    if ((cp >= 0x370 && cp <= 0x3FF) || (cp >= 0x1F00 && cp <= 0x1FFF)) return Script::greek;
    if (cp >= 0x400 && cp <= 0x4FF) return Script::cyrillic;
    if ((cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF)) return Script::han;
    return std::nullopt;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace

double script_fraction(std::string_view text, Script script) {
    std::size_t letters = 0, in_script = 0;
    for (std::size_t i = 0; i < text.size();) {
        const long cp = next_code_point(text, i);
        if (cp < 0) continue;
        const auto s = script_of(cp);
        if (!s) continue;
        ++letters;
        in_script += *s == script;
    }
    return letters == 0 ? 1.0 : static_cast<double>(in_script) / static_cast<double>(letters);
}

ResponseView view_of(const inference::GenerationTrace& trace, const model::Tokenizer& tok) {
    ResponseView v;
    v.full_text = tok.decode(trace.generated);
    v.answer_text = tok.decode(trace.answer_ids);
    v.length = trace.generated.size();
    v.finished = trace.finished;
    return v;
}

double preference_rubric(const ResponseView& r) {
    double s = 0.0;
    if (!trim(r.answer_text).empty()) s += 0.5;
    if (r.finished) s += 0.25;
    if (r.answer_text.find(model::Tokenizer::think_open_text()) == std::string::npos &&
        r.answer_text.find(model::Tokenizer::think_close_text()) == std::string::npos)
        s += 0.25;
    return s;
}

ComponentScores score_response(const ResponseView& r, const agapo::Task* task, const HybridRewardWeights& w,
                               const ScoreOptions& opts, std::vector<std::string>* warnings) {
    w.validate();
    if (opts.len_max == 0) throw ConfigError("score: len_max must be positive");
    ComponentScores c;
    if (task) {
        c.verifiable = agapo::verify(*task, r.answer_text).reward;
    } else if (w.w_verifiable > 0.0) {
        throw ContractError("score: verifiable weight set but no task to verify against");
    }
    c.conciseness = std::clamp(1.0 - static_cast<double>(r.length) / static_cast<double>(opts.len_max), 0.0, 1.0);
    c.preference = preference_rubric(r);
    if (const auto script = script_for_language(opts.target_language)) {
        c.language = script_fraction(r.answer_text, *script);
    } else if (warnings) {
        warnings->push_back("unknown target language '" + opts.target_language + "': language term skipped");
    }
    c.hybrid = w.w_verifiable * c.verifiable + w.w_conciseness * c.conciseness + w.w_preference * c.preference +
               (c.language ? w.w_language * *c.language : 0.0);
    return c;
}

nlohmann::json ComponentScores::to_json() const {
    return {{"verifiable", verifiable},
            {"conciseness", conciseness},
            {"preference", preference},
            {"language", language ? nlohmann::json(*language) : nlohmann::json(nullptr)},
            {"hybrid", hybrid}};
}

nlohmann::json PreferencePair::to_json() const {
    return {{"prompt", prompt},
            {"chosen", chosen},
            {"rejected", rejected},
            {"stage", stage == Stage::stage1 ? 1 : 2},
            {"scores", {{"chosen", chosen_scores.to_json()}, {"rejected", rejected_scores.to_json()}}},
            {"both_correct", both_correct},
            {"reused", reused}};
}

std::optional<PreferencePair> select_pair(const std::string& prompt, const std::vector<ResponseView>& responses,
                                          const std::vector<ComponentScores>& scores, Stage stage) {
    if (responses.size() != scores.size()) throw ContractError("select_pair: scores do not align with responses");
    if (responses.size() < 2) return std::nullopt;
    const bool identical = std::all_of(responses.begin(), responses.end(),
                                       [&](const ResponseView& r) { return r.full_text == responses[0].full_text; });
    if (identical) return std::nullopt;

    const std::size_t n = responses.size();
    std::optional<std::size_t> chosen, rejected;
    bool both_correct = false;
    if (stage == Stage::stage1) {
        for (std::size_t i = 0; i < n; ++i) {
            if (scores[i].verifiable < 1.0) {
                if (!rejected || scores[i].hybrid < scores[*rejected].hybrid) rejected = i;
            } else if (!chosen || responses[i].length < responses[*chosen].length) {
                chosen = i;
            }
        }
        if (!chosen) return std::nullopt;
        if (!rejected) {
            both_correct = true;
            for (std::size_t i = 0; i < n; ++i)
                if (!rejected || responses[i].length > responses[*rejected].length) rejected = i;
        }
    } else {
        chosen = rejected = 0;
        for (std::size_t i = 1; i < n; ++i) {
            if (scores[i].hybrid > scores[*chosen].hybrid) chosen = i;
            if (scores[i].hybrid < scores[*rejected].hybrid) rejected = i;
        }
    }
    if (*chosen == *rejected || !(scores[*chosen].hybrid > scores[*rejected].hybrid)) return std::nullopt;

    PreferencePair p;
    p.prompt = prompt;
    p.chosen = responses[*chosen].full_text;
    p.rejected = responses[*rejected].full_text;
    p.stage = stage;
    p.chosen_scores = scores[*chosen];
    p.rejected_scores = scores[*rejected];
    p.chosen_index = *chosen;
    p.rejected_index = *rejected;
    p.both_correct = both_correct;
    return p;
}

BuildReport build_pairs(const inference::TokenPredictor& predictor, const model::Tokenizer& tok,
                        const std::vector<agapo::Task>& tasks, const BuildOptions& opts) {
    if (opts.n_per_prompt < 2) throw ConfigError("build_pairs: n_per_prompt must be >= 2");
    opts.weights.validate();
    BuildReport rep;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        ++rep.prompts;
        std::vector<ResponseView> views;
        std::vector<ComponentScores> scores;
        for (std::size_t k = 0; k < opts.n_per_prompt; ++k) {
            RngStream rng(opts.seed, t * opts.n_per_prompt + k);
            const auto ro = agapo::rollout_once(predictor, tok, tasks[t], opts.sampler, opts.gen, rng);
            views.push_back(view_of(ro.trace, tok));
            std::vector<std::string> warn;
            scores.push_back(score_response(views.back(), &tasks[t], opts.weights, opts.score, &warn));
            if (t == 0 && k == 0) rep.warnings.insert(rep.warnings.end(), warn.begin(), warn.end());
        }
        if (auto pair = select_pair(tasks[t].prompt, views, scores, opts.weights.stage))
            rep.pairs.push_back(std::move(*pair));
        else
            ++rep.skipped;
    }
    return rep;
}

std::vector<PreferencePair> mix_stage1(std::vector<PreferencePair> stage2, const std::vector<PreferencePair>& stage1,
                                       double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("mix_stage1: fraction must lie in [0, 1]");
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(stage1.size())));
    std::vector<std::size_t> idx(stage1.size());
    std::iota(idx.begin(), idx.end(), 0);
    RngStream rng(seed, 0x5e1);
    for (std::size_t i = 0; i < take; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    for (std::size_t i = 0; i < take; ++i) {
        auto p = stage1[idx[i]];
        p.reused = true;
        stage2.push_back(std::move(p));
    }
    return stage2;
}

void write_pairs_jsonl(const std::vector<PreferencePair>& pairs, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    for (const auto& p : pairs) os << p.to_json().dump() << '\n';
}

}  // namespace hlab::preference
