#include "hlab/inference/generate.hpp"

#include <algorithm>

namespace hlab::inference {

std::vector<double> ModelPredictor::next_logits(std::span<const int> context) const {
    NoGradGuard guard;
    const auto logits = model_.forward(context);
    const std::size_t v = logits.dim(1);
    auto d = logits.data();
    return {d.end() - static_cast<std::ptrdiff_t>(v), d.end()};
}

const char* to_string(Mode m) { return m == Mode::reasoning ? "reasoning" : "non-reasoning"; }

Mode mode_from_string(const std::string& s) {
    if (s == "reasoning") return Mode::reasoning;
    if (s == "non-reasoning" || s == "non_reasoning") return Mode::non_reasoning;
    throw ConfigError("unknown generation mode '" + s + "'");
}

const std::string& handoff_text() {
    static const std::string text =
        "Considering the limited time by the user, I have to give the solution based on the thinking directly "
        "now.\n</think>\n\n";
    return text;
}

std::vector<int> GenerationTrace::full_ids() const {
    std::vector<int> out(prompt_ids);
    out.insert(out.end(), generated.begin(), generated.end());
    return out;
}

nlohmann::json to_json(const GenerationTrace& t, const model::Tokenizer* tok) {
    nlohmann::json j = {{"mode", to_string(t.mode)},
                        {"prompt_ids", t.prompt_ids},
                        {"think_ids", t.think_ids},
                        {"handoff_ids", t.handoff_ids},
                        {"answer_ids", t.answer_ids},
                        {"logprobs", t.logprobs},
                        {"budget_used", t.budget_used},
                        {"forced_handoff", t.forced_handoff},
                        {"finished", t.finished}};
    if (tok) {
        j["prompt"] = tok->decode(t.prompt_ids);
        j["think"] = tok->decode(t.think_ids);
        j["answer"] = tok->decode(t.answer_ids);
    }
    return j;
}

GenerationTrace generate(const TokenPredictor& predictor, std::span<const int> prompt, const SamplerConfig& cfg,
                         const GenerateOptions& opts, RngStream& rng) {
    cfg.validate();
    if (prompt.empty()) throw InputError("generate: empty prompt");
    const std::size_t limit = predictor.max_context();
    if (prompt.size() > limit)
        throw LengthError("generate: prompt of " + std::to_string(prompt.size()) + " tokens exceeds context " +
                          std::to_string(limit));
    if (opts.budget && *opts.budget == 0) throw ConfigError("generate: budget must be >= 1");

    GenerationTrace tr;
    tr.mode = opts.mode;
    tr.prompt_ids.assign(prompt.begin(), prompt.end());
    std::vector<int> ctx(prompt.begin(), prompt.end());
    TokenHistory history;
    const TokenHistory no_history;

    auto append = [&](int id, bool sampled, double lp) {
        if (ctx.size() >= limit) {
            tr.budget_used = tr.think_ids.size();
            throw TruncationError("generate: context of " + std::to_string(limit) + " tokens exhausted", tr);
        }
        ctx.push_back(id);
        tr.generated.push_back(id);
        tr.sampled.push_back(sampled);
        tr.logprobs.push_back(lp);
    };
    auto step = [&](bool in_think) {
        const bool penalize = cfg.penalty_scope == PenaltyScope::whole || in_think;
        const auto logits = predictor.next_logits(ctx);
        const int id = sample_token(logits, cfg, penalize ? history : no_history, rng);
        append(id, true, log_softmax(logits)[id]);
        if (penalize) history.insert(id);
        return id;
    };

    if (opts.mode == Mode::reasoning) {
        append(opts.think_open, false, 0.0);
        for (;;) {
            if (opts.budget && tr.think_ids.size() == *opts.budget) {
                const auto& ids =
                    opts.handoff_ids.empty() ? model::default_tokenizer().encode(handoff_text()) : opts.handoff_ids;
                for (int id : ids) append(id, false, 0.0);
                tr.handoff_ids = ids;
                tr.forced_handoff = true;
                break;
            }
            const int id = step(true);
            if (id == opts.think_close) break;
            if (id == opts.eos) {
                tr.budget_used = tr.think_ids.size();
                tr.finished = true;
                return tr;
            }
            tr.think_ids.push_back(id);
        }
        tr.budget_used = tr.think_ids.size();
    }

    while (tr.answer_ids.size() < cfg.max_new_tokens) {
        const int id = step(false);
        if (id == opts.eos) {
            tr.finished = true;
            break;
        }
        tr.answer_ids.push_back(id);
    }
    return tr;
}

EvalReport repeat_eval(const TokenPredictor& predictor, const std::vector<std::vector<int>>& prompts,
                       const SamplerConfig& cfg, const GenerateOptions& opts, std::span<const std::uint64_t> seeds,
                       const TraceScorer& scorer) {
    if (seeds.empty()) throw ConfigError("repeat_eval: need at least one seed");
    EvalReport report;
    double total = 0.0;
    std::size_t valid = 0;
    const std::size_t runs = cfg.greedy() ? 1 : seeds.size();
    for (std::size_t t = 0; t < prompts.size(); ++t) {
        try {
            double acc = 0.0;
            for (std::size_t k = 0; k < runs; ++k) {
                RngStream rng(seeds[k], t);
                GenerationTrace trace;
                try {
                    trace = generate(predictor, prompts[t], cfg, opts, rng);
                } catch (const TruncationError& e) {
                    trace = e.partial();
                }
                acc += scorer(t, trace);
            }
            acc /= static_cast<double>(runs);
            report.per_task.push_back(acc);
            total += acc;
            ++valid;
        } catch (const std::exception& e) {
            report.per_task.push_back(std::nullopt);
            ++report.invalid;
            report.diagnostics.push_back("task " + std::to_string(t) + ": " + e.what());
        }
    }
    report.mean_accuracy = valid ? total / static_cast<double>(valid) : 0.0;
    return report;
}

}  // namespace hlab::inference
