#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hlab/inference/sampler.hpp"
#include "hlab/model/model.hpp"
#include "hlab/model/tokenizer.hpp"
#include "hlab/numcore/errors.hpp"
#include "json.hpp"

namespace hlab::inference {

// Next-token scorer; the Model adapter below and test stubs implement it.
class TokenPredictor {
   public:
    virtual ~TokenPredictor() = default;
    virtual std::vector<double> next_logits(std::span<const int> context) const = 0;
    virtual std::size_t vocab_size() const = 0;
    virtual std::size_t max_context() const = 0;
};

class ModelPredictor : public TokenPredictor {
   public:
    explicit ModelPredictor(const model::Model& m) : model_(m) {}
    std::vector<double> next_logits(std::span<const int> context) const override;
    std::size_t vocab_size() const override { return model_.config().vocab_size; }
    std::size_t max_context() const override { return model_.config().max_seq; }

   private:
    const model::Model& model_;
};

enum class Mode { reasoning, non_reasoning };
const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);

// Exact text injected when the reasoning budget runs out.
const std::string& handoff_text();

struct GenerateOptions {
    Mode mode = Mode::non_reasoning;
    // Cap on think-segment tokens; unset means unlimited.
    std::optional<std::size_t> budget;
    int think_open = model::Tokenizer::kThinkOpen;
    int think_close = model::Tokenizer::kThinkClose;
    int eos = model::Tokenizer::kEos;
    // Token ids of the hand-off text; empty uses the default tokenizer.
    std::vector<int> handoff_ids;
};

struct GenerationTrace {
    Mode mode = Mode::non_reasoning;
    std::vector<int> prompt_ids;
    std::vector<int> think_ids;    // between the markers, markers excluded
    std::vector<int> handoff_ids;  // non-empty only when forced
    std::vector<int> answer_ids;   // EOS excluded
    // Every token appended after the prompt, in order, with whether it was
    // sampled (false for injected markers and hand-off) and its log-probability
    // under the unmodified model distribution (0 for injected tokens).
    std::vector<int> generated;
    std::vector<bool> sampled;
    std::vector<double> logprobs;
    std::size_t budget_used = 0;
    bool forced_handoff = false;
    bool finished = false;  // EOS produced

    std::vector<int> full_ids() const;
};

nlohmann::json to_json(const GenerationTrace& t, const model::Tokenizer* tok = nullptr);

// Raised when the context fills up mid-generation; carries the partial trace.
class TruncationError : public LengthError {
   public:
    TruncationError(const std::string& msg, GenerationTrace partial)
        : LengthError(msg), partial_(std::move(partial)) {}
    const GenerationTrace& partial() const { return partial_; }

   private:
    GenerationTrace partial_;
};

GenerationTrace generate(const TokenPredictor& predictor, std::span<const int> prompt, const SamplerConfig& cfg,
                         const GenerateOptions& opts, RngStream& rng);

// Scores one finished trace for task index t; throwing marks the task invalid.
using TraceScorer = std::function<double(std::size_t task, const GenerationTrace&)>;

struct EvalReport {
    double mean_accuracy = 0.0;
    std::vector<std::optional<double>> per_task;  // nullopt for invalid tasks
    std::size_t invalid = 0;
    std::vector<std::string> diagnostics;
};

// Sample k of task t draws from RngStream(seeds[k], t). Greedy decoding runs
// once per task since every seed yields the same trace.
EvalReport repeat_eval(const TokenPredictor& predictor, const std::vector<std::vector<int>>& prompts,
                       const SamplerConfig& cfg, const GenerateOptions& opts, std::span<const std::uint64_t> seeds,
                       const TraceScorer& scorer);

}  // namespace hlab::inference
