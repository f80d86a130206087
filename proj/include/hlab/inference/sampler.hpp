#pragma once

#include <cstddef>
#include <span>
#include <unordered_set>
#include <vector>

#include "hlab/numcore/rng.hpp"
#include "json.hpp"

namespace hlab::inference {

// Which generated tokens count toward the presence penalty.
enum class PenaltyScope { whole, think_only };

struct SamplerConfig {
    double temperature = 0.6;
    double top_p = 0.95;
    double presence_penalty = 1.5;
    std::size_t n_samples = 1;
    // Cap on answer-segment tokens.
    std::size_t max_new_tokens = 256;
    PenaltyScope penalty_scope = PenaltyScope::whole;

    void validate() const;
    bool greedy() const { return temperature == 0.0; }
};

inline constexpr std::size_t kReferenceAnswerCap = 8192;

// Reference decoding settings with the full-size answer cap.
SamplerConfig reference_sampler_preset();
// Exact argmax decoding.
SamplerConfig greedy_sampler();

nlohmann::json to_json(const SamplerConfig& cfg);
SamplerConfig sampler_config_from_json(const nlohmann::json& j);

// Token ids already generated, for the presence penalty.
using TokenHistory = std::unordered_set<int>;

// Distribution the sampler draws from after penalty, temperature and
// nucleus truncation. ids are ordered by descending probability.
struct NucleusSupport {
    std::vector<int> ids;
    std::vector<double> probs;
};

// Applies the presence penalty: subtracts it once from every id in history.
std::vector<double> apply_presence_penalty(std::span<const double> logits, const TokenHistory& history,
                                           double penalty);

// Smallest descending-probability prefix whose mass reaches top_p.
// Not defined for temperature 0.
NucleusSupport nucleus_support(std::span<const double> logits, const SamplerConfig& cfg,
                               const TokenHistory& history);

int sample_token(std::span<const double> logits, const SamplerConfig& cfg, const TokenHistory& history,
                 RngStream& rng);

// Natural-log softmax of one row.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace hlab::inference
