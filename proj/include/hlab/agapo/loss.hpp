#pragma once

#include <limits>
#include <span>
#include <vector>

#include "hlab/model/model.hpp"
#include "hlab/numcore/tensor.hpp"

namespace hlab::agapo {

// One response as seen by the loss: logits rows predicting each response
// token, the tokens, and which positions were sampled by the policy.
struct ResponseTerm {
    Tensor logits;  // [T x V], tracked
    std::vector<int> tokens;
    std::vector<bool> mask;
    std::vector<double> ref_logprobs;  // [T x V] reference log-probs, empty without a reference
    std::vector<double> old_logprobs;  // [T] rollout-time log-probs, for the clipped baseline
};

struct AgapoLossOptions {
    double beta = 1e-3;
    // Divide each response's log-probability by its token count.
    bool length_normalize = false;
};

// -(1/G) sum_i [A_i log pi(o_i|q) - beta KL_seq,i], averaged over groups.
// Responses are laid out group by group; advantages align with terms.
Tensor agapo_objective(const std::vector<ResponseTerm>& terms, std::span<const double> advantages,
                       std::size_t group_size, const AgapoLossOptions& opts);

struct GrpoLossOptions {
    double clip_eps = 0.2;  // infinity disables clipping
    double beta = 0.0;
};

inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

// Clipped-ratio surrogate, token-averaged per response and averaged over
// all responses, negated for minimization.
Tensor grpo_objective(const std::vector<ResponseTerm>& terms, std::span<const double> advantages,
                      std::size_t group_size, const GrpoLossOptions& opts);

// Builds a ResponseTerm by running the policy (tracked) and the reference
// (untracked, optional) over prompt + response.
ResponseTerm make_response_term(const model::Model& policy, const model::Model* ref, std::span<const int> prompt,
                                std::span<const int> response, const std::vector<bool>& mask,
                                std::span<const double> old_logprobs = {});

// Sequence KL of a term against its reference, without gradient.
double term_kl(const ResponseTerm& term);

}  // namespace hlab::agapo
