#include "hlab/agapo/loss.hpp"

#include <algorithm>
#include <cmath>

#include "hlab/numcore/ops.hpp"

namespace hlab::agapo {

namespace {

void check_terms(const std::vector<ResponseTerm>& terms, std::span<const double> adv, std::size_t g) {
    if (g < 1) throw ConfigError("loss: group size must be >= 1");
    if (terms.empty()) throw ContractError("loss: no responses");
    if (terms.size() != adv.size()) throw ContractError("loss: advantages do not align with responses");
    if (terms.size() % g != 0) throw ContractError("loss: response count is not a multiple of the group size");
    for (const auto& t : terms) {
        if (t.logits.rank() != 2 || t.logits.dim(0) != t.tokens.size() || t.mask.size() != t.tokens.size())
            throw ShapeError("loss: response logits, tokens and mask disagree");
    }
}

Tensor mask_tensor(const std::vector<bool>& mask, std::size_t& count) {
    std::vector<double> m(mask.size());
    count = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        m[i] = mask[i] ? 1.0 : 0.0;
        count += mask[i];
    }
    return Tensor::from({mask.size()}, std::move(m));
}

Tensor kl_sum(const Tensor& lp, const ResponseTerm& t, const Tensor& mask) {
    if (t.ref_logprobs.size() != lp.size()) throw ContractError("loss: reference log-probs do not match logits");
    auto ref = Tensor::from(lp.shape(), t.ref_logprobs);
    auto rows = sum_lastdim(mul(exp(lp), sub(lp, ref)));
    return sum(mul(rows, mask));
}

Tensor accumulate(const Tensor& acc, const Tensor& x) { return acc.defined() ? add(acc, x) : x; }

// sum_t mask_t min(r_t A, clip(r_t) A) / count with r_t = exp(lp_t - old_t).
Tensor clipped_surrogate(const Tensor& tok_lp, const std::vector<double>& old, const std::vector<bool>& mask,
                         std::size_t count, double a, double eps) {
    const std::size_t n = tok_lp.size();
    std::vector<double> dgrad(n, 0.0);
    double value = 0.0;
    const double inv = 1.0 / static_cast<double>(count);
    auto lp = tok_lp.data();
    for (std::size_t t = 0; t < n; ++t) {
        if (!mask[t]) continue;
        const double r = std::exp(lp[t] - old[t]);
        const double clipped = std::clamp(r, 1.0 - eps, 1.0 + eps);
        const double unc = r * a, cl = clipped * a;
        if (unc <= cl) {
            value += unc;
            dgrad[t] = a * r * inv;
        } else {
            value += cl;
        }
    }
    return make_op("clipped_surrogate", {1}, {value * inv}, {tok_lp},
                   [dgrad = std::move(dgrad)](std::span<const double> g, const GradSink& s) {
                       for (std::size_t t = 0; t < dgrad.size(); ++t) s[0][t] += g[0] * dgrad[t];
                   });
}

}  // namespace

Tensor agapo_objective(const std::vector<ResponseTerm>& terms, std::span<const double> advantages,
                       std::size_t group_size, const AgapoLossOptions& opts) {
    check_terms(terms, advantages, group_size);
    if (opts.beta < 0.0) throw ConfigError("agapo: beta must be >= 0");
    if (opts.beta > 0.0)
        for (const auto& t : terms)
            if (t.ref_logprobs.empty()) throw ConfigError("agapo: beta > 0 requires reference log-probs");

    Tensor acc;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& t = terms[i];
        if (opts.beta == 0.0 && advantages[i] == 0.0) continue;
        std::size_t count = 0;
        auto mask = mask_tensor(t.mask, count);
        if (count == 0) continue;
        auto lp = log_softmax_lastdim(t.logits);
        auto seq = sum(mul(gather_lastdim(lp, t.tokens), mask));
        if (opts.length_normalize) seq = scale(seq, 1.0 / static_cast<double>(count));
        auto term = scale(seq, advantages[i]);
        if (opts.beta > 0.0) term = sub(term, scale(kl_sum(lp, t, mask), opts.beta));
        acc = accumulate(acc, term);
    }
    // Keeps a graph to the logits so the gradient is an explicit zero.
    if (!acc.defined()) acc = scale(sum(terms[0].logits), 0.0);
    return scale(acc, -1.0 / static_cast<double>(terms.size()));
}

Tensor grpo_objective(const std::vector<ResponseTerm>& terms, std::span<const double> advantages,
                      std::size_t group_size, const GrpoLossOptions& opts) {
    check_terms(terms, advantages, group_size);
    if (!(opts.clip_eps > 0.0)) throw ConfigError("grpo: clip_eps must be > 0");
    Tensor acc;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& t = terms[i];
        if (t.old_logprobs.size() != t.tokens.size()) throw ContractError("grpo: old log-probs missing");
        if (opts.beta > 0.0 && t.ref_logprobs.empty()) throw ConfigError("grpo: beta > 0 requires reference log-probs");
        std::size_t count = 0;
        auto mask = mask_tensor(t.mask, count);
        if (count == 0) continue;
        auto lp = log_softmax_lastdim(t.logits);
        auto term = clipped_surrogate(gather_lastdim(lp, t.tokens), t.old_logprobs, t.mask, count, advantages[i],
                                      opts.clip_eps);
        if (opts.beta > 0.0)
            term = sub(term, scale(kl_sum(lp, t, mask), opts.beta / static_cast<double>(count)));
        acc = accumulate(acc, term);
    }
    if (!acc.defined()) acc = scale(sum(terms[0].logits), 0.0);
    return scale(acc, -1.0 / static_cast<double>(terms.size()));
}

ResponseTerm make_response_term(const model::Model& policy, const model::Model* ref, std::span<const int> prompt,
                                std::span<const int> response, const std::vector<bool>& mask,
                                std::span<const double> old_logprobs) {
    if (prompt.empty() || response.empty()) throw InputError("response term: empty prompt or response");
    if (mask.size() != response.size()) throw ShapeError("response term: mask length differs from response");
    std::vector<int> input(prompt.begin(), prompt.end());
    input.insert(input.end(), response.begin(), response.end() - 1);
    const std::size_t p = prompt.size(), t = response.size();

    ResponseTerm term;
    term.logits = slice_rows(policy.forward(input), p - 1, p - 1 + t);
    term.tokens.assign(response.begin(), response.end());
    term.mask = mask;
    term.old_logprobs.assign(old_logprobs.begin(), old_logprobs.end());
    if (ref) {
        NoGradGuard guard;
        auto lp = log_softmax_lastdim(slice_rows(ref->forward(input), p - 1, p - 1 + t));
        term.ref_logprobs.assign(lp.data().begin(), lp.data().end());
    }
    return term;
}

double term_kl(const ResponseTerm& term) {
    if (term.ref_logprobs.empty()) return 0.0;
    NoGradGuard guard;
    std::size_t count = 0;
    auto mask = mask_tensor(term.mask, count);
    return kl_sum(log_softmax_lastdim(term.logits), term, mask).item();
}

}  // namespace hlab::agapo
