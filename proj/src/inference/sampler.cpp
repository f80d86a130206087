#include "hlab/inference/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hlab/numcore/errors.hpp"

namespace hlab::inference {

void SamplerConfig::validate() const {
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ConfigError("sampler: temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampler: top_p must lie in (0, 1]");
    if (!(presence_penalty >= 0.0)) throw ConfigError("sampler: presence_penalty must be >= 0");
    if (n_samples < 1) throw ConfigError("sampler: n_samples must be >= 1");
    if (max_new_tokens < 1) throw ConfigError("sampler: max_new_tokens must be >= 1");
}

SamplerConfig reference_sampler_preset() {
    SamplerConfig c;
    c.max_new_tokens = kReferenceAnswerCap;
    return c;
}

SamplerConfig greedy_sampler() {
    SamplerConfig c;
    c.temperature = 0.0;
    c.top_p = 1.0;
    c.presence_penalty = 0.0;
    return c;
}

nlohmann::json to_json(const SamplerConfig& cfg) {
    return {{"temperature", cfg.temperature},
            {"top_p", cfg.top_p},
            {"presence_penalty", cfg.presence_penalty},
            {"n_samples", cfg.n_samples},
            {"max_new_tokens", cfg.max_new_tokens},
            {"penalty_scope", cfg.penalty_scope == PenaltyScope::whole ? "whole" : "think_only"}};
}

SamplerConfig sampler_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("sampler config must be an object");
    SamplerConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            if (k == "temperature")
                c.temperature = it->get<double>();
            else if (k == "top_p")
                c.top_p = it->get<double>();
            else if (k == "presence_penalty")
                c.presence_penalty = it->get<double>();
            else if (k == "n_samples")
                c.n_samples = it->get<std::size_t>();
            else if (k == "max_new_tokens")
                c.max_new_tokens = it->get<std::size_t>();
            else if (k == "penalty_scope") {
                const auto s = it->get<std::string>();
                if (s == "whole")
                    c.penalty_scope = PenaltyScope::whole;
                else if (s == "think_only")
                    c.penalty_scope = PenaltyScope::think_only;
                else
                    throw ConfigError("sampler: unknown penalty_scope '" + s + "'");
            } else
                throw ConfigError("sampler: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("sampler: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    const double lz = mx + std::log(z);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
    return out;
}

std::vector<double> apply_presence_penalty(std::span<const double> logits, const TokenHistory& history,
                                           double penalty) {
    std::vector<double> out(logits.begin(), logits.end());
    if (penalty == 0.0) return out;
    for (int id : history)
        if (id >= 0 && static_cast<std::size_t>(id) < out.size()) out[id] -= penalty;
    return out;
}

namespace {

void check_logits(std::span<const double> logits) {
    if (logits.empty()) throw InputError("sampler: empty logits");
    for (double v : logits)
        if (!std::isfinite(v)) throw InputError("sampler: non-finite logit");
}

}  // namespace

NucleusSupport nucleus_support(std::span<const double> logits, const SamplerConfig& cfg,
                               const TokenHistory& history) {
    check_logits(logits);
    if (cfg.greedy()) throw ContractError("nucleus_support: temperature 0 has no sampling distribution");
    auto z = apply_presence_penalty(logits, history, cfg.presence_penalty);
    for (auto& v : z) v /= cfg.temperature;
    const auto lp = log_softmax(z);

    std::vector<int> order(z.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lp[a] > lp[b]; });

    NucleusSupport s;
    double mass = 0.0;
    for (int id : order) {
        const double p = std::exp(lp[id]);
        s.ids.push_back(id);
        s.probs.push_back(p);
        mass += p;
        if (mass >= cfg.top_p) break;
    }
    for (auto& p : s.probs) p /= mass;
    return s;
}

int sample_token(std::span<const double> logits, const SamplerConfig& cfg, const TokenHistory& history,
                 RngStream& rng) {
    check_logits(logits);
    if (cfg.greedy()) {
        const auto z = apply_presence_penalty(logits, history, cfg.presence_penalty);
        return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    const auto s = nucleus_support(logits, cfg, history);
    return s.ids[rng.categorical(s.probs)];
}

}  // namespace hlab::inference
