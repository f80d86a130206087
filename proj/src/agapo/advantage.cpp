#include "hlab/agapo/advantage.hpp"

#include <algorithm>
#include <cmath>

#include "hlab/numcore/errors.hpp"

namespace hlab::agapo {

namespace {

void mean_var(std::span<const double> a, double& mu, double& var) {
    const double n = static_cast<double>(a.size());
    mu = 0.0;
    for (double v : a) mu += v;
    mu /= n;
    var = 0.0;
    for (double v : a) var += (v - mu) * (v - mu);
    var /= n;
}

// 1 / max(std, eps), taken as sqrt(1 / var) so unit-friendly variances stay exact.
double inv_scale(double var, double std_eps) {
    return std::sqrt(var) > std_eps ? std::sqrt(1.0 / var) : 1.0 / std_eps;
}

}  // namespace

std::vector<double> loo_advantage(std::span<const double> rewards, double all_incorrect_penalty) {
    const std::size_t g = rewards.size();
    if (g < 2) throw ConfigError("loo_advantage: group size must be >= 2");
    if (all_incorrect_penalty > 0.0) throw ConfigError("loo_advantage: all_incorrect_penalty must be <= 0");
    double total = 0.0;
    for (double r : rewards) total += r;
    if (total == 0.0 && all_incorrect_penalty != 0.0) return std::vector<double>(g, all_incorrect_penalty);
    std::vector<double> a(g);
    const double inv = 1.0 / static_cast<double>(g - 1);
    for (std::size_t i = 0; i < g; ++i) a[i] = rewards[i] - (total - rewards[i]) * inv;
    return a;
}

std::vector<double> global_normalize(std::span<const double> a, double std_eps) {
    if (a.size() < 2) throw ContractError("global_normalize: need at least 2 advantages");
    if (!(std_eps > 0.0)) throw ConfigError("global_normalize: std_eps must be > 0");
    double mu = 0.0, var = 0.0;
    mean_var(a, mu, var);
    const double k = inv_scale(var, std_eps);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] - mu) * k;
    return out;
}

std::vector<double> group_normalize(std::span<const double> rewards, double std_eps) {
    if (rewards.size() < 2) throw ConfigError("group_normalize: group size must be >= 2");
    double mu = 0.0, var = 0.0;
    mean_var(rewards, mu, var);
    const double k = inv_scale(var, std_eps);
    std::vector<double> out(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mu) * k;
    return out;
}

double seq_cumulative_kl(const std::vector<std::vector<double>>& policy_logprobs,
                         const std::vector<std::vector<double>>& ref_logprobs) {
    if (policy_logprobs.size() != ref_logprobs.size())
        throw ContractError("seq_cumulative_kl: policy has " + std::to_string(policy_logprobs.size()) +
                            " positions, reference has " + std::to_string(ref_logprobs.size()));
    double total = 0.0;
    for (std::size_t t = 0; t < policy_logprobs.size(); ++t) {
        const auto& p = policy_logprobs[t];
        const auto& q = ref_logprobs[t];
        if (p.size() != q.size()) throw ContractError("seq_cumulative_kl: vocabulary size differs at position " +
                                                      std::to_string(t));
        for (std::size_t v = 0; v < p.size(); ++v) {
            const double pv = std::exp(p[v]);
            if (pv > 0.0) total += pv * (p[v] - q[v]);
        }
    }
    return total;
}

}  // namespace hlab::agapo
