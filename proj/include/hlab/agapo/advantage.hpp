#pragma once

#include <span>
#include <vector>

namespace hlab::agapo {

inline constexpr double kDefaultStdEps = 1e-8;

// A_i = r_i - (1/(G-1)) * sum_{j != i} r_j. When every reward is zero and
// all_incorrect_penalty is nonzero, each response gets the penalty instead.
std::vector<double> loo_advantage(std::span<const double> rewards, double all_incorrect_penalty = 0.0);

// (a - mean) / max(std, std_eps) over the whole batch, population std.
std::vector<double> global_normalize(std::span<const double> a, double std_eps = kDefaultStdEps);

// Group-relative advantage of the clipped baseline: (r - mean_g) / max(std_g, std_eps).
std::vector<double> group_normalize(std::span<const double> rewards, double std_eps = kDefaultStdEps);

// Sum over positions of KL(policy || ref) between full next-token
// distributions, given as per-position log-probability rows.
double seq_cumulative_kl(const std::vector<std::vector<double>>& policy_logprobs,
                         const std::vector<std::vector<double>>& ref_logprobs);

}  // namespace hlab::agapo
