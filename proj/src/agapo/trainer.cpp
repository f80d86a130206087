#include "hlab/agapo/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "hlab/agapo/advantage.hpp"
#include "hlab/agapo/loss.hpp"

namespace hlab::agapo {

using inference::GenerationTrace;

const char* to_string(Algo a) { return a == Algo::agapo ? "agapo" : "grpo"; }

Algo algo_from_string(const std::string& s) {
    if (s == "agapo") return Algo::agapo;
    if (s == "grpo") return Algo::grpo;
    throw ConfigError("unknown algorithm '" + s + "'");
}

inference::SamplerConfig default_rollout_sampler() {
    inference::SamplerConfig s;
    s.temperature = 1.0;
    s.top_p = 1.0;
    s.presence_penalty = 0.0;
    s.max_new_tokens = 16;
    return s;
}

void AgapoConfig::validate() const {
    if (!(beta >= 0.0)) throw ConfigError("agapo: beta must be >= 0");
    if (group_size < 2) throw ConfigError("agapo: group_size must be >= 2");
    if (batch_groups < 1) throw ConfigError("agapo: batch_groups must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("agapo: lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("agapo: momentum must lie in [0, 1)");
    if (all_incorrect_penalty > 0.0) throw ConfigError("agapo: all_incorrect_penalty must be <= 0");
    if (!(std_eps > 0.0)) throw ConfigError("agapo: std_eps must be > 0");
    if (!(clip_eps > 0.0)) throw ConfigError("agapo: clip_eps must be > 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("agapo: grad_clip must be >= 0");
    if (budget && *budget == 0) throw ConfigError("agapo: budget must be >= 1");
    rollout.validate();
}

nlohmann::json to_json(const AgapoConfig& c) {
    nlohmann::json j = {{"algo", to_string(c.algo)},
                        {"beta", c.beta},
                        {"group_size", c.group_size},
                        {"batch_groups", c.batch_groups},
                        {"lr", c.lr},
                        {"momentum", c.momentum},
                        {"all_incorrect_penalty", c.all_incorrect_penalty},
                        {"std_eps", c.std_eps},
                        {"length_normalize", c.length_normalize},
                        {"clip_eps", c.clip_eps},
                        {"grad_clip", c.grad_clip},
                        {"rollout", inference::to_json(c.rollout)},
                        {"mode", inference::to_string(c.mode)},
                        {"seed", c.seed}};
    j["budget"] = c.budget ? nlohmann::json(*c.budget) : nlohmann::json(nullptr);
    return j;
}

AgapoConfig agapo_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("agapo config must be an object");
    AgapoConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            const auto& v = *it;
            if (k == "algo") c.algo = algo_from_string(v.get<std::string>());
            else if (k == "beta") c.beta = v.get<double>();
            else if (k == "group_size") c.group_size = v.get<std::size_t>();
            else if (k == "batch_groups") c.batch_groups = v.get<std::size_t>();
            else if (k == "lr") c.lr = v.get<double>();
            else if (k == "momentum") c.momentum = v.get<double>();
            else if (k == "all_incorrect_penalty") c.all_incorrect_penalty = v.get<double>();
            else if (k == "std_eps") c.std_eps = v.get<double>();
            else if (k == "length_normalize") c.length_normalize = v.get<bool>();
            else if (k == "clip_eps") c.clip_eps = v.get<double>();
            else if (k == "grad_clip") c.grad_clip = v.get<double>();
            else if (k == "rollout") c.rollout = inference::sampler_config_from_json(v);
            else if (k == "mode") c.mode = inference::mode_from_string(v.get<std::string>());
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "budget") c.budget = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
            else throw ConfigError("agapo: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("agapo: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<int> encode_prompt(const model::Tokenizer& tok, const Task& task) {
    std::vector<int> ids{model::Tokenizer::kBos};
    const auto body = tok.encode(task.prompt);
    ids.insert(ids.end(), body.begin(), body.end());
    return ids;
}

Rollout rollout_once(const inference::TokenPredictor& predictor, const model::Tokenizer& tok, const Task& task,
                     const inference::SamplerConfig& sampler, const inference::GenerateOptions& gen, RngStream& rng) {
    Rollout r;
    r.prompt = encode_prompt(tok, task);
    if (r.prompt.size() >= predictor.max_context())
        throw LengthError("task '" + task.id + "': prompt leaves no room for a response");
    try {
        r.trace = inference::generate(predictor, r.prompt, sampler, gen, rng);
    } catch (const inference::TruncationError& e) {
        r.trace = e.partial();
    }
    const auto res = verify(task, tok.decode(r.trace.answer_ids));
    r.reward = res.reward;
    r.diagnostic = res.diagnostic;
    return r;
}

PrefilterReport prefilter(const std::vector<Task>& tasks, const inference::TokenPredictor& predictor,
                          const model::Tokenizer& tok, const inference::SamplerConfig& sampler,
                          const inference::GenerateOptions& gen, std::uint64_t seed, std::size_t n) {
    if (n < 1) throw ConfigError("prefilter: need at least one sample per task");
    PrefilterReport rep;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        std::size_t correct = 0;
        try {
            for (std::size_t k = 0; k < n; ++k) {
                RngStream rng(seed, t * n + k);
                if (rollout_once(predictor, tok, tasks[t], sampler, gen, rng).reward >= 1.0) ++correct;
            }
        } catch (const std::exception& e) {
            rep.warnings.push_back("task '" + tasks[t].id + "' kept after generation failure: " + e.what());
            rep.correct_counts.push_back(correct);
            rep.kept.push_back(tasks[t]);
            continue;
        }
        rep.correct_counts.push_back(correct);
        if (correct == n)
            ++rep.dropped;
        else
            rep.kept.push_back(tasks[t]);
    }
    return rep;
}

nlohmann::json StepMetrics::to_json() const {
    return {{"step", step},
            {"mean_reward", mean_reward},
            {"loss", loss},
            {"kl", kl},
            {"frac_all_incorrect", frac_all_incorrect},
            {"grad_norm", grad_norm},
            {"groups_kept", groups_kept},
            {"skipped", skipped}};
}

Trainer::Trainer(model::Model& policy, const model::Model* ref, std::vector<Task> pool, AgapoConfig cfg,
                 const model::Tokenizer& tok)
    : policy_(policy),
      ref_(ref),
      pool_(std::move(pool)),
      cfg_(std::move(cfg)),
      tok_(tok),
      params_(policy.parameters()),
      opt_(params_, cfg_.lr, cfg_.momentum) {
    cfg_.validate();
    if (pool_.empty()) throw ConfigError("agapo: empty task pool");
    if (cfg_.beta > 0.0 && !ref_) throw ConfigError("agapo: beta > 0 requires a reference model");
}

namespace {

std::uint64_t stream_key(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

}  // namespace

StepMetrics Trainer::step() {
    StepMetrics m;
    m.step = step_;
    const std::size_t g = cfg_.group_size, b = cfg_.batch_groups;

    RngStream pick(cfg_.seed, stream_key(0x7a5c, step_, 0));
    inference::ModelPredictor predictor(policy_);
    inference::GenerateOptions gen;
    gen.mode = cfg_.mode;
    gen.budget = cfg_.budget;

    std::vector<std::vector<Rollout>> groups(b);
    double reward_sum = 0.0;
    std::size_t all_incorrect = 0;
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < b; ++j) {
        const auto& task = pool_[pick.below(pool_.size())];
        bool all_right = true, all_wrong = true;
        for (std::size_t i = 0; i < g; ++i) {
            RngStream rng(cfg_.seed, stream_key(step_, j, i));
            groups[j].push_back(rollout_once(predictor, tok_, task, cfg_.rollout, gen, rng));
            const double r = groups[j].back().reward;
            reward_sum += r;
            all_right = all_right && r >= 1.0;
            all_wrong = all_wrong && r == 0.0;
        }
        all_incorrect += all_wrong;
        if (!all_right) kept.push_back(j);
    }
    m.mean_reward = reward_sum / static_cast<double>(b * g);
    m.frac_all_incorrect = static_cast<double>(all_incorrect) / static_cast<double>(b);
    m.groups_kept = kept.size();
    ++step_;
    if (kept.empty()) {
        m.skipped = true;
        return m;
    }

    std::vector<double> adv;
    for (std::size_t j : kept) {
        std::vector<double> r;
        for (const auto& ro : groups[j]) r.push_back(ro.reward);
        const auto a = cfg_.algo == Algo::agapo ? loo_advantage(r, cfg_.all_incorrect_penalty)
                                                : group_normalize(r, cfg_.std_eps);
        adv.insert(adv.end(), a.begin(), a.end());
    }
    if (cfg_.algo == Algo::agapo) adv = global_normalize(adv, cfg_.std_eps);

    std::vector<ResponseTerm> terms;
    for (std::size_t j : kept)
        for (const auto& ro : groups[j])
            terms.push_back(make_response_term(policy_, ref_, ro.prompt, ro.trace.generated, ro.trace.sampled,
                                               ro.trace.logprobs));

    Tensor loss = cfg_.algo == Algo::agapo
                      ? agapo_objective(terms, adv, g, {.beta = cfg_.beta, .length_normalize = cfg_.length_normalize})
                      : grpo_objective(terms, adv, g, {.clip_eps = cfg_.clip_eps, .beta = cfg_.beta});
    opt_.zero_grad();
    backward(loss);
    m.loss = loss.item();
    if (cfg_.grad_clip > 0.0) {
        m.grad_norm = clip_grad_norm(params_, cfg_.grad_clip);
    } else {
        double sq = 0.0;
        for (const auto& p : params_)
            for (double v : p.grad()) sq += v * v;
        m.grad_norm = std::sqrt(sq);
    }
    opt_.step();

    if (ref_) {
        double kl = 0.0;
        for (const auto& t : terms) kl += term_kl(t);
        m.kl = kl / static_cast<double>(terms.size());
    }
    return m;
}

}  // namespace hlab::agapo
