#include "hlab/harness/config.hpp"

#include <fstream>
#include <functional>

#include "hlab/model/tokenizer.hpp"

namespace hlab::harness {

namespace {

using Json = nlohmann::json;

// Calls handler(key, value) for each entry; handler returns false for unknown keys.
void for_each_key(const Json& j, const std::string& section,
                  const std::function<bool(const std::string&, const Json&)>& handler) {
    if (!j.is_object()) throw ConfigError(section + " must be an object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!handler(it.key(), *it)) throw ConfigError(section + ": unknown key '" + it.key() + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(section + ": " + e.what());
    }
}

Json budgets_json(const std::vector<std::optional<std::size_t>>& budgets) {
    Json a = Json::array();
    for (const auto& b : budgets) a.push_back(b ? Json(*b) : Json(nullptr));
    return a;
}

const char* to_string_stage(preference::Stage s) { return s == preference::Stage::stage1 ? "stage1" : "stage2"; }

}  // namespace

const char* to_string(PipelineStage s) {
    switch (s) {
        case PipelineStage::sft: return "sft";
        case PipelineStage::agapo: return "agapo";
        case PipelineStage::pairs: return "pairs";
        case PipelineStage::budget_sweep: return "budget_sweep";
        case PipelineStage::niah: return "niah";
    }
    return "?";
}

PipelineStage pipeline_stage_from_string(const std::string& s) {
    for (auto p : {PipelineStage::sft, PipelineStage::agapo, PipelineStage::pairs, PipelineStage::budget_sweep,
                   PipelineStage::niah})
        if (s == to_string(p)) return p;
    throw ConfigError("unknown pipeline stage '" + s + "'");
}

void RunConfig::validate() const {
    if (version != kRunConfigVersion)
        throw ConfigError("run config version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kRunConfigVersion) + ")");
    model.validate();
    if (model.vocab_size != model::default_tokenizer().size())
        throw ConfigError("run config: model vocab_size " + std::to_string(model.vocab_size) +
                          " must equal the tokenizer size " + std::to_string(model::default_tokenizer().size()));
    sampler.validate();
    sft.validate();
    agapo.algo.validate();
    if (eval_seeds.empty()) throw ConfigError("run config: eval_seeds must not be empty");
    if (tasks.n_train == 0 || tasks.n_eval == 0) throw ConfigError("run config: task counts must be >= 1");
    if (stages.empty()) throw ConfigError("run config: no stages");
    for (std::size_t i = 1; i < stages.size(); ++i)
        if (static_cast<int>(stages[i]) <= static_cast<int>(stages[i - 1]))
            throw ConfigError(std::string("run config: stage '") + to_string(stages[i]) + "' must come after '" +
                              to_string(stages[i - 1]) + "' in the order sft, agapo, pairs, budget_sweep, niah");
    for (const auto* f : {&tasks.train_file, &tasks.eval_file})
        if (*f && !std::filesystem::exists(**f))
            throw ConfigError("run config: task file '" + **f + "' does not exist");
    if (init_checkpoint && !std::filesystem::exists(*init_checkpoint))
        throw ConfigError("run config: init_checkpoint '" + *init_checkpoint + "' does not exist");
    if (pairs.n_prompts == 0 || pairs.n_per_prompt < 2)
        throw ConfigError("run config: pairs needs n_prompts >= 1 and n_per_prompt >= 2");
    if (pairs.score.len_max == 0) throw ConfigError("run config: pairs len_max must be >= 1");
    if (budget_sweep.budgets.empty()) throw ConfigError("run config: budget_sweep needs at least one budget");
    for (const auto& b : budget_sweep.budgets)
        if (b && *b == 0) throw ConfigError("run config: budgets must be >= 1");
    if (niah.stages.empty()) throw ConfigError("run config: niah needs at least one stage");
}

Json to_json(const RunConfig& c) {
    Json stages = Json::array();
    for (auto s : c.stages) stages.push_back(to_string(s));
    Json niah_stages = Json::array();
    for (const auto& s : c.niah.stages) niah_stages.push_back({{"max_len", s.max_len}, {"steps", s.steps}});
    const auto& o = c.niah.options;
    return {{"version", c.version},
            {"seed", c.seed},
            {"out_dir", c.out_dir},
            {"init_checkpoint", c.init_checkpoint ? Json(*c.init_checkpoint) : Json(nullptr)},
            {"model", model::to_json(c.model)},
            {"sampler", inference::to_json(c.sampler)},
            {"eval_seeds", c.eval_seeds},
            {"tasks",
             {{"kind", to_string(c.tasks.kind)},
              {"n_train", c.tasks.n_train},
              {"n_eval", c.tasks.n_eval},
              {"max_operand", c.tasks.gen.max_operand},
              {"chain_len", c.tasks.gen.chain_len},
              {"chain_mod", c.tasks.gen.chain_mod},
              {"train_file", c.tasks.train_file ? Json(*c.tasks.train_file) : Json(nullptr)},
              {"eval_file", c.tasks.eval_file ? Json(*c.tasks.eval_file) : Json(nullptr)}}},
            {"stages", stages},
            {"sft", to_json(c.sft)},
            {"agapo", {{"algo", agapo::to_json(c.agapo.algo)}, {"steps", c.agapo.steps}}},
            {"pairs",
             {{"n_prompts", c.pairs.n_prompts},
              {"n_per_prompt", c.pairs.n_per_prompt},
              {"stage", to_string_stage(c.pairs.stage)},
              {"len_max", c.pairs.score.len_max},
              {"target_language", c.pairs.score.target_language}}},
            {"budget_sweep", {{"budgets", budgets_json(c.budget_sweep.budgets)}}},
            {"niah",
             {{"stages", niah_stages},
              {"green_threshold", o.green_threshold},
              {"depths", o.depths},
              {"m", o.m},
              {"max_retries", o.max_retries},
              {"mix_fraction", o.mix_fraction},
              {"min_len", o.min_len},
              {"lr", o.lr},
              {"batch", o.batch},
              {"short_slack", o.short_slack}}}};
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    bool have_version = false;
    for_each_key(j, "run config", [&](const std::string& k, const Json& v) {
        if (k == "version") {
            c.version = v.get<int>();
            have_version = true;
        } else if (k == "seed") {
            c.seed = v.get<std::uint64_t>();
        } else if (k == "out_dir") {
            c.out_dir = v.get<std::string>();
        } else if (k == "init_checkpoint") {
            c.init_checkpoint = v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>());
        } else if (k == "model") {
            c.model = model::model_config_from_json(v);
        } else if (k == "sampler") {
            c.sampler = inference::sampler_config_from_json(v);
        } else if (k == "eval_seeds") {
            c.eval_seeds = v.get<std::vector<std::uint64_t>>();
        } else if (k == "tasks") {
            for_each_key(v, "tasks", [&](const std::string& k2, const Json& v2) {
                if (k2 == "kind") c.tasks.kind = task_kind_from_string(v2.get<std::string>());
                else if (k2 == "n_train") c.tasks.n_train = v2.get<std::size_t>();
                else if (k2 == "n_eval") c.tasks.n_eval = v2.get<std::size_t>();
                else if (k2 == "max_operand") c.tasks.gen.max_operand = v2.get<int>();
                else if (k2 == "chain_len") c.tasks.gen.chain_len = v2.get<std::size_t>();
                else if (k2 == "chain_mod") c.tasks.gen.chain_mod = v2.get<int>();
                else if (k2 == "train_file")
                    c.tasks.train_file =
                        v2.is_null() ? std::nullopt : std::optional<std::string>(v2.get<std::string>());
                else if (k2 == "eval_file")
                    c.tasks.eval_file =
                        v2.is_null() ? std::nullopt : std::optional<std::string>(v2.get<std::string>());
                else return false;
                return true;
            });
        } else if (k == "stages") {
            c.stages.clear();
            for (const auto& s : v) c.stages.push_back(pipeline_stage_from_string(s.get<std::string>()));
        } else if (k == "sft") {
            c.sft = sft_config_from_json(v);
        } else if (k == "agapo") {
            for_each_key(v, "agapo", [&](const std::string& k2, const Json& v2) {
                if (k2 == "algo") c.agapo.algo = agapo::agapo_config_from_json(v2);
                else if (k2 == "steps") c.agapo.steps = v2.get<std::size_t>();
                else return false;
                return true;
            });
        } else if (k == "pairs") {
            for_each_key(v, "pairs", [&](const std::string& k2, const Json& v2) {
                if (k2 == "n_prompts") c.pairs.n_prompts = v2.get<std::size_t>();
                else if (k2 == "n_per_prompt") c.pairs.n_per_prompt = v2.get<std::size_t>();
                else if (k2 == "len_max") c.pairs.score.len_max = v2.get<std::size_t>();
                else if (k2 == "target_language") c.pairs.score.target_language = v2.get<std::string>();
                else if (k2 == "stage") {
                    const auto s = v2.get<std::string>();
                    if (s == "stage1") c.pairs.stage = preference::Stage::stage1;
                    else if (s == "stage2") c.pairs.stage = preference::Stage::stage2;
                    else throw ConfigError("pairs: stage must be 'stage1' or 'stage2'");
                } else return false;
                return true;
            });
        } else if (k == "budget_sweep") {
            for_each_key(v, "budget_sweep", [&](const std::string& k2, const Json& v2) {
                if (k2 != "budgets") return false;
                c.budget_sweep.budgets.clear();
                for (const auto& b : v2)
                    c.budget_sweep.budgets.push_back(b.is_null() ? std::nullopt
                                                                 : std::optional<std::size_t>(b.get<std::size_t>()));
                return true;
            });
        } else if (k == "niah") {
            auto& o = c.niah.options;
            for_each_key(v, "niah", [&](const std::string& k2, const Json& v2) {
                if (k2 == "stages") {
                    c.niah.stages.clear();
                    for (const auto& s : v2)
                        c.niah.stages.push_back({s.at("max_len").get<std::size_t>(), s.at("steps").get<std::size_t>()});
                } else if (k2 == "green_threshold") o.green_threshold = v2.get<double>();
                else if (k2 == "depths") o.depths = v2.get<std::vector<double>>();
                else if (k2 == "m") o.m = v2.get<std::size_t>();
                else if (k2 == "max_retries") o.max_retries = v2.get<std::size_t>();
                else if (k2 == "mix_fraction") o.mix_fraction = v2.get<double>();
                else if (k2 == "min_len") o.min_len = v2.get<std::size_t>();
                else if (k2 == "lr") o.lr = v2.get<double>();
                else if (k2 == "batch") o.batch = v2.get<std::size_t>();
                else if (k2 == "short_slack") o.short_slack = v2.get<double>();
                else return false;
                return true;
            });
        } else {
            return false;
        }
        return true;
    });
    if (!have_version) throw ConfigError("run config: missing 'version'");
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read run config " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace hlab::harness
