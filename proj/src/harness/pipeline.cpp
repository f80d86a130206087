#include "hlab/harness/pipeline.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <fstream>
#include <sstream>

#include "hlab/harness/metrics.hpp"
#include "hlab/harness/sweep.hpp"
#include "hlab/model/checkpoint.hpp"

namespace hlab::harness {

namespace fs = std::filesystem;
using Json = nlohmann::json;

StageFailure::StageFailure(PipelineStage stage, const std::string& what)
    : Error(std::string("stage '") + to_string(stage) + "' failed: " + what), stage_(stage) {}

const char* to_string(StageStatus s) { return s == StageStatus::ran ? "ran" : "up-to-date"; }

bool PipelineReport::up_to_date() const {
    for (const auto& s : stages)
        if (s.status != StageStatus::up_to_date) return false;
    return true;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

namespace {

std::string file_digest(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

void write_json(const fs::path& p, const Json& j) {
    std::ofstream os(p);
    if (!os) throw Error("cannot write " + p.string());
    os << j.dump(2) << '\n';
}

Json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot read " + p.string());
    return Json::parse(in, nullptr, false);
}

std::vector<agapo::Task> train_tasks(const RunConfig& cfg) {
    if (cfg.tasks.train_file) return agapo::read_tasks_jsonl(*cfg.tasks.train_file);
    RngStream rng(cfg.seed, 0x7a51);
    return gen_tasks(cfg.tasks.kind, cfg.tasks.n_train, rng, cfg.tasks.gen);
}

std::vector<agapo::Task> eval_tasks(const RunConfig& cfg) {
    if (cfg.tasks.eval_file) return agapo::read_tasks_jsonl(*cfg.tasks.eval_file);
    RngStream rng(cfg.seed, 0xe7a1);
    return gen_tasks(cfg.tasks.kind, cfg.tasks.n_eval, rng, cfg.tasks.gen);
}

double eval_accuracy(const model::Model& m, const std::vector<agapo::Task>& tasks, const RunConfig& cfg,
                     inference::Mode mode) {
    const auto& tok = model::default_tokenizer();
    inference::ModelPredictor pred(m);
    std::vector<std::vector<int>> prompts;
    for (const auto& t : tasks) prompts.push_back(agapo::encode_prompt(tok, t));
    inference::GenerateOptions gen;
    gen.mode = mode;
    const auto rep = inference::repeat_eval(pred, prompts, cfg.sampler, gen, cfg.eval_seeds,
                                            [&](std::size_t t, const inference::GenerationTrace& tr) {
                                                return agapo::verify(tasks[t], tok.decode(tr.answer_ids)).reward;
                                            });
    return rep.mean_accuracy;
}

// Hash of everything every stage depends on.
std::string base_hash(const RunConfig& cfg) {
    auto j = to_json(cfg);
    Json base{{"version", j["version"]}, {"seed", j["seed"]},     {"model", j["model"]},
              {"sampler", j["sampler"]}, {"eval_seeds", j["eval_seeds"]}, {"tasks", j["tasks"]}};
    if (cfg.init_checkpoint) base["init_checkpoint"] = file_digest(*cfg.init_checkpoint);
    if (cfg.tasks.train_file) base["train_file"] = file_digest(*cfg.tasks.train_file);
    if (cfg.tasks.eval_file) base["eval_file"] = file_digest(*cfg.tasks.eval_file);
    return sha256_hex(base.dump());
}

struct StageContext {
    const RunConfig& cfg;
    fs::path dir;
    MetricsWriter& metrics;
    const char* name;
};

std::string run_sft(model::Model& m, StageContext& ctx) {
    const auto tasks = train_tasks(ctx.cfg);
    std::vector<SftExample> data;
    for (const auto& t : tasks) data.push_back(make_sft_example(t, demonstrate(t), ctx.cfg.sft.mode));
    auto sc = ctx.cfg.sft;
    sc.seed = ctx.cfg.seed;
    const auto steps = train_sft(m, data, sc, [&](std::size_t step, double loss) {
        ctx.metrics.append(step, ctx.name, "loss", loss, ctx.cfg.seed);
        return true;
    });
    const double acc = eval_accuracy(m, eval_tasks(ctx.cfg), ctx.cfg, sc.mode);
    ctx.metrics.append(steps, ctx.name, "eval_accuracy", acc, ctx.cfg.seed);
    return "steps " + std::to_string(steps) + ", eval accuracy " + Json(acc).dump();
}

std::string run_agapo(model::Model& m, StageContext& ctx) {
    const auto evals = eval_tasks(ctx.cfg);
    auto ac = ctx.cfg.agapo.algo;
    ac.seed = ctx.cfg.seed;
    const double before = eval_accuracy(m, evals, ctx.cfg, ac.mode);
    ctx.metrics.append(0, ctx.name, "eval_accuracy", before, ctx.cfg.seed);
    const auto ref = m.clone();
    agapo::Trainer trainer(m, &ref, train_tasks(ctx.cfg), ac);
    for (std::size_t s = 0; s < ctx.cfg.agapo.steps; ++s) {
        const auto mt = trainer.step().to_json();
        for (const auto& [k, v] : mt.items())
            if (k != "step" && v.is_number()) ctx.metrics.append(s, ctx.name, k, v.get<double>(), ctx.cfg.seed);
    }
    const double after = eval_accuracy(m, evals, ctx.cfg, ac.mode);
    ctx.metrics.append(ctx.cfg.agapo.steps, ctx.name, "eval_accuracy", after, ctx.cfg.seed);
    return "eval accuracy " + Json(before).dump() + " -> " + Json(after).dump();
}

std::string run_pairs(const model::Model& m, StageContext& ctx) {
    auto tasks = train_tasks(ctx.cfg);
    if (tasks.size() > ctx.cfg.pairs.n_prompts) tasks.resize(ctx.cfg.pairs.n_prompts);
    preference::BuildOptions bo;
    bo.n_per_prompt = ctx.cfg.pairs.n_per_prompt;
    bo.weights = ctx.cfg.pairs.stage == preference::Stage::stage1 ? preference::HybridRewardWeights::stage1()
                                                                  : preference::HybridRewardWeights::stage2();
    bo.score = ctx.cfg.pairs.score;
    bo.sampler = ctx.cfg.sampler;
    bo.gen.mode = ctx.cfg.sft.mode;
    bo.seed = ctx.cfg.seed;
    inference::ModelPredictor pred(m);
    const auto rep = preference::build_pairs(pred, model::default_tokenizer(), tasks, bo);
    preference::write_pairs_jsonl(rep.pairs, ctx.dir / "pairs.jsonl");
    ctx.metrics.append(0, ctx.name, "pairs", static_cast<double>(rep.pairs.size()), ctx.cfg.seed);
    ctx.metrics.append(0, ctx.name, "skipped", static_cast<double>(rep.skipped), ctx.cfg.seed);
    return std::to_string(rep.pairs.size()) + " pairs from " + std::to_string(rep.prompts) + " prompts";
}

std::string run_budget_sweep(const model::Model& m, StageContext& ctx) {
    inference::ModelPredictor pred(m);
    SweepOptions so;
    so.sampler = ctx.cfg.sampler;
    so.seeds = ctx.cfg.eval_seeds;
    const auto table = budget_sweep(pred, model::default_tokenizer(), eval_tasks(ctx.cfg),
                                    ctx.cfg.budget_sweep.budgets, so);
    write_json(ctx.dir / "sweep.json", table.to_json());
    std::string summary;
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
        const auto& c = table.columns[i];
        const std::string label = c.budget ? std::to_string(*c.budget) : "none";
        if (c.accuracy) ctx.metrics.append(i, ctx.name, "accuracy@" + label, *c.accuracy, ctx.cfg.seed);
        summary += (i ? ", " : "") + label + ": " + (c.accuracy ? Json(*c.accuracy).dump() : "unsupported");
    }
    return summary;
}

std::string run_niah(model::Model& m, StageContext& ctx) {
    auto opts = ctx.cfg.niah.options;
    opts.seed = ctx.cfg.seed;
    const auto rep = longctx::extension_schedule(m, ctx.cfg.niah.stages, opts,
                                                 [&](std::size_t, std::size_t step, double loss) {
                                                     ctx.metrics.append(step, ctx.name, "loss", loss, ctx.cfg.seed);
                                                 });
    write_json(ctx.dir / "report.json", rep.to_json());
    if (!rep.stages.empty()) write_json(ctx.dir / "grid.json", rep.stages.back().grid.to_json());
    std::size_t steps = 0;
    for (const auto& s : rep.stages) {
        steps += s.steps_run;
        ctx.metrics.append(steps, std::string(ctx.name) + "/grid", "grid_min@" + std::to_string(s.max_len),
                           s.grid.min().value_or(0.0), ctx.cfg.seed);
    }
    if (rep.halted) throw StageFailure(PipelineStage::niah, rep.reason);
    if (!rep.short_guard_ok)
        throw StageFailure(PipelineStage::niah, "initial-length accuracy dropped by " +
                                                     Json(rep.max_short_regression).dump() + " (slack " +
                                                     Json(opts.short_slack).dump() + ")");
    return "green through " + std::to_string(rep.stages.back().max_len) + " tokens";
}

}  // namespace

PipelineReport run_pipeline(const RunConfig& cfg, const fs::path& run_dir) {
    cfg.validate();
    fs::create_directories(run_dir);
    {
        auto j = to_json(cfg);
        j.erase("out_dir");
        write_json(run_dir / "config.json", j);
    }
    const auto cfg_json = to_json(cfg);
    std::string hash = base_hash(cfg);

    PipelineReport report;
    report.run_dir = run_dir;
    bool dirty = false;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto stage = cfg.stages[i];
        const char* name = to_string(stage);
        hash = sha256_hex(hash + name + cfg_json.at(name).dump());
        const fs::path dir = run_dir / name;
        const fs::path done = dir / "done.json";
        const fs::path ckpt = dir / "model.ckpt";

        if (!dirty && fs::exists(done) && fs::exists(ckpt)) {
            const auto marker = read_json_file(done);
            if (marker.is_object() && marker.value("hash", "") == hash) {
                report.stages.push_back({stage, StageStatus::up_to_date, 0.0, marker.value("summary", "")});
                continue;
            }
        }
        dirty = true;
        fs::remove(done);
        fs::create_directories(dir);

        const auto t0 = std::chrono::steady_clock::now();
        std::string summary;
        try {
            model::Model m = i > 0                ? model::load_checkpoint(run_dir / to_string(cfg.stages[i - 1]) / "model.ckpt")
                             : cfg.init_checkpoint ? model::load_checkpoint(*cfg.init_checkpoint)
                                                   : model::Model(cfg.model, cfg.seed);
            MetricsWriter metrics(dir / "metrics.jsonl");
            StageContext ctx{cfg, dir, metrics, name};
            switch (stage) {
                case PipelineStage::sft: summary = run_sft(m, ctx); break;
                case PipelineStage::agapo: summary = run_agapo(m, ctx); break;
                case PipelineStage::pairs: summary = run_pairs(m, ctx); break;
                case PipelineStage::budget_sweep: summary = run_budget_sweep(m, ctx); break;
                case PipelineStage::niah: summary = run_niah(m, ctx); break;
            }
            model::save_checkpoint(m, ckpt, Json{{"stage", name}, {"seed", cfg.seed}});
        } catch (const StageFailure&) {
            throw;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageFailure(stage, e.what());
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_json(dir / "timing.json", {{"seconds", seconds}});
        write_json(done, {{"hash", hash}, {"stage", name}, {"summary", summary}});
        report.stages.push_back({stage, StageStatus::ran, seconds, summary});
    }
    return report;
}

}  // namespace hlab::harness
