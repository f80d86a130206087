#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "hlab/agapo/trainer.hpp"
#include "hlab/harness/gradsuite.hpp"
#include "hlab/harness/pipeline.hpp"
#include "hlab/harness/plots.hpp"
#include "hlab/harness/sweep.hpp"
#include "hlab/longctx/niah.hpp"
#include "hlab/model/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hlab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

// Relative output paths live under $HLAB_OUT when it is set.
fs::path out_path(const std::string& p) {
    const char* root = std::getenv("HLAB_OUT");
    fs::path path(p);
    if (root && *root && path.is_relative()) return fs::path(root) / path;
    return path;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << text << '\n';
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            if constexpr (std::is_floating_point_v<T>) out.push_back(std::stod(item, &used));
            else out.push_back(static_cast<T>(std::stoull(item, &used)));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError(std::string("bad ") + what + " entry '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + " must not be empty");
    return out;
}

struct PipelineArgs {
    std::string config;
    std::optional<std::string> run_dir;
    std::string init;
    std::optional<std::uint64_t> seed;
};

void add_pipeline_args(CLI::App* app, PipelineArgs& a) {
    app->add_option("--config", a.config, "run config JSON")->required();
    app->add_option("--run-dir", a.run_dir, "run directory (default: out_dir of the config, else 'run')");
    app->add_option("--init", a.init, "initial checkpoint");
    app->add_option("--seed", a.seed, "run seed override");
}

harness::RunConfig stage_config(const PipelineArgs& a, harness::PipelineStage stage) {
    auto cfg = harness::load_run_config(a.config);
    cfg.stages = {stage};
    if (!a.init.empty()) cfg.init_checkpoint = a.init;
    if (a.seed) cfg.seed = *a.seed;
    return cfg;
}

fs::path run_dir_of(const PipelineArgs& a, const harness::RunConfig& cfg) {
    if (a.run_dir) return out_path(*a.run_dir);
    return out_path(cfg.out_dir.empty() ? "run" : cfg.out_dir);
}

void print_report(const harness::PipelineReport& rep) {
    for (const auto& s : rep.stages)
        std::cout << harness::to_string(s.stage) << ": " << harness::to_string(s.status) << " (" << s.seconds
                  << " s) " << s.summary << '\n';
    if (rep.up_to_date()) std::cout << "up-to-date\n";
    std::cout << "run dir: " << rep.run_dir.string() << '\n';
}

struct SamplerArgs {
    double temp = 0.6;
    double top_p = 0.95;
    double presence_penalty = 1.5;
    std::size_t max_new = 64;

    void add(CLI::App* app) {
        app->add_option("--temp", temp)->capture_default_str();
        app->add_option("--top-p", top_p)->capture_default_str();
        app->add_option("--presence-penalty", presence_penalty)->capture_default_str();
        app->add_option("--max-new", max_new, "generated token cap")->capture_default_str();
    }
    inference::SamplerConfig config() const {
        inference::SamplerConfig c;
        c.temperature = temp;
        c.top_p = top_p;
        c.presence_penalty = presence_penalty;
        c.max_new_tokens = max_new;
        c.validate();
        return c;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hybrid-attention reasoning model lab"};
    app.require_subcommand(1);

    PipelineArgs sft_a, agapo_a, pairs_a, run_a;
    auto* sft = app.add_subcommand("train-sft", "supervised fine-tuning stage");
    add_pipeline_args(sft, sft_a);

    auto* agapo_cmd = app.add_subcommand("train-agapo", "reasoning RL stage");
    add_pipeline_args(agapo_cmd, agapo_a);
    std::string algo;
    std::string tasks_file;
    agapo_cmd->add_option("--algo", algo)->check(CLI::IsMember({"agapo", "grpo"}));
    agapo_cmd->add_option("--tasks", tasks_file, "task pool JSON-lines")->check(CLI::ExistingFile);

    auto* pairs_cmd = app.add_subcommand("build-pairs", "preference pair construction");
    add_pipeline_args(pairs_cmd, pairs_a);
    int pair_stage = 0;
    std::optional<std::size_t> pair_n;
    std::string pairs_out;
    pairs_cmd->add_option("--stage", pair_stage)->check(CLI::IsMember({1, 2}));
    pairs_cmd->add_option("--n", pair_n, "responses per prompt");
    pairs_cmd->add_option("--out", pairs_out, "copy of pairs.jsonl");

    auto* run_cmd = app.add_subcommand("run-pipeline", "all stages listed in the config");
    add_pipeline_args(run_cmd, run_a);

    std::string gen_ckpt, gen_prompt, gen_mode = "non-reasoning", gen_out;
    std::optional<std::size_t> gen_budget;
    std::size_t gen_n = 1;
    std::uint64_t gen_seed = 0;
    SamplerArgs gen_s;
    auto* gen_cmd = app.add_subcommand("generate", "sample responses from a checkpoint");
    gen_cmd->add_option("--checkpoint", gen_ckpt)->required();
    gen_cmd->add_option("--prompt", gen_prompt)->required();
    gen_cmd->add_option("--mode", gen_mode)->check(CLI::IsMember({"reasoning", "non-reasoning"}));
    gen_cmd->add_option("--budget", gen_budget, "thinking token budget");
    gen_cmd->add_option("--n", gen_n)->capture_default_str();
    gen_cmd->add_option("--seed", gen_seed)->capture_default_str();
    gen_cmd->add_option("--out", gen_out, "trace JSON file (stdout when empty)");
    gen_s.add(gen_cmd);

    std::string niah_ckpt, niah_lengths = "128,256,512", niah_depths = "0,0.25,0.5,0.75,1", niah_out = "grid.json";
    std::size_t niah_m = 20;
    std::uint64_t niah_seed = 0;
    auto* niah_cmd = app.add_subcommand("eval-niah", "needle-in-a-haystack grid");
    niah_cmd->add_option("--checkpoint", niah_ckpt)->required();
    niah_cmd->add_option("--lengths", niah_lengths)->capture_default_str();
    niah_cmd->add_option("--depths", niah_depths)->capture_default_str();
    niah_cmd->add_option("--m", niah_m)->capture_default_str();
    niah_cmd->add_option("--seed", niah_seed)->capture_default_str();
    niah_cmd->add_option("--out", niah_out)->capture_default_str();

    std::string sw_ckpt, sw_budgets = "8,16,32,64", sw_kind = "chain", sw_tasks, sw_out = "sweep.json";
    std::size_t sw_n = 50;
    std::uint64_t sw_seed = 0;
    std::string sw_seeds = "1,2,3,4";
    SamplerArgs sw_s;
    auto* sw_cmd = app.add_subcommand("budget-sweep", "accuracy against thinking budget");
    sw_cmd->add_option("--checkpoint", sw_ckpt)->required();
    sw_cmd->add_option("--budgets", sw_budgets, "comma list; 'none' for unlimited")->capture_default_str();
    sw_cmd->add_option("--kind", sw_kind)->check(CLI::IsMember({"arithmetic", "copy", "constraint", "chain"}));
    sw_cmd->add_option("--tasks", sw_tasks, "task pool JSON-lines")->check(CLI::ExistingFile);
    sw_cmd->add_option("--n", sw_n, "generated tasks")->capture_default_str();
    sw_cmd->add_option("--seed", sw_seed, "task generation seed")->capture_default_str();
    sw_cmd->add_option("--eval-seeds", sw_seeds)->capture_default_str();
    sw_cmd->add_option("--out", sw_out)->capture_default_str();
    sw_s.add(sw_cmd);

    std::uint64_t gc_seed = 0;
    auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference gradient suite");
    gc_cmd->add_option("--seed", gc_seed)->capture_default_str();

    std::string plots_dir = "run";
    auto* plots_cmd = app.add_subcommand("export-plots", "CSV plot data for a run directory");
    plots_cmd->add_option("--run-dir", plots_dir)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        auto run_stage = [](const PipelineArgs& a, harness::RunConfig cfg) {
            const auto rep = harness::run_pipeline(cfg, run_dir_of(a, cfg));
            print_report(rep);
            return rep;
        };
        if (*sft) {
            run_stage(sft_a, stage_config(sft_a, harness::PipelineStage::sft));
        } else if (*agapo_cmd) {
            auto cfg = stage_config(agapo_a, harness::PipelineStage::agapo);
            if (!algo.empty()) cfg.agapo.algo.algo = agapo::algo_from_string(algo);
            if (!tasks_file.empty()) cfg.tasks.train_file = tasks_file;
            run_stage(agapo_a, cfg);
        } else if (*pairs_cmd) {
            auto cfg = stage_config(pairs_a, harness::PipelineStage::pairs);
            if (pair_stage == 1) cfg.pairs.stage = preference::Stage::stage1;
            if (pair_stage == 2) cfg.pairs.stage = preference::Stage::stage2;
            if (pair_n) cfg.pairs.n_per_prompt = *pair_n;
            const auto rep = run_stage(pairs_a, cfg);
            if (!pairs_out.empty()) {
                const auto dst = out_path(pairs_out);
                if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
                fs::copy_file(rep.run_dir / "pairs" / "pairs.jsonl", dst, fs::copy_options::overwrite_existing);
            }
        } else if (*run_cmd) {
            auto cfg = harness::load_run_config(run_a.config);
            if (!run_a.init.empty()) cfg.init_checkpoint = run_a.init;
            if (run_a.seed) cfg.seed = *run_a.seed;
            run_stage(run_a, cfg);
        } else if (*gen_cmd) {
            const auto m = model::load_checkpoint(gen_ckpt);
            const auto& tok = model::default_tokenizer();
            inference::ModelPredictor pred(m);
            auto sc = gen_s.config();
            inference::GenerateOptions go;
            go.mode = inference::mode_from_string(gen_mode);
            go.budget = gen_budget;
            go.handoff_ids = tok.encode(inference::handoff_text());
            agapo::Task task;
            task.prompt = gen_prompt;
            const auto prompt = agapo::encode_prompt(tok, task);
            json traces = json::array();
            for (std::size_t i = 0; i < gen_n; ++i) {
                RngStream rng(gen_seed, i);
                traces.push_back(inference::to_json(inference::generate(pred, prompt, sc, go, rng), &tok));
            }
            if (gen_out.empty()) std::cout << traces.dump(2) << '\n';
            else write_text(out_path(gen_out), traces.dump(2));
        } else if (*niah_cmd) {
            const auto m = model::load_checkpoint(niah_ckpt);
            inference::ModelPredictor pred(m);
            const auto grid = longctx::eval_niah_grid(pred, parse_list<std::size_t>(niah_lengths, "length"),
                                                      parse_list<double>(niah_depths, "depth"), niah_m, niah_seed);
            write_text(out_path(niah_out), grid.to_json().dump(2));
            const auto mn = grid.min();
            std::cout << "grid min: " << (mn ? std::to_string(*mn) : std::string("n/a")) << '\n';
        } else if (*sw_cmd) {
            const auto m = model::load_checkpoint(sw_ckpt);
            inference::ModelPredictor pred(m);
            std::vector<agapo::Task> tasks;
            if (!sw_tasks.empty()) {
                tasks = agapo::read_tasks_jsonl(sw_tasks);
            } else {
                RngStream rng(sw_seed, 0xe7a1);
                tasks = harness::gen_tasks(harness::task_kind_from_string(sw_kind), sw_n, rng);
            }
            std::vector<std::optional<std::size_t>> budgets;
            std::stringstream ss(sw_budgets);
            for (std::string item; std::getline(ss, item, ',');)
                budgets.push_back(item == "none" ? std::nullopt
                                                 : std::optional<std::size_t>(parse_list<std::size_t>(item, "budget")[0]));
            harness::SweepOptions so;
            so.sampler = sw_s.config();
            so.seeds = parse_list<std::uint64_t>(sw_seeds, "eval seed");
            const auto table = harness::budget_sweep(pred, model::default_tokenizer(), tasks, budgets, so);
            write_text(out_path(sw_out), table.to_json().dump(2));
            for (const auto& c : table.columns)
                std::cout << (c.budget ? std::to_string(*c.budget) : std::string("none")) << ": "
                          << (c.accuracy ? std::to_string(*c.accuracy) : std::string("unsupported")) << '\n';
        } else if (*gc_cmd) {
            GradCheckOptions o;
            o.h = 1e-5;
            o.tol = 1e-4;
            bool ok = true;
            for (const auto& e : harness::run_grad_suite(gc_seed, o)) {
                std::cout << (e.report.passed ? "ok   " : "FAIL ") << e.name << " max_rel_err=" << e.report.max_rel_err
                          << " entries=" << e.report.entries_checked << '\n';
                ok = ok && e.report.passed;
            }
            return ok ? 0 : kExitStage;
        } else if (*plots_cmd) {
            for (const auto& p : harness::export_plot_data(out_path(plots_dir))) std::cout << p.string() << '\n';
        }
    } catch (const harness::StageFailure& e) {
        std::cerr << e.what() << '\n';
        return kExitStage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const LoadError& e) {
        std::cerr << "load error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    }
    return 0;
}
