#include "hlab/harness/tasks.hpp"

#include "hlab/longctx/niah.hpp"
#include "hlab/numcore/errors.hpp"

namespace hlab::harness {

namespace {

using agapo::Category;
using agapo::Task;

const char* const kChainPrefix = "chain-";

Task arithmetic_task(int a, int b) {
    const std::string p = std::to_string(a) + "+" + std::to_string(b) + "=";
    return {"arith-" + std::to_string(a) + "-" + std::to_string(b), p, Category::math,
            {{"answer", std::to_string(a + b)}}};
}

Task copy_task(std::size_t i, RngStream& rng) {
    const auto& tok = model::default_tokenizer();
    const std::size_t len = 22 + rng.below(27);
    const auto c = longctx::make_niah_case(len, rng.uniform(), rng, tok);
    const std::vector<int> body(c.prompt_ids.begin() + 1, c.prompt_ids.end());
    return {"copy-" + std::to_string(i), tok.decode(body), Category::math, {{"answer", c.value}}};
}

Task constraint_task(std::size_t i, RngStream& rng) {
    const std::size_t n = 1 + rng.below(4);
    nlohmann::json cons = nlohmann::json::array({{{"type", "word_count"}, {"n", n}}});
    std::string prompt = "Write exactly " + std::to_string(n) + (n == 1 ? " word" : " words");
    switch (rng.below(3)) {
        case 0:
            cons.push_back({{"type", "lowercase"}});
            prompt += " in lowercase";
            break;
        case 1:
            cons.push_back({{"type", "no_digits"}});
            prompt += " with no digits";
            break;
        default: break;
    }
    return {"constraint-" + std::to_string(i), prompt + ".", Category::instruction_following,
            {{"constraints", cons}}};
}

Task chain_task(std::size_t i, std::size_t len, int mod, RngStream& rng) {
    std::string p = "(";
    int sum = 0;
    for (std::size_t k = 0; k < len; ++k) {
        const int d = static_cast<int>(rng.below(static_cast<std::uint64_t>(mod)));
        sum += d;
        p += (k ? "+" : "") + std::to_string(d);
    }
    p += ")%" + std::to_string(mod) + "=";
    return {kChainPrefix + std::to_string(i), p, Category::math, {{"answer", std::to_string(sum % mod)}}};
}

}  // namespace

const char* to_string(TaskKind k) {
    switch (k) {
        case TaskKind::arithmetic: return "arithmetic";
        case TaskKind::copy: return "copy";
        case TaskKind::constraint: return "constraint";
        case TaskKind::chain: return "chain";
    }
    return "?";
}

TaskKind task_kind_from_string(const std::string& s) {
    for (auto k : {TaskKind::arithmetic, TaskKind::copy, TaskKind::constraint, TaskKind::chain})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown task kind '" + s + "'");
}

std::vector<Task> gen_tasks(TaskKind kind, std::size_t n, RngStream& rng, const TaskGenOptions& opts) {
    if (n == 0) throw ConfigError("gen_tasks: n must be >= 1");
    if (opts.max_operand < 0) throw ConfigError("gen_tasks: max_operand must be >= 0");
    if (opts.chain_len < 2) throw ConfigError("gen_tasks: chain_len must be >= 2");
    if (opts.chain_mod < 2 || opts.chain_mod > 10) throw ConfigError("gen_tasks: chain_mod must lie in [2, 10]");
    std::vector<Task> out;
    out.reserve(n);
    const auto span = static_cast<std::uint64_t>(opts.max_operand) + 1;
    for (std::size_t i = 0; i < n; ++i) {
        switch (kind) {
            case TaskKind::arithmetic: {
                const auto a = static_cast<int>(rng.below(span));
                const auto b = static_cast<int>(rng.below(span));
                out.push_back(arithmetic_task(a, b));
                break;
            }
            case TaskKind::copy: out.push_back(copy_task(i, rng)); break;
            case TaskKind::constraint: out.push_back(constraint_task(i, rng)); break;
            case TaskKind::chain: out.push_back(chain_task(i, opts.chain_len, opts.chain_mod, rng)); break;
        }
    }
    return out;
}

std::vector<Task> arithmetic_table(int max_operand) {
    if (max_operand < 0) throw ConfigError("arithmetic_table: max_operand must be >= 0");
    std::vector<Task> out;
    for (int a = 0; a <= max_operand; ++a)
        for (int b = 0; b <= max_operand; ++b) out.push_back(arithmetic_task(a, b));
    return out;
}

Demonstration demonstrate(const Task& task) {
    Demonstration d;
    if (task.category == Category::instruction_following) {
        const auto& nouns = model::vocab::filler_nouns();
        std::size_t n = 1;
        for (const auto& c : task.verifier_spec.at("constraints"))
            if (c.at("type") == "word_count") n = c.at("n").get<std::size_t>();
        for (std::size_t i = 0; i < n; ++i) d.answer += " " + nouns[i % nouns.size()];
        return d;
    }
    if (task.category != Category::math) throw ContractError("demonstrate: unsupported category");
    const auto answer = task.verifier_spec.at("answer").get<std::string>();
    // Values in the closed vocabulary tokenize as one word after a space.
    d.answer = model::default_tokenizer().word_id(" " + answer) >= 0 ? " " + answer : answer;
    if (task.id.rfind(kChainPrefix, 0) == 0) {
        const auto close = task.prompt.find(')');
        if (close == std::string::npos) throw InputError("demonstrate: malformed chain prompt");
        const int mod = std::stoi(task.prompt.substr(close + 2));
        int run = 0;
        for (char ch : task.prompt.substr(0, close))
            if (ch >= '0' && ch <= '9') {
                run = (run + (ch - '0')) % mod;
                d.think += " " + std::to_string(run);
            }
        d.think += "\n";
    }
    return d;
}

}  // namespace hlab::harness
