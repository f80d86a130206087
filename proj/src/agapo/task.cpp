#include "hlab/agapo/task.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hlab/numcore/errors.hpp"

namespace hlab::agapo {

const char* to_string(Category c) {
    switch (c) {
        case Category::math: return "math";
        case Category::code: return "code";
        case Category::science: return "science";
        case Category::instruction_following: return "instruction_following";
    }
    return "?";
}

Category category_from_string(const std::string& s) {
    if (s == "math") return Category::math;
    if (s == "code") return Category::code;
    if (s == "science") return Category::science;
    if (s == "instruction_following") return Category::instruction_following;
    throw ConfigError("unknown task category '" + s + "'");
}

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string normalize(std::string_view s) {
    std::string t = lower(trim(s));
    while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.pop_back();
    std::string out;
    bool space = false;
    for (char c : t) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

std::vector<std::string> words_of(std::string_view s) {
    std::vector<std::string> w;
    std::istringstream is{std::string(s)};
    for (std::string tok; is >> tok;) w.push_back(tok);
    return w;
}

const std::vector<std::string>& constraint_types() {
    static const std::vector<std::string> v = {"word_count", "min_words", "max_words", "contains",
                                               "starts_with", "ends_with", "lowercase", "no_digits"};
    return v;
}

bool check_constraint(const nlohmann::json& c, const std::string& text, std::string& why) {
    const auto type = c.at("type").get<std::string>();
    const auto n_words = words_of(text).size();
    const auto t = trim(text);
    if (type == "word_count") {
        const auto n = c.at("n").get<std::size_t>();
        why = "expected " + std::to_string(n) + " words, got " + std::to_string(n_words);
        return n_words == n;
    }
    if (type == "min_words") {
        why = "too few words";
        return n_words >= c.at("n").get<std::size_t>();
    }
    if (type == "max_words") {
        why = "too many words";
        return n_words <= c.at("n").get<std::size_t>();
    }
    if (type == "contains") {
        const auto s = c.at("text").get<std::string>();
        why = "missing '" + s + "'";
        return text.find(s) != std::string::npos;
    }
    if (type == "starts_with") {
        const auto s = c.at("text").get<std::string>();
        why = "does not start with '" + s + "'";
        return t.rfind(s, 0) == 0;
    }
    if (type == "ends_with") {
        const auto s = c.at("text").get<std::string>();
        why = "does not end with '" + s + "'";
        return t.size() >= s.size() && t.compare(t.size() - s.size(), s.size(), s) == 0;
    }
    if (type == "lowercase") {
        why = "contains uppercase letters";
        return std::none_of(text.begin(), text.end(), [](char ch) { return std::isupper(static_cast<unsigned char>(ch)); });
    }
    if (type == "no_digits") {
        why = "contains digits";
        return std::none_of(text.begin(), text.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); });
    }
    throw ConfigError("unknown constraint type '" + type + "'");
}

// Recursive-descent evaluator for the toy code language.
class ExprParser {
   public:
    ExprParser(std::string_view s, std::int64_t x) : s_(s), x_(x) {}

    std::int64_t run() {
        const auto v = expr();
        skip();
        if (i_ != s_.size()) fail("unexpected '" + std::string(1, s_[i_]) + "'");
        return v;
    }

   private:
    [[noreturn]] void fail(const std::string& msg) {
        throw InputError("toy expr at offset " + std::to_string(i_) + ": " + msg);
    }
    void skip() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }
    bool eat(char c) {
        skip();
        if (i_ < s_.size() && s_[i_] == c) {
            ++i_;
            return true;
        }
        return false;
    }
    std::int64_t add(std::int64_t a, std::int64_t b) {
        std::int64_t r = 0;
        if (__builtin_add_overflow(a, b, &r)) fail("integer overflow");
        return r;
    }
    std::int64_t sub(std::int64_t a, std::int64_t b) {
        std::int64_t r = 0;
        if (__builtin_sub_overflow(a, b, &r)) fail("integer overflow");
        return r;
    }
    std::int64_t mul(std::int64_t a, std::int64_t b) {
        std::int64_t r = 0;
        if (__builtin_mul_overflow(a, b, &r)) fail("integer overflow");
        return r;
    }
    std::int64_t expr() {
        auto v = term();
        for (;;) {
            if (eat('+'))
                v = add(v, term());
            else if (eat('-'))
                v = sub(v, term());
            else
                return v;
        }
    }
    std::int64_t term() {
        auto v = factor();
        while (eat('*')) v = mul(v, factor());
        return v;
    }
    std::int64_t factor() {
        skip();
        if (i_ >= s_.size()) fail("unexpected end of input");
        const char c = s_[i_];
        if (c == '-') {
            ++i_;
            return sub(0, factor());
        }
        if (c == '(') {
            ++i_;
            const auto v = expr();
            if (!eat(')')) fail("expected ')'");
            return v;
        }
        if (c == 'x') {
            ++i_;
            return x_;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            std::int64_t v = 0;
            while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) {
                v = add(mul(v, 10), s_[i_] - '0');
                ++i_;
            }
            return v;
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    std::string_view s_;
    std::int64_t x_;
    std::size_t i_ = 0;
};

}  // namespace

std::int64_t eval_toy_expr(std::string_view src, std::int64_t x) { return ExprParser(src, x).run(); }

std::string extract_answer(std::string_view response) {
    const std::string low = lower(std::string(response));
    const auto pos = low.rfind("answer:");
    if (pos == std::string::npos) return trim(response);
    auto rest = response.substr(pos + 7);
    const auto nl = rest.find('\n');
    return trim(nl == std::string_view::npos ? rest : rest.substr(0, nl));
}

bool extract_final_code_block(std::string_view response, std::string& body) {
    const auto close = response.rfind("```");
    if (close == std::string_view::npos || close == 0) return false;
    const auto open = response.rfind("```", close - 1);
    if (open == std::string_view::npos) return false;
    auto inner = response.substr(open + 3, close - open - 3);
    const auto nl = inner.find('\n');
    if (nl != std::string_view::npos) {
        const auto tag = trim(inner.substr(0, nl));
        if (std::all_of(tag.begin(), tag.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); }))
            inner = inner.substr(nl + 1);
    }
    body = trim(inner);
    return true;
}

void validate_task(const Task& t) {
    const auto& s = t.verifier_spec;
    auto need = [&](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("task '" + t.id + "': " + what);
    };
    need(s.is_object(), "verifier_spec must be an object");
    switch (t.category) {
        case Category::math:
            need(s.contains("answer") && s["answer"].is_string(), "math spec needs a string 'answer'");
            break;
        case Category::science:
            need(s.contains("choice") && s["choice"].is_string() && s["choice"].get<std::string>().size() == 1,
                 "science spec needs a one-letter 'choice'");
            break;
        case Category::code:
            need(s.contains("tests") && s["tests"].is_array() && !s["tests"].empty(), "code spec needs 'tests'");
            for (const auto& c : s["tests"])
                need(c.contains("x") && c.contains("expected") && c["x"].is_number_integer() &&
                         c["expected"].is_number_integer(),
                     "code test needs integer 'x' and 'expected'");
            break;
        case Category::instruction_following:
            need(s.contains("constraints") && s["constraints"].is_array() && !s["constraints"].empty(),
                 "instruction spec needs 'constraints'");
            for (const auto& c : s["constraints"]) {
                need(c.contains("type") && c["type"].is_string(), "constraint needs 'type'");
                const auto type = c["type"].get<std::string>();
                const auto& known = constraint_types();
                need(std::find(known.begin(), known.end(), type) != known.end(), "unknown constraint '" + type + "'");
                if (type == "word_count" || type == "min_words" || type == "max_words")
                    need(c.contains("n") && c["n"].is_number_integer() && c["n"].get<std::int64_t>() >= 0, "constraint '" + type + "' needs 'n'");
                if (type == "contains" || type == "starts_with" || type == "ends_with")
                    need(c.contains("text") && c["text"].is_string(), "constraint '" + type + "' needs 'text'");
            }
            break;
    }
}

VerifyResult verify(const Task& task, std::string_view response, const VerifyOptions& opts) {
    validate_task(task);
    const auto& spec = task.verifier_spec;
    VerifyResult r;
    switch (task.category) {
        case Category::math: {
            const auto got = normalize(extract_answer(response));
            const auto want = normalize(spec["answer"].get<std::string>());
            if (got.empty()) {
                r.diagnostic = "no answer found";
                return r;
            }
            double a = 0, b = 0;
            const bool match = parse_number(got, a) && parse_number(want, b)
                                   ? std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b))
                                   : got == want;
            r.reward = match ? 1.0 : 0.0;
            if (!match) r.diagnostic = "expected '" + want + "', got '" + got + "'";
            return r;
        }
        case Category::science: {
            auto got = normalize(extract_answer(response));
            got.erase(std::remove_if(got.begin(), got.end(), [](char c) { return c == '(' || c == ')'; }), got.end());
            const auto want = lower(spec["choice"].get<std::string>());
            if (got.size() != 1) {
                r.diagnostic = "expected a single choice letter";
                return r;
            }
            r.reward = got == want ? 1.0 : 0.0;
            return r;
        }
        case Category::code: {
            std::string body;
            if (!extract_final_code_block(response, body)) {
                r.diagnostic = "no complete code block";
                return r;
            }
            std::size_t passed = 0;
            const auto& tests = spec["tests"];
            for (const auto& c : tests) {
                try {
                    if (eval_toy_expr(body, c["x"].get<std::int64_t>()) == c["expected"].get<std::int64_t>()) ++passed;
                } catch (const InputError& e) {
                    r.diagnostic = e.what();
                    return r;
                }
            }
            if (opts.partial_credit)
                r.reward = static_cast<double>(passed) / static_cast<double>(tests.size());
            else
                r.reward = passed == tests.size() ? 1.0 : 0.0;
            if (passed != tests.size())
                r.diagnostic = std::to_string(passed) + "/" + std::to_string(tests.size()) + " tests passed";
            return r;
        }
        case Category::instruction_following: {
            const std::string text(response);
            for (const auto& c : spec["constraints"]) {
                std::string why;
                if (!check_constraint(c, text, why)) {
                    r.diagnostic = why;
                    return r;
                }
            }
            r.reward = 1.0;
            return r;
        }
    }
    return r;
}

nlohmann::json to_json(const Task& t) {
    return {{"id", t.id}, {"prompt", t.prompt}, {"category", to_string(t.category)}, {"verifier_spec", t.verifier_spec}};
}

Task task_from_json(const nlohmann::json& j) {
    Task t;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            if (k == "id")
                t.id = it->get<std::string>();
            else if (k == "prompt")
                t.prompt = it->get<std::string>();
            else if (k == "category")
                t.category = category_from_string(it->get<std::string>());
            else if (k == "verifier_spec")
                t.verifier_spec = *it;
            else
                throw ConfigError("task: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("task: ") + e.what());
    }
    validate_task(t);
    return t;
}

std::vector<Task> read_tasks_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open task file " + path.string());
    std::vector<Task> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(task_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_tasks_jsonl(const std::vector<Task>& tasks, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    for (const auto& t : tasks) os << to_json(t).dump() << '\n';
}

}  // namespace hlab::agapo
