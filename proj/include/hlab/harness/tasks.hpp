#pragma once

#include <string>
#include <vector>

#include "hlab/agapo/task.hpp"
#include "hlab/numcore/rng.hpp"

namespace hlab::harness {

// arithmetic: "a+b=" with the exact sum.
// copy: short needle-style recall prompt; the answer is the needle value.
// constraint: formatting instructions checked by the constraint verifier.
// chain: "(d1+...+dk)%m=" over digits below m; the worked solution lists the
// running sums mod m.
enum class TaskKind { arithmetic, copy, constraint, chain };

const char* to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

struct TaskGenOptions {
    int max_operand = 9;
    std::size_t chain_len = 6;
    int chain_mod = 10;
};

std::vector<agapo::Task> gen_tasks(TaskKind kind, std::size_t n, RngStream& rng, const TaskGenOptions& opts = {});

// Every "a+b=" with 0 <= a, b <= max_operand, in row-major order.
std::vector<agapo::Task> arithmetic_table(int max_operand);

// A reference solution. `think` is empty for tasks solved without reasoning.
struct Demonstration {
    std::string think;
    std::string answer;
};

Demonstration demonstrate(const agapo::Task& task);

}  // namespace hlab::harness
