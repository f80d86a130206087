#include "hlab/harness/metrics.hpp"

#include <chrono>

#include "hlab/numcore/errors.hpp"

namespace hlab::harness {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

nlohmann::json to_json(const MetricsRecord& r) {
    return {{"step", r.step}, {"stage", r.stage}, {"metric", r.metric}, {"value", r.value}, {"seed", r.seed}};
}

MetricsRecord metrics_record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InputError("metrics record must be an object");
    MetricsRecord r;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            if (k == "step") r.step = it->get<std::size_t>();
            else if (k == "stage") r.stage = it->get<std::string>();
            else if (k == "metric") r.metric = it->get<std::string>();
            else if (k == "value") r.value = it->get<double>();
            else if (k == "seed") r.seed = it->get<std::uint64_t>();
            else throw InputError("metrics record: unknown key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("metrics record: ") + e.what());
    }
    return r;
}

std::filesystem::path MetricsWriter::timing_path(const std::filesystem::path& metrics_path) {
    auto p = metrics_path;
    p.replace_extension(".timing.jsonl");
    return p;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool truncate) : t0_(now_seconds()) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!truncate && std::filesystem::exists(path))
        for (const auto& r : read_metrics(path)) last_step_[{r.stage, r.seed}] = r.step;
    const auto mode = truncate ? std::ios::trunc : std::ios::app;
    out_.open(path, std::ios::out | mode);
    timing_.open(timing_path(path), std::ios::out | mode);
    if (!out_ || !timing_) throw Error("cannot write metrics to " + path.string());
}

void MetricsWriter::append(const MetricsRecord& r) {
    const auto key = std::make_pair(r.stage, r.seed);
    if (auto it = last_step_.find(key); it != last_step_.end() && r.step < it->second)
        throw ContractError("metrics: step " + std::to_string(r.step) + " after step " + std::to_string(it->second) +
                            " for stage '" + r.stage + "'");
    last_step_[key] = r.step;
    out_ << to_json(r).dump() << '\n';
    out_.flush();
    timing_ << nlohmann::json{{"step", r.step}, {"stage", r.stage}, {"metric", r.metric},
                              {"wall_time", now_seconds() - t0_}}
                   .dump()
            << '\n';
    timing_.flush();
}

void MetricsWriter::append(std::size_t step, const std::string& stage, const std::string& metric, double value,
                           std::uint64_t seed) {
    append(MetricsRecord{step, stage, metric, value, seed});
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read metrics file " + path.string());
    std::vector<MetricsRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(metrics_record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace hlab::harness
