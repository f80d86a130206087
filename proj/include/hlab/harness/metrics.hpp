#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace hlab::harness {

// Wall time is kept out of the record so that metrics files are reproducible;
// see MetricsWriter::timing_path.
struct MetricsRecord {
    std::size_t step = 0;
    std::string stage;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;

    bool operator==(const MetricsRecord&) const = default;
};

nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord metrics_record_from_json(const nlohmann::json& j);

// Single owner of one JSONL metrics file. Steps must be non-decreasing per
// (stage, seed). Each record's wall time since the writer opened goes to a
// sidecar file next to it.
class MetricsWriter {
   public:
    // truncate=false appends and continues the step check from the existing file.
    explicit MetricsWriter(const std::filesystem::path& path, bool truncate = true);

    void append(const MetricsRecord& r);
    void append(std::size_t step, const std::string& stage, const std::string& metric, double value,
                std::uint64_t seed);

    static std::filesystem::path timing_path(const std::filesystem::path& metrics_path);

   private:
    std::ofstream out_;
    std::ofstream timing_;
    std::map<std::pair<std::string, std::uint64_t>, std::size_t> last_step_;
    double t0_;
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

}  // namespace hlab::harness
