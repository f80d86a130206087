#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hlab/harness/config.hpp"

namespace hlab::harness {

// A stage that ran and did not meet its own pass condition, or threw.
class StageFailure : public Error {
   public:
    StageFailure(PipelineStage stage, const std::string& what);
    PipelineStage stage() const { return stage_; }

   private:
    PipelineStage stage_;
};

enum class StageStatus { ran, up_to_date };
const char* to_string(StageStatus s);

struct StageOutcome {
    PipelineStage stage = PipelineStage::sft;
    StageStatus status = StageStatus::ran;
    double seconds = 0.0;
    std::string summary;
};

struct PipelineReport {
    std::filesystem::path run_dir;
    std::vector<StageOutcome> stages;
    bool up_to_date() const;
};

// Layout under the run directory:
//   config.json
//   <stage>/model.ckpt      model after the stage
//   <stage>/metrics.jsonl   {step, stage, metric, value, seed}
//   <stage>/done.json       completion marker keyed by a hash of the config
//                           prefix up to and including this stage
//   <stage>/timing.json     wall time
// plus stage artifacts (pairs.jsonl, sweep.json, grid.json, report.json).
// Each stage reads its input model back from the previous stage's checkpoint,
// so resuming after an interruption repeats exactly what an uninterrupted run
// does. Stages whose marker matches are skipped. Throws StageFailure, leaving
// the failing stage's partial artifacts in place without a marker.
PipelineReport run_pipeline(const RunConfig& cfg, const std::filesystem::path& run_dir);

// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace hlab::harness
