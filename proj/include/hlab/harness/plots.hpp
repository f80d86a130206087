#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hlab/harness/metrics.hpp"
#include "hlab/harness/sweep.hpp"
#include "hlab/longctx/niah.hpp"

namespace hlab::harness {

// Tidy CSV, one row per observation. Numbers use the shortest text that
// reads back to the same double, so they match the JSON sources verbatim.
// Empty input writes the header only.

// stage,seed,step,metric,value
void export_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path);
// length,depth,accuracy  (accuracy empty for unsupported cells)
void export_grid_csv(const longctx::NiahGrid& grid, const std::filesystem::path& path);
// budget,supported,accuracy  (budget "none" for an unbudgeted column)
void export_sweep_csv(const SweepTable& table, const std::filesystem::path& path);

// Header plus rows of raw fields; quoted fields are unquoted.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};
CsvTable read_csv(const std::filesystem::path& path);

// Exports every artifact found under a pipeline output directory into
// <dir>/plots. Returns the files written.
std::vector<std::filesystem::path> export_plot_data(const std::filesystem::path& run_dir);

}  // namespace hlab::harness
