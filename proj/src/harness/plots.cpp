#include "hlab/harness/plots.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hlab/numcore/errors.hpp"

namespace hlab::harness {

namespace {

std::string num(double v) { return nlohmann::json(v).dump(); }

std::string field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

std::ofstream open_csv(const std::filesystem::path& path, const std::string& header) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path.string());
    os << header << '\n';
    return os;
}

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    return out;
}

nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot read " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(p.string() + ": " + e.what());
    }
}

}  // namespace

void export_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path) {
    auto os = open_csv(path, "stage,seed,step,metric,value");
    for (const auto& r : records)
        os << field(r.stage) << ',' << r.seed << ',' << r.step << ',' << field(r.metric) << ',' << num(r.value)
           << '\n';
}

void export_grid_csv(const longctx::NiahGrid& grid, const std::filesystem::path& path) {
    auto os = open_csv(path, "length,depth,accuracy");
    for (std::size_t l = 0; l < grid.cells.size(); ++l)
        for (std::size_t d = 0; d < grid.cells[l].size(); ++d) {
            const auto& v = grid.cells[l][d];
            os << grid.lengths[l] << ',' << num(grid.depths[d]) << ',' << (v ? num(*v) : "") << '\n';
        }
}

void export_sweep_csv(const SweepTable& table, const std::filesystem::path& path) {
    auto os = open_csv(path, "budget,supported,accuracy");
    for (const auto& c : table.columns)
        os << (c.budget ? std::to_string(*c.budget) : "none") << ',' << (c.supported ? "true" : "false") << ','
           << (c.accuracy ? num(*c.accuracy) : "") << '\n';
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw InputError(path.string() + ": missing header");
    t.header = split_row(line);
    while (std::getline(in, line)) {
        auto row = split_row(line);
        if (row.size() != t.header.size())
            throw InputError(path.string() + ": row has " + std::to_string(row.size()) + " fields, header has " +
                             std::to_string(t.header.size()));
        t.rows.push_back(std::move(row));
    }
    return t;
}

std::vector<std::filesystem::path> export_plot_data(const std::filesystem::path& run_dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(run_dir)) throw InputError("no run directory at " + run_dir.string());
    const fs::path out = run_dir / "plots";
    std::vector<fs::path> written;

    std::vector<fs::path> metric_files;
    for (const auto& e : fs::recursive_directory_iterator(run_dir))
        if (e.is_regular_file() && e.path().filename() == "metrics.jsonl") metric_files.push_back(e.path());
    std::sort(metric_files.begin(), metric_files.end());
    std::vector<MetricsRecord> all;
    for (const auto& f : metric_files) {
        auto rs = read_metrics(f);
        all.insert(all.end(), rs.begin(), rs.end());
    }
    export_metrics_csv(all, out / "metrics.csv");
    written.push_back(out / "metrics.csv");

    if (fs::exists(run_dir / "niah" / "grid.json")) {
        export_grid_csv(longctx::niah_grid_from_json(read_json(run_dir / "niah" / "grid.json")), out / "niah_grid.csv");
        written.push_back(out / "niah_grid.csv");
    }
    if (fs::exists(run_dir / "budget_sweep" / "sweep.json")) {
        export_sweep_csv(sweep_table_from_json(read_json(run_dir / "budget_sweep" / "sweep.json")),
                         out / "budget_sweep.csv");
        written.push_back(out / "budget_sweep.csv");
    }
    return written;
}

}  // namespace hlab::harness
