#include "imma/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "imma/errors.hpp"

namespace imma {

std::string format_value(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_report_csv: cannot open " + path.string());
    f << "run_id,protocol,concept,method,epoch,metric,value\n";
    for (const auto& r : rows)
        f << r.run_id << ',' << r.protocol << ',' << r.concept_name << ',' << r.method << ',' << r.epoch
          << ',' << r.metric << ',' << format_value(r.value) << '\n';
    if (!f) throw std::runtime_error("write_report_csv: write failed for " + path.string());
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MissingArtifactError("report not found: " + path.string());
    std::string line;
    std::vector<ReportRow> rows;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 || line.empty()) continue;
        std::istringstream is(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(is, field, ',')) fields.push_back(field);
        if (fields.size() != 7)
            throw std::runtime_error("read_report_csv: expected 7 columns at line " +
                                     std::to_string(lineno) + " in " + path.string());
        ReportRow r;
        r.run_id = fields[0];
        r.protocol = fields[1];
        r.concept_name = fields[2];
        r.method = fields[3];
        r.epoch = std::stoi(fields[4]);
        r.metric = fields[5];
        r.value = std::stod(fields[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace imma
