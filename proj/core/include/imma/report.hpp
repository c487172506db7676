#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace imma {

/// Long-form measurement row; one value per line in the CSV interchange.
struct ReportRow {
    std::string run_id;
    std::string protocol;
    std::string concept_name;
    std::string method;
    int epoch = 0;
    std::string metric;
    double value = 0.0;
};

std::string format_value(double v); // %.9g

/// `run_id,protocol,concept,method,epoch,metric,value`, UTF-8, LF endings.
void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

} // namespace imma
