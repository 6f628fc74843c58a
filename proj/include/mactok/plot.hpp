#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mactok {

/// Header plus string cells; every row has the header's width.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Parses one column as doubles ("inf", "nan" accepted). Throws ConfigError
    /// naming the column when it is absent and InvalidInputError on bad cells.
    std::vector<double> column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Rasterizes the series as coloured polylines over a framed, gridded plot
/// area and writes a PNG. Output bytes depend only on the inputs. Non-finite
/// points are skipped; a single point is drawn as a dot.
void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series, int width = 640,
                     int height = 400);

/// Plots `y_columns` against `x_column` from one CSV file.
void emit_plot(const std::filesystem::path& csv, const std::string& x_column,
               const std::vector<std::string>& y_columns, const std::filesystem::path& out);

}  // namespace mactok
