#include "mactok/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mactok/error.hpp"
#include "mactok/image.hpp"

namespace mactok {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

double parse_cell(const std::string& s, const std::string& column) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan" || s == "n/a" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
    size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size()) throw InvalidInputError("column '" + column + "': not a number: '" + s + "'");
    return v;
}

}  // namespace

std::vector<double> CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("CSV has no column '" + name + "'");
    const auto j = static_cast<size_t>(it - header.begin());
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& row : rows) out.push_back(parse_cell(row[j], name));
    return out;
}

CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size()) {
            throw InvalidInputError("malformed CSV: line " + std::to_string(lineno) + " has " +
                                    std::to_string(cells.size()) + " cells, header has " +
                                    std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) throw InvalidInputError("malformed CSV: missing header");
    return t;
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

namespace {

constexpr std::array<std::array<uint8_t, 3>, 6> kPalette = {{
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75},
}};

struct Canvas {
    RgbImage image;

    void set(int64_t x, int64_t y, const std::array<uint8_t, 3>& c) {
        if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
        auto* p = &image.data[static_cast<size_t>((y * image.width + x) * 3)];
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    void line(int64_t x0, int64_t y0, int64_t x1, int64_t y1, const std::array<uint8_t, 3>& c) {
        const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int64_t err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int64_t e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void dot(int64_t x, int64_t y, const std::array<uint8_t, 3>& c) {
        for (int64_t dy = -2; dy <= 2; ++dy) {
            for (int64_t dx = -2; dx <= 2; ++dx) set(x + dx, y + dy, c);
        }
    }
};

}  // namespace

void write_line_plot(const fs::path& path, const std::vector<PlotSeries>& series, int width, int height) {
    if (width < 64 || height < 64) throw InvalidInputError("plot is too small");
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ShapeError("series '" + s.label + "' has unequal x and y lengths");
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!std::isfinite(xmin)) xmin = ymin = 0.0, xmax = ymax = 1.0;
    if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;

    Canvas canvas{RgbImage(width, height)};
    std::fill(canvas.image.data.begin(), canvas.image.data.end(), uint8_t{255});
    const int64_t left = 40, right = width - 16, top = 16, bottom = height - 32;
    const std::array<uint8_t, 3> grid{225, 225, 225}, axis{0, 0, 0};
    for (int i = 1; i < 5; ++i) {
        const auto gx = left + (right - left) * i / 5, gy = top + (bottom - top) * i / 5;
        canvas.line(gx, top, gx, bottom, grid);
        canvas.line(left, gy, right, gy, grid);
    }
    canvas.line(left, top, left, bottom, axis);
    canvas.line(left, bottom, right, bottom, axis);
    canvas.line(left, top, right, top, axis);
    canvas.line(right, top, right, bottom, axis);

    auto px = [&](double x) { return left + std::llround((x - xmin) / (xmax - xmin) * static_cast<double>(right - left)); };
    auto py = [&](double y) { return bottom - std::llround((y - ymin) / (ymax - ymin) * static_cast<double>(bottom - top)); };
    for (size_t s = 0; s < series.size(); ++s) {
        const auto& colour = kPalette[s % kPalette.size()];
        // Legend swatch in the top-left corner, one per series.
        for (int64_t k = 0; k < 12; ++k) canvas.line(left + 6, top + 6 + 8 * static_cast<int64_t>(s) + k / 4,
                                                    left + 24, top + 6 + 8 * static_cast<int64_t>(s) + k / 4, colour);
        bool have_prev = false;
        int64_t prev_x = 0, prev_y = 0;
        size_t drawn = 0;
        for (size_t i = 0; i < series[s].x.size(); ++i) {
            if (!std::isfinite(series[s].x[i]) || !std::isfinite(series[s].y[i])) {
                have_prev = false;
                continue;
            }
            const auto x = px(series[s].x[i]), y = py(series[s].y[i]);
            if (have_prev) canvas.line(prev_x, prev_y, x, y, colour);
            prev_x = x;
            prev_y = y;
            have_prev = true;
            ++drawn;
        }
        if (drawn == 1) canvas.dot(prev_x, prev_y, colour);
    }
    write_png(path, canvas.image);
}

void emit_plot(const fs::path& csv, const std::string& x_column, const std::vector<std::string>& y_columns,
               const fs::path& out) {
    const auto table = read_csv(csv);
    const auto x = table.column(x_column);
    std::vector<PlotSeries> series;
    for (const auto& name : y_columns) series.push_back({name, x, table.column(name)});
    write_line_plot(out, series);
}

}  // namespace mactok
