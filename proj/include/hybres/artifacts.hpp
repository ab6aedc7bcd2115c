#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hybres/grid.hpp"

namespace hybres::artifacts {

std::string sha256_hex(std::string_view data);

struct FileRecord {
    std::string name;
    std::string sha256;
    std::size_t bytes = 0;
};

/// Output directory that records the hash of every file it writes.
class OutputDir {
  public:
    explicit OutputDir(std::filesystem::path root);

    void write(const std::string& name, const std::string& content);
    [[nodiscard]] const std::vector<FileRecord>& files() const { return files_; }
    [[nodiscard]] const std::filesystem::path& root() const { return root_; }

  private:
    std::filesystem::path root_;
    std::vector<FileRecord> files_;
};

/// 12-significant-digit form used in every CSV.
std::string num(double v);

struct LineSet {
    std::vector<Polyline> lines;
    std::string color;
    double width = 1.5;
};

/// Categorical heatmap; `palette[v]` colours value v (0 is drawn from palette[0]).
std::string category_svg(const GridSpec& grid, const std::vector<int>& values, const std::vector<std::string>& palette,
                         const std::vector<std::string>& legend, const std::vector<LineSet>& lines,
                         const std::string& title);

/// Diverging heatmap centred on zero, optional hatched mask.
std::string scalar_svg(const GridSpec& grid, const std::vector<double>& values, const std::vector<std::uint8_t>* hatch,
                       const std::vector<LineSet>& lines, const std::string& title);

struct Series {
    std::string name;
    std::vector<double> y;
    std::string color;
};

/// Line chart of several series against a shared x.
std::string series_svg(const std::vector<double>& x, const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label);

}  // namespace hybres::artifacts
