#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace luq::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool points = false;  // circles instead of a polyline
};

struct Panel {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
};

struct BoxGroup {
  std::string label;
  std::vector<double> values;
};

// Panels side by side in one standalone SVG.
std::string render_panels(const std::vector<Panel>& panels);
// Tukey boxes (whiskers at the last points within 1.5 IQR).
std::string render_boxes(const std::string& title, const std::string& ylabel, const std::vector<BoxGroup>& groups);

// Header-checked CSV; DataError carries path:line.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;
};
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header);
double cell_number(const CsvTable& t, const std::filesystem::path& path, std::size_t row, std::size_t col);

// One point per (image, annotated node): node_std against node error.
std::string scatter_svg(const std::filesystem::path& records, const std::filesystem::path& landmarks);
std::string kde_svg(const std::filesystem::path& kde_csv);
std::string box_svg(const std::filesystem::path& occlusion_csv);
std::string sweep_svg(const std::filesystem::path& noise_csv);

}  // namespace luq::plot
