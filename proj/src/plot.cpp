#include "luq/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "luq/errors.hpp"
#include "luq/io.hpp"
#include "luq/uncertainty.hpp"

namespace luq::plot {

namespace fs = std::filesystem;

namespace {

constexpr double kPanelW = 420, kPanelH = 320;
constexpr double kLeft = 64, kRight = 16, kTop = 36, kBottom = 48;
const char* const kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Range {
  double lo = 0, hi = 1;
  void include(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

Range padded(Range r) {
  if (r.hi - r.lo < 1e-12) {
    r.lo -= 0.5;
    r.hi += 0.5;
  }
  const double pad = 0.04 * (r.hi - r.lo);
  return {r.lo - pad, r.hi + pad};
}

std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

// Frame, ticks and labels for one panel; returns the data-to-pixel mappers' ranges.
std::string axes(double ox, const std::string& title, const std::string& xl, const std::string& yl, Range xr,
                 Range yr, bool xticks = true) {
  std::ostringstream s;
  const double x0 = ox + kLeft, x1 = ox + kPanelW - kRight, y0 = kTop, y1 = kPanelH - kBottom;
  s << "<g class=\"axes\">\n";
  s << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0) << "\" height=\""
    << num(y1 - y0) << "\" fill=\"none\" stroke=\"black\"/>\n";
  s << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
    << "</text>\n";
  s << "<text x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kPanelH - 10) << "\" text-anchor=\"middle\">"
    << escape(xl) << "</text>\n";
  s << "<text transform=\"translate(" << num(ox + 14) << "," << num((y0 + y1) / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(yl) << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = i / 4.0;
    const double py = y1 - f * (y1 - y0);
    s << "<line x1=\"" << num(x0 - 4) << "\" y1=\"" << num(py) << "\" x2=\"" << num(x0) << "\" y2=\"" << num(py)
      << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << num(x0 - 6) << "\" y=\"" << num(py + 4) << "\" text-anchor=\"end\">"
      << tick(yr.lo + f * (yr.hi - yr.lo)) << "</text>\n";
    if (xticks) {
      const double px = x0 + f * (x1 - x0);
      s << "<line x1=\"" << num(px) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(px) << "\" y2=\"" << num(y1 + 4)
        << "\" stroke=\"black\"/>\n";
      s << "<text x=\"" << num(px) << "\" y=\"" << num(y1 + 16) << "\" text-anchor=\"middle\">"
        << tick(xr.lo + f * (xr.hi - xr.lo)) << "</text>\n";
    }
  }
  s << "</g>\n";
  return s.str();
}

}  // namespace

std::string render_panels(const std::vector<Panel>& panels) {
  if (panels.empty()) throw ContractError("plot needs at least one panel");
  std::ostringstream s;
  s << svg_open(kPanelW * panels.size(), kPanelH);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const double ox = kPanelW * p;
    Range xr{INFINITY, -INFINITY}, yr{INFINITY, -INFINITY};
    std::size_t n = 0;
    for (const auto& se : panel.series)
      for (std::size_t i = 0; i < se.x.size(); ++i) {
        xr.include(se.x[i]);
        yr.include(se.y[i]);
        ++n;
      }
    if (n == 0) xr = yr = {0, 1};
    xr = padded(xr);
    yr = padded(yr);
    s << axes(ox, panel.title, panel.xlabel, panel.ylabel, xr, yr);
    const double x0 = ox + kLeft, x1 = ox + kPanelW - kRight, y0 = kTop, y1 = kPanelH - kBottom;
    auto px = [&](double v) { return x0 + (v - xr.lo) / (xr.hi - xr.lo) * (x1 - x0); };
    auto py = [&](double v) { return y1 - (v - yr.lo) / (yr.hi - yr.lo) * (y1 - y0); };
    for (std::size_t k = 0; k < panel.series.size(); ++k) {
      const Series& se = panel.series[k];
      const char* colour = kColours[k % 4];
      s << "<g class=\"series\" data-label=\"" << escape(se.label) << "\">\n";
      if (se.points) {
        for (std::size_t i = 0; i < se.x.size(); ++i)
          s << "<circle cx=\"" << num(px(se.x[i])) << "\" cy=\"" << num(py(se.y[i])) << "\" r=\"1.5\" fill=\""
            << colour << "\" fill-opacity=\"0.5\"/>\n";
      } else {
        s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < se.x.size(); ++i) s << (i ? " " : "") << num(px(se.x[i])) << "," << num(py(se.y[i]));
        s << "\"/>\n";
      }
      s << "<text x=\"" << num(x1 - 6) << "\" y=\"" << num(y0 + 14 + 14 * k) << "\" text-anchor=\"end\" fill=\""
        << colour << "\">" << escape(se.label) << "</text>\n";
      s << "</g>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

std::string render_boxes(const std::string& title, const std::string& ylabel, const std::vector<BoxGroup>& groups) {
  if (groups.empty()) throw ContractError("box plot needs at least one group");
  Range yr{INFINITY, -INFINITY};
  for (const auto& g : groups)
    for (double v : g.values) yr.include(v);
  if (!std::isfinite(yr.lo)) yr = {0, 1};
  yr = padded(yr);
  std::ostringstream s;
  s << svg_open(kPanelW, kPanelH);
  s << axes(0, title, "", ylabel, {0, 1}, yr, false);
  const double x0 = kLeft, x1 = kPanelW - kRight, y0 = kTop, y1 = kPanelH - kBottom;
  auto py = [&](double v) { return y1 - (v - yr.lo) / (yr.hi - yr.lo) * (y1 - y0); };
  const double slot = (x1 - x0) / groups.size();
  for (std::size_t k = 0; k < groups.size(); ++k) {
    std::vector<double> v = groups[k].values;
    std::sort(v.begin(), v.end());
    const double cx = x0 + slot * (k + 0.5), hw = slot * 0.25;
    s << "<g class=\"box\" data-label=\"" << escape(groups[k].label) << "\">\n";
    s << "<text x=\"" << num(cx) << "\" y=\"" << num(y1 + 16) << "\" text-anchor=\"middle\">"
      << escape(groups[k].label) << " (n=" << v.size() << ")</text>\n";
    if (!v.empty()) {
      auto q = [&](double f) {
        const double pos = f * (v.size() - 1);
        const std::size_t i = static_cast<std::size_t>(pos);
        return i + 1 < v.size() ? v[i] + (pos - i) * (v[i + 1] - v[i]) : v[i];
      };
      const double q1 = q(0.25), q2 = q(0.5), q3 = q(0.75), iqr = q3 - q1;
      const double lo = *std::lower_bound(v.begin(), v.end(), q1 - 1.5 * iqr);
      const double hi = *(std::upper_bound(v.begin(), v.end(), q3 + 1.5 * iqr) - 1);
      const char* colour = kColours[k % 4];
      s << "<line x1=\"" << num(cx) << "\" y1=\"" << num(py(lo)) << "\" x2=\"" << num(cx) << "\" y2=\"" << num(py(hi))
        << "\" stroke=\"black\"/>\n";
      s << "<rect x=\"" << num(cx - hw) << "\" y=\"" << num(py(q3)) << "\" width=\"" << num(2 * hw) << "\" height=\""
        << num(std::max(0.5, py(q1) - py(q3))) << "\" fill=\"" << colour << "\" fill-opacity=\"0.4\" stroke=\"black\"/>\n";
      s << "<line x1=\"" << num(cx - hw) << "\" y1=\"" << num(py(q2)) << "\" x2=\"" << num(cx + hw) << "\" y2=\""
        << num(py(q2)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
    s << "</g>\n";
  }
  s << "</svg>\n";
  return s.str();
}

CsvTable read_csv(const fs::path& path, const std::vector<std::string>& expected_header) {
  std::istringstream in(read_file(path));
  CsvTable t;
  std::string line;
  int line_no = 0;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!l.empty() && l.back() == ',') f.emplace_back();
    return f;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      t.header = split(line);
      if (t.header != expected_header) {
        std::string want;
        for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
        throw DataError(path.string() + ":1: expected header '" + want + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != t.header.size())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(t.header.size()) + " fields, found " + std::to_string(f.size()));
    t.rows.push_back(std::move(f));
    t.line_numbers.push_back(line_no);
  }
  if (line_no == 0) throw DataError(path.string() + ": empty file");
  return t;
}

double cell_number(const CsvTable& t, const fs::path& path, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(path.string() + ":" + std::to_string(t.line_numbers[row]) + ": " + t.header[col] +
                    " is not a number: '" + s + "'");
  }
}

std::string scatter_svg(const fs::path& records, const fs::path& landmarks) {
  const auto recs = read_records(records);
  const CsvTable lm = read_csv(landmarks, {"id", "node_index", "x", "y", "annotated", "ood_label"});
  std::map<std::pair<std::string, int>, std::array<double, 3>> truth;
  for (std::size_t r = 0; r < lm.rows.size(); ++r)
    truth[{lm.rows[r][0], static_cast<int>(cell_number(lm, landmarks, r, 1))}] = {
        cell_number(lm, landmarks, r, 2), cell_number(lm, landmarks, r, 3), cell_number(lm, landmarks, r, 4)};
  Series s{"nodes", {}, {}, true};
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& rec = recs[i];
    for (std::size_t m = 0; m < rec.node_std.size(); ++m) {
      const auto it = truth.find({rec.id, static_cast<int>(m)});
      if (it == truth.end())
        throw DataError(records.string() + ":" + std::to_string(i + 1) + ": no landmark for " + rec.id + " node " +
                        std::to_string(m) + " in " + landmarks.string());
      if (it->second[2] == 0.0) continue;
      const double dx = rec.node_mean[2 * m] - it->second[0], dy = rec.node_mean[2 * m + 1] - it->second[1];
      s.x.push_back(rec.node_std[m]);
      s.y.push_back(std::sqrt(dx * dx + dy * dy));
    }
  }
  return render_panels({{"Node error vs predictive uncertainty", "node std", "node error", {s}}});
}

std::string kde_svg(const fs::path& kde_csv) {
  const CsvTable t = read_csv(kde_csv, {"grid", "density_id", "density_ood"});
  Series id{"ID", {}, {}, false}, ood{"OOD", {}, {}, false};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double g = cell_number(t, kde_csv, r, 0);
    if (!t.rows[r][1].empty()) {
      id.x.push_back(g);
      id.y.push_back(cell_number(t, kde_csv, r, 1));
    }
    if (!t.rows[r][2].empty()) {
      ood.x.push_back(g);
      ood.y.push_back(cell_number(t, kde_csv, r, 2));
    }
  }
  return render_panels({{"Score densities", "score", "density", {id, ood}}});
}

std::string box_svg(const fs::path& occlusion_csv) {
  const CsvTable t = read_csv(occlusion_csv, {"image_id", "placement", "group", "node_index", "node_std"});
  BoxGroup inside{"inside", {}}, outside{"outside", {}};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double v = cell_number(t, occlusion_csv, r, 4);
    if (t.rows[r][2] == "inside") inside.values.push_back(v);
    else if (t.rows[r][2] == "outside") outside.values.push_back(v);
    else
      throw DataError(occlusion_csv.string() + ":" + std::to_string(t.line_numbers[r]) + ": unknown group '" +
                      t.rows[r][2] + "'");
  }
  return render_boxes("Node std under occlusion", "node std", {inside, outside});
}

std::string sweep_svg(const fs::path& noise_csv) {
  const CsvTable t = read_csv(noise_csv, {"level", "sigma_noise", "latent_unc_mean", "pred_score_mean"});
  Series lat{"latent uncertainty", {}, {}, false}, pred{"predictive score", {}, {}, false};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double s = cell_number(t, noise_csv, r, 1);
    lat.x.push_back(s);
    lat.y.push_back(cell_number(t, noise_csv, r, 2));
    pred.x.push_back(s);
    pred.y.push_back(cell_number(t, noise_csv, r, 3));
  }
  return render_panels({{"Latent uncertainty", "noise sigma", "mean latent sigma", {lat}},
                        {"Predictive uncertainty", "noise sigma", "mean node std", {pred}}});
}

}  // namespace luq::plot
