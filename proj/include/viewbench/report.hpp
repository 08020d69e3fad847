#pragma once

// Markdown summary of whatever result CSVs exist under an output root.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "viewbench/config.hpp"
#include "viewbench/error.hpp"

namespace viewbench {

using CsvRows = std::vector<std::vector<std::string>>;

/// Plain comma split; the tool never writes quoted fields.
inline CsvRows read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvRows rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      f.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

namespace detail {

inline std::string fixed3(const std::string& v) {
  if (v.empty()) return "-";
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(3);
  s << std::stod(v);
  return s.str();
}

/// Pivot of `rows` (header skipped) into model x difficulty, one table per
/// value of `group_col`.
inline void pivot_tables(std::ostream& out, const CsvRows& rows, std::size_t group_col, const std::string& group_label,
                         std::size_t model_col, std::size_t diff_col,
                         const std::function<std::string(const std::vector<std::string>&)>& cell) {
  std::map<std::string, std::map<std::string, std::map<std::string, std::string>>> groups;
  std::vector<std::string> group_order;
  std::vector<std::string> diffs = difficulty_names();
  diffs.push_back("Average");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (!groups.count(row[group_col])) group_order.push_back(row[group_col]);
    groups[row[group_col]][row[model_col]][row[diff_col]] = cell(row);
  }
  for (const auto& g : group_order) {
    std::vector<std::string> cols;
    for (const auto& d : diffs) {
      for (const auto& [_, by_diff] : groups[g]) {
        if (by_diff.count(d)) {
          cols.push_back(d);
          break;
        }
      }
    }
    out << "\n### " << group_label << ' ' << g << "\n\n| Model |";
    for (const auto& d : cols) out << ' ' << d << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& [model, by_diff] : groups[g]) {
      out << "| " << model << " |";
      for (const auto& d : cols) {
        const auto it = by_diff.find(d);
        out << ' ' << (it == by_diff.end() ? "-" : it->second) << " |";
      }
      out << '\n';
    }
  }
}

}  // namespace detail

/// Builds `report.md` text from summary.csv, breaking_points.csv and
/// gains.csv when present.
inline std::string render_report(const std::filesystem::path& out_root) {
  std::ostringstream out;
  out << "# Viewpoint benchmark report\n";
  out << "\n## Difficulty splits\n\n| Difficulty | Reference bins | Validation bins |\n|---|---|---|\n";
  for (const auto& d : standard_difficulties()) {
    out << "| " << d.name << " | " << detail::join_bins(d.reference_bins) << " | "
        << detail::join_bins(d.validation_bins) << " |\n";
  }
  bool any = false;
  if (const auto p = out_root / "summary.csv"; std::filesystem::exists(p)) {
    any = true;
    out << "\n## mIoU on validation bins (mean +- std over classes)\n";
    detail::pivot_tables(out, read_csv(p), 2, "Memory", 0, 1, [](const auto& row) {
      return detail::fixed3(row[3]) + " +- " + detail::fixed3(row[4]);
    });
  }
  if (const auto p = out_root / "breaking_points.csv"; std::filesystem::exists(p)) {
    any = true;
    const auto rows = read_csv(p);
    out << "\n## Breaking points\n\n| Model | Breaking point bin | Biggest drop |\n|---|---|---|\n";
    for (std::size_t r = 1; r < rows.size(); ++r) {
      out << "| " << rows[r][0] << " | " << rows[r][1] << " | " << rows[r][2] << " |\n";
    }
  }
  if (const auto p = out_root / "gains.csv"; std::filesystem::exists(p)) {
    any = true;
    out << "\n## Gains from memory\n";
    detail::pivot_tables(out, read_csv(p), 2, "Memory", 0, 1, [](const auto& row) { return detail::fixed3(row[3]); });
  }
  if (!any) throw IoError("no result CSVs found under " + out_root.string());
  return out.str();
}

}  // namespace viewbench
