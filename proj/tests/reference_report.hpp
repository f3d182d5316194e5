#pragma once

#include "gmvc/evaluation.hpp"

namespace gmvc::testing {

// Fixed accuracy table (the reference results) used as the golden-file input.
inline evaluation::AccuracyReport reference_report() {
  using evaluation::ReportRow;
  struct Line {
    const char* strategy;
    const char* variant;
    double v[12];
  };
  const Line lines[] = {
      {"C-chunk", "M1", {80.51, 63.35, 83.05, 75.51, 77.97, 69.24, 80.51, 75.99, 83.05, 54.38, 77.97, 72.74}},
      {"C-chunk", "M2", {87.29, 76.95, 83.90, 76.99, 72.03, 66.78, 87.29, 81.92, 83.90, 65.82, 72.03, 71.33}},
      {"C-chunk", "M3", {83.05, 75.68, 88.98, 79.32, 73.73, 72.88, 83.05, 84.18, 88.98, 67.66, 73.73, 71.47}},
      {"C-sequence", "M2", {87.29, 76.65, 83.90, 76.64, 72.03, 66.69, 87.29, 82.06, 83.90, 65.64, 72.03, 71.33}},
      {"C-sequence", "M3", {83.05, 75.47, 88.98, 79.62, 73.73, 72.83, 83.05, 84.04, 88.98, 67.94, 73.73, 72.03}},
  };
  evaluation::AccuracyReport r;
  for (const char* conv : {"singer", "technique"}) {
    ReportRow row{evaluation::kBaselineStrategy, evaluation::kBaselineVariant, conv, {}};
    row.cells = {{{89.83, {}}, {90.68, {}}, {77.97, {}}}};
    r.rows.push_back(row);
  }
  for (const auto& l : lines)
    for (int k = 0; k < 2; ++k) {
      ReportRow row{l.strategy, l.variant, k == 0 ? "singer" : "technique", {}};
      for (int m = 0; m < 3; ++m) row.cells[m] = {l.v[6 * k + 2 * m], l.v[6 * k + 2 * m + 1]};
      r.rows.push_back(row);
    }
  return r;
}

}  // namespace gmvc::testing
