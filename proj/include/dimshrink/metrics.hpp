#pragma once

#include <span>
#include <string>
#include <vector>

#include "dimshrink/volume.hpp"

namespace dimshrink {

/// Hard Dice 2|P & T| / (|P| + |T|) over nonzero entries. Both empty gives
/// 1.0; exactly one empty gives 0.0.
double dice_metric(std::span<const uint8_t> pred, std::span<const uint8_t> truth);

struct CaseMetrics {
  std::string case_id;
  double et = 0.0;
  double wt = 0.0;
  double tc = 0.0;
};

/// Per-region hard Dice between two label maps on the same grid.
CaseMetrics evaluate_case(const std::string& case_id, const LabelMap& pred,
                          const LabelMap& truth);

struct RegionStats {
  double mean = 0.0;
  double std = 0.0;  // population
  double median = 0.0;
};

struct MetricsSummary {
  std::size_t cases = 0;
  RegionStats et, wt, tc;
};

MetricsSummary aggregate(std::span<const CaseMetrics> cases);

/// Aligned text with rows Mean, StdDev, Median and columns ET, WT, TC, in
/// percent with two decimals.
std::string render_table(const MetricsSummary& summary);
/// statistic,ET,WT,TC rows with raw fractions.
std::string render_summary_csv(const MetricsSummary& summary);
/// case_id,ET,WT,TC rows.
std::string render_cases_csv(std::span<const CaseMetrics> cases);

}  // namespace dimshrink
