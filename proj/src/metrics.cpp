#include "dimshrink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dimshrink {

double dice_metric(std::span<const uint8_t> pred, std::span<const uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("dice_metric: masks have " + std::to_string(pred.size()) + " and " +
                                std::to_string(truth.size()) + " voxels");
  }
  std::size_t p = 0, t = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = truth[i] != 0;
    p += a;
    t += b;
    both += a && b;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

CaseMetrics evaluate_case(const std::string& case_id, const LabelMap& pred, const LabelMap& truth) {
  if (pred.dims != truth.dims) {
    throw GeometryError("case " + case_id + ": prediction " + to_string(pred.dims) +
                        " vs truth " + to_string(truth.dims));
  }
  const NestedMask p = labels_to_nested(pred), t = labels_to_nested(truth);
  CaseMetrics m;
  m.case_id = case_id;
  m.et = dice_metric(p.et, t.et);
  m.wt = dice_metric(p.wt, t.wt);
  m.tc = dice_metric(p.tc, t.tc);
  return m;
}

namespace {

RegionStats stats_of(std::vector<double> v) {
  RegionStats s;
  const double n = static_cast<double>(v.size());
  for (double x : v) s.mean += x;
  s.mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / n);
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  s.median = v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  return s;
}

std::string format(const char* fmt, double a, double b, double c) {
  char buf[128];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

}  // namespace

MetricsSummary aggregate(std::span<const CaseMetrics> cases) {
  if (cases.empty()) throw std::invalid_argument("aggregate: no cases");
  std::vector<double> et, wt, tc;
  for (const auto& c : cases) {
    et.push_back(c.et);
    wt.push_back(c.wt);
    tc.push_back(c.tc);
  }
  MetricsSummary s;
  s.cases = cases.size();
  s.et = stats_of(std::move(et));
  s.wt = stats_of(std::move(wt));
  s.tc = stats_of(std::move(tc));
  return s;
}

std::string render_table(const MetricsSummary& s) {
  std::string out = "Dice\n";
  out += "            ET       WT       TC\n";
  out += format("Mean    %6.2f   %6.2f   %6.2f\n", 100 * s.et.mean, 100 * s.wt.mean, 100 * s.tc.mean);
  out += format("StdDev  %6.2f   %6.2f   %6.2f\n", 100 * s.et.std, 100 * s.wt.std, 100 * s.tc.std);
  out += format("Median  %6.2f   %6.2f   %6.2f\n", 100 * s.et.median, 100 * s.wt.median,
                100 * s.tc.median);
  return out;
}

std::string render_summary_csv(const MetricsSummary& s) {
  std::string out = "statistic,ET,WT,TC\n";
  out += format("mean,%.6f,%.6f,%.6f\n", s.et.mean, s.wt.mean, s.tc.mean);
  out += format("std,%.6f,%.6f,%.6f\n", s.et.std, s.wt.std, s.tc.std);
  out += format("median,%.6f,%.6f,%.6f\n", s.et.median, s.wt.median, s.tc.median);
  return out;
}

std::string render_cases_csv(std::span<const CaseMetrics> cases) {
  std::string out = "case_id,ET,WT,TC\n";
  for (const auto& c : cases) out += c.case_id + format(",%.6f,%.6f,%.6f\n", c.et, c.wt, c.tc);
  return out;
}

}  // namespace dimshrink
