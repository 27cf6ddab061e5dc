#pragma once

#include <string>
#include <vector>

#include "handfit/hand_model.hpp"

namespace handfit {

struct ErrorStats {
  double signed_mean = 0;  // mean over every residual coordinate
  double euclid_mean = 0;  // mean over per-point residual norms
  double std = 0;          // sqrt of the mean per-axis variance
  long count = 0;          // points
};

struct EvalReport {
  double pj_signed = 0, pv_signed = 0;
  double pj_euclid = 0, pv_euclid = 0;
  double pj_std = 0, pv_std = 0;
  long joint_samples = 0;
  long vertex_samples = 0;
  long frames = 0;
};

struct HandFrame {
  Skeleton skeleton;
  Mesh mesh;  // empty vertices: frame contributes no PV samples
};

// Residuals are predicted − reference, pooled over frames then points.
ErrorStats error_stats(const std::vector<PointsD>& predicted, const std::vector<PointsD>& reference,
                       const std::string& what = "points");

EvalReport evaluate(const std::vector<HandFrame>& predicted, const std::vector<HandFrame>& reference);

std::string report_json(const EvalReport& r);
// "dataset,PJ,PV,PJ-std,PV-std,PJ-euclid,PV-euclid" header and one row
std::string report_csv_header();
std::string report_csv_row(const std::string& dataset, const EvalReport& r);

}  // namespace handfit
