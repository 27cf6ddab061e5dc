#include "handfit/metrics.hpp"

#include <cmath>

#include <json.hpp>

#include "handfit/text.hpp"

namespace handfit {

ErrorStats error_stats(const std::vector<PointsD>& predicted, const std::vector<PointsD>& reference,
                       const std::string& what) {
  if (predicted.size() != reference.size()) {
    throw DimensionError("predicted and reference frame counts differ (" + std::to_string(predicted.size()) +
                         " vs " + std::to_string(reference.size()) + ")");
  }
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  double sq = 0, norms = 0;
  long n = 0;
  for (std::size_t f = 0; f < predicted.size(); ++f) {
    if (predicted[f].rows() != reference[f].rows()) {
      throw DimensionError("frame " + std::to_string(f) + ": " + what + " count " +
                           std::to_string(predicted[f].rows()) + " vs reference " +
                           std::to_string(reference[f].rows()));
    }
    for (Eigen::Index i = 0; i < predicted[f].rows(); ++i) {
      const Eigen::Vector3d e = (predicted[f].row(i) - reference[f].row(i)).transpose();
      sum += e;
      sq += e.squaredNorm();
      norms += e.norm();
      ++n;
    }
  }
  ErrorStats s;
  s.count = n;
  if (n == 0) return s;
  const Eigen::Vector3d mean = sum / n;
  s.signed_mean = mean.sum() / 3;
  s.euclid_mean = norms / n;
  s.std = std::sqrt(std::max(0.0, (sq / n - mean.squaredNorm()) / 3));
  return s;
}

EvalReport evaluate(const std::vector<HandFrame>& predicted, const std::vector<HandFrame>& reference) {
  if (predicted.size() != reference.size()) {
    throw DimensionError("predicted and reference frame counts differ (" + std::to_string(predicted.size()) +
                         " vs " + std::to_string(reference.size()) + ")");
  }
  std::vector<PointsD> pj, rj, pv, rv;
  for (std::size_t f = 0; f < predicted.size(); ++f) {
    pj.push_back(predicted[f].skeleton.joints);
    rj.push_back(reference[f].skeleton.joints);
    pv.push_back(predicted[f].mesh.vertices);
    rv.push_back(reference[f].mesh.vertices);
  }
  const ErrorStats j = error_stats(pj, rj, "joint");
  const ErrorStats v = error_stats(pv, rv, "vertex");
  EvalReport r;
  r.pj_signed = j.signed_mean;
  r.pj_euclid = j.euclid_mean;
  r.pj_std = j.std;
  r.pv_signed = v.signed_mean;
  r.pv_euclid = v.euclid_mean;
  r.pv_std = v.std;
  r.joint_samples = j.count;
  r.vertex_samples = v.count;
  r.frames = static_cast<long>(predicted.size());
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["frames"] = r.frames;
  j["joint_samples"] = r.joint_samples;
  j["vertex_samples"] = r.vertex_samples;
  j["pj_signed"] = r.pj_signed;
  j["pv_signed"] = r.pv_signed;
  j["pj_euclid"] = r.pj_euclid;
  j["pv_euclid"] = r.pv_euclid;
  j["pj_std"] = r.pj_std;
  j["pv_std"] = r.pv_std;
  return j.dump(2) + "\n";
}

std::string report_csv_header() { return "dataset,PJ,PV,PJ-std,PV-std,PJ-euclid,PV-euclid\n"; }

std::string report_csv_row(const std::string& dataset, const EvalReport& r) {
  return dataset + "," + format_double(r.pj_signed) + "," + format_double(r.pv_signed) + "," +
         format_double(r.pj_std) + "," + format_double(r.pv_std) + "," + format_double(r.pj_euclid) + "," +
         format_double(r.pv_euclid) + "\n";
}

}  // namespace handfit
