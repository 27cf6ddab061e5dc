#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "handfit/hand_model.hpp"
#include "handfit/random.hpp"

namespace handfit {

namespace {

constexpr double kPi = std::numbers::pi;

struct Segment {
  int joint = 0;              // joint whose transform drives this segment
  Eigen::Vector3d start, end;
  Eigen::Vector3d e1, e2;     // cross-section frame
  double rx = 0, ry = 0;      // cross-section semi-axes
  int rings = 1;
  int first_vertex = 0;
  int chain = -1;             // -1 for the palm
  Eigen::Vector3d base = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitY();
  double chain_len = 1;
};

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

// Weights live on a 2^-20 grid so rows sum to exactly 1 in float and double.
constexpr double kWeightUnit = 1.0 / (1 << 20);

double quantize_weight(double w) { return std::round(w / kWeightUnit) * kWeightUnit; }

// k-th of n grid weights summing to exactly 1
double share(int k, int n) {
  const long units = 1L << 20;
  return static_cast<double>(units / n + (k < units % n ? 1 : 0)) * kWeightUnit;
}

void perpendicular_frame(const Eigen::Vector3d& d, Eigen::Vector3d& e1, Eigen::Vector3d& e2) {
  e2 = Eigen::Vector3d::UnitZ();
  e1 = e2.cross(d).normalized();
  e2 = d.cross(e1).normalized();
}

}  // namespace

HandModel synth_model(std::uint64_t seed, int nv, int nj, int nb) {
  if (nj < 4) throw InvariantError("synth_model requires j_count >= 4");
  if (nv < 4 * nj) throw InvariantError("synth_model requires v_count >= 4 * j_count");
  if (nb < 1) throw InvariantError("synth_model requires b_dim >= 1");

  Rng rng(seed);
  // Bone-length jitter has its own stream so finger placement does not depend
  // on how many joints each chain has.
  Rng bone_rng(seed ^ 0x9e3779b97f4a7c15ull);
  const int chains = std::min(5, nj - 1);
  std::vector<int> chain_len(chains, (nj - 1) / chains);
  for (int c = 0; c < (nj - 1) % chains; ++c) ++chain_len[c];

  static const char* kFinger[] = {"thumb", "index", "middle", "ring", "pinky"};
  const bool has_thumb = chains == 5;
  const double hand_scale = 1.0 + 0.05 * rng.uniform(-1, 1);
  const double palm_len = 85.0 * hand_scale;
  const double palm_half_width = 40.0 * hand_scale;

  HandModel m;
  m.name = "synth" + std::to_string(nj);
  m.parents.assign(nj, -1);
  m.joint_names.assign(1, "wrist");
  std::vector<Eigen::Vector3d> joint_pos(nj, Eigen::Vector3d::Zero());
  std::vector<Segment> segments(nj);
  std::vector<Eigen::Vector3d> tips(chains);
  std::vector<int> chain_last(chains);

  segments[0].joint = 0;
  segments[0].start = Eigen::Vector3d::Zero();
  segments[0].end = Eigen::Vector3d(0, palm_len, 0);
  segments[0].e1 = Eigen::Vector3d::UnitX();
  segments[0].e2 = Eigen::Vector3d::UnitZ();
  segments[0].rx = palm_half_width;
  segments[0].ry = 12.0 * hand_scale;

  int next = 1;
  const int fingers = has_thumb ? chains - 1 : chains;
  for (int c = 0; c < chains; ++c) {
    const std::string cname = chains == 5 ? kFinger[c] : "chain" + std::to_string(c);
    Eigen::Vector3d base, dir;
    double finger_len, radius;
    if (has_thumb && c == 0) {
      base = Eigen::Vector3d(-palm_half_width * 0.6, palm_len * 0.3, 0);
      dir = Eigen::Vector3d(-0.6, 0.8, 0);
      finger_len = 95.0;
      radius = 10.0;
    } else {
      const int f = has_thumb ? c - 1 : c;
      const double u = fingers > 1 ? static_cast<double>(f) / (fingers - 1) : 0.5;
      const double x = palm_half_width * 0.75 * (2 * u - 1);
      base = Eigen::Vector3d(x, palm_len - 0.1 * std::abs(x), 0);
      dir = Eigen::Vector3d(x / 250.0, 1, 0);
      finger_len = 85.0 - 25.0 * std::abs(2 * u - 0.6);
      radius = 9.0 - 1.5 * u;
    }
    base += Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), 0) * hand_scale;
    dir += Eigen::Vector3d(rng.uniform(-0.05, 0.05), 0, rng.uniform(-0.05, 0.05));
    dir.normalize();
    finger_len *= hand_scale;

    const int len = chain_len[c];
    std::vector<double> bone(len);
    double total = 0;
    for (int k = 0; k < len; ++k) total += bone[k] = std::pow(0.75, k) * (1 + 0.08 * bone_rng.uniform(-1, 1));
    Eigen::Vector3d p = base;
    for (int k = 0; k < len; ++k) {
      const int j = next++;
      m.parents[j] = k == 0 ? 0 : j - 1;
      m.joint_names.push_back(cname + std::to_string(k + 1));
      joint_pos[j] = p;
      const Eigen::Vector3d q = p + dir * (finger_len * bone[k] / total);
      Segment& s = segments[j];
      s.joint = j;
      s.start = p;
      s.end = q;
      perpendicular_frame(dir, s.e1, s.e2);
      s.rx = s.ry = radius * std::pow(0.88, k) * hand_scale;
      s.chain = c;
      s.base = base;
      s.dir = dir;
      s.chain_len = finger_len;
      p = q;
    }
    tips[c] = p;
    chain_last[c] = next - 1;
  }
  for (int c = 0; c < chains; ++c) {
    m.joint_names.push_back(std::string(chains == 5 ? kFinger[c] : ("chain" + std::to_string(c)).c_str()) + "_tip");
  }

  // Ring allocation: every segment gets one ring, the rest go by length.
  const int ring_size = (nv - chains) / 4 >= nj ? 4 : 3;
  const int total_rings = (nv - chains) / ring_size;
  const int leftover = nv - chains - total_rings * ring_size;
  std::vector<double> seg_len(nj);
  double len_sum = 0;
  for (int j = 0; j < nj; ++j) len_sum += seg_len[j] = (segments[j].end - segments[j].start).norm();
  int spare = total_rings - nj;
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int j = 0; j < nj; ++j) {
    const double share = spare * seg_len[j] / len_sum;
    const int whole = static_cast<int>(std::floor(share));
    segments[j].rings = 1 + whole;
    assigned += whole;
    remainders.emplace_back(-(share - whole), j);
  }
  std::sort(remainders.begin(), remainders.end());
  for (int k = 0; k < spare - assigned; ++k) ++segments[remainders[k].second].rings;

  m.template_vertices.resize(nv, 3);
  m.skinning_weights = Eigen::MatrixXd::Zero(nv, nj);
  m.joint_regressor = Eigen::MatrixXd::Zero(nj, nv);
  Eigen::VectorXd fraction = Eigen::VectorXd::Zero(nv);
  std::vector<int> owner(nv, 0);
  std::vector<Eigen::Vector3i> faces;

  const double phase = ring_size == 4 ? kPi / 4 : kPi / 2;
  int v = 0;
  for (int j = 0; j < nj; ++j) {
    Segment& s = segments[j];
    s.first_vertex = v;
    for (int r = 0; r < s.rings; ++r) {
      const double f = static_cast<double>(r) / s.rings;
      const Eigen::Vector3d centre = s.start + f * (s.end - s.start);
      for (int q = 0; q < ring_size; ++q) {
        const double phi = phase + 2 * kPi * q / ring_size + rng.uniform(-0.05, 0.05);
        const double scale = 1 + 0.03 * rng.uniform(-1, 1);
        m.template_vertices.row(v) =
            (centre + scale * (s.rx * std::cos(phi) * s.e1 + s.ry * std::sin(phi) * s.e2)).transpose();
        owner[v] = j;
        fraction[v] = f;
        const int p = m.parents[j];
        if (p >= 0 && f < 0.35) {
          const double wp = quantize_weight(0.5 * (1 - f / 0.35));
          m.skinning_weights(v, p) = wp;
          m.skinning_weights(v, j) = 1 - wp;
        } else {
          m.skinning_weights(v, j) = 1;
        }
        if (r == 0) m.joint_regressor(j, v) = share(q, ring_size);
        ++v;
      }
      if (r > 0) {
        const int a0 = v - 2 * ring_size;
        const int b0 = v - ring_size;
        for (int q = 0; q < ring_size; ++q) {
          const int q1 = (q + 1) % ring_size;
          faces.emplace_back(a0 + q, a0 + q1, b0 + q1);
          faces.emplace_back(a0 + q, b0 + q1, b0 + q);
        }
      }
    }
  }
  // Bridge each finger segment to its parent's last ring. Fingers are not
  // stitched to the much wider palm.
  for (int j = 1; j < nj; ++j) {
    if (m.parents[j] == 0) continue;
    const Segment& s = segments[j];
    const Segment& ps = segments[m.parents[j]];
    const int a0 = ps.first_vertex + (ps.rings - 1) * ring_size;
    const int b0 = s.first_vertex;
    for (int q = 0; q < ring_size; ++q) {
      const int q1 = (q + 1) % ring_size;
      faces.emplace_back(a0 + q, a0 + q1, b0 + q1);
      faces.emplace_back(a0 + q, b0 + q1, b0 + q);
    }
  }
  for (int c = 0; c < chains; ++c) {
    const int j = chain_last[c];
    const Segment& s = segments[j];
    m.template_vertices.row(v) = tips[c].transpose();
    m.skinning_weights(v, j) = 1;
    owner[v] = j;
    fraction[v] = 1;
    m.fingertip_vertex_ids.push_back(v);
    const int a0 = s.first_vertex + (s.rings - 1) * ring_size;
    for (int q = 0; q < ring_size; ++q) faces.emplace_back(a0 + q, a0 + (q + 1) % ring_size, v);
    ++v;
  }
  // Remaining vertices sit on the back of the palm and hang off its second ring.
  const Segment& palm = segments[0];
  const int anchor_ring = std::min(1, palm.rings - 1);
  for (int k = 0; k < leftover; ++k) {
    const double f = 0.5 + 0.1 * k;
    const double x = palm.rx * (0.4 * k - 0.4);
    m.template_vertices.row(v) = Eigen::RowVector3d(x, palm_len * f, palm.ry * 1.2);
    m.skinning_weights(v, 0) = 1;
    owner[v] = 0;
    fraction[v] = f;
    const int a0 = palm.first_vertex + anchor_ring * ring_size;
    faces.emplace_back(a0 + k % ring_size, a0 + (k + 1) % ring_size, v);
    ++v;
  }

  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) m.faces.row(static_cast<Eigen::Index>(f)) = faces[f].transpose();

  // Shape space: palm length/width and per-finger length/girth changes. The
  // coefficients live on whole fingers, so a given β means the same hand for
  // any joint count. Vertices that define the wrist joint never move, so the
  // rest wrist is shape independent.
  constexpr double kPalmMm = 3.0;
  constexpr double kFingerMm = 6.0;
  constexpr double kGirthMm = 1.0;
  Rng shape_rng(seed ^ 0xc2b2ae3d27d4eb4full);
  m.shape_basis = Eigen::MatrixXd::Zero(3 * nv, nb);
  for (int b = 0; b < nb; ++b) {
    const double palm_stretch = shape_rng.normal();
    const double palm_girth = shape_rng.normal();
    std::vector<double> stretch(5), girth(5);
    for (int c = 0; c < 5; ++c) {
      stretch[c] = shape_rng.normal();
      girth[c] = shape_rng.normal();
    }
    for (int i = 0; i < nv; ++i) {
      const Segment& s = segments[owner[i]];
      const Eigen::Vector3d x = m.template_vertices.row(i).transpose();
      Eigen::Vector3d d;
      if (s.chain < 0) {
        const double along = x.y() / palm_len;
        d = kPalmMm * palm_stretch * along * Eigen::Vector3d::UnitY() +
            kGirthMm * palm_girth * along * (x.x() / palm.rx) * Eigen::Vector3d::UnitX();
        if (i < ring_size) d.setZero();
      } else {
        const Eigen::Vector3d on_axis = s.start + fraction[i] * (s.end - s.start);
        const double along = (on_axis - s.base).dot(s.dir) / s.chain_len;
        const Eigen::Vector3d base_shift = kPalmMm * palm_stretch * (s.base.y() / palm_len) * Eigen::Vector3d::UnitY();
        const Eigen::Vector3d radial = x - on_axis;
        d = base_shift + kFingerMm * stretch[s.chain % 5] * along * s.dir +
            kGirthMm * girth[s.chain % 5] * radial / std::max(s.rx, 1e-9);
      }
      m.shape_basis.block<3, 1>(3 * i, b) = d;
    }
  }

  m.template_vertices = m.template_vertices.unaryExpr(&to_float);
  m.shape_basis = m.shape_basis.unaryExpr(&to_float);
  finalize_model(m);
  return m;
}

}  // namespace handfit
