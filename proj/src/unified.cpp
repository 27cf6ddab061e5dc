#include "handfit/unified.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "handfit/random.hpp"
#include "handfit/text.hpp"

namespace handfit {

namespace {

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

Eigen::Matrix3Xd columns(const PointsD& p) { return p.transpose(); }

// Chains hanging off the root, each as its list of joints from base to tip.
std::vector<std::vector<int>> root_chains(const HandModel& m) {
  std::vector<std::vector<int>> chains;
  for (int j = 1; j < m.joint_count(); ++j) {
    if (m.parents[j] == 0) {
      chains.push_back({j});
    } else {
      for (auto& c : chains)
        if (c.back() == m.parents[j]) c.push_back(j);
    }
  }
  return chains;
}

// Rest position of each chain joint as a fraction of the base-to-tip length.
std::vector<double> chain_fractions(const HandModel& m, const std::vector<int>& chain) {
  const PointsD rest = m.joint_regressor * m.template_vertices;
  Eigen::RowVector3d tip = rest.row(chain.back());
  for (int k = 0; k < m.fingertip_count(); ++k) {
    const Eigen::RowVector3d t = m.template_vertices.row(m.fingertip_vertex_ids[k]);
    int owner;
    m.skinning_weights.row(m.fingertip_vertex_ids[k]).maxCoeff(&owner);
    if (owner == chain.back()) tip = t;
  }
  std::vector<double> out;
  double total = 0;
  std::vector<double> seg;
  for (std::size_t k = 0; k < chain.size(); ++k) {
    const Eigen::RowVector3d next = k + 1 < chain.size() ? Eigen::RowVector3d(rest.row(chain[k + 1])) : tip;
    seg.push_back((next - rest.row(chain[k])).norm());
    total += seg.back();
  }
  double acc = 0;
  for (double s : seg) {
    out.push_back(acc / total);
    acc += s;
  }
  return out;
}

}  // namespace

PointsD AlignmentMap::apply(const PointsD& points) const {
  PointsD out = (scale * points * rotation.transpose()).rowwise() + translation.transpose();
  return out;
}

Eigen::Vector3d AlignmentMap::apply(const Eigen::Vector3d& p) const { return scale * rotation * p + translation; }

AlignmentMap AlignmentMap::inverse() const {
  AlignmentMap inv = *this;
  inv.scale = 1 / scale;
  inv.rotation = rotation.transpose();
  inv.translation = -inv.scale * (inv.rotation * translation);
  std::swap(inv.source_convention, inv.target_convention);
  return inv;
}

void check_alignment(const AlignmentMap& a) {
  if (!(a.scale > 0) || !std::isfinite(a.scale)) throw InvariantError("alignment scale must be positive");
  if (!a.rotation.allFinite() || !a.translation.allFinite()) throw InvariantError("alignment is not finite");
  if ((a.rotation.transpose() * a.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(a.rotation.determinant() - 1) > 1e-6) {
    throw InvariantError("alignment rotation is not a proper rotation");
  }
}

AlignmentMap align_models(const Mesh& source, const Mesh& target, const Correspondences& pairs,
                          const std::string& source_convention, const std::string& target_convention) {
  if (pairs.size() < 3) {
    throw InvariantError("alignment needs at least 3 correspondences, got " + std::to_string(pairs.size()));
  }
  const auto n = static_cast<Eigen::Index>(pairs.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto [a, b] = pairs[k];
    if (a < 0 || a >= source.vertices.rows() || b < 0 || b >= target.vertices.rows()) {
      throw DimensionError("correspondence " + std::to_string(k) + " (" + std::to_string(a) + ", " +
                           std::to_string(b) + ") is out of range");
    }
    src.col(k) = source.vertices.row(a).transpose();
    dst.col(k) = target.vertices.row(b).transpose();
  }
  const Eigen::Matrix3Xd centred = src.colwise() - src.rowwise().mean();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centred).singularValues();
  if (!(sv[0] > 0) || sv[1] <= 1e-9 * sv[0]) throw InvariantError("correspondences are collinear or degenerate");

  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, true);
  AlignmentMap a;
  a.scale = t.block<3, 1>(0, 0).norm();
  a.rotation = t.block<3, 3>(0, 0) / a.scale;
  a.translation = t.block<3, 1>(0, 3);
  a.source_convention = source_convention;
  a.target_convention = target_convention;
  const Eigen::Matrix3Xd fitted = (a.scale * a.rotation * src).colwise() + a.translation;
  a.residual_rms = std::sqrt((fitted - dst).colwise().squaredNorm().mean());
  check_alignment(a);
  return a;
}

Correspondences parse_correspondences(const std::string& text) {
  Correspondences out;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (line == "source,target") continue;
    const auto f = split(line, ',');
    if (f.size() != 2) throw FormatError("correspondences line " + std::to_string(line_no) + ": expected 2 fields");
    try {
      out.emplace_back(static_cast<int>(parse_long(f[0])), static_cast<int>(parse_long(f[1])));
    } catch (const FormatError& e) {
      throw FormatError("correspondences line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string format_correspondences(const Correspondences& pairs) {
  std::string out = "source,target\n";
  for (const auto& [a, b] : pairs) out += std::to_string(a) + "," + std::to_string(b) + "\n";
  return out;
}

std::pair<Eigen::Matrix3d, Eigen::Vector3d> Canonicalizer::frame(const PointsD& vertices) const {
  if (identity()) return {Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()};
  PointsD anchors(anchor_ids.size(), 3);
  for (std::size_t k = 0; k < anchor_ids.size(); ++k) {
    if (anchor_ids[k] >= vertices.rows()) throw DimensionError("canonical anchor index exceeds vertex count");
    anchors.row(k) = vertices.row(anchor_ids[k]);
  }
  const Eigen::Matrix4d t = Eigen::umeyama(columns(anchors), columns(anchor_rest), false);
  return {t.block<3, 3>(0, 0), t.block<3, 1>(0, 3)};
}

Canonicalizer make_canonicalizer(const HandModel& model) {
  Canonicalizer c;
  for (int i = 0; i < model.vertex_count(); ++i)
    if (model.skinning_weights(i, 0) >= 1 - 1e-12) c.anchor_ids.push_back(i);
  if (c.anchor_ids.size() < 3) throw InvariantError("model has fewer than 3 root-only vertices to anchor on");
  PointsD rest(c.anchor_ids.size(), 3);
  for (std::size_t k = 0; k < c.anchor_ids.size(); ++k) rest.row(k) = model.template_vertices.row(c.anchor_ids[k]);
  const Eigen::RowVector3d centroid = rest.colwise().mean();
  c.anchor_rest = (rest.rowwise() - centroid).unaryExpr(&to_float);
  c.scale = to_float((model.template_vertices.rowwise() - centroid).rowwise().norm().maxCoeff());
  return c;
}

HandPoseState map_state(const HandModel& coarse, const HandModel& fine, const AlignmentMap& fine_to_coarse,
                        const HandPoseState& cs) {
  check_state_dims(coarse, static_cast<int>(cs.theta.rows()), static_cast<int>(cs.beta.size()));
  const Eigen::Matrix3d r = fine_to_coarse.rotation.transpose();  // coarse axes -> fine axes
  HandPoseState fs = HandPoseState::zero(fine);
  const auto cc = root_chains(coarse);
  const auto fc = root_chains(fine);
  if (cc.size() != fc.size()) throw DimensionError("coarse and fine models have different chain counts");
  for (std::size_t c = 0; c < cc.size(); ++c) {
    // Each coarse joint hands its rotation to the fine joint nearest to it
    // along the chain; the other fine joints stay straight.
    const std::vector<double> cf = chain_fractions(coarse, cc[c]);
    const std::vector<double> ff = chain_fractions(fine, fc[c]);
    for (std::size_t i = 0; i < cc[c].size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < ff.size(); ++k)
        if (std::abs(ff[k] - cf[i]) < std::abs(ff[best] - cf[i])) best = k;
      const Eigen::Vector3d w = cs.theta.row(cc[c][i] - 1).transpose();
      fs.theta.row(fc[c][best] - 1) += (r * w).transpose();
    }
  }
  const int nb = std::min(coarse.shape_dim(), fine.shape_dim());
  fs.beta.head(nb) = cs.beta.head(nb);
  fs.wrist_rotation = r * cs.wrist_rotation;
  fs.wrist_translation = r * cs.wrist_translation / fine_to_coarse.scale;
  return fs;
}

TrainingSet build_training_set(const HandModel& coarse, const HandModel& fine, const AlignmentMap& fine_to_coarse,
                               int n_samples, std::uint64_t seed, const SampleBounds& bounds) {
  if (n_samples < 0) throw InvariantError("sample count must be non-negative");
  if (!(bounds.theta_max > 0) || !std::isfinite(bounds.theta_max) || !(bounds.beta_sigma >= 0) ||
      !std::isfinite(bounds.beta_sigma)) {
    throw InvariantError("invalid sampling bounds");
  }
  check_alignment(fine_to_coarse);
  TrainingSet set;
  set.canonicalizer = make_canonicalizer(coarse);
  set.source_convention = coarse.name;
  set.target_convention = fine.name;
  set.joint_names = fine.joint_names;
  set.inputs.resize(n_samples, 3 * coarse.vertex_count());
  set.targets.resize(n_samples, 3 * fine.skeleton_size());
  Rng rng(seed);
  for (int n = 0; n < n_samples; ++n) {
    HandPoseState s = HandPoseState::zero(coarse);
    for (Eigen::Index k = 0; k < s.theta.size(); ++k) s.theta.data()[k] = rng.uniform(-bounds.theta_max, bounds.theta_max);
    s.beta = rng.normal_vector(coarse.shape_dim(), bounds.beta_sigma);
    s.wrist_rotation = rng.normal_vector(3).normalized() * rng.uniform(0, std::numbers::pi);
    const HandPoseState f = map_state(coarse, fine, fine_to_coarse, s);
    const auto [mesh, unused] = forward(coarse, s);
    const auto [fine_mesh, fine_skeleton] = forward(fine, f);
    set.inputs.row(n) = flatten(mesh.vertices).transpose();
    const PointsD aligned = fine_to_coarse.apply(fine_skeleton.joints);
    set.targets.row(n) = flatten(aligned).transpose();
    set.coarse_states.push_back(s);
    set.fine_states.push_back(f);
  }
  return set;
}

void check_regressor(const MlpRegressor& r) {
  if (r.layers.empty()) throw InvariantError("regressor has no layers");
  for (std::size_t k = 0; k < r.layers.size(); ++k) {
    const auto& l = r.layers[k];
    if (l.bias.size() != l.weight.rows()) throw InvariantError("layer " + std::to_string(k) + ": bias length mismatch");
    if (k > 0 && l.weight.cols() != r.layers[k - 1].weight.rows()) {
      throw InvariantError("layer " + std::to_string(k) + ": input dim does not chain");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) throw InvariantError("layer " + std::to_string(k) + ": non-finite weights");
  }
  if (r.activation != "relu") throw InvariantError("unknown activation " + r.activation);
  if (r.input_mean.size() != r.input_dim() || r.input_std.size() != r.input_dim() ||
      r.output_mean.size() != r.output_dim() || r.output_std.size() != r.output_dim()) {
    throw InvariantError("standardisation vectors do not match layer dims");
  }
  if (!(r.input_std.array() > 0).all() || !(r.output_std.array() > 0).all()) {
    throw InvariantError("standardisation scales must be positive");
  }
  if (r.output_dim() % 3 != 0) throw InvariantError("output dim is not a multiple of 3");
  if (!r.joint_names.empty() && static_cast<int>(r.joint_names.size()) * 3 != r.output_dim()) {
    throw InvariantError("joint name count does not match output dim");
  }
}

Eigen::MatrixXd mlp_forward(const MlpRegressor& r, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd h = x;
  for (std::size_t k = 0; k < r.layers.size(); ++k) {
    h = (r.layers[k].weight * h).colwise() + r.layers[k].bias;
    if (k + 1 < r.layers.size()) h = h.cwiseMax(0.0);
  }
  return h;
}

namespace {

struct Prepared {
  Eigen::MatrixXd x;  // in × n, canonical
  Eigen::MatrixXd y;  // out × n, canonical
};

Prepared canonical_pairs(const TrainingSet& data) {
  const Canonicalizer& c = data.canonicalizer;
  Prepared p{data.inputs.transpose(), data.targets.transpose()};
  if (c.identity()) return p;
  for (int n = 0; n < data.size(); ++n) {
    const PointsD v = Eigen::Map<const PointsD>(p.x.col(n).data(), p.x.rows() / 3, 3);
    const auto [rot, t] = c.frame(v);
    auto xc = Eigen::Map<PointsD>(p.x.col(n).data(), p.x.rows() / 3, 3);
    xc = ((v * rot.transpose()).rowwise() + t.transpose()) / c.scale;
    auto yc = Eigen::Map<PointsD>(p.y.col(n).data(), p.y.rows() / 3, 3);
    const PointsD y = yc;
    yc = ((y * rot.transpose()).rowwise() + t.transpose()) / c.scale;
  }
  return p;
}

// Mean squared per-joint error of the canonical network outputs, in mm².
double batch_loss(const MlpRegressor& r, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double scale) {
  if (x.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd e = (mlp_forward(r, x) - y).array().colwise() * r.output_std.array();
  return e.squaredNorm() / (x.cols() * (y.rows() / 3.0)) * scale * scale;
}

double mean_joint_error(const MlpRegressor& r, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double scale) {
  if (x.cols() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd e = (mlp_forward(r, x) - y).array().colwise() * r.output_std.array();
  double sum = 0;
  for (Eigen::Index n = 0; n < e.cols(); ++n)
    for (Eigen::Index j = 0; j < e.rows() / 3; ++j) sum += e.block<3, 1>(3 * j, n).norm();
  return sum / (e.cols() * (e.rows() / 3.0)) * scale;
}

void feature_stats(const Eigen::MatrixXd& m, Eigen::VectorXd& mean, Eigen::VectorXd& sd) {
  mean = m.rowwise().mean();
  sd = ((m.colwise() - mean).cwiseAbs2().rowwise().mean()).cwiseSqrt();
  const double floor = std::max(1e-12, 1e-2 * sd.maxCoeff());
  sd = sd.cwiseMax(floor).unaryExpr(&to_float);
  mean = mean.unaryExpr(&to_float);
}

// Moves the canonical pairs into network units and records the statistics.
void standardise(Prepared& p, MlpRegressor& r) {
  feature_stats(p.x, r.input_mean, r.input_std);
  feature_stats(p.y, r.output_mean, r.output_std);
  p.x = (p.x.colwise() - r.input_mean).array().colwise() / r.input_std.array();
  p.y = (p.y.colwise() - r.output_mean).array().colwise() / r.output_std.array();
}

Eigen::Index parameter_count(const MlpRegressor& r) {
  Eigen::Index n = 0;
  for (const auto& l : r.layers) n += l.weight.size() + l.bias.size();
  return n;
}

void gather(const MlpRegressor& r, Eigen::VectorXd& flat) {
  flat.resize(parameter_count(r));
  Eigen::Index o = 0;
  for (const auto& l : r.layers) {
    flat.segment(o, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
    o += l.weight.size();
    flat.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
}

void scatter(const Eigen::VectorXd& flat, MlpRegressor& r) {
  Eigen::Index o = 0;
  for (auto& l : r.layers) {
    Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = flat.segment(o, l.weight.size());
    o += l.weight.size();
    l.bias = flat.segment(o, l.bias.size());
    o += l.bias.size();
  }
}

// Gradient of the normalised batch loss, laid out like gather().
void backprop(const MlpRegressor& r, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Eigen::VectorXd& grad) {
  const std::size_t nl = r.layers.size();
  std::vector<Eigen::MatrixXd> acts(nl + 1);
  acts[0] = x;
  for (std::size_t k = 0; k < nl; ++k) {
    acts[k + 1] = (r.layers[k].weight * acts[k]).colwise() + r.layers[k].bias;
    if (k + 1 < nl) acts[k + 1] = acts[k + 1].cwiseMax(0.0);
  }
  const Eigen::ArrayXd w2 = r.output_std.array().square();
  Eigen::MatrixXd delta = (2.0 * (acts[nl] - y) / (x.cols() * (y.rows() / 3.0))).array().colwise() * w2;
  std::vector<Eigen::MatrixXd> gw(nl);
  std::vector<Eigen::VectorXd> gb(nl);
  for (std::size_t k = nl; k-- > 0;) {
    gw[k] = delta * acts[k].transpose();
    gb[k] = delta.rowwise().sum();
    if (k > 0) {
      delta = r.layers[k].weight.transpose() * delta;
      delta = (acts[k].array() > 0).select(delta, 0.0);
    }
  }
  grad.resize(parameter_count(r));
  Eigen::Index o = 0;
  for (std::size_t k = 0; k < nl; ++k) {
    grad.segment(o, gw[k].size()) = Eigen::Map<const Eigen::VectorXd>(gw[k].data(), gw[k].size());
    o += gw[k].size();
    grad.segment(o, gb[k].size()) = gb[k];
    o += gb[k].size();
  }
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<int>& idx, std::size_t begin,
                               std::size_t end) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = m.col(idx[k]);
  return out;
}

void round_to_float(MlpRegressor& r) {
  for (auto& l : r.layers) {
    l.weight = l.weight.unaryExpr(&to_float);
    l.bias = l.bias.unaryExpr(&to_float);
  }
}

}  // namespace

MlpRegressor train_mlp(const TrainingSet& data, const std::vector<int>& hidden, const TrainConfig& config) {
  if (data.size() == 0) throw InvariantError("training set is empty");
  if (data.targets.rows() != data.inputs.rows()) throw DimensionError("inputs and targets have different counts");
  if (config.epochs < 0 || config.batch < 1 || !(config.val_fraction >= 0 && config.val_fraction < 1)) {
    throw InvariantError("invalid training configuration");
  }
  for (int h : hidden)
    if (h < 1) throw InvariantError("hidden layer sizes must be positive");
  check_hyper({config.lr});

  Rng rng(config.seed);
  MlpRegressor r;
  r.canonicalizer = data.canonicalizer;
  r.source_convention = data.source_convention;
  r.target_convention = data.target_convention;
  r.joint_names = data.joint_names;
  Prepared all = canonical_pairs(data);
  standardise(all, r);
  std::vector<int> dims{static_cast<int>(data.inputs.cols())};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(static_cast<int>(data.targets.cols()));
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    MlpLayer l;
    const double sigma = std::sqrt((k + 2 < dims.size() ? 2.0 : 1.0) / dims[k]);
    l.weight.resize(dims[k + 1], dims[k]);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = sigma * rng.normal();
    l.bias = Eigen::VectorXd::Zero(dims[k + 1]);
    r.layers.push_back(std::move(l));
  }
  round_to_float(r);
  check_regressor(r);

  const double scale = r.canonicalizer.scale;
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
  const std::size_t n_val =
      data.size() < 2 ? 0 : std::max<std::size_t>(1, std::llround(config.val_fraction * data.size()));
  const std::size_t n_train = order.size() - n_val;
  const Eigen::MatrixXd xv = select_columns(all.x, order, n_train, order.size());
  const Eigen::MatrixXd yv = select_columns(all.y, order, n_train, order.size());
  std::vector<int> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));

  TrainInfo& info = r.info;
  info.seed = config.seed;
  info.epochs = config.epochs;
  info.train_count = static_cast<int>(n_train);
  info.val_count = static_cast<int>(n_val);
  auto val_or_train = [&](const MlpRegressor& m) {
    if (n_val > 0) return batch_loss(m, xv, yv, scale);
    return batch_loss(m, select_columns(all.x, train, 0, n_train), select_columns(all.y, train, 0, n_train), scale);
  };
  info.val_loss.push_back(val_or_train(r));
  info.best_val_loss = info.val_loss[0];
  MlpRegressor best = r;

  Eigen::VectorXd params, grad;
  gather(r, params);
  AdamState adam = AdamState::init(params.size(), {config.lr});
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t k = train.size(); k > 1; --k) std::swap(train[k - 1], train[rng.index(k)]);
    double sum = 0;
    for (std::size_t b = 0; b < train.size(); b += config.batch) {
      const std::size_t e = std::min(train.size(), b + config.batch);
      const Eigen::MatrixXd xb = select_columns(all.x, train, b, e);
      const Eigen::MatrixXd yb = select_columns(all.y, train, b, e);
      backprop(r, xb, yb, grad);
      adam_update(adam, params, grad);
      scatter(params, r);
      sum += batch_loss(r, xb, yb, scale) * static_cast<double>(e - b);
    }
    const double train_loss = sum / static_cast<double>(train.size());
    const double val = val_or_train(r);
    if (!std::isfinite(train_loss) || !std::isfinite(val)) {
      throw NumericError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    info.train_loss.push_back(train_loss);
    info.val_loss.push_back(val);
    if (val < info.best_val_loss) {
      info.best_val_loss = val;
      info.best_epoch = epoch;
      best.layers = r.layers;
    }
    adam.hyper.lr *= config.lr_decay;
  }
  r.layers = std::move(best.layers);
  round_to_float(r);
  info.best_val_loss = val_or_train(r);
  info.val_mean_error = n_val > 0 ? mean_joint_error(r, xv, yv, scale) : std::numeric_limits<double>::quiet_NaN();
  info.lipschitz = spectral_lipschitz(r);
  return r;
}

double spectral_lipschitz(const MlpRegressor& r) {
  double l = r.output_std.maxCoeff() / r.input_std.minCoeff();
  for (const auto& layer : r.layers) l *= Eigen::JacobiSVD<Eigen::MatrixXd>(layer.weight).singularValues()[0];
  return l;
}

Eigen::VectorXd predict_flat(const MlpRegressor& r, const PointsD& vertices) {
  check_regressor(r);
  if (vertices.size() != r.input_dim()) {
    throw DimensionError("regressor expects " + std::to_string(r.input_dim() / 3) + " vertices, mesh has " +
                         std::to_string(vertices.rows()));
  }
  const Canonicalizer& c = r.canonicalizer;
  const auto [rot, t] = c.frame(vertices);
  const PointsD canon = ((vertices * rot.transpose()).rowwise() + t.transpose()) / c.scale;
  const Eigen::VectorXd x = (flatten(canon) - r.input_mean).cwiseQuotient(r.input_std);
  Eigen::VectorXd out = mlp_forward(r, x).col(0).cwiseProduct(r.output_std) + r.output_mean;
  auto joints = Eigen::Map<PointsD>(out.data(), out.size() / 3, 3);
  const PointsD scaled = joints * c.scale;
  joints = (scaled.rowwise() - t.transpose()) * rot;
  return out;
}

Skeleton predict_joints(const MlpRegressor& r, const Mesh& mesh) {
  Eigen::VectorXd flat = predict_flat(r, mesh.vertices);
  Skeleton s;
  s.joints = Eigen::Map<PointsD>(flat.data(), flat.size() / 3, 3);
  s.names = r.joint_names;
  s.convention = r.target_convention;
  return s;
}

UhmFile regressor_to_uhm(const MlpRegressor& r) {
  check_regressor(r);
  UhmFile f;
  f.kind = "mlp_regressor";
  std::vector<int> dims{r.input_dim()};
  for (const auto& l : r.layers) dims.push_back(static_cast<int>(l.weight.rows()));
  const TrainInfo& i = r.info;
  f.meta = {{"activation", r.activation},
            {"layer_dims", dims},
            {"source_convention", r.source_convention},
            {"target_convention", r.target_convention},
            {"joint_names", r.joint_names},
            {"canonical_scale", r.canonicalizer.scale},
            {"training",
             {{"seed", i.seed},
              {"epochs", i.epochs},
              {"train_loss", i.train_loss},
              {"val_loss", i.val_loss},
              {"best_val_loss", i.best_val_loss},
              {"best_epoch", i.best_epoch},
              {"val_mean_error", i.val_mean_error},
              {"lipschitz", i.lipschitz},
              {"train_count", i.train_count},
              {"val_count", i.val_count}}}};
  for (std::size_t k = 0; k < r.layers.size(); ++k) {
    const auto& l = r.layers[k];
    UhmBlob w{"layer" + std::to_string(k) + ".weight", {l.weight.rows(), l.weight.cols()}, {}};
    for (Eigen::Index a = 0; a < l.weight.rows(); ++a)
      for (Eigen::Index b = 0; b < l.weight.cols(); ++b) w.data.push_back(static_cast<float>(l.weight(a, b)));
    UhmBlob bias{"layer" + std::to_string(k) + ".bias", {l.bias.size()}, {}};
    for (Eigen::Index a = 0; a < l.bias.size(); ++a) bias.data.push_back(static_cast<float>(l.bias[a]));
    f.blobs.push_back(std::move(w));
    f.blobs.push_back(std::move(bias));
  }
  auto vec_blob = [&](const std::string& name, const Eigen::VectorXd& v) {
    UhmBlob b{name, {v.size()}, {}};
    for (Eigen::Index k = 0; k < v.size(); ++k) b.data.push_back(static_cast<float>(v[k]));
    f.blobs.push_back(std::move(b));
  };
  vec_blob("input_mean", r.input_mean);
  vec_blob("input_std", r.input_std);
  vec_blob("output_mean", r.output_mean);
  vec_blob("output_std", r.output_std);
  const Canonicalizer& c = r.canonicalizer;
  UhmBlob ids{"canonical.anchor_ids", {static_cast<std::int64_t>(c.anchor_ids.size())}, {}};
  for (int v : c.anchor_ids) ids.data.push_back(static_cast<float>(v));
  UhmBlob rest{"canonical.anchor_rest", {c.anchor_rest.rows(), 3}, {}};
  for (Eigen::Index k = 0; k < c.anchor_rest.size(); ++k) rest.data.push_back(static_cast<float>(c.anchor_rest.data()[k]));
  f.blobs.push_back(std::move(ids));
  f.blobs.push_back(std::move(rest));
  return f;
}

MlpRegressor regressor_from_uhm(const UhmFile& f) {
  if (f.kind != "mlp_regressor") throw FormatError("container holds '" + f.kind + "', not an mlp_regressor");
  MlpRegressor r;
  try {
    r.activation = f.meta.at("activation").get<std::string>();
    r.source_convention = f.meta.at("source_convention").get<std::string>();
    r.target_convention = f.meta.at("target_convention").get<std::string>();
    r.joint_names = f.meta.at("joint_names").get<std::vector<std::string>>();
    r.canonicalizer.scale = f.meta.at("canonical_scale").get<double>();
    const auto dims = f.meta.at("layer_dims").get<std::vector<int>>();
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
      const UhmBlob& w = f.blob("layer" + std::to_string(k) + ".weight");
      const UhmBlob& b = f.blob("layer" + std::to_string(k) + ".bias");
      if (w.shape != std::vector<std::int64_t>{dims[k + 1], dims[k]} || b.shape != std::vector<std::int64_t>{dims[k + 1]}) {
        throw FormatError("layer " + std::to_string(k) + " blob shape does not match layer_dims");
      }
      MlpLayer l;
      l.weight.resize(dims[k + 1], dims[k]);
      for (Eigen::Index a = 0; a < l.weight.rows(); ++a)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(a, c) = w.data[a * dims[k] + c];
      l.bias = Eigen::Map<const Eigen::VectorXf>(b.data.data(), dims[k + 1]).cast<double>();
      r.layers.push_back(std::move(l));
    }
    auto vec = [&](const std::string& name, int n) {
      const UhmBlob& b = f.blob(name);
      if (b.shape != std::vector<std::int64_t>{n}) throw FormatError(name + " blob shape does not match layer_dims");
      return Eigen::Map<const Eigen::VectorXf>(b.data.data(), n).cast<double>().eval();
    };
    r.input_mean = vec("input_mean", dims.front());
    r.input_std = vec("input_std", dims.front());
    r.output_mean = vec("output_mean", dims.back());
    r.output_std = vec("output_std", dims.back());
    const UhmBlob& ids = f.blob("canonical.anchor_ids");
    const UhmBlob& rest = f.blob("canonical.anchor_rest");
    if (ids.shape.size() != 1 || rest.shape != std::vector<std::int64_t>{ids.shape[0], 3}) {
      throw FormatError("canonical anchor blobs have inconsistent shapes");
    }
    for (float v : ids.data) {
      if (v < 0 || v != std::floor(v)) throw FormatError("canonical.anchor_ids holds a non-index");
      r.canonicalizer.anchor_ids.push_back(static_cast<int>(v));
    }
    r.canonicalizer.anchor_rest.resize(ids.shape[0], 3);
    for (Eigen::Index k = 0; k < r.canonicalizer.anchor_rest.size(); ++k)
      r.canonicalizer.anchor_rest.data()[k] = rest.data[k];
    const auto& t = f.meta.at("training");
    TrainInfo& i = r.info;
    i.seed = t.at("seed").get<std::uint64_t>();
    i.epochs = t.at("epochs").get<int>();
    i.train_loss = t.at("train_loss").get<std::vector<double>>();
    i.val_loss = t.at("val_loss").get<std::vector<double>>();
    i.best_val_loss = t.at("best_val_loss").is_null() ? std::nan("") : t.at("best_val_loss").get<double>();
    i.best_epoch = t.at("best_epoch").get<int>();
    i.val_mean_error = t.at("val_mean_error").is_null() ? std::nan("") : t.at("val_mean_error").get<double>();
    i.lipschitz = t.at("lipschitz").get<double>();
    i.train_count = t.at("train_count").get<int>();
    i.val_count = t.at("val_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed mlp_regressor manifest: ") + e.what());
  }
  check_regressor(r);
  return r;
}

void save_regressor(const MlpRegressor& r, const std::string& path) { write_uhm(path, regressor_to_uhm(r)); }

MlpRegressor load_regressor(const std::string& path) { return regressor_from_uhm(read_uhm(path)); }

void check_fused_spec(const FusedSkeletonSpec& spec) {
  std::set<std::string> seen;
  for (const auto& j : spec.joints) {
    if (j.name.empty()) throw InvariantError("fused joint with empty name");
    if (!seen.insert(j.name).second) throw InvariantError("duplicate fused joint name '" + j.name + "'");
    if (j.index < 0) throw InvariantError("fused joint '" + j.name + "' has a negative index");
  }
}

FusedSkeletonSpec parse_fused_spec(const std::string& text) {
  FusedSkeletonSpec spec;
  bool header = false;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const std::string where = "fused spec line " + std::to_string(line_no) + ": ";
    if (!header) {
      if (line == "name,source,index") {
        header = true;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw FormatError(where + "expected 'name,source,index' header");
      const auto key = trim(line.substr(0, eq));
      const std::string value(trim(line.substr(eq + 1)));
      if (key == "coarse_convention") {
        spec.coarse_convention = value;
      } else if (key == "fine_convention") {
        spec.fine_convention = value;
      } else {
        throw FormatError(where + "unknown setting '" + std::string(key) + "'");
      }
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 3) throw FormatError(where + "expected 3 fields");
    FusedJoint j;
    j.name = std::string(trim(f[0]));
    const auto src = trim(f[1]);
    if (src == "coarse") {
      j.source = JointSource::Coarse;
    } else if (src == "fine") {
      j.source = JointSource::Fine;
    } else {
      throw FormatError(where + "source must be 'coarse' or 'fine'");
    }
    try {
      j.index = static_cast<int>(parse_long(f[2]));
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
    spec.joints.push_back(std::move(j));
  }
  if (!header) throw FormatError("fused spec has no 'name,source,index' header");
  check_fused_spec(spec);
  return spec;
}

std::string format_fused_spec(const FusedSkeletonSpec& spec) {
  std::string out;
  if (!spec.coarse_convention.empty()) out += "coarse_convention=" + spec.coarse_convention + "\n";
  if (!spec.fine_convention.empty()) out += "fine_convention=" + spec.fine_convention + "\n";
  out += "name,source,index\n";
  for (const auto& j : spec.joints) {
    out += j.name + "," + (j.source == JointSource::Coarse ? "coarse" : "fine") + "," + std::to_string(j.index) + "\n";
  }
  return out;
}

FusedSkeletonSpec load_fused_spec(const std::string& path) { return parse_fused_spec(read_file(path)); }

FusedSkeletonSpec default_fused_spec(const HandModel& coarse, const std::vector<std::string>& fine_names,
                                     const std::string& fine_convention) {
  FusedSkeletonSpec spec;
  spec.coarse_convention = coarse.name;
  spec.fine_convention = fine_convention;
  for (int j = 0; j < coarse.joint_count(); ++j) spec.joints.push_back({coarse.joint_names[j], JointSource::Coarse, j});
  // Fine names follow synth_model: chain joints "<finger><k>", then "<finger>_tip".
  std::vector<std::pair<std::string, int>> last;  // per chain prefix, deepest joint
  for (int k = 0; k < static_cast<int>(fine_names.size()); ++k) {
    const std::string& n = fine_names[k];
    if (n.ends_with("_tip")) {
      spec.joints.push_back({"fine_" + n, JointSource::Fine, k});
      continue;
    }
    const auto cut = n.find_first_of("0123456789");
    if (cut == std::string::npos || cut == 0) continue;
    const std::string prefix = n.substr(0, cut);
    if (!last.empty() && last.back().first == prefix) {
      last.back().second = k;
    } else {
      last.emplace_back(prefix, k);
    }
  }
  for (const auto& [prefix, k] : last) {
    if (prefix == "thumb") continue;
    spec.joints.push_back({"fine_" + fine_names[k], JointSource::Fine, k});
  }
  check_fused_spec(spec);
  return spec;
}

Skeleton fuse_skeletons(const Skeleton& coarse, const Skeleton& fine, const FusedSkeletonSpec& spec) {
  check_fused_spec(spec);
  if (!spec.coarse_convention.empty() && coarse.convention != spec.coarse_convention) {
    throw InvariantError("coarse skeleton convention '" + coarse.convention + "' does not match spec '" +
                         spec.coarse_convention + "'");
  }
  if (!spec.fine_convention.empty() && fine.convention != spec.fine_convention) {
    throw InvariantError("fine skeleton convention '" + fine.convention + "' does not match spec '" +
                         spec.fine_convention + "'");
  }
  Skeleton out;
  out.convention = "fused";
  out.joints.resize(spec.size(), 3);
  for (int k = 0; k < spec.size(); ++k) {
    const FusedJoint& j = spec.joints[k];
    const Skeleton& src = j.source == JointSource::Coarse ? coarse : fine;
    if (j.index >= src.joints.rows()) {
      throw InvariantError("fused joint '" + j.name + "' index " + std::to_string(j.index) + " out of range for " +
                           (j.source == JointSource::Coarse ? "coarse" : "fine") + " skeleton of " +
                           std::to_string(src.joints.rows()));
    }
    out.joints.row(k) = src.joints.row(j.index);
    out.names.push_back(j.name);
  }
  return out;
}

StandInPair synth_stand_in_pair(std::uint64_t seed, int coarse_vertices, int coarse_joints, int fine_vertices,
                                int fine_joints, int shape_dim) {
  StandInPair p;
  p.coarse = synth_model(seed, coarse_vertices, coarse_joints, shape_dim);
  p.fine = synth_model(seed, fine_vertices, fine_joints, shape_dim);
  p.offset.scale = 1;
  p.offset.rotation = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 2).normalized()).toRotationMatrix();
  p.offset.translation = Eigen::Vector3d(12, -7, 4);
  p.offset.source_convention = p.coarse.name;
  p.offset.target_convention = p.fine.name;
  HandModel& f = p.fine;
  f.template_vertices = p.offset.apply(f.template_vertices).unaryExpr(&to_float);
  for (int b = 0; b < f.shape_dim(); ++b) {
    auto col = Eigen::Map<PointsD>(f.shape_basis.col(b).data(), f.vertex_count(), 3);
    const PointsD rotated = p.offset.scale * col * p.offset.rotation.transpose();
    col = rotated.unaryExpr(&to_float);
  }
  finalize_model(f);
  // Wrist ring (first palm ring) and fingertips sit at matching places in both.
  const int ring = static_cast<int>(std::min((p.coarse.joint_regressor.row(0).array() != 0).count(),
                                             (f.joint_regressor.row(0).array() != 0).count()));
  for (int q = 0; q < ring; ++q) p.correspondences.emplace_back(q, q);
  for (int k = 0; k < std::min(p.coarse.fingertip_count(), f.fingertip_count()); ++k) {
    p.correspondences.emplace_back(p.coarse.fingertip_vertex_ids[k], f.fingertip_vertex_ids[k]);
  }
  return p;
}

}  // namespace handfit
