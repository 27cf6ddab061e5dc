#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "handfit/io.hpp"
#include "handfit/sampling.hpp"
#include "handfit/text.hpp"

#ifndef HANDFIT_DATA_DIR
#define HANDFIT_DATA_DIR "data"
#endif

using namespace handfit;
namespace fs = std::filesystem;

namespace {

bool g_verbose = false;

void log(const std::string& msg) {
  if (g_verbose) std::cerr << "[handfit] " << msg << "\n";
}

std::string default_conventions() {
  const fs::path p = fs::path(HANDFIT_DATA_DIR) / "conventions.json";
  return fs::exists(p) ? p.string() : std::string();
}

ConventionTable conventions_or_default(const std::string& path) {
  const std::string p = path.empty() ? default_conventions() : path;
  return p.empty() ? ConventionTable() : ConventionTable::load(p);
}

std::vector<StateRecord> load_states(const std::string& path) { return parse_states(read_file(path), path); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"handfit: keypoint-driven hand model fitting and joint unification"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string config_path;
  app.add_option("--seed", seed, "Seed for every random stream")->default_val(0);
  app.add_option("--config", config_path, "Run configuration JSON (fit)")->check(CLI::ExistingFile);
  app.add_flag("-v,--verbose", g_verbose, "Log progress to stderr");

  // synth-model
  auto* synth = app.add_subcommand("synth-model", "Write a synthetic hand model (and optionally a fine stand-in pair)");
  std::string synth_out, synth_fine, synth_corr;
  int synth_v = 200, synth_j = 16, synth_b = 10, synth_fv = 400, synth_fj = 25;
  synth->add_option("-o,--output", synth_out, "Model UHM path")->required();
  synth->add_option("--vertices", synth_v)->capture_default_str();
  synth->add_option("--joints", synth_j)->capture_default_str();
  synth->add_option("--shape-dim", synth_b)->capture_default_str();
  synth->add_option("--fine", synth_fine, "Also write a fine-convention stand-in model here");
  synth->add_option("--fine-vertices", synth_fv)->capture_default_str();
  synth->add_option("--fine-joints", synth_fj)->capture_default_str();
  synth->add_option("--correspondences", synth_corr, "Coarse->fine vertex pairs for the stand-in");

  // synth-keypoints
  auto* synth_kp = app.add_subcommand("synth-keypoints", "Sample random states and write their keypoints");
  std::string kp_model, kp_out, kp_states;
  int kp_frames = 10;
  double kp_noise = 0, kp_theta = 0.6;
  bool kp_independent = false;
  int kp_keyframes = 15;
  synth_kp->add_option("--model", kp_model)->required()->check(CLI::ExistingFile);
  synth_kp->add_option("-o,--output", kp_out, "Keypoint JSONL")->required();
  synth_kp->add_option("--states", kp_states, "Ground-truth states JSONL");
  synth_kp->add_option("--frames", kp_frames)->capture_default_str();
  synth_kp->add_option("--noise", kp_noise, "Gaussian keypoint noise, mm")->capture_default_str();
  synth_kp->add_option("--theta-max", kp_theta, "Joint angle bound, rad")->capture_default_str();
  synth_kp->add_option("--keyframe-interval", kp_keyframes, "Frames between random keyframes")->capture_default_str();
  synth_kp->add_flag("--independent", kp_independent, "Unrelated random pose per frame");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a keypoint sequence and write the run directory");
  RunConfig run;
  bool fit_meshes = false;
  fit->add_option("--model", run.model_path);
  fit->add_option("--input", run.input_path, "Keypoint JSONL");
  fit->add_option("--conventions", run.conventions_path);
  fit->add_option("--regressor", run.regressor_path);
  fit->add_option("--fused-spec", run.fused_spec_path);
  fit->add_option("--reference", run.reference_path, "Ground-truth states JSONL");
  fit->add_option("-o,--output-dir", run.output_dir);
  fit->add_flag("--meshes", fit_meshes, "Write one OBJ per frame");

  // derive-joints
  auto* derive = app.add_subcommand("derive-joints", "Predict fine-convention joints from fitted meshes");
  std::string dj_reg, dj_model, dj_states, dj_mesh, dj_out;
  derive->add_option("--regressor", dj_reg)->required()->check(CLI::ExistingFile);
  derive->add_option("--model", dj_model, "Coarse model, with --states")->check(CLI::ExistingFile);
  derive->add_option("--states", dj_states, "Fitted states JSONL")->check(CLI::ExistingFile);
  derive->add_option("--mesh", dj_mesh, "Single OBJ mesh")->check(CLI::ExistingFile);
  derive->add_option("-o,--output", dj_out, "Skeleton JSONL")->required();

  // train-regressor
  auto* train = app.add_subcommand("train-regressor", "Train the coarse-mesh to fine-joint MLP");
  std::string tr_coarse, tr_fine, tr_corr, tr_out;
  int tr_samples = 5000;
  std::vector<int> tr_hidden{256, 256};
  TrainConfig tr_cfg;
  train->add_option("--coarse", tr_coarse)->required()->check(CLI::ExistingFile);
  train->add_option("--fine", tr_fine)->required()->check(CLI::ExistingFile);
  train->add_option("--correspondences", tr_corr, "Coarse->fine vertex pairs")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--output", tr_out)->required();
  train->add_option("--samples", tr_samples)->capture_default_str();
  train->add_option("--hidden", tr_hidden)->delimiter(',')->capture_default_str();
  train->add_option("--epochs", tr_cfg.epochs)->capture_default_str();
  train->add_option("--lr", tr_cfg.lr)->capture_default_str();
  train->add_option("--batch", tr_cfg.batch)->capture_default_str();
  train->add_option("--lr-decay", tr_cfg.lr_decay)->capture_default_str();

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Merge coarse and fine skeletons into the unified joint set");
  std::string fu_coarse, fu_fine, fu_spec, fu_model, fu_out;
  fuse->add_option("--coarse", fu_coarse, "Coarse skeleton JSONL")->required()->check(CLI::ExistingFile);
  fuse->add_option("--fine", fu_fine, "Fine skeleton JSONL")->required()->check(CLI::ExistingFile);
  fuse->add_option("--spec", fu_spec, "Fused skeleton spec")->check(CLI::ExistingFile);
  fuse->add_option("--model", fu_model, "Coarse model, for the default spec")->check(CLI::ExistingFile);
  fuse->add_option("-o,--output", fu_out)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "PJ/PV statistics of fitted states against reference states");
  std::string ev_model, ev_pred, ev_ref, ev_out, ev_csv, ev_name = "synthetic";
  eval->add_option("--model", ev_model)->required()->check(CLI::ExistingFile);
  eval->add_option("--predicted", ev_pred)->required()->check(CLI::ExistingFile);
  eval->add_option("--reference", ev_ref)->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--output", ev_out, "Metrics JSON (stdout when omitted)");
  eval->add_option("--csv", ev_csv, "Append-free CSV with one row");
  eval->add_option("--dataset", ev_name, "Dataset column of the CSV row")->capture_default_str();

  // export-mesh
  auto* exportm = app.add_subcommand("export-mesh", "Write a posed or rest mesh as OBJ");
  std::string ex_model, ex_states, ex_out;
  int ex_frame = 0;
  exportm->add_option("--model", ex_model)->required()->check(CLI::ExistingFile);
  exportm->add_option("--states", ex_states, "States JSONL; rest mesh when omitted")->check(CLI::ExistingFile);
  exportm->add_option("--frame", ex_frame)->capture_default_str();
  exportm->add_option("-o,--output", ex_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!synth_fine.empty()) {
        const StandInPair pair = synth_stand_in_pair(seed, synth_v, synth_j, synth_fv, synth_fj, synth_b);
        save_model(pair.coarse, synth_out);
        save_model(pair.fine, synth_fine);
        if (!synth_corr.empty()) write_file(synth_corr, format_correspondences(pair.correspondences));
        log("wrote " + synth_out + " and " + synth_fine);
      } else {
        save_model(synth_model(seed, synth_v, synth_j, synth_b), synth_out);
        log("wrote " + synth_out);
      }
    } else if (synth_kp->parsed()) {
      const HandModel model = load_model(kp_model);
      StateSampler sampler;
      sampler.theta_max = kp_theta;
      const SyntheticSequence seq = kp_independent ? synth_sequence(model, kp_frames, seed, kp_noise, sampler)
                                                   : synth_motion(model, kp_frames, seed, kp_noise, sampler, kp_keyframes);
      write_file(kp_out, format_keypoints(seq.frames));
      if (!kp_states.empty()) {
        std::vector<StateRecord> recs;
        for (std::size_t k = 0; k < seq.states.size(); ++k) {
          StateRecord r;
          r.frame = static_cast<int>(k);
          r.timestamp = seq.frames[k].timestamp;
          r.state = seq.states[k];
          recs.push_back(r);
        }
        write_file(kp_states, format_states(recs));
      }
      log("wrote " + std::to_string(kp_frames) + " frames");
    } else if (fit->parsed()) {
      RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
      if (!run.model_path.empty()) cfg.model_path = run.model_path;
      if (!run.input_path.empty()) cfg.input_path = run.input_path;
      if (!run.conventions_path.empty()) cfg.conventions_path = run.conventions_path;
      if (!run.regressor_path.empty()) cfg.regressor_path = run.regressor_path;
      if (!run.fused_spec_path.empty()) cfg.fused_spec_path = run.fused_spec_path;
      if (!run.reference_path.empty()) cfg.reference_path = run.reference_path;
      if (!run.output_dir.empty()) cfg.output_dir = run.output_dir;
      if (fit_meshes) cfg.write_meshes = true;
      if (cfg.conventions_path.empty()) cfg.conventions_path = default_conventions();
      if (app.get_option("--seed")->count() > 0 || config_path.empty()) cfg.seed = seed;
      const PipelineResult result = run_pipeline(cfg);
      log("fitted " + std::to_string(result.report.frames.size()) + " frames, " +
          std::to_string(result.report.failed()) + " failed");
      if (result.eval) {
        std::cout << "PJ " << format_double(result.eval->pj_euclid) << " mm, PV "
                  << format_double(result.eval->pv_euclid) << " mm\n";
      }
      if (result.report.failed() > 0) return 1;
    } else if (derive->parsed()) {
      const MlpRegressor reg = load_regressor(dj_reg);
      std::vector<SkeletonRecord> out;
      if (!dj_mesh.empty()) {
        out.push_back({0, predict_joints(reg, import_obj(dj_mesh))});
      } else {
        if (dj_model.empty() || dj_states.empty()) throw InvariantError("derive-joints needs --mesh or --model with --states");
        const HandModel model = load_model(dj_model);
        for (const auto& r : load_states(dj_states)) out.push_back({r.frame, predict_joints(reg, forward(model, r.state).first)});
      }
      write_file(dj_out, format_skeletons(out));
      log("wrote " + std::to_string(out.size()) + " skeletons");
    } else if (train->parsed()) {
      const HandModel coarse = load_model(tr_coarse);
      const HandModel fine = load_model(tr_fine);
      Correspondences swapped;
      for (auto [c, f] : parse_correspondences(read_file(tr_corr))) swapped.emplace_back(f, c);
      const AlignmentMap fine_to_coarse = align_models(rest_mesh(fine), rest_mesh(coarse), swapped, fine.name, coarse.name);
      log("alignment residual " + format_double(fine_to_coarse.residual_rms) + " mm");
      const TrainingSet data = build_training_set(coarse, fine, fine_to_coarse, tr_samples, seed);
      tr_cfg.seed = seed;
      const MlpRegressor reg = train_mlp(data, tr_hidden, tr_cfg);
      save_regressor(reg, tr_out);
      std::cout << "validation mean joint error " << format_double(reg.info.val_mean_error) << " mm, Lipschitz bound "
                << format_double(reg.info.lipschitz) << "\n";
    } else if (fuse->parsed()) {
      const auto coarse = parse_skeletons(read_file(fu_coarse), fu_coarse);
      const auto fine = parse_skeletons(read_file(fu_fine), fu_fine);
      if (coarse.size() != fine.size()) throw DimensionError("coarse and fine skeleton files differ in frame count");
      FusedSkeletonSpec spec;
      if (!fu_spec.empty()) {
        spec = load_fused_spec(fu_spec);
      } else {
        if (fu_model.empty()) throw InvariantError("fuse needs --spec or --model");
        if (fine.empty()) throw InvariantError("fuse: no frames");
        spec = default_fused_spec(load_model(fu_model), fine.front().skeleton.names, fine.front().skeleton.convention);
      }
      std::vector<SkeletonRecord> out;
      for (std::size_t k = 0; k < coarse.size(); ++k) {
        out.push_back({coarse[k].frame, fuse_skeletons(coarse[k].skeleton, fine[k].skeleton, spec)});
      }
      write_file(fu_out, format_skeletons(out));
    } else if (eval->parsed()) {
      const HandModel model = load_model(ev_model);
      auto frames = [&](const std::string& path) {
        std::vector<HandFrame> out;
        for (const auto& r : load_states(path)) {
          auto [mesh, skeleton] = forward(model, r.state);
          out.push_back({skeleton, mesh});
        }
        return out;
      };
      const EvalReport report = evaluate(frames(ev_pred), frames(ev_ref));
      if (ev_out.empty()) {
        std::cout << report_json(report);
      } else {
        write_file(ev_out, report_json(report));
      }
      if (!ev_csv.empty()) write_file(ev_csv, report_csv_header() + report_csv_row(ev_name, report));
    } else if (exportm->parsed()) {
      const HandModel model = load_model(ex_model);
      Mesh mesh;
      if (ex_states.empty()) {
        mesh = rest_mesh(model);
      } else {
        const auto states = load_states(ex_states);
        if (ex_frame < 0 || ex_frame >= static_cast<int>(states.size())) {
          throw InvariantError("--frame " + std::to_string(ex_frame) + " out of range");
        }
        mesh = forward(model, states[ex_frame].state).first;
      }
      export_obj(mesh, ex_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "handfit: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
