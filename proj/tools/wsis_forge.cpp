// wsis_forge: pipeline stages as subcommands that communicate through files.
//
//   wsis_forge cues     --activations act.npy --params pam.json --out cues.json
//   wsis_forge transfer --wsss sem.npy|sem.png --cues cues.json --out-dir dir
//   wsis_forge run      --config experiment.json

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "wsis/experiment.hpp"
#include "wsis/json_io.hpp"
#include "wsis/npy.hpp"
#include "wsis/pam.hpp"
#include "wsis/png_mask.hpp"
#include "wsis/transfer.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kValidation = 2, kUsage = 64, kConfig = 65, kInternal = 70 };

struct CuesArgs {
  fs::path activations, params, out;
  double delta_p = wsis::kDefaultCueThreshold;
};

struct TransferArgs {
  fs::path wsss, cues, points, out_dir;
};

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw wsis::IoError("no such file '" + p.string() + "'");
}

int cmd_cues(const CuesArgs& a) {
  require_file(a.activations);
  require_file(a.params);
  const auto act = wsis::npy::load_activation_stack(a.activations);
  const auto params = wsis::json::pam_params_from_json(wsis::json::read_file(a.params));
  const auto cues = wsis::extract_instance_cues(wsis::pam_forward(act, params), a.delta_p);
  wsis::json::write_file(a.out, wsis::json::to_json(cues));
  return kOk;
}

wsis::SemanticMap load_wsss(const fs::path& p) {
  require_file(p);
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return wsis::png::load_mask_png(p);
  return wsis::npy::load_semantic_map(p);
}

int cmd_transfer(const TransferArgs& a) {
  const bool point_mode = !a.points.empty();
  const auto& cue_path = point_mode ? a.points : a.cues;
  require_file(cue_path);
  auto sem = load_wsss(a.wsss);
  auto cues = wsis::json::cues_from_json(wsis::json::read_file(cue_path));

  // Classes named only by cues still get a (empty) center channel.
  int num_classes = sem.num_classes();
  for (const auto& c : cues) num_classes = std::max(num_classes, c.class_id);
  if (num_classes != sem.num_classes()) sem = wsis::SemanticMap(sem.labels(), num_classes, sem.ignored());
  if (point_mode) cues = wsis::json::load_point_cues(cue_path, sem.grid(), num_classes);

  const auto result = wsis::transfer_knowledge(sem, cues);
  const auto targets = wsis::labels_to_targets(result.labels, num_classes, wsis::kDefaultCenterSigma);

  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw wsis::IoError("cannot create '" + a.out_dir.string() + "': " + ec.message());
  wsis::npy::save_array(a.out_dir / "center.npy", wsis::npy::to_array(targets.center.channels()));
  wsis::npy::save_array(a.out_dir / "offset.npy", wsis::npy::to_array(targets.offset));
  wsis::json::write_file(a.out_dir / "labels.json", wsis::json::to_json(result.labels));
  wsis::json::write_file(a.out_dir / "diagnostics.json", wsis::json::to_json(result.diagnostics));
  return kOk;
}

int cmd_run(const fs::path& config, std::optional<int> threads) {
  auto cfg = wsis::load_config(config);
  if (threads) cfg.threads = *threads;
  const auto res = wsis::run_experiment(cfg);
  const auto& last = res.rows.back();
  std::cout << "iterations " << last.iteration << "  tp " << last.true_positives << "  mAP50 "
            << wsis::format_number(last.map50) << "  -> " << (cfg.output_dir / "metrics.csv").string() << '\n';
  return kOk;
}

std::optional<int> threads_from_env() {
  const char* v = std::getenv("WSIS_FORGE_THREADS");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used == std::string(v).size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  throw CLI::ValidationError("WSIS_FORGE_THREADS", "must be a positive integer");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised instance segmentation pipeline stages"};
  app.require_subcommand(1);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "Worker threads (falls back to WSIS_FORGE_THREADS)")
      ->check(CLI::PositiveNumber);

  CuesArgs cues_args;
  auto* cues = app.add_subcommand("cues", "Sharpen activations and extract per-instance peak cues");
  cues->add_option("--activations", cues_args.activations, "Activation stack (K,H,W) .npy")->required();
  cues->add_option("--params", cues_args.params, "Controller parameters JSON {weights, bias}")->required();
  cues->add_option("--delta-p", cues_args.delta_p, "Peak threshold")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  cues->add_option("--out", cues_args.out, "Cue JSON output")->required();

  TransferArgs tr_args;
  auto* transfer = app.add_subcommand("transfer", "Turn semantic masks and cues into pseudo instance labels");
  transfer->add_option("--wsss", tr_args.wsss, "Semantic map (.npy int32 or .png)")->required();
  auto* cue_opt = transfer->add_option("--cues", tr_args.cues, "Peak cue JSON");
  auto* point_opt = transfer->add_option("--points", tr_args.points, "Point label JSON");
  cue_opt->excludes(point_opt);
  transfer->add_option("--out-dir", tr_args.out_dir, "Output directory")->required();

  fs::path config;
  auto* run = app.add_subcommand("run", "Run a synthetic training experiment");
  run->add_option("--config", config, "Experiment JSON")->required();

  try {
    app.parse(argc, argv);
    if (transfer->parsed() && tr_args.cues.empty() == tr_args.points.empty())
      throw CLI::RequiredError("exactly one of --cues or --points");
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    std::optional<int> threads = threads_flag > 0 ? std::optional<int>(threads_flag) : threads_from_env();
    if (cues->parsed()) return cmd_cues(cues_args);
    if (transfer->parsed()) return cmd_transfer(tr_args);
    return cmd_run(config, threads);
  } catch (const CLI::ParseError& e) {
    std::cerr << "wsis_forge: " << e.what() << '\n';
    return kUsage;
  } catch (const wsis::ConfigError& e) {
    std::cerr << "wsis_forge: " << e.what() << '\n';
    for (const auto& k : e.keys()) std::cerr << "  " << k << '\n';
    return kConfig;
  } catch (const wsis::DivergenceError& e) {
    std::cerr << "wsis_forge: " << e.what() << '\n';
    return kInternal;
  } catch (const wsis::Error& e) {
    std::cerr << "wsis_forge: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "wsis_forge: internal error: " << e.what() << '\n';
    return kInternal;
  }
}
