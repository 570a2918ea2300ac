// End-to-end walk through one synthetic scene: activations -> sharpened
// activations -> peak cues -> pseudo labels -> self-refining training.
//
// Usage: pipeline_demo [out_dir] [seed]
//
// The input files it writes (activations.npy, pam_params.json, wsss.npy,
// wsss.png, points.json) can be fed straight to wsis_forge.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>

#include "wsis/experiment.hpp"
#include "wsis/json_io.hpp"
#include "wsis/npy.hpp"
#include "wsis/png_mask.hpp"

using namespace wsis;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? argv[1] : "wsis_demo_inputs";
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 3;

  ExperimentConfig cfg;
  cfg.scenes.drop_rate = 0.5;
  cfg.num_scenes = 1;
  cfg.seed = seed;
  cfg.iterations = 600;
  cfg.eval_interval = 100;

  try {
    const auto ps = prepare_scene(cfg, 0);
    const auto& scene = ps.scene;
    const int k = scene.activations.num_channels();

    fs::create_directories(out);
    npy::save_array(out / "activations.npy", npy::to_array(scene.activations.channels()));
    json::write_file(out / "pam_params.json", json::to_json(PamParams::constant(k, cfg.pam_bias)));
    npy::save_array(out / "wsss.npy", npy::to_array(scene.semantic.labels()));
    png::save_mask_png(out / "wsss.png", scene.semantic.labels());
    json::write_file(out / "points.json", json::to_json(scene.point_cues));

    std::cout << "scene " << seed << ": " << scene.truth.size() << " instances, " << scene.dropped.size()
              << " without a cue\n";
    std::cout << "peak cues after sharpening: " << ps.cues.size() << "\n";
    const auto t = ps.transfer.diagnostics.totals();
    std::cout << "components " << t.components << ": adopted " << t.adopted << ", no cue " << t.no_cue
              << ", several cues " << t.multi_cue << ", too small " << t.too_small << "\n\n";

    const auto trace = train_scene(cfg, ps, seed);
    std::cout << " iter   found  TP@0.5  mAP@0.5   loss\n";
    for (std::size_t i = 0; i < trace.checkpoints.size(); ++i) {
      const auto ev = evaluate(trace.decoded[i], scene.truth);
      std::cout << std::setw(5) << trace.checkpoints[i] << std::setw(8) << trace.decoded[i].size() << std::setw(8)
                << ev.at(0.5).true_positives << std::setw(9) << std::fixed << std::setprecision(3) << ev.at(0.5).map
                << std::setw(9) << trace.losses[i].total << "\n";
    }
    std::cout << "\ninputs for wsis_forge written to " << out.string() << "\n";
  } catch (const Error& e) {
    std::cerr << "pipeline_demo: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
