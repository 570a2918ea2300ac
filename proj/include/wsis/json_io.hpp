#pragma once

// JSON encodings for instance labels (run-length masks), cues, controller
// parameters, transfer diagnostics and loss reports.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "wsis/core.hpp"
#include "wsis/pam.hpp"
#include "wsis/refine.hpp"
#include "wsis/transfer.hpp"

namespace wsis::json {

using nlohmann::json;

/// Alternating run lengths over the row-major pixel order, starting with a
/// (possibly empty) run of pixels outside the mask.
inline std::vector<std::int64_t> rle_encode(const PixelSet& mask, const ImageGrid& grid) {
  std::vector<std::int64_t> counts;
  std::int64_t pos = 0;
  std::size_t i = 0;
  while (i < mask.size()) {
    const std::int64_t start = mask[i];
    std::int64_t end = start + 1;
    ++i;
    while (i < mask.size() && mask[i] == end) {
      ++end;
      ++i;
    }
    counts.push_back(start - pos);
    counts.push_back(end - start);
    pos = end;
  }
  const auto total = static_cast<std::int64_t>(grid.size());
  if (pos < total) counts.push_back(total - pos);
  return counts;
}

inline PixelSet rle_decode(const std::vector<std::int64_t>& counts, const ImageGrid& grid) {
  PixelSet mask;
  std::int64_t pos = 0;
  bool inside = false;
  for (auto run : counts) {
    if (run < 0) throw ValidationError("negative RLE run");
    if (pos + run > static_cast<std::int64_t>(grid.size())) throw ValidationError("RLE runs exceed the grid");
    if (inside)
      for (std::int64_t k = 0; k < run; ++k) mask.push_back(static_cast<std::int32_t>(pos + k));
    pos += run;
    inside = !inside;
  }
  return mask;
}

inline json to_json(const InstanceLabelSet& labels) {
  json inst = json::array();
  for (const auto& i : labels.instances()) {
    inst.push_back({{"class_id", i.class_id},
                    {"center", {i.center.y, i.center.x}},
                    {"score", i.score},
                    {"mask", {{"counts", rle_encode(i.mask, labels.grid())}}}});
  }
  return {{"height", labels.grid().height}, {"width", labels.grid().width}, {"instances", inst}};
}

inline InstanceLabelSet labels_from_json(const json& j) {
  try {
    const ImageGrid grid(j.at("height").get<int>(), j.at("width").get<int>());
    std::vector<Instance> out;
    for (const auto& e : j.at("instances")) {
      Instance i;
      i.class_id = e.at("class_id").get<int>();
      i.center = {e.at("center").at(0).get<double>(), e.at("center").at(1).get<double>()};
      i.score = e.value("score", 1.0);
      i.mask = rle_decode(e.at("mask").at("counts").get<std::vector<std::int64_t>>(), grid);
      out.push_back(std::move(i));
    }
    return InstanceLabelSet(grid, std::move(out));
  } catch (const json::exception& e) {
    throw FormatError(std::string("instance label JSON: ") + e.what());
  }
}

inline json to_json(const PeakCueSet& cues) {
  json arr = json::array();
  for (const auto& c : cues) arr.push_back({{"class_id", c.class_id}, {"y", c.y}, {"x", c.x}, {"score", c.score}});
  return arr;
}

/// Accepts [{"class_id", "y", "x"[, "score"]}]; score defaults to 1.
inline PeakCueSet cues_from_json(const json& j) {
  if (!j.is_array()) throw FormatError("cue JSON must be an array");
  PeakCueSet cues;
  try {
    for (const auto& e : j)
      cues.push_back({e.at("class_id").get<int>(), e.at("y").get<int>(), e.at("x").get<int>(), e.value("score", 1.0)});
  } catch (const json::exception& e) {
    throw FormatError(std::string("cue JSON: ") + e.what());
  }
  return cues;
}

inline json to_json(const PamParams& p) { return {{"weights", p.weights()}, {"bias", p.bias()}}; }

inline PamParams pam_params_from_json(const json& j) {
  try {
    auto bias = j.at("bias").get<std::vector<double>>();
    auto weights = j.at("weights").get<std::vector<double>>();
    const auto k = static_cast<int>(bias.size());
    return PamParams(k, std::move(weights), std::move(bias));
  } catch (const json::exception& e) {
    throw FormatError(std::string("PAM parameter JSON: ") + e.what());
  }
}

inline json to_json(const TransferDiagnostics& d) {
  json per_class = json::object();
  for (const auto& [c, n] : d.per_class)
    per_class[std::to_string(c)] = {{"components", n.components}, {"adopted", n.adopted}, {"no_cue", n.no_cue},
                                    {"multi_cue", n.multi_cue},   {"too_small", n.too_small}};
  const auto t = d.totals();
  return {{"per_class", per_class},
          {"components", t.components},
          {"adopted", t.adopted},
          {"no_cue", t.no_cue},
          {"multi_cue", t.multi_cue},
          {"too_small", t.too_small},
          {"stray_cues", d.stray_cues}};
}

inline json to_json(const LossReport& r) {
  return {{"l_center", r.l_center}, {"l_offset", r.l_offset}, {"l_sem", r.l_sem}, {"total", r.total}};
}

inline json read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

inline void write_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Point labels: [{"class_id": int, "y": int, "x": int}], score 1.
inline PeakCueSet load_point_cues(const std::filesystem::path& path, const ImageGrid& grid, int num_classes) {
  auto cues = cues_from_json(read_file(path));
  for (auto& c : cues) c.score = 1.0;
  validate_cues(cues, grid, num_classes);
  sort_cues(cues);
  return cues;
}

}  // namespace wsis::json
