#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "splitmix/ensemble/base_models.hpp"
#include "splitmix/error.hpp"
#include "splitmix/nn.hpp"

// Base-set checkpoint directory:
//   manifest.json   architecture, atom width, build options, seeds, mixing
//                   order and per-base validation accuracy
//   base_<i>.bin    base i in the model checkpoint format

namespace splitmix::ensemble {

inline constexpr int kManifestVersion = 1;

inline std::string base_file(std::size_t i) { return "base_" + std::to_string(i) + ".bin"; }

inline nlohmann::json manifest_json(const BaseModelSet& set) {
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < set.size(); ++i) files.push_back(base_file(i));
  return {{"format", "splitmix-bases"},
          {"version", kManifestVersion},
          {"M", set.size()},
          {"r", set.atom().str()},
          {"architecture", nn::arch_to_json(set.arch)},
          {"bn_mode", nn::to_string(set.build.bn_mode)},
          {"dual_bn", set.build.dual_bn},
          {"rescale_layer", set.build.rescale_layer},
          {"init", set.build.init == nn::InitScheme::rescaled ? "rescaled" : "shard"},
          {"seeds", set.seeds},
          {"order", set.order},
          {"val_acc", set.val_acc},
          {"files", files}};
}

inline void save_base_set(const BaseModelSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < set.size(); ++i) nn::save_checkpoint((dir / base_file(i)).string(), set.bases[i]);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
  os << manifest_json(set).dump(2) << '\n';
}

inline BaseModelSet load_base_set(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw DataError("no manifest at " + path.string());
  nlohmann::json j;
  try {
    is >> j;
    if (j.at("format") != "splitmix-bases") throw DataError(path.string() + ": not a base-set manifest");
    if (j.at("version").get<int>() != kManifestVersion) throw DataError(path.string() + ": unsupported version");
    BaseModelSet set;
    set.arch = nn::arch_from_json(j.at("architecture"), "manifest.architecture");
    const auto M = j.at("M").get<std::size_t>();
    set.build.width = nn::WidthRatio(1, static_cast<long>(M));
    set.build.bn_mode = nn::parse_bn_mode(j.at("bn_mode").get<std::string>());
    set.build.dual_bn = j.at("dual_bn").get<bool>();
    set.build.rescale_layer = j.at("rescale_layer").get<bool>();
    set.build.init = j.at("init") == "shard" ? nn::InitScheme::shard : nn::InitScheme::rescaled;
    set.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    set.order = j.at("order").get<std::vector<std::size_t>>();
    set.val_acc = j.at("val_acc").get<std::vector<double>>();
    const auto files = j.at("files").get<std::vector<std::string>>();
    if (set.seeds.size() != M || set.order.size() != M || files.size() != M)
      throw DataError(path.string() + ": inconsistent base count");
    for (std::size_t i = 0; i < M; ++i) {
      nn::BuildOptions b = set.build;
      b.seed = set.seeds[i];
      nn::Model m = nn::build_model(set.arch, b);
      nn::load_checkpoint((dir / files[i]).string(), m);
      set.bases.push_back(std::move(m));
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace splitmix::ensemble
