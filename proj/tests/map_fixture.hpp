#pragma once
// Production-degree maps shared by the tests. The 3D map is loaded from the
// build's map directory when a previous step has written it and fitted (and
// saved) otherwise.

#include <filesystem>

#include "bingham/cheb_map.hpp"

namespace fixture {

inline constexpr int kProductionDegree = 80;

inline std::filesystem::path map_dir() { return BINGHAM_MAP_DIR; }

inline const bingham::ChebMap1D& map_2d() {
  static const bingham::ChebMap1D map = bingham::fit_map_2d(kProductionDegree);
  return map;
}

inline const bingham::ChebMap2D& map_3d() {
  static const bingham::ChebMap2D map = [] {
    const auto path = map_dir() / "bingham_d3_M80.map";
    if (std::filesystem::exists(path)) {
      return std::get<bingham::ChebMap2D>(bingham::load_map(path));
    }
    bingham::ChebMap2D fitted = bingham::fit_map_3d(kProductionDegree);
    std::filesystem::create_directories(map_dir());
    bingham::save_map(fitted, path);
    return fitted;
  }();
  return map;
}

}  // namespace fixture
