#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "samri/grid.hpp"
#include "samri/phantom.hpp"
#include "samri/preprocess.hpp"
#include "samri/rng.hpp"

namespace samri::test {

/// Scratch directory for one test, removed and recreated on each call.
inline std::filesystem::path scratch(const std::string& name) {
  const char* base = std::getenv("SAMRI_TEST_TMP");
  std::filesystem::path dir = base ? std::filesystem::path(base) : std::filesystem::temp_directory_path() / "samri_test";
  dir /= name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline BinaryMask random_mask(Xoshiro256& rng, std::size_t h, std::size_t w, double density) {
  BinaryMask m(h, w);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

/// Preprocessed samples of `patients` phantom volumes, optionally capped.
inline std::vector<SliceSample> phantom_samples(const std::string& dataset, std::uint64_t seed, std::size_t patients,
                                                std::size_t cap = 0) {
  std::vector<SliceSample> out;
  for (std::size_t p = 0; p < patients; ++p) {
    PhantomSpec spec;
    spec.seed = seed * 1000 + p;
    const auto [vol, lab] = generate_phantom(spec);
    for (auto& s : preprocess_volume(vol, lab, dataset, "p" + std::to_string(seed) + "_" + std::to_string(p))) out.push_back(std::move(s));
  }
  if (cap && out.size() > cap) out.resize(cap);
  return out;
}

}  // namespace samri::test
