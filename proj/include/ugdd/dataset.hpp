#pragma once

// On-disk datasets: images/<id>.png, masks/<id>.png and manifest.csv with
// paths relative to the manifest.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ugdd/synth.hpp"

namespace ugdd::data {

inline constexpr const char* kManifestHeader = "id,image,mask,sigma,radius,harmonics,artifacts,seed";

struct ManifestRow {
  std::string id, image, mask;
  synth::SampleMeta meta;
};

/// Writes PNGs and the manifest under `dir` (created if missing). Returns the manifest path.
std::string write_dataset(const std::string& dir, const std::vector<synth::Sample>& samples);
std::vector<ManifestRow> read_manifest(const std::string& path);
/// Loads every row, resized to size x size. Throws IngestionError naming the file.
std::vector<synth::Sample> load_dataset(const std::string& manifest_path, std::size_t size, std::size_t channels);

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of 0..n-1, then contiguous cuts of llround(f0 n) and
/// llround(f1 n); the test part takes the rest.
Split split(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed);

template <class T>
std::vector<T> select(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(items.at(i));
  return out;
}

}  // namespace ugdd::data
