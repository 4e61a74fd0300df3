#include "ugdd/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ugdd/errors.hpp"
#include "ugdd/image_io.hpp"
#include "ugdd/rng.hpp"

namespace fs = std::filesystem;

namespace ugdd::data {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::string write_dataset(const std::string& dir, const std::vector<synth::Sample>& samples) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  fs::create_directories(root / "masks", ec);
  if (ec) throw IngestionError("cannot create dataset directory '" + dir + "': " + ec.message());
  const fs::path manifest = root / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) throw IngestionError("cannot write manifest '" + manifest.string() + "'");
  out << kManifestHeader << "\n";
  for (const auto& s : samples) {
    const std::string img = "images/" + s.meta.id + ".png", msk = "masks/" + s.meta.id + ".png";
    io::write_png((root / img).string(), io::to_image8(s.image));
    io::write_png((root / msk).string(), io::mask_to_image8(s.mask));
    out << s.meta.id << "," << img << "," << msk << "," << fmt(s.meta.sigma) << "," << fmt(s.meta.radius) << ","
        << s.meta.harmonics << "," << synth::artifacts_to_string(s.meta.artifacts) << "," << s.meta.seed << "\n";
  }
  if (!out) throw IngestionError("error writing manifest '" + manifest.string() + "'");
  return manifest.string();
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open manifest '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw IngestionError("manifest '" + path + "' has an unexpected header");
  }
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 8) throw IngestionError(path + ":" + std::to_string(lineno) + ": expected 8 columns");
    ManifestRow r;
    r.id = cells[0];
    r.image = (base / cells[1]).string();
    r.mask = (base / cells[2]).string();
    try {
      r.meta.id = r.id;
      r.meta.sigma = std::stod(cells[3]);
      r.meta.radius = std::stod(cells[4]);
      r.meta.harmonics = std::stoul(cells[5]);
      r.meta.artifacts = synth::parse_artifacts(cells[6]);
      r.meta.seed = std::stoull(cells[7]);
    } catch (const std::exception& e) {
      throw IngestionError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<synth::Sample> load_dataset(const std::string& manifest_path, std::size_t size, std::size_t channels) {
  std::vector<synth::Sample> out;
  for (const auto& row : read_manifest(manifest_path)) {
    synth::Sample s = io::load_pair(row.image, row.mask, size, channels);
    s.meta = row.meta;
    out.push_back(std::move(s));
  }
  return out;
}

Split split(std::size_t n, std::array<double, 3> f, std::uint64_t seed) {
  for (double v : f)
    if (!(v >= 0.0)) throw ConfigError("split fractions must be non-negative");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  const auto cut = [n](double frac) { return std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)))); };
  const std::size_t n_train = cut(f[0]);
  const std::size_t n_val = std::min(n - n_train, cut(f[1]));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

}  // namespace ugdd::data
