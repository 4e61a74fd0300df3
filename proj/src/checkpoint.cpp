#include "ugdd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "ugdd/errors.hpp"

namespace ugdd {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json config_json(const ModelConfig& c) {
  const auto& b = c.backbone;
  return {{"backbone",
           {{"levels", b.levels},
            {"base_channels", b.base_channels},
            {"num_classes", b.num_classes},
            {"in_channels", b.in_channels},
            {"height", b.height},
            {"width", b.width},
            {"dd_mode", to_string(b.dd_mode)},
            {"ugbff", b.ugbff},
            {"fusion_sites", b.fusion_sites}}},
          {"graph",
           {{"nodes", c.graph.num_nodes}, {"queries", c.graph.num_queries}, {"knn", c.graph.knn}, {"tau", c.graph.tau}}},
          {"uggr", c.uggr}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  const auto& b = j.at("backbone");
  c.backbone.levels = b.at("levels");
  c.backbone.base_channels = b.at("base_channels");
  c.backbone.num_classes = b.at("num_classes");
  c.backbone.in_channels = b.at("in_channels");
  c.backbone.height = b.at("height");
  c.backbone.width = b.at("width");
  c.backbone.dd_mode = parse_dd_mode(b.at("dd_mode").get<std::string>());
  c.backbone.ugbff = b.at("ugbff");
  c.backbone.fusion_sites = b.at("fusion_sites").get<std::string>();
  const auto& g = j.at("graph");
  c.graph.num_nodes = g.at("nodes");
  c.graph.num_queries = g.at("queries");
  c.graph.knn = g.at("knn");
  c.graph.tau = g.at("tau");
  c.uggr = j.at("uggr");
  return c;
}

json read_header(std::ifstream& in, const std::string& path) {
  std::string magic, header;
  if (!std::getline(in, magic) || magic != kCheckpointMagic) throw IngestionError("'" + path + "' is not a checkpoint");
  if (!std::getline(in, header)) throw IngestionError("checkpoint '" + path + "' has no header");
  try {
    json j = json::parse(header);
    if (j.at("version").get<int>() != kCheckpointVersion) throw IngestionError("checkpoint '" + path + "' has an unsupported version");
    return j;
  } catch (const json::exception& e) {
    throw IngestionError("checkpoint '" + path + "' header: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const CheckpointInfo& info) {
  json header = {{"version", kCheckpointVersion},
                 {"model", config_json(model.config())},
                 {"stage_reached", info.stage_reached},
                 {"epochs", info.epochs}};
  json tensors = json::array();
  std::size_t offset = 0;
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.tensor_count(); ++i) {
    const Shape s = store.vars()[i].shape();
    tensors.push_back({{"name", store.names()[i]}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += s.size();
  }
  header["tensors"] = tensors;
  header["count"] = offset;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write checkpoint '" + path + "'");
  out << kCheckpointMagic << "\n" << header.dump() << "\n";
  std::vector<float> buf;
  buf.reserve(offset);
  for (const auto& v : store.vars())
    for (double x : v.value().storage()) buf.push_back(static_cast<float>(x));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IngestionError("error writing checkpoint '" + path + "'");
}

ModelConfig read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path + "'");
  try {
    return config_from(read_header(in, path).at("model"));
  } catch (const json::exception& e) {
    throw IngestionError("checkpoint '" + path + "' config: " + e.what());
  } catch (const ConfigError& e) {
    throw IngestionError("checkpoint '" + path + "' config: " + e.what());
  }
}

Model load_checkpoint(const std::string& path, CheckpointInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path + "'");
  const json header = read_header(in, path);
  ModelConfig cfg;
  try {
    cfg = config_from(header.at("model"));
  } catch (const std::exception& e) {
    throw IngestionError("checkpoint '" + path + "' config: " + e.what());
  }
  Model model(cfg, 0);
  const std::size_t count = header.at("count");
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float))) throw IngestionError("checkpoint '" + path + "' is truncated");

  auto& store = model.params();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != store.tensor_count()) throw IngestionError("checkpoint '" + path + "' tensor count does not match the model");
  for (const auto& t : tensors) {
    const std::string name = t.at("name");
    if (!store.contains(name)) throw IngestionError("checkpoint '" + path + "' has unknown tensor '" + name + "'");
    Tensor& dst = store.get(name).mutable_value();
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    const Shape s = dst.shape();
    if (shape != std::vector<std::size_t>{s.n, s.c, s.h, s.w}) throw IngestionError("checkpoint '" + path + "' tensor '" + name + "' has the wrong shape");
    const std::size_t off = t.at("offset");
    if (off + s.size() > count) throw IngestionError("checkpoint '" + path + "' tensor '" + name + "' overruns the data");
    for (std::size_t i = 0; i < s.size(); ++i) dst[i] = buf[off + i];
  }
  if (info) {
    info->stage_reached = header.value("stage_reached", 1);
    info->epochs = header.value("epochs", std::size_t{0});
  }
  return model;
}

}  // namespace ugdd
