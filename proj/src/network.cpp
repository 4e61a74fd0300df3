#include "ugdd/network.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

#include "ugdd/errors.hpp"
#include "ugdd/wavelet.hpp"

namespace ugdd {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(DdMode m) {
  switch (m) {
    case DdMode::SingleS: return "single-S";
    case DdMode::SS: return "S&S";
    case DdMode::FF: return "F&F";
    case DdMode::SF: return "S&F";
  }
  return "?";
}

DdMode parse_dd_mode(const std::string& s) {
  const std::string v = lower(trim(s));
  if (v == "single-s" || v == "single" || v == "s") return DdMode::SingleS;
  if (v == "s&s" || v == "ss") return DdMode::SS;
  if (v == "f&f" || v == "ff") return DdMode::FF;
  if (v == "s&f" || v == "sf") return DdMode::SF;
  throw ConfigError("unknown dd_mode '" + s + "' (expected single-S, S&S, F&F or S&F)");
}

void BackboneConfig::validate() const {
  if (levels < 1) throw ConfigError("backbone.levels must be >= 1");
  if (base_channels < 1) throw ConfigError("backbone.base_channels must be >= 1");
  if (num_classes != 2) throw ConfigError("backbone.num_classes must be 2");
  if (in_channels != 1 && in_channels != 3) throw ConfigError("backbone.in_channels must be 1 or 3");
  const std::size_t div = std::size_t{1} << levels;
  if (height == 0 || width == 0 || height % div != 0 || width % div != 0) {
    throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by 2^levels = " + std::to_string(div));
  }
}

std::vector<std::string> fusion_site_names(std::size_t levels) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i + 1 < levels; ++i) names.push_back("enc" + std::to_string(i));
  names.push_back("mid");
  for (std::size_t i = levels - 1; i-- > 0;) names.push_back("dec" + std::to_string(i));
  return names;
}

std::size_t fusion_site_channels(const BackboneConfig& cfg, const std::string& site) {
  if (site == "mid") return cfg.channels_at(cfg.levels - 1);
  if (site.size() > 3 && (site.rfind("enc", 0) == 0 || site.rfind("dec", 0) == 0)) {
    return cfg.channels_at(std::stoul(site.substr(3)));
  }
  throw ConfigError("unknown fusion site '" + site + "'");
}

std::vector<bool> parse_fusion_sites(const BackboneConfig& cfg) {
  const auto names = fusion_site_names(cfg.levels);
  std::vector<bool> on(names.size(), false);
  const std::string choice = lower(trim(cfg.fusion_sites));
  if (choice == "all") return std::vector<bool>(names.size(), true);
  if (choice == "none" || choice.empty()) return on;
  if (choice == "coarse") {
    // Token attention is quadratic in h*w; keep sites with at most 256 tokens, plus mid.
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::size_t level = names[i] == "mid" ? cfg.levels - 1 : std::stoul(names[i].substr(3));
      on[i] = names[i] == "mid" || (cfg.height >> level) * (cfg.width >> level) <= 256;
    }
    return on;
  }
  std::stringstream ss(choice);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    auto it = std::find(names.begin(), names.end(), item);
    if (it == names.end()) throw ConfigError("unknown fusion site '" + item + "'");
    on[static_cast<std::size_t>(it - names.begin())] = true;
  }
  return on;
}

DualNetwork::Conv DualNetwork::make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                                         Rng& rng) {
  const std::size_t fan_in = cin * k * k;
  Conv c;
  c.w = params_.add(name + ".w", uniform_init(Shape{cout, cin, k, k}, fan_in, rng));
  c.b = params_.add(name + ".b", uniform_init(Shape{1, cout, 1, 1}, fan_in, rng));
  return c;
}

DualNetwork::Conv DualNetwork::make_up(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
  const std::size_t fan_in = cin * 4;
  Conv c;
  c.w = params_.add(name + ".w", uniform_init(Shape{cin, cout, 2, 2}, fan_in, rng));
  c.b = params_.add(name + ".b", uniform_init(Shape{1, cout, 1, 1}, fan_in, rng));
  return c;
}

DualNetwork::Branch DualNetwork::make_branch(const std::string& p, Rng& rng) {
  const std::size_t L = cfg_.levels;
  Branch br;
  std::size_t cin = cfg_.in_channels;
  for (std::size_t i = 0; i + 1 < L; ++i) {
    const std::size_t c = cfg_.channels_at(i);
    const std::string n = p + ".enc" + std::to_string(i);
    br.enc.push_back({make_conv(n + ".a", cin, c, 3, rng), make_conv(n + ".b", c, c, 3, rng)});
    cin = c;
  }
  const std::size_t cm = cfg_.channels_at(L - 1);
  br.mid = {make_conv(p + ".mid.a", cin, cm, 3, rng), make_conv(p + ".mid.b", cm, cm, 3, rng)};
  br.up.resize(L - 1);
  br.dec.resize(L - 1);
  for (std::size_t i = L - 1; i-- > 0;) {
    const std::size_t c = cfg_.channels_at(i);
    const std::string n = p + ".dec" + std::to_string(i);
    br.up[i] = make_up(n + ".up", cfg_.channels_at(i + 1), c, rng);
    br.dec[i] = {make_conv(n + ".a", 2 * c, c, 3, rng), make_conv(n + ".b", c, c, 3, rng)};
  }
  br.head = make_conv(p + ".head", cfg_.channels_at(0), cfg_.num_classes, 1, rng);
  return br;
}

DualNetwork::DualNetwork(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  spatial_ = make_branch("s", rng);
  if (has_frequency_branch()) frequency_ = make_branch("f", rng);
  site_names_ = fusion_site_names(cfg_.levels);
  sites_.resize(site_names_.size());
  const auto on = parse_fusion_sites(cfg_);
  if (cfg_.ugbff && has_frequency_branch()) {
    for (std::size_t i = 0; i < site_names_.size(); ++i) {
      if (!on[i]) continue;
      sites_[i] = fusion::make_site(params_, "fuse." + site_names_[i], fusion_site_channels(cfg_, site_names_[i]),
                                    rng);
    }
  }
}

std::size_t DualNetwork::active_site_count() const {
  return static_cast<std::size_t>(std::count_if(sites_.begin(), sites_.end(), [](const auto& s) { return s.has_value(); }));
}

DualOutputs DualNetwork::forward(const Tensor& x, const Tensor* u_s, const Tensor* u_f, bool fusion) const {
  const Shape xs = x.shape();
  if (xs.n != 1 || xs.c != cfg_.in_channels || xs.h != cfg_.height || xs.w != cfg_.width) {
    throw DimensionError("network input " + xs.str() + " does not match configured (1," +
                         std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.height) + "," +
                         std::to_string(cfg_.width) + ")");
  }
  const bool dual = has_frequency_branch();
  if (fusion && dual && active_site_count() > 0 && (u_s == nullptr || u_f == nullptr)) {
    throw ContractError("fusion requested without uncertainty maps");
  }

  auto conv = [](const ag::Var& in, const Conv& c, std::size_t pad) { return ag::conv2d(in, c.w, c.b, {1, pad}); };
  auto block = [&](const ag::Var& in, const Block& b) { return ag::relu(conv(ag::relu(conv(in, b.a, 1)), b.b, 1)); };

  ag::Var in_s, in_f;
  {
    Tensor hf = cfg_.dd_mode == DdMode::SS || cfg_.dd_mode == DdMode::SingleS ? Tensor() : wavelet::highfreq_reconstruct(x);
    switch (cfg_.dd_mode) {
      case DdMode::SingleS: in_s = ag::constant(x); break;
      case DdMode::SS: in_s = ag::constant(x); in_f = ag::constant(x); break;
      case DdMode::FF: in_s = ag::constant(hf); in_f = ag::constant(hf); break;
      case DdMode::SF: in_s = ag::constant(x); in_f = ag::constant(std::move(hf)); break;
    }
  }

  DualOutputs out;
  std::size_t site = 0;
  auto fuse = [&](ag::Var& fs, ag::Var& ff) {
    const std::size_t idx = site++;
    if (dual && fusion && sites_[idx]) {
      const Shape s = fs.shape();
      auto us = ag::constant(fusion::rescale_uncertainty(*u_s, s.h, s.w));
      auto uf = ag::constant(fusion::rescale_uncertainty(*u_f, s.h, s.w));
      auto [ns, nf] = fusion::ugbff_fuse(fs, ff, us, uf, *sites_[idx]);
      fs = ns;
      ff = nf;
    }
    out.taps.push_back({site_names_[idx], fs, ff});
  };

  const std::size_t L = cfg_.levels;
  std::vector<ag::Var> skip_s(L - 1), skip_f(L - 1);
  ag::Var hs = in_s, hf = in_f;
  for (std::size_t i = 0; i + 1 < L; ++i) {
    hs = block(hs, spatial_.enc[i]);
    if (dual) hf = block(hf, frequency_.enc[i]);
    fuse(hs, hf);
    skip_s[i] = hs;
    skip_f[i] = hf;
    hs = ag::maxpool2d(hs, 2);
    if (dual) hf = ag::maxpool2d(hf, 2);
  }
  hs = block(hs, spatial_.mid);
  if (dual) hf = block(hf, frequency_.mid);
  fuse(hs, hf);
  for (std::size_t i = L - 1; i-- > 0;) {
    auto up = [&](const ag::Var& h, const ag::Var& skip, const Branch& br) {
      ag::Var u = ag::conv_transpose2d(h, br.up[i].w, br.up[i].b, {2, 0});
      const std::array<ag::Var, 2> parts{u, skip};
      return block(ag::concat(parts, 1), br.dec[i]);
    };
    hs = up(hs, skip_s[i], spatial_);
    if (dual) hf = up(hf, skip_f[i], frequency_);
    fuse(hs, hf);
  }
  out.feat_s = hs;
  out.p_s = ag::softmax(conv(hs, spatial_.head, 0), 1);
  if (dual) {
    out.feat_f = hf;
    out.p_f = ag::softmax(conv(hf, frequency_.head, 0), 1);
  }
  return out;
}

}  // namespace ugdd
