#pragma once

// Dual-path mini U-Net. The spatial branch sees the image, the frequency
// branch sees its high-pass wavelet reconstruction, and both share one layer
// recipe with independent weights:
//
//   level i < L-1 : [conv3x3 + relu] x 2 -> fusion site "enc<i>" -> maxpool
//   level L-1     : [conv3x3 + relu] x 2 -> fusion site "mid"
//   decoding i    : transposed conv 2x2/2, concat skip, [conv3x3 + relu] x 2
//                   -> fusion site "dec<i>"
//   head          : conv1x1 -> softmax over classes
//
// with C_i = base_channels * 2^i.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ugdd/autograd.hpp"
#include "ugdd/fusion.hpp"
#include "ugdd/params.hpp"

namespace ugdd {

enum class DdMode { SingleS, SS, FF, SF };

std::string to_string(DdMode m);
/// Accepts single-S, S&S, F&F, S&F (case-insensitive; ss/ff/sf also accepted).
DdMode parse_dd_mode(const std::string& s);

struct BackboneConfig {
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::size_t num_classes = 2;
  std::size_t in_channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  DdMode dd_mode = DdMode::SF;
  bool ugbff = true;
  /// "all", "none", "coarse" (sites with at most 256 pixels, plus mid) or a
  /// comma-separated list of site names.
  std::string fusion_sites = "all";

  /// Throws ConfigError.
  void validate() const;
  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
};

/// enc0..enc{L-2}, mid, dec{L-2}..dec0.
std::vector<std::string> fusion_site_names(std::size_t levels);
/// Channel width of a named site.
std::size_t fusion_site_channels(const BackboneConfig& cfg, const std::string& site);
/// Selected-site mask aligned with fusion_site_names. Throws ConfigError on unknown names.
std::vector<bool> parse_fusion_sites(const BackboneConfig& cfg);

struct DualOutputs {
  ag::Var p_s, p_f;        // (1,K,H,W); p_f undefined in single-S mode
  ag::Var feat_s, feat_f;  // pre-head decoder features (1,C0,H,W)
  struct Tap {
    std::string site;
    ag::Var f_s, f_f;
  };
  std::vector<Tap> taps;
};

class DualNetwork {
 public:
  DualNetwork(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  bool has_frequency_branch() const { return cfg_.dd_mode != DdMode::SingleS; }
  /// Number of fusion sites that carry parameters.
  std::size_t active_site_count() const;

  /// `x` is (1,in_channels,H,W). With fusion on, `u_s`/`u_f` are full-size
  /// (1,1,H,W) maps in [0,1]; missing maps are a ContractError.
  DualOutputs forward(const Tensor& x, const Tensor* u_s, const Tensor* u_f, bool fusion) const;

 private:
  struct Conv {
    ag::Var w, b;
  };
  struct Block {
    Conv a, b;
  };
  struct Branch {
    std::vector<Block> enc;  // L-1 encoder blocks
    Block mid;
    std::vector<Conv> up;    // index i: C_{i+1} -> C_i
    std::vector<Block> dec;  // index i at resolution level i
    Conv head;
  };

  Branch make_branch(const std::string& prefix, Rng& rng);
  Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng);
  Conv make_up(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng);

  BackboneConfig cfg_;
  ParameterStore params_;
  Branch spatial_, frequency_;
  std::vector<std::string> site_names_;
  std::vector<std::optional<fusion::FusionSiteParams>> sites_;
};

}  // namespace ugdd
