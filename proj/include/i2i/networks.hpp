#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "i2i/divergence.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

enum class Domain { x, y };

inline Domain other(Domain d) { return d == Domain::x ? Domain::y : Domain::x; }
inline std::string_view domain_name(Domain d) { return d == Domain::x ? "x" : "y"; }

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;

  bool operator==(const ImageShape&) const = default;
};

/// Architecture knobs. Defaults are the desk-scale setting: 32x32 images, a
/// 64x8x8 invariant code and an 8-dim domain-specific code.
struct ArchConfig {
  ImageShape x{1, 32, 32};
  ImageShape y{3, 32, 32};
  std::size_t code_channels = 64;
  std::size_t code_dim = 8;
  std::size_t base_filters = 32;
  std::size_t encoder_res_blocks = 3;
  std::size_t generator_res_blocks = 3;
  /// Stride-2 convolutions the specific encoders add after the shared trunk.
  std::size_t specific_downsamples = 3;
  /// Stride-2 convolutions in each PatchGAN discriminator.
  std::size_t disc_downsamples = 3;

  const ImageShape& image(Domain d) const { return d == Domain::x ? x : y; }
  std::size_t code_height() const { return x.height / 4; }
  std::size_t code_width() const { return x.width / 4; }

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  /// Canonical text identifying every shape-relevant setting.
  std::string fingerprint() const;
  /// Inverse of fingerprint(); throws FingerprintError on malformed text.
  static ArchConfig from_fingerprint(std::string_view text);

  bool operator==(const ArchConfig&) const = default;
};

/// Named parameter tensors of one network, in registration order.
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(std::string network) : network_(std::move(network)) {}

  const std::string& network() const { return network_; }
  void add(std::string name, Tensor tensor);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

 private:
  std::string network_;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// The eight maps of the translation framework. Each specific encoder holds
/// the very same trunk tensors as its invariant encoder; both cycles use these
/// objects directly.
struct Networks {
  ArchConfig arch;
  NetworkParams enc_xc{"enc_xc"}, enc_xd{"enc_xd"}, enc_yc{"enc_yc"}, enc_yd{"enc_yd"};
  NetworkParams gen_x{"gen_x"}, gen_y{"gen_y"};
  NetworkParams disc_x{"disc_x"}, disc_y{"disc_y"};

  const NetworkParams& enc_c(Domain d) const { return d == Domain::x ? enc_xc : enc_yc; }
  const NetworkParams& enc_d(Domain d) const { return d == Domain::x ? enc_xd : enc_yd; }
  const NetworkParams& gen(Domain d) const { return d == Domain::x ? gen_x : gen_y; }
  const NetworkParams& disc(Domain d) const { return d == Domain::x ? disc_x : disc_y; }

  /// Unique tensors (shared ones once), named "<network>/<layer>".
  std::vector<NamedTensor> generator_side() const;
  std::vector<NamedTensor> discriminator_side() const;
  std::vector<NamedTensor> all() const;
};

enum class InitMode { normal, zeros };

/// Conv weights ~ N(0, 0.02^2), biases 0, norm scales 1. Deterministic in seed.
/// `InitMode::zeros` zeroes every weight and bias (norm scales stay 1).
Networks init_params(const ArchConfig& arch, std::uint64_t seed, InitMode mode = InitMode::normal);

/// Freezes a parameter list for the lifetime of the guard.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<NamedTensor> params);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<NamedTensor> params_;
};

struct Encoded {
  Tensor c;
  DiagonalGaussian v;
};

/// Images are [N, C, H, W] batches of the given domain.
Tensor encode_invariant(const Networks& nets, Domain domain, const Tensor& images);
DiagonalGaussian encode_specific(const Networks& nets, Domain domain, const Tensor& images);
/// Both codes from a single pass through the shared trunk.
Encoded encode(const Networks& nets, Domain domain, const Tensor& images);
/// c: [N, code_channels, h, w]; v: [N, code_dim]. Output in (-1, 1).
Tensor generate(const Networks& nets, Domain domain, const Tensor& c, const Tensor& v);
/// [N, 1, h/2^k, w/2^k] patch logits.
Tensor discriminate(const Networks& nets, Domain domain, const Tensor& images);

}  // namespace i2i
