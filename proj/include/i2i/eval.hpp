#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "i2i/networks.hpp"
#include "i2i/synth.hpp"

namespace i2i {

/// Frozen random linear map from flattened images to 64 features; unit-norm rows.
class FeatureProjector {
 public:
  static constexpr std::size_t kFeatures = 64;

  FeatureProjector(std::uint64_t seed, std::size_t input_size);
  /// [N, ...] batch -> N x 64 feature rows.
  Eigen::MatrixXd project(const Tensor& images) const;
  const Eigen::MatrixXd& matrix() const { return weights_; }

 private:
  Eigen::MatrixXd weights_;  // 64 x input_size
};

struct DiversityResult {
  /// Mean feature distance over random pairs drawn from all inputs x samples.
  double score = 0.0;
  /// Same, with both members of each pair taken from one input; isolates the
  /// variation that v alone produces.
  double per_input = 0.0;
  std::size_t inputs = 0;
  std::size_t samples_per_input = 0;
  std::size_t pairs = 0;
};

/// K translations per input with independent v ~ N(0, I), scored over random
/// pairs of distinct outputs. `fixed_v` gives every output one shared code,
/// which is the no-sampling baseline: only content varies.
DiversityResult diversity_score(const Networks& nets, const Tensor& x_inputs, std::size_t k,
                                const FeatureProjector& projector, std::size_t pairs, std::uint64_t seed,
                                bool fixed_v = false);
/// Same statistics from precomputed features: rows [i*k, (i+1)*k) belong to input i.
DiversityResult diversity_from_features(const Eigen::MatrixXd& features, std::size_t inputs, std::size_t k,
                                        std::size_t pairs, std::uint64_t seed);

/// Frechet distance between the projected feature statistics. Needs >= 65 images per side.
double fid_lite(const Tensor& generated, const Tensor& real, const FeatureProjector& projector);

/// G_y(E_xc(x), mean of E_yd(reference)).
Tensor style_transfer(const Networks& nets, const Tensor& x, const Tensor& reference_y);

/// Shape pixels of a [3, H, W] image: any channel at least 0.5 above the -1 background.
std::vector<bool> shape_mask(const Tensor& image);
/// Region enclosed by a [1, H, W] outline: everything not reachable from the
/// border through background pixels.
std::vector<bool> filled_outline(const Tensor& outline);
double iou(const std::vector<bool>& a, const std::vector<bool>& b);
/// Circular mean hue over the shape mask; nullopt when the mask has no coloured pixel.
std::optional<double> mean_hue(const Tensor& image);
/// Average ranks for ties; 0 when either side is constant.
double spearman(std::span<const double> a, std::span<const double> b);

struct ProbeResult {
  std::vector<double> rho_per_coordinate;
  double max_abs_rho = 0.0;
  double median_iou = 0.0;
  std::size_t specs = 0;
};

inline constexpr std::array<double, 5> kSweepValues{-2.0, -1.0, 0.0, 1.0, 2.0};

/// Hue control: sweep each v coordinate (others 0) over kSweepValues with c
/// fixed, unwrap the output hues along the sweep, average Spearman rho over
/// specs. Shape preservation: IoU of the filled input outline against the
/// v = 0 output's shape mask, median over specs.
ProbeResult disentanglement_probe(const Networks& nets, const std::vector<SynthSpec>& x_specs);

struct EvalSettings {
  std::uint64_t seed = 0;
  std::uint64_t projector_seed = 0;
  std::size_t diversity_inputs = 100;
  std::size_t diversity_k = 20;
  std::size_t diversity_pairs = 2000;
  std::size_t fid_samples = 2000;
  std::size_t probe_specs = 100;
};

struct EvalReport {
  DiversityResult diversity;
  double diversity_baseline = 0.0;
  double fid_lite = 0.0;
  std::size_t fid_generated = 0;
  std::size_t fid_real = 0;
  ProbeResult probe;
  EvalSettings settings;
};

/// Runs every metric on a dataset. Throws InsufficientDataError when fewer than
/// 65 images per side are available for the Frechet statistics.
EvalReport evaluate(const Networks& nets, const Dataset& data, const EvalSettings& settings);

/// JSON text with every report field, the config echo and the checkpoint name.
std::string report_json(const EvalReport& report, const std::string& config_json, const std::string& checkpoint);

/// Contact sheets: translations with sampled v (rows: inputs), and the sweep of
/// every v coordinate for the first input (rows: coordinates).
void write_contact_sheets(const std::filesystem::path& dir, const Networks& nets, const Dataset& data,
                          const EvalSettings& settings);

}  // namespace i2i
