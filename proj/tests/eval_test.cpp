#include <nlohmann/json.hpp>

#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "i2i/errors.hpp"
#include "i2i/eval.hpp"
#include "i2i/rng.hpp"

namespace fs = std::filesystem;

namespace i2i {
namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.code_channels = 3;
  a.code_dim = 2;
  a.base_filters = 2;
  a.encoder_res_blocks = 1;
  a.generator_res_blocks = 1;
  a.specific_downsamples = 1;
  a.disc_downsamples = 2;
  return a;
}

// Spearman without ties: 1 - 6 sum d^2 / (n (n^2 - 1)).
double textbook_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto rank = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      r[i] = 1;
      for (double w : v) r[i] += w < v[i];
    }
    return r;
  };
  const auto ra = rank(a), rb = rank(b);
  double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const double n = static_cast<double>(a.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1));
}

TEST(Spearman, MonotoneAndReversed) {
  const std::vector<double> a{1, 2, 3, 4, 5}, up{0.1, 0.5, 2, 9, 10}, down{5, 3, 1, 0, -4};
  EXPECT_DOUBLE_EQ(spearman(a, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, down), -1.0);
}

TEST(Spearman, MatchesTextbookFormulaWithoutTies) {
  Rng rng = make_stream(4, "spearman");
  for (int t = 0; t < 20; ++t) {
    const auto a = normal_values(rng, 9), b = normal_values(rng, 9);
    EXPECT_NEAR(spearman(a, b), textbook_spearman(a, b), 1e-12);
  }
}

TEST(Spearman, TiesUseAverageRanks) {
  // Ranks {1, 2.5, 2.5, 4} against {1, 2, 3, 4}: 4.5 / sqrt(4.5 * 5).
  const std::vector<double> a{1, 2, 2, 3}, b{1, 2, 3, 4};
  EXPECT_NEAR(spearman(a, b), 4.5 / std::sqrt(22.5), 1e-15);
}

TEST(Spearman, ConstantSeriesIsZero) {
  const std::vector<double> a{1, 2, 3}, c{0.4, 0.4, 0.4};
  EXPECT_EQ(spearman(a, c), 0.0);
  EXPECT_THROW(spearman(a, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Masks, IouOfKnownMasks) {
  const std::vector<bool> a{true, true, false, false}, b{false, true, true, false}, none(4, false);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(none, none), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, none), 0.0);
}

Tensor blank(std::size_t channels, double value = -1.0) {
  return Tensor({channels, 32, 32}, std::vector<double>(channels * 32 * 32, value));
}

TEST(Masks, FilledOutlineOfSquareRing) {
  // Ring on rows/cols 8..20: interior 11x11 plus the ring = 13x13.
  Tensor t = blank(1);
  auto v = t.mutable_values();
  for (int r = 8; r <= 20; ++r)
    for (int c = 8; c <= 20; ++c)
      if (r == 8 || r == 20 || c == 8 || c == 20) v[r * 32 + c] = 1.0;
  const auto filled = filled_outline(t);
  std::size_t count = 0;
  for (bool b : filled) count += b;
  EXPECT_EQ(count, 13u * 13u);
  EXPECT_TRUE(filled[14 * 32 + 14]);
  EXPECT_FALSE(filled[2 * 32 + 2]);

  // A gap in the ring lets the outside flow in.
  v[8 * 32 + 14] = -1.0;
  count = 0;
  for (bool b : filled_outline(t)) count += b;
  EXPECT_EQ(count, 13u * 13u - 11u * 11u - 1u);
}

TEST(Masks, ShapeMaskThreshold) {
  Tensor t = blank(3);
  auto v = t.mutable_values();
  v[5] = -0.5;               // exactly at threshold, channel 0
  v[2 * 1024 + 6] = 0.9;     // channel 2 only
  v[7] = -0.51;              // just under
  const auto m = shape_mask(t);
  EXPECT_TRUE(m[5]);
  EXPECT_TRUE(m[6]);
  EXPECT_FALSE(m[7]);
  EXPECT_FALSE(m[0]);
}

Tensor painted(const std::vector<std::pair<std::size_t, double>>& pixels_hue) {
  Tensor t = blank(3);
  auto v = t.mutable_values();
  for (auto [p, h] : pixels_hue) {
    const auto rgb = hue_to_rgb(h);
    for (int c = 0; c < 3; ++c) v[c * 1024 + p] = 2.0 * rgb[c] - 1.0;
  }
  return t;
}

TEST(MeanHue, SolidColour) {
  std::vector<std::pair<std::size_t, double>> px;
  for (std::size_t p = 100; p < 200; ++p) px.push_back({p, 0.4});
  EXPECT_NEAR(*mean_hue(painted(px)), 0.4, 1e-9);
}

TEST(MeanHue, CircularAcrossZero) {
  std::vector<std::pair<std::size_t, double>> px;
  for (std::size_t p = 0; p < 50; ++p) px.push_back({p, 0.95});
  for (std::size_t p = 50; p < 100; ++p) px.push_back({p, 0.05});
  const double h = *mean_hue(painted(px));
  EXPECT_NEAR(std::min(h, 1.0 - h), 0.0, 1e-9);
}

TEST(MeanHue, GreyOrEmptyIsNullopt) {
  EXPECT_FALSE(mean_hue(blank(3)).has_value());
  EXPECT_FALSE(mean_hue(blank(3, 0.3)).has_value());
}

TEST(Projector, UnitRowsAndDeterministic) {
  const FeatureProjector a(5, 48), b(5, 48), c(6, 48);
  for (Eigen::Index r = 0; r < a.matrix().rows(); ++r) EXPECT_NEAR(a.matrix().row(r).norm(), 1.0, 1e-12);
  EXPECT_EQ(a.matrix(), b.matrix());
  EXPECT_NE(a.matrix(), c.matrix());
  EXPECT_EQ(a.matrix().rows(), 64);
  EXPECT_THROW(a.project(Tensor({2, 47}, std::vector<double>(94, 0.0))), ShapeError);
}

TEST(Diversity, SingleInputPairDistance) {
  // One input, two samples 3 apart: every pair is that pair.
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(2, 4);
  f(1, 2) = 3.0;
  const DiversityResult r = diversity_from_features(f, 1, 2, 50, 1);
  EXPECT_NEAR(r.score, 3.0, 1e-12);
  EXPECT_NEAR(r.per_input, 3.0, 1e-12);
  EXPECT_THROW(diversity_from_features(f, 1, 1, 50, 1), std::invalid_argument);
  EXPECT_THROW(diversity_from_features(f, 2, 2, 50, 1), ShapeError);
}

// Brute-force oracle: every pair of distinct rows, and every within-input pair.
TEST(Diversity, ConvergesToAllPairsMeans) {
  const std::size_t inputs = 6, k = 4, total = inputs * k;
  Rng rng = make_stream(7, "diversity-test");
  const auto v = normal_values(rng, total * 5);
  Eigen::MatrixXd f(total, 5);
  for (std::size_t i = 0; i < total * 5; ++i) f.data()[i] = v[i] + (i % total < k ? 2.0 : 0.0);
  double all = 0.0, within = 0.0;
  std::size_t n_all = 0, n_within = 0;
  for (std::size_t a = 0; a < total; ++a)
    for (std::size_t b = 0; b < total; ++b) {
      if (a == b) continue;
      const double d = (f.row(a) - f.row(b)).norm();
      all += d;
      ++n_all;
      if (a / k == b / k) {
        within += d;
        ++n_within;
      }
    }
  const DiversityResult r = diversity_from_features(f, inputs, k, 200000, 3);
  EXPECT_NEAR(r.score, all / n_all, 0.01 * all / n_all);
  EXPECT_NEAR(r.per_input, within / n_within, 0.01 * within / n_within);
}

TEST(Diversity, GeneratorIgnoringCodeScoresZeroOnOneInput) {
  Eigen::MatrixXd same = Eigen::MatrixXd::Constant(5, 4, 2.5);
  const DiversityResult r = diversity_from_features(same, 1, 5, 50, 1);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_EQ(r.per_input, 0.0);
}

TEST(Diversity, FixedCodeBaselineSeesOnlyContent) {
  const Networks nets = init_params(tiny_arch(), 2);
  std::vector<Tensor> xs;
  for (std::uint64_t i = 0; i < 4; ++i) xs.push_back(render_x(spec_at(Domain::x, 8, i)));
  const std::vector<std::size_t> idx{0, 1, 2, 3}, same{0, 0, 0};
  const FeatureProjector proj(0, 3 * 32 * 32);
  const DiversityResult fixed = diversity_score(nets, stack_images(xs, idx), 3, proj, 100, 0, true);
  EXPECT_EQ(fixed.per_input, 0.0);
  EXPECT_GT(fixed.score, 0.0);
  // Identical inputs with one shared code give the same output, up to the
  // batch position's effect on GEMM rounding.
  EXPECT_NEAR(diversity_score(nets, stack_images(xs, same), 3, proj, 100, 0, true).score, 0.0, 1e-12);
  const DiversityResult r = diversity_score(nets, stack_images(xs, idx), 3, proj, 100, 0);
  EXPECT_GT(r.per_input, 0.0);
  EXPECT_EQ(r.inputs, 4u);
  EXPECT_EQ(r.samples_per_input, 3u);
  EXPECT_EQ(diversity_score(nets, stack_images(xs, idx), 3, proj, 100, 0).score, r.score);
}

TEST(FidLite, NeedsSixtyFiveImages) {
  const FeatureProjector proj(0, 12);
  Rng rng = make_stream(1, "fid");
  const Tensor small = normal_tensor(rng, {64, 12}), big = normal_tensor(rng, {200, 12});
  EXPECT_THROW(fid_lite(small, big, proj), InsufficientDataError);
  EXPECT_THROW(fid_lite(big, small, proj), InsufficientDataError);
  EXPECT_NEAR(fid_lite(big, big, proj), 0.0, 1e-9);
}

TEST(FidLite, DetectsMeanShift) {
  const FeatureProjector proj(0, 12);
  Rng rng = make_stream(2, "fid");
  const Tensor a = normal_tensor(rng, {400, 12}), b = normal_tensor(rng, {400, 12});
  std::vector<double> shifted(b.values().begin(), b.values().end());
  for (double& v : shifted) v += 1.0;
  const Tensor c({400, 12}, std::move(shifted));
  EXPECT_LT(fid_lite(a, b, proj), fid_lite(a, c, proj));
}

TEST(Probe, RangesOnUntrainedNetwork) {
  const Networks nets = init_params(tiny_arch(), 3);
  std::vector<SynthSpec> specs;
  for (std::uint64_t i = 0; i < 6; ++i) specs.push_back(spec_at(Domain::x, 4, i));
  const ProbeResult p = disentanglement_probe(nets, specs);
  EXPECT_EQ(p.specs, 6u);
  ASSERT_EQ(p.rho_per_coordinate.size(), 2u);
  for (double r : p.rho_per_coordinate) {
    EXPECT_GE(r, -1.0);
    EXPECT_LE(r, 1.0);
    EXPECT_LE(std::abs(r), p.max_abs_rho);
  }
  EXPECT_GE(p.median_iou, 0.0);
  EXPECT_LE(p.median_iou, 1.0);
}

const Dataset& eval_data() {
  static const Dataset d = [] {
    const fs::path dir = fs::temp_directory_path() / ("i2i_eval_data_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    generate_dataset(dir, 70, 5);
    return load_dataset(dir);
  }();
  return d;
}

EvalSettings small_settings() {
  EvalSettings s;
  s.diversity_inputs = 4;
  s.diversity_k = 3;
  s.diversity_pairs = 50;
  s.fid_samples = 70;
  s.probe_specs = 4;
  return s;
}

TEST(Evaluate, ReportIsDeterministic) {
  const Networks nets = init_params(tiny_arch(), 5);
  const EvalReport a = evaluate(nets, eval_data(), small_settings());
  const EvalReport b = evaluate(nets, eval_data(), small_settings());
  const std::string ja = report_json(a, "{\"x\":1}", "ckpt_1.bin");
  EXPECT_EQ(ja, report_json(b, "{\"x\":1}", "ckpt_1.bin"));
  const auto j = nlohmann::json::parse(ja);
  EXPECT_EQ(j["checkpoint"], "ckpt_1.bin");
  EXPECT_EQ(j["config"]["x"], 1);
  EXPECT_EQ(j["fid_lite"]["generated"], 70);
  EXPECT_EQ(j["diversity"]["baseline_fixed_v"], a.diversity_baseline);
  EXPECT_TRUE(j["diversity"].contains("per_input"));
  EXPECT_TRUE(j.contains("note"));
}

TEST(Evaluate, TooFewImagesForFrechet) {
  const Networks nets = init_params(tiny_arch(), 5);
  EvalSettings s = small_settings();
  s.fid_samples = 64;
  EXPECT_THROW(evaluate(nets, eval_data(), s), InsufficientDataError);
}

TEST(Evaluate, ContactSheetsWritten) {
  const Networks nets = init_params(tiny_arch(), 5);
  const fs::path dir = fs::temp_directory_path() / ("i2i_eval_sheets_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_contact_sheets(dir, nets, eval_data(), small_settings());
  EXPECT_TRUE(fs::exists(dir / "sheet_samples.ppm"));
  EXPECT_TRUE(fs::exists(dir / "sheet_sweep.ppm"));
}

}  // namespace
}  // namespace i2i
