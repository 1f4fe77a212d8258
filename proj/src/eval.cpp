#include "i2i/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "i2i/divergence.hpp"
#include "i2i/errors.hpp"
#include "i2i/ops.hpp"
#include "i2i/rng.hpp"

namespace i2i {

namespace {

constexpr std::size_t kGenBatch = 100;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// X -> Y translations of an [N, 1, H, W] batch with [N, dim] codes, chunked.
Tensor translate(const Networks& nets, const Tensor& x, const Tensor& v) {
  NoGradGuard no_grad;
  return generate(nets, Domain::y, encode_invariant(nets, Domain::x, x), v);
}

Tensor slice_batch(const Tensor& batch, std::size_t begin, std::size_t end) {
  const std::size_t per = batch.numel() / batch.dim(0);
  auto v = batch.values().subspan(begin * per, (end - begin) * per);
  Shape s = batch.shape();
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<double>(v.begin(), v.end()));
}

Tensor image_at(const Tensor& batch, std::size_t i) {
  Tensor one = slice_batch(batch, i, i + 1);
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  return reshape(one, s);
}

Tensor concat_batches(const std::vector<Tensor>& parts) {
  std::vector<double> values;
  std::size_t n = 0;
  for (const auto& p : parts) {
    values.insert(values.end(), p.values().begin(), p.values().end());
    n += p.dim(0);
  }
  Shape s = parts.at(0).shape();
  s[0] = n;
  return Tensor(std::move(s), std::move(values));
}

// Translates in chunks so memory stays flat for large evaluation sets.
Tensor translate_chunked(const Networks& nets, const Tensor& x, const Tensor& v) {
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < x.dim(0); b += kGenBatch) {
    const std::size_t e = std::min(x.dim(0), b + kGenBatch);
    parts.push_back(translate(nets, slice_batch(x, b, e), slice_batch(v, b, e)));
  }
  return concat_batches(parts);
}

std::vector<std::size_t> first_n(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<double> ranks(std::span<const double> a) {
  std::vector<std::size_t> order(a.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a[i] < a[j]; });
  std::vector<double> r(a.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && a[order[j + 1]] == a[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

FeatureProjector::FeatureProjector(std::uint64_t seed, std::size_t input_size) : weights_(kFeatures, input_size) {
  Rng rng = make_stream(seed, "projector");
  const auto values = normal_values(rng, kFeatures * input_size);
  for (std::size_t r = 0; r < kFeatures; ++r) {
    for (std::size_t c = 0; c < input_size; ++c) weights_(r, c) = values[r * input_size + c];
  }
  weights_.rowwise().normalize();
}

Eigen::MatrixXd FeatureProjector::project(const Tensor& images) const {
  const std::size_t n = images.dim(0), d = images.numel() / n;
  if (d != static_cast<std::size_t>(weights_.cols())) {
    throw ShapeError("FeatureProjector: images flatten to " + std::to_string(d) + " values, projector expects " +
                     std::to_string(weights_.cols()));
  }
  // An owned copy is fully aligned, so the product does not depend on where the tensor lives.
  const RowMat flat = Eigen::Map<const RowMat>(images.values().data(), n, d);
  return flat * weights_.transpose();
}

DiversityResult diversity_from_features(const Eigen::MatrixXd& features, std::size_t inputs, std::size_t k,
                                        std::size_t pairs, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("diversity: need at least 2 samples per input");
  if (inputs == 0 || pairs == 0) throw std::invalid_argument("diversity: need inputs and pairs");
  if (static_cast<std::size_t>(features.rows()) != inputs * k) throw ShapeError("diversity: feature row count");
  auto dist = [&](std::size_t a, std::size_t b) {
    return (features.row(static_cast<Eigen::Index>(a)) - features.row(static_cast<Eigen::Index>(b))).norm();
  };
  const std::size_t total = inputs * k;
  Rng global = make_stream(seed, "diversity-pairs");
  Rng local = make_stream(seed, "diversity-pairs-within");
  double sum_global = 0.0, sum_local = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const std::size_t a = global() % total;
    std::size_t b = global() % (total - 1);
    if (b >= a) ++b;
    sum_global += dist(a, b);

    const std::size_t i = local() % inputs, s = local() % k;
    std::size_t t = local() % (k - 1);
    if (t >= s) ++t;
    sum_local += dist(i * k + s, i * k + t);
  }
  const double n = static_cast<double>(pairs);
  return {sum_global / n, sum_local / n, inputs, k, pairs};
}

DiversityResult diversity_score(const Networks& nets, const Tensor& x_inputs, std::size_t k,
                                const FeatureProjector& projector, std::size_t pairs, std::uint64_t seed,
                                bool fixed_v) {
  if (k < 2) throw std::invalid_argument("diversity: need at least 2 samples per input");
  const std::size_t m = x_inputs.dim(0), dim = nets.arch.code_dim;
  Rng rng = make_stream(seed, "diversity-v");
  const Tensor shared = normal_tensor(rng, {1, dim});
  std::vector<double> repeated;
  for (std::size_t i = 0; i < m; ++i) repeated.insert(repeated.end(), shared.values().begin(), shared.values().end());
  const Tensor fixed({m, dim}, std::move(repeated));
  // Row i*k + j holds the features of sample j of input i.
  Eigen::MatrixXd features(static_cast<Eigen::Index>(m * k), static_cast<Eigen::Index>(FeatureProjector::kFeatures));
  for (std::size_t j = 0; j < k; ++j) {
    const Tensor v = fixed_v ? fixed : normal_tensor(rng, {m, dim});
    const Eigen::MatrixXd f = projector.project(translate_chunked(nets, x_inputs, v));
    for (std::size_t i = 0; i < m; ++i) features.row(static_cast<Eigen::Index>(i * k + j)) = f.row(static_cast<Eigen::Index>(i));
  }
  return diversity_from_features(features, m, k, pairs, seed);
}

double fid_lite(const Tensor& generated, const Tensor& real, const FeatureProjector& projector) {
  const std::size_t need = FeatureProjector::kFeatures + 1;
  if (generated.dim(0) < need || real.dim(0) < need) {
    throw InsufficientDataError("fid_lite: need at least " + std::to_string(need) + " images per side, got " +
                                std::to_string(generated.dim(0)) + " generated and " + std::to_string(real.dim(0)) +
                                " real");
  }
  return frechet_distance(fit_gaussian_stats(projector.project(generated)), fit_gaussian_stats(projector.project(real)));
}

Tensor style_transfer(const Networks& nets, const Tensor& x, const Tensor& reference_y) {
  if (x.dim(0) != reference_y.dim(0)) throw ShapeError("style_transfer: input and reference batch sizes differ");
  NoGradGuard no_grad;
  const Tensor c = encode_invariant(nets, Domain::x, x);
  const DiagonalGaussian q = encode_specific(nets, Domain::y, reference_y);
  return generate(nets, Domain::y, c, q.mu);
}

std::vector<bool> shape_mask(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("shape_mask: expected [C, H, W]");
  const std::size_t ch = image.dim(0), plane = image.dim(1) * image.dim(2);
  auto v = image.values();
  std::vector<bool> mask(plane, false);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < ch; ++c) {
      if (v[c * plane + p] >= -0.5) mask[p] = true;
    }
  }
  return mask;
}

std::vector<bool> filled_outline(const Tensor& outline) {
  if (outline.rank() != 3 || outline.dim(0) != 1) throw ShapeError("filled_outline: expected [1, H, W]");
  const std::size_t h = outline.dim(1), w = outline.dim(2);
  auto v = outline.values();
  std::vector<bool> outside(h * w, false);
  std::vector<std::size_t> stack;
  auto seed = [&](std::size_t r, std::size_t c) {
    const std::size_t p = r * w + c;
    if (!outside[p] && v[p] < 0.0) {
      outside[p] = true;
      stack.push_back(p);
    }
  };
  for (std::size_t r = 0; r < h; ++r) {
    seed(r, 0);
    seed(r, w - 1);
  }
  for (std::size_t c = 0; c < w; ++c) {
    seed(0, c);
    seed(h - 1, c);
  }
  while (!stack.empty()) {
    const std::size_t p = stack.back();
    stack.pop_back();
    const std::size_t r = p / w, c = p % w;
    if (r > 0) seed(r - 1, c);
    if (r + 1 < h) seed(r + 1, c);
    if (c > 0) seed(r, c - 1);
    if (c + 1 < w) seed(r, c + 1);
  }
  std::vector<bool> filled(h * w);
  for (std::size_t p = 0; p < h * w; ++p) filled[p] = !outside[p];
  return filled;
}

double iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ShapeError("iou: mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> mean_hue(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("mean_hue: expected [3, H, W]");
  const std::size_t plane = image.dim(1) * image.dim(2);
  const auto mask = shape_mask(image);
  auto v = image.values();
  double sx = 0.0, sy = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (!mask[p]) continue;
    const auto h = rgb_to_hue((v[p] + 1.0) / 2.0, (v[plane + p] + 1.0) / 2.0, (v[2 * plane + p] + 1.0) / 2.0);
    if (!h) continue;
    sx += std::cos(2.0 * std::numbers::pi * *h);
    sy += std::sin(2.0 * std::numbers::pi * *h);
    ++count;
  }
  if (count == 0 || (sx == 0.0 && sy == 0.0)) return std::nullopt;
  double hue = std::atan2(sy, sx) / (2.0 * std::numbers::pi);
  if (hue < 0.0) hue += 1.0;
  if (hue >= 1.0) hue -= 1.0;
  return hue;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

ProbeResult disentanglement_probe(const Networks& nets, const std::vector<SynthSpec>& x_specs) {
  ProbeResult out;
  out.specs = x_specs.size();
  const std::size_t dim = nets.arch.code_dim, n = x_specs.size();
  out.rho_per_coordinate.assign(dim, 0.0);
  if (n == 0) return out;
  std::vector<Tensor> inputs;
  for (const auto& s : x_specs) inputs.push_back(render_x(s));
  const Tensor x = stack_images(inputs, first_n(n));
  Tensor c;
  {
    NoGradGuard no_grad;
    c = encode_invariant(nets, Domain::x, x);
  }
  auto generate_with = [&](std::size_t coord, double value) {
    std::vector<double> v(n * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * dim + coord] = value;
    NoGradGuard no_grad;
    return generate(nets, Domain::y, c, Tensor({n, dim}, std::move(v)));
  };

  const Tensor centre = generate_with(0, 0.0);
  std::vector<double> ious;
  for (std::size_t i = 0; i < n; ++i) ious.push_back(iou(filled_outline(inputs[i]), shape_mask(image_at(centre, i))));
  out.median_iou = median(ious);

  for (std::size_t k = 0; k < dim; ++k) {
    std::vector<std::vector<std::optional<double>>> hues(n);
    for (double s : kSweepValues) {
      const Tensor outs = generate_with(k, s);
      for (std::size_t i = 0; i < n; ++i) hues[i].push_back(mean_hue(image_at(outs, i)));
    }
    double rho_sum = 0.0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::any_of(hues[i].begin(), hues[i].end(), [](const auto& h) { return !h.has_value(); })) continue;
      // Unwrap along the sweep so a path across hue 0 stays monotone.
      std::vector<double> path{*hues[i][0]};
      for (std::size_t j = 1; j < hues[i].size(); ++j) {
        double h = *hues[i][j];
        while (h - path.back() > 0.5) h -= 1.0;
        while (h - path.back() < -0.5) h += 1.0;
        path.push_back(h);
      }
      rho_sum += spearman(kSweepValues, path);
      ++valid;
    }
    out.rho_per_coordinate[k] = valid ? rho_sum / static_cast<double>(valid) : 0.0;
    out.max_abs_rho = std::max(out.max_abs_rho, std::abs(out.rho_per_coordinate[k]));
  }
  return out;
}

EvalReport evaluate(const Networks& nets, const Dataset& data, const EvalSettings& settings) {
  EvalReport r;
  r.settings = settings;
  if (data.x.empty()) throw InsufficientDataError("evaluation needs X-domain images");
  const FeatureProjector projector(settings.projector_seed, data.y.empty() ? 0 : data.y[0].numel());

  const std::size_t div_n = std::min(settings.diversity_inputs, data.x.size());
  const Tensor div_x = stack_images(data.x, first_n(div_n));
  r.diversity = diversity_score(nets, div_x, settings.diversity_k, projector, settings.diversity_pairs, settings.seed);
  r.diversity_baseline =
      diversity_score(nets, div_x, settings.diversity_k, projector, settings.diversity_pairs, settings.seed, true).score;

  r.fid_generated = std::min(settings.fid_samples, data.x.size());
  r.fid_real = std::min(settings.fid_samples, data.y.size());
  if (r.fid_real == 0) throw InsufficientDataError("evaluation needs Y-domain images");
  Rng rng = make_stream(settings.seed, "fid-v");
  const Tensor fid_x = stack_images(data.x, first_n(r.fid_generated));
  const Tensor generated = translate_chunked(nets, fid_x, normal_tensor(rng, {r.fid_generated, nets.arch.code_dim}));
  r.fid_lite = fid_lite(generated, stack_images(data.y, first_n(r.fid_real)), projector);

  std::vector<SynthSpec> specs;
  for (std::size_t i = 0; i < std::min(settings.probe_specs, data.x_manifest.entries.size()); ++i) {
    specs.push_back(data.x_manifest.entries[i].spec);
  }
  r.probe = disentanglement_probe(nets, specs);
  return r;
}

std::string report_json(const EvalReport& r, const std::string& config_json, const std::string& checkpoint) {
  using json = nlohmann::ordered_json;
  json j;
  j["note"] =
      "Features come from a fixed random projection, not a pretrained network; diversity and fid_lite are only "
      "meaningful relative to each other (e.g. across checkpoints), not against published LPIPS/FID values.";
  j["checkpoint"] = checkpoint;
  j["diversity"] = {{"score", r.diversity.score},
                    {"baseline_fixed_v", r.diversity_baseline},
                    {"per_input", r.diversity.per_input},
                    {"inputs", r.diversity.inputs},
                    {"samples_per_input", r.diversity.samples_per_input},
                    {"pairs", r.diversity.pairs}};
  j["fid_lite"] = {{"score", r.fid_lite}, {"generated", r.fid_generated}, {"real", r.fid_real}};
  j["hue_control"] = {{"max_abs_spearman", r.probe.max_abs_rho},
                      {"per_coordinate", r.probe.rho_per_coordinate},
                      {"sweep", kSweepValues},
                      {"specs", r.probe.specs}};
  j["shape_preservation"] = {{"median_iou", r.probe.median_iou}, {"specs", r.probe.specs}};
  j["seeds"] = {{"eval", r.settings.seed}, {"projector", r.settings.projector_seed}};
  j["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  return j.dump(2) + "\n";
}

void write_contact_sheets(const std::filesystem::path& dir, const Networks& nets, const Dataset& data,
                          const EvalSettings& settings) {
  constexpr std::size_t kRows = 8, kSamples = 6;
  const std::size_t n = std::min(kRows, data.x.size());
  if (n == 0) return;
  const Tensor x = stack_images(data.x, first_n(n));
  Rng rng = make_stream(settings.seed, "sheet-v");
  std::vector<std::vector<Tensor>> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i].push_back(data.x[i]);
  for (std::size_t s = 0; s < kSamples; ++s) {
    const Tensor out = translate(nets, x, normal_tensor(rng, {n, nets.arch.code_dim}));
    for (std::size_t i = 0; i < n; ++i) rows[i].push_back(image_at(out, i));
  }
  write_image(dir / "sheet_samples.ppm", contact_sheet(rows));

  const Tensor first = stack_images(data.x, first_n(1));
  std::vector<std::vector<Tensor>> sweep(nets.arch.code_dim);
  for (std::size_t k = 0; k < nets.arch.code_dim; ++k) {
    sweep[k].push_back(data.x[0]);
    for (double s : kSweepValues) {
      std::vector<double> v(nets.arch.code_dim, 0.0);
      v[k] = s;
      sweep[k].push_back(image_at(translate(nets, first, Tensor({1, nets.arch.code_dim}, std::move(v))), 0));
    }
  }
  write_image(dir / "sheet_sweep.ppm", contact_sheet(sweep));
}

}  // namespace i2i
