#include "i2i/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"

namespace i2i {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "checkpoints are written in host byte order");

AdamHyper adam_hyper(const TrainConfig& cfg) {
  return {cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
}

OptimizerState make_optimizer(std::vector<NamedTensor> params, AdamHyper hyper) {
  OptimizerState s;
  s.hyper = hyper;
  s.params = std::move(params);
  for (const auto& p : s.params) {
    s.m.emplace_back(p.tensor.numel(), 0.0);
    s.v.emplace_back(p.tensor.numel(), 0.0);
  }
  return s;
}

void adam_update(OptimizerState& s, const Gradients& grads) {
  ++s.step;
  const AdamHyper& h = s.hyper;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(h.beta1, t), c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    Tensor& p = s.params[i].tensor;
    std::span<const double> g;
    if (grads.contains(p)) {
      g = grads.at(p);
      if (g.size() != p.numel()) throw ShapeError("adam_update: gradient size mismatch for " + s.params[i].name);
    }
    auto values = p.mutable_values();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k];
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
      values[k] -= h.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + h.eps);
    }
  }
}

Optimizers make_optimizers(const Networks& nets, const TrainConfig& cfg) {
  return {make_optimizer(nets.discriminator_side(), adam_hyper(cfg)),
          make_optimizer(nets.generator_side(), adam_hyper(cfg))};
}

CycleOutputs forward_cycle(const Networks& nets, Domain source, const Tensor& batch, Rng& v_rng, Rng& eps_rng) {
  const Domain target = other(source);
  const std::size_t n = batch.dim(0), dim = nets.arch.code_dim;
  CycleOutputs out;
  out.source = source;
  out.input = batch;
  Encoded enc = encode(nets, source, batch);
  out.c = enc.c;
  out.q_source = enc.v;
  out.prior_v = normal_tensor(v_rng, {n, dim});
  out.translated = generate(nets, target, out.c, out.prior_v);
  Encoded back = encode(nets, target, out.translated);
  out.c_hat = back.c;
  out.q_hat = back.v;
  out.v_sample = reparam_sample(out.q_source, normal_tensor(eps_rng, {n, dim}));
  out.recon = generate(nets, source, out.c_hat, out.v_sample);
  return out;
}

namespace {

void require_finite(const Tensor& t, const std::string& term, std::uint64_t step) {
  if (!std::isfinite(t.item())) throw NumericError(term, static_cast<long>(step));
}

}  // namespace

StepMetrics train_step(Networks& nets, Optimizers& opt, const Tensor& x, const Tensor& y, const TrainConfig& cfg,
                       std::uint64_t step) {
  if (x.dim(0) < 2 || y.dim(0) < 2) throw ShapeError("train_step: batches need at least 2 images");
  Rng v_rng = make_stream(cfg.seed, "v-prior", step);
  Rng eps_rng = make_stream(cfg.seed, "eps", step);
  Rng mmd_rng = make_stream(cfg.seed, "mmd-prior", step);

  const std::array<CycleOutputs, 2> cycles{forward_cycle(nets, Domain::x, x, v_rng, eps_rng),
                                           forward_cycle(nets, Domain::y, y, v_rng, eps_rng)};
  // Real images of each cycle's target domain.
  const std::array<const Tensor*, 2> real_target{&y, &x};

  StepMetrics m;
  m.step = step;

  std::array<CycleTerms, 2> d_terms;
  for (std::size_t i = 0; i < 2; ++i) {
    const Domain target = other(cycles[i].source);
    d_terms[i].gan_d = gan_loss_discriminator(discriminate(nets, target, *real_target[i]),
                                              discriminate(nets, target, cycles[i].translated.detach()));
    m.gan_d[i] = d_terms[i].gan_d.item();
    require_finite(d_terms[i].gan_d, "gan_d" + std::to_string(i + 1), step);
  }
  const Objectives d_obj = total_loss(d_terms, cfg);
  m.loss_d = d_obj.discriminator.item();
  adam_update(opt.disc, backward(d_obj.discriminator));

  std::array<CycleTerms, 2> g_terms;
  Objectives g_obj;
  Gradients g_grads;
  {
    FreezeGuard frozen(nets.discriminator_side());
    const double sigma = cfg.sigma();
    for (std::size_t i = 0; i < 2; ++i) {
      const CycleOutputs& c = cycles[i];
      const std::string idx = std::to_string(i + 1);
      CycleTerms& t = g_terms[i];
      t.gan_g = gan_loss_generator(discriminate(nets, other(c.source), c.translated));
      t.recon = cycle_reconstruction_loss(c, cfg);
      const Tensor prior = normal_tensor(mmd_rng, c.v_sample.shape());
      t.vae = vae_loss(c.v_sample, prior, c.input, c.recon, sigma);
      t.bound = info_bound_loss(c.q_hat);
      require_finite(t.gan_g, "gan_g" + idx, step);
      require_finite(t.recon, "recon" + idx, step);
      require_finite(t.vae, "vae" + idx, step);
      require_finite(t.bound, "bound" + idx, step);
      m.gan_g[i] = t.gan_g.item();
      m.recon[i] = t.recon.item();
      m.vae[i] = t.vae.item();
      m.bound[i] = t.bound.item();
    }
    g_obj = total_loss(g_terms, cfg);
    g_grads = backward(g_obj.generator);
  }
  m.loss_g = g_obj.generator.item();
  adam_update(opt.gen, g_grads);
  return m;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::string_view stream, std::size_t dataset_size,
                                       std::size_t batch_size, std::uint64_t step) {
  if (dataset_size == 0) throw InsufficientDataError("dataset is empty");
  if (step == 0) throw std::invalid_argument("batch_indices: steps are 1-based");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = UINT64_MAX;
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::uint64_t pos = (step - 1) * batch_size + k;
    const std::uint64_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng = make_stream(seed, stream, epoch);
      // Fisher-Yates with explicit draws: std::shuffle is not pinned across libraries.
      for (std::size_t i = dataset_size - 1; i > 0; --i) {
        std::swap(perm[i], perm[rng() % (i + 1)]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

namespace {

constexpr std::string_view kCheckpointFormat = "i2i-checkpoint";

struct Slot {
  std::string name;
  Shape shape;
  std::span<double> data;
};

std::vector<Slot> checkpoint_slots(Networks& nets, Optimizers& opt) {
  std::vector<Slot> slots;
  for (auto& p : nets.all()) slots.push_back({p.name, p.tensor.shape(), p.tensor.mutable_values()});
  for (auto [label, state] : {std::pair{"adam.disc", &opt.disc}, std::pair{"adam.gen", &opt.gen}}) {
    for (std::size_t i = 0; i < state->params.size(); ++i) {
      const auto& p = state->params[i];
      slots.push_back({std::string(label) + ".m/" + p.name, p.tensor.shape(), state->m[i]});
      slots.push_back({std::string(label) + ".v/" + p.name, p.tensor.shape(), state->v[i]});
    }
  }
  return slots;
}

}  // namespace

std::string checkpoint_name(std::uint64_t step) { return "ckpt_" + std::to_string(step) + ".bin"; }

void save_checkpoint(const fs::path& path, const Networks& nets, const Optimizers& opt, std::uint64_t step,
                     std::uint64_t seed, const std::string& config_json) {
  // Slots alias the live buffers; nothing is modified on save.
  auto slots = checkpoint_slots(const_cast<Networks&>(nets), const_cast<Optimizers&>(opt));
  json header{{"format", kCheckpointFormat},
              {"version", 1},
              {"arch", nets.arch.fingerprint()},
              {"step", step},
              {"seed", seed},
              {"adam_steps", {{"disc", opt.disc.step}, {"gen", opt.gen.step}}},
              {"config", config_json}};
  json tensors = json::array();
  for (const auto& s : slots) tensors.push_back({{"name", s.name}, {"shape", s.shape}});
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& s : slots) {
      out.write(reinterpret_cast<const char*>(s.data.data()), static_cast<std::streamsize>(s.data.size_bytes()));
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

namespace {

json read_header(std::ifstream& in, const fs::path& path) {
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || length == 0 || length > (std::uint64_t{1} << 30)) throw IoError(path.string() + ": bad checkpoint header");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IoError(path.string() + ": truncated checkpoint header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat) throw IoError(path.string() + ": not a checkpoint");
  return header;
}

void read_slots(std::ifstream& in, const fs::path& path, const json& header, std::vector<Slot>& slots,
                bool prefix_only) {
  const auto& tensors = header.at("tensors");
  if (tensors.size() < slots.size() || (!prefix_only && tensors.size() != slots.size())) {
    throw FingerprintError(path.string() + ": tensor list does not match the architecture");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != slots[i].name ||
        tensors[i].at("shape").get<Shape>() != slots[i].shape) {
      throw FingerprintError(path.string() + ": tensor " + std::to_string(i) + " is " +
                             tensors[i].at("name").get<std::string>() + ", expected " + slots[i].name);
    }
    in.read(reinterpret_cast<char*>(slots[i].data.data()), static_cast<std::streamsize>(slots[i].data.size_bytes()));
    if (!in) throw IoError(path.string() + ": truncated tensor data");
  }
}

std::ifstream open_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return in;
}

void check_fingerprint(const json& header, const ArchConfig& arch, const fs::path& path) {
  if (header.at("arch").get<std::string>() != arch.fingerprint()) {
    throw FingerprintError(path.string() + ": written for architecture " + header.at("arch").get<std::string>() +
                           ", configured " + arch.fingerprint());
  }
}

}  // namespace

std::uint64_t load_checkpoint(const fs::path& path, Networks& nets, Optimizers& opt) {
  std::ifstream in = open_checkpoint(path);
  const json header = read_header(in, path);
  check_fingerprint(header, nets.arch, path);
  auto slots = checkpoint_slots(nets, opt);
  read_slots(in, path, header, slots, false);
  opt.disc.step = header.at("adam_steps").at("disc").get<std::uint64_t>();
  opt.gen.step = header.at("adam_steps").at("gen").get<std::uint64_t>();
  return header.at("step").get<std::uint64_t>();
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  std::ifstream in = open_checkpoint(path);
  const json header = read_header(in, path);
  try {
    return {ArchConfig::from_fingerprint(header.at("arch").get<std::string>()), header.at("step").get<std::uint64_t>(),
            header.at("seed").get<std::uint64_t>(), header.value("config", "")};
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Networks load_networks(const fs::path& path) { return load_networks(path, read_checkpoint_info(path).arch); }

Networks load_networks(const fs::path& path, const ArchConfig& arch) {
  std::ifstream in = open_checkpoint(path);
  const json header = read_header(in, path);
  check_fingerprint(header, arch, path);
  Networks nets = init_params(arch, 0, InitMode::zeros);
  std::vector<Slot> slots;
  for (auto& p : nets.all()) slots.push_back({p.name, p.tensor.shape(), p.tensor.mutable_values()});
  read_slots(in, path, header, slots, true);
  return nets;
}

std::string metrics_row(const StepMetrics& m) {
  std::ostringstream row;
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    row << ',' << buf;
  };
  row << m.step;
  for (double v : {m.loss_d, m.loss_g, m.recon[0], m.recon[1], m.vae[0], m.vae[1], m.bound[0], m.bound[1], m.seconds}) {
    put(v);
  }
  return row.str();
}

namespace {

// Keeps the header and the rows of steps 1..step of an earlier run. timing.csv
// is advisory, so a short one is cut without complaint.
void truncate_log(const fs::path& path, std::string_view header, std::uint64_t step, bool strict) {
  std::ifstream in(path);
  if (!in) {
    if (strict) throw IoError("resume: cannot read " + path.string());
    return;
  }
  std::vector<std::string> lines;
  std::string line;
  while (lines.size() < step + 1 && std::getline(in, line)) lines.push_back(line);
  if (strict && (lines.empty() || lines[0] != header || lines.size() != step + 1)) {
    throw IoError("resume: " + path.string() + " does not hold " + std::to_string(step) + " metric rows");
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("resume: cannot rewrite " + path.string());
}

void write_sample_grid(const fs::path& path, const Networks& nets, const Dataset& data, std::uint64_t seed) {
  constexpr std::size_t kRows = 4, kCols = 4;
  NoGradGuard no_grad;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(kRows, data.x.size()); ++i) idx.push_back(i);
  if (idx.empty()) return;
  const Tensor x = stack_images(data.x, idx);
  const Tensor c = encode_invariant(nets, Domain::x, x);
  Rng rng = make_stream(seed, "sample-grid");
  std::vector<std::vector<Tensor>> rows(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) rows[r].push_back(data.x[idx[r]]);
  const std::size_t plane = 3 * x.dim(2) * x.dim(3);
  for (std::size_t k = 0; k < kCols; ++k) {
    const Tensor out = generate(nets, Domain::y, c, normal_tensor(rng, {idx.size(), nets.arch.code_dim}));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto v = out.values().subspan(r * plane, plane);
      rows[r].emplace_back(Shape{3, x.dim(2), x.dim(3)}, std::vector<double>(v.begin(), v.end()));
    }
  }
  write_image(path, contact_sheet(rows));
}

}  // namespace

TrainResult run_training(const TrainConfig& cfg, const Dataset& data, const TrainOptions& options) {
  cfg.validate();
  if (data.x.empty() || data.y.empty()) throw InsufficientDataError("training needs images in both domains");
  for (const auto* set : {&data.x, &data.y}) {
    const Domain d = set == &data.x ? Domain::x : Domain::y;
    const ImageShape& s = cfg.arch.image(d);
    if ((*set)[0].shape() != Shape{s.channels, s.height, s.width}) {
      throw ConfigError("dataset images of domain " + std::string(domain_name(d)) + " are " +
                        shape_str((*set)[0].shape()) + ", architecture expects " +
                        shape_str({s.channels, s.height, s.width}));
    }
  }
  std::error_code ec;
  fs::create_directories(options.out_dir / "samples", ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());

  Networks nets = init_params(cfg.arch, cfg.seed);
  Optimizers opt = make_optimizers(nets, cfg);
  std::uint64_t start = 0;
  const fs::path metrics_path = options.out_dir / "metrics.csv";
  const fs::path timing_path = options.out_dir / "timing.csv";
  if (options.resume_from) {
    start = load_checkpoint(*options.resume_from, nets, opt);
    truncate_log(metrics_path, kMetricsHeader, start, true);
    truncate_log(timing_path, "step,seconds", start, false);
  } else {
    std::ofstream out(metrics_path, std::ios::trunc);
    out << kMetricsHeader << '\n';
    if (!out) throw IoError("cannot write " + metrics_path.string());
    std::ofstream timing(timing_path, std::ios::trunc);
    timing << "step,seconds\n";
  }
  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream timing(timing_path, std::ios::app);
  if (!metrics) throw IoError("cannot append to " + metrics_path.string());

  TrainResult result;
  result.final_step = start;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t step = start + 1; step <= cfg.steps; ++step) {
    const auto ix = batch_indices(cfg.seed, "data-x", data.x.size(), cfg.batch_size, step);
    const auto iy = batch_indices(cfg.seed, "data-y", data.y.size(), cfg.batch_size, step);
    StepMetrics m = train_step(nets, opt, stack_images(data.x, ix), stack_images(data.y, iy), cfg, step);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    m.seconds = options.log_wall_time ? elapsed : 0.0;
    metrics << metrics_row(m) << '\n' << std::flush;
    timing << step << ',' << elapsed << '\n';
    if (!metrics) throw IoError("failed writing " + metrics_path.string());

    if (options.sample_every > 0 && step % options.sample_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "step_%06llu.ppm", static_cast<unsigned long long>(step));
      write_sample_grid(options.out_dir / "samples" / name, nets, data, cfg.seed);
    }
    if ((options.checkpoint_every > 0 && step % options.checkpoint_every == 0) || step == cfg.steps) {
      save_checkpoint(options.out_dir / checkpoint_name(step), nets, opt, step, cfg.seed, options.config_json);
    }
    result.final_step = step;
    if (options.on_step) options.on_step(m);
    result.metrics.push_back(std::move(m));
  }
  return result;
}

}  // namespace i2i
