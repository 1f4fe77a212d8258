#include "i2i/networks.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"
#include "i2i/rng.hpp"

namespace i2i {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLeakySlope = 0.2;

struct Builder {
  Rng& rng;
  InitMode mode;
  NetworkParams& params;

  Tensor weight(Shape shape) {
    if (mode == InitMode::zeros) return Tensor::zeros(std::move(shape), true);
    return normal_tensor(rng, std::move(shape), kInitStd, true);
  }
  void conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, bool bias) {
    params.add(name + ".weight", weight({out, in, k, k}));
    if (bias) params.add(name + ".bias", Tensor::zeros({out}, true));
  }
  void conv_t(const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
    params.add(name + ".weight", weight({in, out, k, k}));
    params.add(name + ".bias", Tensor::zeros({out}, true));
  }
  void norm(const std::string& name, std::size_t channels) {
    params.add(name + ".gamma", Tensor::full({channels}, 1.0, true));
    params.add(name + ".beta", Tensor::zeros({channels}, true));
  }
  void res_blocks(const std::string& prefix, std::size_t count, std::size_t channels) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::string p = prefix + std::to_string(i);
      conv(p + ".conv1", channels, channels, 3, false);
      norm(p + ".norm1", channels);
      conv(p + ".conv2", channels, channels, 3, false);
      norm(p + ".norm2", channels);
    }
  }
};

Tensor conv_layer(const NetworkParams& p, const std::string& name, const Tensor& x, ConvAttrs attrs) {
  const std::string b = name + ".bias";
  return conv2d(x, p.get(name + ".weight"), p.contains(b) ? p.get(b) : Tensor{}, attrs);
}

Tensor norm_layer(const NetworkParams& p, const std::string& name, const Tensor& x) {
  return instance_norm(x, p.get(name + ".gamma"), p.get(name + ".beta"));
}

Tensor res_stack(const NetworkParams& p, const std::string& prefix, std::size_t count, Tensor x) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::string b = prefix + std::to_string(i);
    Tensor h = relu(norm_layer(p, b + ".norm1", conv_layer(p, b + ".conv1", x, {1, 1})));
    h = norm_layer(p, b + ".norm2", conv_layer(p, b + ".conv2", h, {1, 1}));
    x = add(x, h);
  }
  return x;
}

void check_images(const ArchConfig& arch, Domain domain, const Tensor& images, std::string_view op) {
  const ImageShape& s = arch.image(domain);
  if (images.rank() != 4 || images.dim(1) != s.channels || images.dim(2) != s.height || images.dim(3) != s.width) {
    throw ShapeError(std::string(op) + ": domain " + std::string(domain_name(domain)) + " expects [N, " +
                     std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " + std::to_string(s.width) +
                     "] images, got " + shape_str(images.shape()));
  }
}

Tensor trunk(const NetworkParams& enc, const Tensor& images) {
  Tensor h = relu(norm_layer(enc, "trunk.norm1", conv_layer(enc, "trunk.conv1", images, {2, 1})));
  return relu(norm_layer(enc, "trunk.norm2", conv_layer(enc, "trunk.conv2", h, {2, 1})));
}

DiagonalGaussian specific_head(const ArchConfig& arch, const NetworkParams& enc, Tensor h) {
  for (std::size_t i = 0; i < arch.specific_downsamples; ++i) {
    h = relu(conv_layer(enc, "down" + std::to_string(i), h, {2, 1}));
  }
  const std::size_t n = h.dim(0), ch = h.dim(1);
  Tensor pooled = reshape(global_avg_pool(h), {n, ch, 1, 1});
  Tensor mu = reshape(conv_layer(enc, "mu", pooled, {1, 0}), {n, arch.code_dim});
  Tensor log_var = reshape(conv_layer(enc, "logvar", pooled, {1, 0}), {n, arch.code_dim});
  return {mu, log_var};
}

std::size_t disc_channels(const ArchConfig& arch, std::size_t layer) {
  return arch.base_filters * std::min<std::size_t>(std::size_t{1} << layer, 8);
}

}  // namespace

void ArchConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("arch: " + what); };
  for (const auto* s : {&x, &y}) {
    if (s->channels == 0 || s->height == 0 || s->width == 0) fail("image dimensions must be positive");
    if (s->height % 4 != 0 || s->width % 4 != 0) fail("image height/width must be divisible by 4");
  }
  if (x.height != y.height || x.width != y.width) fail("both domains must share the spatial size");
  if (code_channels == 0 || code_dim == 0 || base_filters == 0) fail("channel counts and code_dim must be >= 1");
  const std::size_t spec_div = std::size_t{1} << specific_downsamples;
  if (code_height() % spec_div != 0 || code_width() % spec_div != 0) {
    fail("code size " + std::to_string(code_height()) + " cannot be halved " + std::to_string(specific_downsamples) +
         " times");
  }
  if (disc_downsamples == 0) fail("disc_downsamples must be >= 1");
  const std::size_t disc_div = std::size_t{1} << disc_downsamples;
  if (x.height % disc_div != 0 || x.width % disc_div != 0) {
    fail("image size cannot be halved " + std::to_string(disc_downsamples) + " times by the discriminator");
  }
}

std::string ArchConfig::fingerprint() const {
  nlohmann::ordered_json j;
  j["x"] = {x.channels, x.height, x.width};
  j["y"] = {y.channels, y.height, y.width};
  j["code_channels"] = code_channels;
  j["code_dim"] = code_dim;
  j["base_filters"] = base_filters;
  j["encoder_res_blocks"] = encoder_res_blocks;
  j["generator_res_blocks"] = generator_res_blocks;
  j["specific_downsamples"] = specific_downsamples;
  j["disc_downsamples"] = disc_downsamples;
  return j.dump();
}

ArchConfig ArchConfig::from_fingerprint(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    auto image = [&](const char* key) {
      const auto& v = j.at(key);
      return ImageShape{v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>(), v.at(2).get<std::size_t>()};
    };
    ArchConfig a;
    a.x = image("x");
    a.y = image("y");
    a.code_channels = j.at("code_channels").get<std::size_t>();
    a.code_dim = j.at("code_dim").get<std::size_t>();
    a.base_filters = j.at("base_filters").get<std::size_t>();
    a.encoder_res_blocks = j.at("encoder_res_blocks").get<std::size_t>();
    a.generator_res_blocks = j.at("generator_res_blocks").get<std::size_t>();
    a.specific_downsamples = j.at("specific_downsamples").get<std::size_t>();
    a.disc_downsamples = j.at("disc_downsamples").get<std::size_t>();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw FingerprintError("malformed architecture fingerprint: " + std::string(e.what()));
  }
}

void NetworkParams::add(std::string name, Tensor tensor) {
  if (contains(name)) throw std::logic_error("network " + network_ + ": duplicate parameter " + name);
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& NetworkParams::get(std::string_view name) const {
  for (const auto& [key, t] : entries_) {
    if (key == name) return t;
  }
  throw std::out_of_range("network " + network_ + ": no parameter " + std::string(name));
}

bool NetworkParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

namespace {

void collect(std::vector<NamedTensor>& out, std::set<std::uint64_t>& seen, const NetworkParams& p) {
  for (const auto& [name, t] : p.entries()) {
    if (seen.insert(t.tape_id()).second) out.push_back({p.network() + "/" + name, t});
  }
}

}  // namespace

std::vector<NamedTensor> Networks::generator_side() const {
  std::vector<NamedTensor> out;
  std::set<std::uint64_t> seen;
  for (const auto* p : {&enc_xc, &enc_xd, &enc_yc, &enc_yd, &gen_x, &gen_y}) collect(out, seen, *p);
  return out;
}

std::vector<NamedTensor> Networks::discriminator_side() const {
  std::vector<NamedTensor> out;
  std::set<std::uint64_t> seen;
  for (const auto* p : {&disc_x, &disc_y}) collect(out, seen, *p);
  return out;
}

std::vector<NamedTensor> Networks::all() const {
  auto out = generator_side();
  auto d = discriminator_side();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

Networks init_params(const ArchConfig& arch, std::uint64_t seed, InitMode mode) {
  arch.validate();
  Networks nets;
  nets.arch = arch;
  Rng rng = make_stream(seed, "init");
  const std::size_t base = arch.base_filters, code = arch.code_channels;

  for (Domain d : {Domain::x, Domain::y}) {
    const std::size_t ch = arch.image(d).channels;
    NetworkParams& enc_c = d == Domain::x ? nets.enc_xc : nets.enc_yc;
    NetworkParams& enc_d = d == Domain::x ? nets.enc_xd : nets.enc_yd;
    Builder bc{rng, mode, enc_c};
    bc.conv("trunk.conv1", ch, base, 3, false);
    bc.norm("trunk.norm1", base);
    bc.conv("trunk.conv2", base, code, 3, false);
    bc.norm("trunk.norm2", code);
    bc.res_blocks("res", arch.encoder_res_blocks, code);

    for (const auto& [name, t] : enc_c.entries()) {
      if (name.rfind("trunk.", 0) == 0) enc_d.add(name, t);
    }
    Builder bd{rng, mode, enc_d};
    std::size_t in = code;
    for (std::size_t i = 0; i < arch.specific_downsamples; ++i) {
      bd.conv("down" + std::to_string(i), in, base, 3, true);
      in = base;
    }
    bd.conv("mu", in, arch.code_dim, 1, true);
    bd.conv("logvar", in, arch.code_dim, 1, true);

    NetworkParams& gen = d == Domain::x ? nets.gen_x : nets.gen_y;
    Builder bg{rng, mode, gen};
    bg.conv("input", code + arch.code_dim, code, 3, true);
    bg.res_blocks("res", arch.generator_res_blocks, code);
    bg.conv_t("up0", code, base, 4);
    bg.conv_t("up1", base, ch, 4);

    NetworkParams& disc = d == Domain::x ? nets.disc_x : nets.disc_y;
    Builder bdisc{rng, mode, disc};
    std::size_t prev = ch;
    for (std::size_t i = 0; i < arch.disc_downsamples; ++i) {
      const std::size_t out = disc_channels(arch, i);
      bdisc.conv("conv" + std::to_string(i), prev, out, 4, i == 0);
      if (i > 0) bdisc.norm("norm" + std::to_string(i), out);
      prev = out;
    }
    bdisc.conv("logits", prev, 1, 3, true);
  }
  return nets;
}

FreezeGuard::FreezeGuard(std::vector<NamedTensor> params) : params_(std::move(params)) {
  for (auto& p : params_) p.tensor.set_requires_grad(false);
}

FreezeGuard::~FreezeGuard() {
  for (auto& p : params_) p.tensor.set_requires_grad(true);
}

Tensor encode_invariant(const Networks& nets, Domain domain, const Tensor& images) {
  check_images(nets.arch, domain, images, "encode_invariant");
  const NetworkParams& enc = nets.enc_c(domain);
  return res_stack(enc, "res", nets.arch.encoder_res_blocks, trunk(enc, images));
}

DiagonalGaussian encode_specific(const Networks& nets, Domain domain, const Tensor& images) {
  check_images(nets.arch, domain, images, "encode_specific");
  return specific_head(nets.arch, nets.enc_d(domain), trunk(nets.enc_d(domain), images));
}

Encoded encode(const Networks& nets, Domain domain, const Tensor& images) {
  check_images(nets.arch, domain, images, "encode");
  const NetworkParams& enc = nets.enc_c(domain);
  Tensor h = trunk(enc, images);
  return {res_stack(enc, "res", nets.arch.encoder_res_blocks, h), specific_head(nets.arch, nets.enc_d(domain), h)};
}

Tensor generate(const Networks& nets, Domain domain, const Tensor& c, const Tensor& v) {
  const ArchConfig& a = nets.arch;
  if (c.rank() != 4 || c.dim(1) != a.code_channels || c.dim(2) != a.code_height() || c.dim(3) != a.code_width()) {
    throw ShapeError("generate: invariant code must be [N, " + std::to_string(a.code_channels) + ", " +
                     std::to_string(a.code_height()) + ", " + std::to_string(a.code_width()) + "], got " +
                     shape_str(c.shape()));
  }
  if (v.rank() != 2 || v.dim(0) != c.dim(0) || v.dim(1) != a.code_dim) {
    throw ShapeError("generate: specific code must be [" + std::to_string(c.dim(0)) + ", " + std::to_string(a.code_dim) +
                     "], got " + shape_str(v.shape()));
  }
  const NetworkParams& g = nets.gen(domain);
  Tensor h = concat_channels(c, tile_spatial(v, a.code_height(), a.code_width()));
  h = relu(conv_layer(g, "input", h, {1, 1}));
  h = res_stack(g, "res", a.generator_res_blocks, h);
  h = relu(conv_transpose2d(h, g.get("up0.weight"), g.get("up0.bias"), {2, 1}));
  return tanh(conv_transpose2d(h, g.get("up1.weight"), g.get("up1.bias"), {2, 1}));
}

Tensor discriminate(const Networks& nets, Domain domain, const Tensor& images) {
  check_images(nets.arch, domain, images, "discriminate");
  const NetworkParams& p = nets.disc(domain);
  Tensor h = images;
  for (std::size_t i = 0; i < nets.arch.disc_downsamples; ++i) {
    const std::string name = std::to_string(i);
    h = conv_layer(p, "conv" + name, h, {2, 1});
    if (i > 0) h = norm_layer(p, "norm" + name, h);
    h = leaky_relu(h, kLeakySlope);
  }
  return conv_layer(p, "logits", h, {1, 1});
}

}  // namespace i2i
