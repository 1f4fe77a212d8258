#include "i2i/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>

#include <nlohmann/json.hpp>

#include "i2i/errors.hpp"

namespace i2i {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view shape_class_name(ShapeClass s) {
  switch (s) {
    case ShapeClass::circle: return "circle";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
  }
  return "?";
}

ShapeClass parse_shape_class(std::string_view name) {
  for (auto s : {ShapeClass::circle, ShapeClass::square, ShapeClass::triangle}) {
    if (shape_class_name(s) == name) return s;
  }
  throw DomainError("unknown shape class '" + std::string(name) + "'");
}

void validate(const SynthSpec& spec, std::size_t canvas) {
  const int last = static_cast<int>(canvas) - 1;
  if (spec.radius < 1) throw DomainError("spec: radius must be >= 1");
  if (spec.row - spec.radius < 0 || spec.row + spec.radius > last || spec.col - spec.radius < 0 ||
      spec.col + spec.radius > last) {
    throw DomainError("spec: shape at (" + std::to_string(spec.row) + ", " + std::to_string(spec.col) + ") radius " +
                      std::to_string(spec.radius) + " leaves the canvas");
  }
  if (spec.hue && !(*spec.hue >= 0.0 && *spec.hue < 1.0)) throw DomainError("spec: hue must lie in [0, 1)");
  if (spec.stroke && (*spec.stroke < 1 || *spec.stroke > 3)) throw DomainError("spec: stroke must be 1, 2 or 3");
}

SynthSpec sample_spec(Domain domain, Rng& rng, std::size_t canvas) {
  SynthSpec s;
  s.shape = static_cast<ShapeClass>(std::uniform_int_distribution<int>(0, 2)(rng));
  s.radius = std::uniform_int_distribution<int>(kMinRadius, kMaxRadius)(rng);
  std::uniform_int_distribution<int> pos(s.radius, static_cast<int>(canvas) - 1 - s.radius);
  s.row = pos(rng);
  s.col = pos(rng);
  if (domain == Domain::y) {
    s.hue = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  } else {
    s.stroke = std::uniform_int_distribution<int>(1, 3)(rng);
  }
  return s;
}

SynthSpec spec_at(Domain domain, std::uint64_t seed, std::uint64_t index, std::size_t canvas) {
  Rng rng = make_stream(seed, domain == Domain::x ? "synth-x" : "synth-y", index);
  SynthSpec s = sample_spec(domain, rng, canvas);
  s.seed = seed;
  s.index = index;
  return s;
}

std::vector<bool> fill_mask(const SynthSpec& spec, std::size_t canvas) {
  validate(spec, canvas);
  std::vector<bool> mask(canvas * canvas, false);
  const int n = static_cast<int>(canvas), r0 = spec.radius;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int dr = r - spec.row, dc = c - spec.col;
      bool inside = false;
      switch (spec.shape) {
        case ShapeClass::circle: inside = dr * dr + dc * dc <= r0 * r0; break;
        case ShapeClass::square: inside = std::abs(dr) <= r0 && std::abs(dc) <= r0; break;
        // Apex up at (row - radius, col), base from col - radius to col + radius.
        case ShapeClass::triangle: inside = dr >= -r0 && dr <= r0 && 2 * std::abs(dc) <= dr + r0; break;
      }
      mask[static_cast<std::size_t>(r * n + c)] = inside;
    }
  }
  return mask;
}

Tensor render_x(const SynthSpec& spec, std::size_t canvas) {
  if (!spec.stroke) throw DomainError("render_x: spec has no stroke");
  const auto fill = fill_mask(spec, canvas);
  const int n = static_cast<int>(canvas), s = *spec.stroke;
  std::vector<double> out(canvas * canvas, -1.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!fill[static_cast<std::size_t>(r * n + c)]) continue;
      // Erosion by a (2s+1) square: interior iff the whole window is filled.
      bool interior = true;
      for (int i = r - s; i <= r + s && interior; ++i) {
        for (int j = c - s; j <= c + s; ++j) {
          if (i < 0 || j < 0 || i >= n || j >= n || !fill[static_cast<std::size_t>(i * n + j)]) {
            interior = false;
            break;
          }
        }
      }
      if (!interior) out[static_cast<std::size_t>(r * n + c)] = 1.0;
    }
  }
  return Tensor({1, canvas, canvas}, std::move(out));
}

Tensor render_y(const SynthSpec& spec, std::size_t canvas) {
  if (!spec.hue) throw DomainError("render_y: spec has no hue");
  const auto fill = fill_mask(spec, canvas);
  const auto rgb = hue_to_rgb(*spec.hue);
  const std::size_t plane = canvas * canvas;
  std::vector<double> out(3 * plane, -1.0);
  for (std::size_t p = 0; p < plane; ++p) {
    if (!fill[p]) continue;
    for (std::size_t ch = 0; ch < 3; ++ch) out[ch * plane + p] = 2.0 * rgb[ch] - 1.0;
  }
  return Tensor({3, canvas, canvas}, std::move(out));
}

std::array<double, 3> hue_to_rgb(double hue) {
  const double h6 = hue * 6.0;
  const int sector = std::min(5, static_cast<int>(std::floor(h6)));
  const double f = h6 - sector;
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

std::optional<double> rgb_to_hue(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double delta = mx - mn;
  if (delta <= 1e-12) return std::nullopt;
  double h;
  if (mx == r) {
    h = (g - b) / delta;
  } else if (mx == g) {
    h = 2.0 + (b - r) / delta;
  } else {
    h = 4.0 + (r - g) / delta;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
  if (h >= 1.0) h -= 1.0;
  return h;
}

std::vector<std::uint8_t> encode_image(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("encode_image: expected [1|3, H, W], got " + shape_str(image.shape()));
  }
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2), plane = h * w;
  const std::string header = std::string(ch == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " +
                             std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + ch * plane);
  auto v = image.values();
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double x = v[c * plane + p];
      if (!(x >= -1.0 && x <= 1.0)) throw DomainError("encode_image: value outside [-1, 1]");
      out.push_back(static_cast<std::uint8_t>(std::lround((x + 1.0) * 127.5)));
    }
  }
  return out;
}

void write_image(const fs::path& path, const Tensor& image) {
  const auto bytes = encode_image(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto malformed = [&](const std::string& why) { return IoError(path.string() + ": malformed image header (" + why + ")"); };
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw malformed("magic '" + magic + "'");
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    long v = -1;
    if (!(in >> v) || v <= 0) throw malformed("bad dimension");
    return static_cast<std::size_t>(v);
  };
  const std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw malformed("maxval must be 255");
  if (!std::isspace(in.get())) throw malformed("missing separator");
  const std::size_t ch = magic == "P5" ? 1 : 3, plane = w * h;
  std::vector<std::uint8_t> raw(ch * plane);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError(path.string() + ": truncated pixel data");
  std::vector<double> values(ch * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < ch; ++c) values[c * plane + p] = raw[p * ch + c] / 127.5 - 1.0;
  }
  return Tensor({ch, h, w}, std::move(values));
}

namespace {

json spec_to_json(const SynthSpec& s) {
  json j{{"shape", shape_class_name(s.shape)}, {"row", s.row}, {"col", s.col}, {"radius", s.radius}};
  if (s.hue) j["hue"] = *s.hue;
  if (s.stroke) j["stroke"] = *s.stroke;
  j["seed"] = s.seed;
  j["index"] = s.index;
  return j;
}

SynthSpec spec_from_json(const json& j) {
  SynthSpec s;
  s.shape = parse_shape_class(j.at("shape").get<std::string>());
  s.row = j.at("row").get<int>();
  s.col = j.at("col").get<int>();
  s.radius = j.at("radius").get<int>();
  if (j.contains("hue")) s.hue = j.at("hue").get<double>();
  if (j.contains("stroke")) s.stroke = j.at("stroke").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.index = j.at("index").get<std::uint64_t>();
  return s;
}

json manifest_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) entries.push_back({{"file", e.filename}, {"spec", spec_to_json(e.spec)}});
  return {{"domain", domain_name(m.domain)}, {"count", m.entries.size()}, {"canvas", m.canvas},
          {"seed", m.seed},                  {"entries", entries}};
}

DatasetManifest manifest_from_json(const json& j, Domain domain) {
  DatasetManifest m;
  m.domain = domain;
  if (j.at("domain").get<std::string>() != domain_name(domain)) throw IoError("manifest: domain tag mismatch");
  m.canvas = j.at("canvas").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& e : j.at("entries")) m.entries.push_back({e.at("file").get<std::string>(), spec_from_json(e.at("spec"))});
  if (m.entries.size() != j.at("count").get<std::size_t>()) throw IoError("manifest: count does not match entries");
  return m;
}

std::string numbered(std::size_t i, std::string_view ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu.%s", i, std::string(ext).c_str());
  return buf;
}

}  // namespace

void generate_dataset(const fs::path& root, std::size_t count, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(root / "x", ec);
  if (!ec) fs::create_directories(root / "y", ec);
  if (ec) throw IoError("cannot create dataset directories under " + root.string() + ": " + ec.message());

  DatasetManifest mx{Domain::x, kCanvas, seed, {}}, my{Domain::y, kCanvas, seed, {}};
  for (std::size_t i = 0; i < count; ++i) {
    const SynthSpec sx = spec_at(Domain::x, seed, i), sy = spec_at(Domain::y, seed, i);
    mx.entries.push_back({"x/" + numbered(i, "pgm"), sx});
    my.entries.push_back({"y/" + numbered(i, "ppm"), sy});
    write_image(root / mx.entries.back().filename, render_x(sx));
    write_image(root / my.entries.back().filename, render_y(sy));
  }
  const json manifest{{"x", manifest_to_json(mx)}, {"y", manifest_to_json(my)}};
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("failed writing manifest");
}

Dataset load_dataset(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("cannot open " + (root / "manifest.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  Dataset d;
  try {
    d.x_manifest = manifest_from_json(j.at("x"), Domain::x);
    d.y_manifest = manifest_from_json(j.at("y"), Domain::y);
  } catch (const json::exception& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  for (const auto& e : d.x_manifest.entries) d.x.push_back(read_image(root / e.filename));
  for (const auto& e : d.y_manifest.entries) d.y.push_back(read_image(root / e.filename));
  return d;
}

Tensor stack_images(const std::vector<Tensor>& images, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("stack_images: empty selection");
  const Shape& s = images.at(indices[0]).shape();
  std::vector<double> out;
  out.reserve(indices.size() * shape_numel(s));
  for (std::size_t i : indices) {
    const Tensor& img = images.at(i);
    if (img.shape() != s) throw ShapeError("stack_images: mixed image shapes");
    out.insert(out.end(), img.values().begin(), img.values().end());
  }
  Shape batch{indices.size()};
  batch.insert(batch.end(), s.begin(), s.end());
  return Tensor(std::move(batch), std::move(out));
}

Tensor contact_sheet(const std::vector<std::vector<Tensor>>& rows) {
  if (rows.empty() || rows[0].empty()) throw ShapeError("contact_sheet: no images");
  const std::size_t h = rows[0][0].dim(1), w = rows[0][0].dim(2);
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const std::size_t sh = rows.size() * (h + 1) + 1, sw = cols * (w + 1) + 1, plane = sh * sw;
  std::vector<double> out(3 * plane, 1.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      const Tensor& img = rows[i][j];
      if (img.rank() != 3 || img.dim(1) != h || img.dim(2) != w || (img.dim(0) != 1 && img.dim(0) != 3)) {
        throw ShapeError("contact_sheet: cell " + shape_str(img.shape()) + " does not match the first cell");
      }
      auto v = img.values();
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t src = img.dim(0) == 1 ? 0 : ch;
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            const std::size_t row = i * (h + 1) + 1 + r, col = j * (w + 1) + 1 + c;
            out[ch * plane + row * sw + col] = v[src * h * w + r * w + c];
          }
        }
      }
    }
  }
  return Tensor({3, sh, sw}, std::move(out));
}

}  // namespace i2i
