#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "i2i/networks.hpp"
#include "i2i/rng.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

enum class ShapeClass { circle, square, triangle };

std::string_view shape_class_name(ShapeClass s);
ShapeClass parse_shape_class(std::string_view name);

inline constexpr std::size_t kCanvas = 32;
inline constexpr int kMinRadius = 4;
inline constexpr int kMaxRadius = 11;

struct SynthSpec {
  ShapeClass shape = ShapeClass::circle;
  int row = 16;
  int col = 16;
  int radius = kMinRadius;
  std::optional<double> hue;  // Y only, [0, 1)
  std::optional<int> stroke;  // X only, {1, 2, 3}
  std::uint64_t seed = 0;     // master seed and index the spec was drawn from
  std::uint64_t index = 0;

  bool operator==(const SynthSpec&) const = default;
};

/// Throws DomainError if the shape leaves the canvas or a factor is out of range.
void validate(const SynthSpec& spec, std::size_t canvas = kCanvas);

SynthSpec sample_spec(Domain domain, Rng& rng, std::size_t canvas = kCanvas);
/// Draws spec `index` of a domain from its own derived stream.
SynthSpec spec_at(Domain domain, std::uint64_t seed, std::uint64_t index, std::size_t canvas = kCanvas);

/// Filled shape mask, row-major canvas x canvas.
std::vector<bool> fill_mask(const SynthSpec& spec, std::size_t canvas = kCanvas);
/// [1, H, W] outline: background -1, stroke +1.
Tensor render_x(const SynthSpec& spec, std::size_t canvas = kCanvas);
/// [3, H, W] filled shape in the fully saturated colour of spec.hue.
Tensor render_y(const SynthSpec& spec, std::size_t canvas = kCanvas);

/// Fully saturated, full-value RGB in [0, 1] for a hue in [0, 1).
std::array<double, 3> hue_to_rgb(double hue);
/// Hue in [0, 1) of an RGB triple in [0, 1]; nullopt for greys.
std::optional<double> rgb_to_hue(double r, double g, double b);

/// 8-bit binary PGM (1 channel) or PPM (3 channels); v maps to round((v+1)*127.5).
void write_image(const std::filesystem::path& path, const Tensor& image);
Tensor read_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_image(const Tensor& image);

struct ManifestEntry {
  std::string filename;
  SynthSpec spec;
};

struct DatasetManifest {
  Domain domain = Domain::x;
  std::size_t canvas = kCanvas;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
};

/// Writes <root>/x/NNNNN.pgm, <root>/y/NNNNN.ppm and <root>/manifest.json.
void generate_dataset(const std::filesystem::path& root, std::size_t count, std::uint64_t seed);

struct Dataset {
  DatasetManifest x_manifest;
  DatasetManifest y_manifest;
  std::vector<Tensor> x;  // [1, H, W] each
  std::vector<Tensor> y;  // [3, H, W] each
};

/// Reads every image listed in the manifest.
Dataset load_dataset(const std::filesystem::path& root);

/// Tiles [1|3, H, W] images row by row into one RGB sheet with white 1-px
/// separators; grayscale cells are replicated across channels.
Tensor contact_sheet(const std::vector<std::vector<Tensor>>& rows);

/// Stacks the selected images into an [N, C, H, W] batch.
Tensor stack_images(const std::vector<Tensor>& images, std::span<const std::size_t> indices);

}  // namespace i2i
