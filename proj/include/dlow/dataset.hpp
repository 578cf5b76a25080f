#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dlow/domainness.hpp"
#include "dlow/networks.hpp"

namespace dlow {

// ---- image I/O --------------------------------------------------------
// Images on disk are 8-bit RGB PNG; in memory they are float (3, H, W)
// tensors in [-1, 1] with v = p / 127.5 - 1.

torch::Tensor decode_png(std::string_view bytes);
std::string encode_png(const torch::Tensor& image);
torch::Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// Label maps: 8-bit grayscale PNG of class ids, (H, W) int64 in memory.
torch::Tensor read_label_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const torch::Tensor& labels);

/// [0, 255] bytes -> [-1, 1] and back (rounded, clamped).
torch::Tensor bytes_to_unit(const torch::Tensor& bytes);
torch::Tensor unit_to_bytes(const torch::Tensor& image);

// ---- manifests --------------------------------------------------------

/// A domain dataset on disk. Paths are relative to `root`.
struct DatasetManifest {
  std::filesystem::path root;
  std::string domain;
  std::int64_t image_size = 0;
  std::vector<std::string> images;
  /// Empty, or one label map per image.
  std::vector<std::string> labels;

  static constexpr const char* kFileName = "manifest.json";

  std::size_t size() const { return images.size(); }
  bool has_labels() const { return !labels.empty(); }

  /// Writes root / manifest.json.
  void save() const;
  /// Reads `dir / manifest.json`; root becomes `dir`.
  static DatasetManifest load(const std::filesystem::path& dir);
  /// Checks n >= 1, label count, that every file exists and decodes to
  /// image_size x image_size. Throws IoError / ArgumentError.
  void validate() const;

  bool operator==(const DatasetManifest&) const = default;
};

// ---- synthetic domains ------------------------------------------------

enum class StyleKind { kHueRotation, kBrightness };

/// One procedurally generated domain. Content (shapes, texture, masks)
/// depends only on `content_seed`; `theta` applies the style: a hue
/// rotation in degrees or a brightness offset in [-1, 1].
struct SyntheticStyleSpec {
  StyleKind kind = StyleKind::kHueRotation;
  double theta = 0.0;
  std::uint64_t content_seed = 1;
  std::int64_t count = 500;
  std::int64_t image_size = 64;
  /// Gaussian blur sigma in pixels; 0 disables.
  double blur_sigma = 0.0;
};

/// Renders content `index` of the content family: RGB (3, H, W) in [-1, 1]
/// before styling, plus a (H, W) int64 mask (1 = shape, 0 = background).
/// Shapes have hue within 10 degrees of 0; the background texture splits
/// evenly between hues 90 and 270, so the chroma-weighted mean hue of the
/// content family is 0.
std::pair<torch::Tensor, torch::Tensor> render_content(std::uint64_t content_seed, std::int64_t index,
                                                       std::int64_t size);

/// Applies the style of `spec` to an unstyled content image.
torch::Tensor apply_style(const torch::Tensor& image, const SyntheticStyleSpec& spec);

/// Writes one domain to `out_dir` (images/, labels/, manifest.json).
DatasetManifest generate_synthetic_domain(const SyntheticStyleSpec& spec, const std::string& name,
                                          const std::filesystem::path& out_dir);

/// Two domains with identical content geometry, written to out_dir/source
/// and out_dir/target.
std::pair<DatasetManifest, DatasetManifest> generate_synthetic_domains(const SyntheticStyleSpec& source,
                                                                       const SyntheticStyleSpec& target,
                                                                       const std::filesystem::path& out_dir);

// ---- style statistics -------------------------------------------------

enum class StyleStatistic { kMeanHue, kMeanBrightness };

/// Per-pixel HSV hue in degrees [0, 360) and chroma (max - min, on the
/// [0, 1] intensity scale) of [-1, 1] images (..., 3, H, W). Returns
/// {hue, chroma}, each (..., H, W).
std::pair<torch::Tensor, torch::Tensor> hue_and_chroma(const torch::Tensor& images);

/// Chroma-weighted mean of unit hue vectors: the point (x, y) whose angle
/// is the circular mean hue.
std::pair<double, double> hue_resultant(std::span<const torch::Tensor> images);

/// Mean hue: circular, chroma-weighted, degrees in (-180, 180]. Throws
/// ArgumentError when every pixel is achromatic.
/// Mean brightness: mean over all channels and pixels, in [-1, 1].
/// Each element of `images` is (3, H, W) or (N, 3, H, W).
double measure_style_statistic(std::span<const torch::Tensor> images, StyleStatistic kind);

/// Signed smallest difference a - b on the circle, degrees in (-180, 180].
double hue_difference(double a, double b);

// ---- translated datasets ----------------------------------------------

struct ZAssignment {
  /// Empty: draw z ~ U(0, 1) per image. Set: constant z.
  std::optional<double> fixed;

  static ZAssignment uniform() { return {}; }
  static ZAssignment constant(double z) { return {z}; }
  /// "uniform" or "fixed:<v>".
  static ZAssignment parse(const std::string& text);
};

/// One row of a translated dataset's sidecar index.
struct TranslatedSample {
  std::string image;
  std::string label;
  double z = 0.0;
};

/// Sidecar index file: one tab-separated row per sample,
/// `image<TAB>label<TAB>z` with z printed to 6 decimals. Label may be
/// empty. Paths are relative to the index file's directory.
void write_index(const std::filesystem::path& path, std::span<const TranslatedSample> rows);
std::vector<TranslatedSample> read_index(const std::filesystem::path& path);

struct TranslateSummary {
  std::size_t translated = 0;
  std::vector<std::string> failures;
  std::filesystem::path index_path;
};

/// Translates every image of `manifest` with `generator` (z_dim 1) into
/// out_dir/images, copies labels to out_dir/labels and writes
/// out_dir/index.tsv. Undecodable inputs are reported, not fatal.
TranslateSummary translate_dataset(const DatasetManifest& manifest, Generator& generator, const ZAssignment& z_mode,
                                   std::uint64_t seed, const std::filesystem::path& out_dir);

// ---- in-memory banks for training -------------------------------------

/// All images of a domain stacked in memory, (N, 3, S, S) float32, with
/// optional (N, S, S) labels.
struct ImageBank {
  torch::Tensor images;
  torch::Tensor labels;

  std::int64_t size() const { return images.size(0); }

  static ImageBank load(const DatasetManifest& manifest, std::int64_t image_size);
  /// Loads a translated dataset; z values land in `z` (N).
  static ImageBank load_index(const std::filesystem::path& index_path, std::int64_t image_size, torch::Tensor* z);

  /// Random indices, random crop to `crop` and optional horizontal flip,
  /// all drawn from `rng`. Labels (when present) get the same crop/flip.
  struct Batch {
    torch::Tensor images;
    torch::Tensor labels;
    std::vector<std::int64_t> indices;
  };
  Batch sample(std::int64_t batch_size, std::int64_t crop, bool flip, Rng& rng) const;
};

}  // namespace dlow
