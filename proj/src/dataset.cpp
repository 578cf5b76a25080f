#include "dlow/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dlow/errors.hpp"
#include "json.hpp"

namespace dlow {

namespace fs = std::filesystem;

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(cat("cannot read ", path));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(cat("cannot write ", path));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(cat("failed writing ", path));
}

// Decodes to 8-bit pixels of the requested format; returns (H, W, C) uint8.
torch::Tensor decode_png_pixels(std::string_view bytes, png_uint_32 format, int channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw IoError(cat("PNG decode failed: ", image.message));
  }
  image.format = format;
  auto out = torch::empty({image.height, image.width, channels}, torch::kUInt8);
  if (!png_image_finish_read(&image, nullptr, out.data_ptr<std::uint8_t>(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError(cat("PNG decode failed: ", image.message));
  }
  return out;
}

std::string encode_png_pixels(const torch::Tensor& hwc, png_uint_32 format) {
  auto pixels = hwc.contiguous();
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(pixels.size(1));
  image.height = static_cast<png_uint_32>(pixels.size(0));
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data_ptr<std::uint8_t>(), 0, nullptr)) {
    throw IoError(cat("PNG encode failed: ", image.message));
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data_ptr<std::uint8_t>(), 0, nullptr)) {
    throw IoError(cat("PNG encode failed: ", image.message));
  }
  out.resize(size);
  return out;
}

struct Hsv {
  double h, s, v;
};

Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double c = mx - mn;
  double h = 0.0;
  if (c > 0.0) {
    if (mx == r) {
      h = 60.0 * std::fmod((g - b) / c + 6.0, 6.0);
    } else if (mx == g) {
      h = 60.0 * ((b - r) / c + 2.0);
    } else {
      h = 60.0 * ((r - g) / c + 4.0);
    }
  }
  return {h, mx > 0.0 ? c / mx : 0.0, mx};
}

std::array<double, 3> hsv_to_rgb(Hsv in) {
  double h = std::fmod(in.h, 360.0);
  if (h < 0.0) h += 360.0;
  const double c = in.v * in.s;
  const double x = c * (1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0));
  const double m = in.v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h / 60.0)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

bool inside_polygon(const std::vector<std::array<double, 2>>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) inside = !inside;
  }
  return inside;
}

torch::Tensor gaussian_blur(const torch::Tensor& image, double sigma) {
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  auto xs = torch::arange(-radius, radius + 1, torch::kFloat32);
  auto kernel = torch::exp(-(xs * xs) / (2.0 * sigma * sigma));
  kernel = kernel / kernel.sum();
  namespace F = torch::nn::functional;
  auto x = image.unsqueeze(1);  // (3, 1, H, W)
  x = F::pad(x, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReplicate));
  x = F::conv2d(x, kernel.view({1, 1, 1, -1}));
  x = F::conv2d(x, kernel.view({1, 1, -1, 1}));
  return x.squeeze(1);
}

std::string format_z(double z) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", z);
  return buf;
}

torch::Tensor resize_image(const torch::Tensor& image, std::int64_t size) {
  if (image.size(1) == size && image.size(2) == size) return image;
  namespace F = torch::nn::functional;
  return F::interpolate(image.unsqueeze(0),
                        F::InterpolateFuncOptions().size(std::vector<std::int64_t>{size, size}).mode(torch::kBilinear).align_corners(false))
      .squeeze(0);
}

torch::Tensor resize_labels(const torch::Tensor& labels, std::int64_t size) {
  if (labels.size(0) == size && labels.size(1) == size) return labels;
  namespace F = torch::nn::functional;
  return F::interpolate(labels.unsqueeze(0).unsqueeze(0).to(torch::kFloat32),
                        F::InterpolateFuncOptions().size(std::vector<std::int64_t>{size, size}).mode(torch::kNearest))
      .squeeze(0)
      .squeeze(0)
      .to(torch::kInt64);
}

}  // namespace

torch::Tensor bytes_to_unit(const torch::Tensor& bytes) { return bytes.to(torch::kFloat32) / 127.5 - 1.0; }

torch::Tensor unit_to_bytes(const torch::Tensor& image) {
  return ((image.to(torch::kFloat32) + 1.0) * 127.5).round().clamp(0, 255).to(torch::kUInt8);
}

torch::Tensor decode_png(std::string_view bytes) {
  return bytes_to_unit(decode_png_pixels(bytes, PNG_FORMAT_RGB, 3).permute({2, 0, 1})).contiguous();
}

std::string encode_png(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ArgumentError("encode_png expects a (3, H, W) image");
  return encode_png_pixels(unit_to_bytes(image.detach().cpu()).permute({1, 2, 0}), PNG_FORMAT_RGB);
}

torch::Tensor read_png(const fs::path& path) {
  try {
    return decode_png(read_file(path));
  } catch (const IoError& e) {
    throw IoError(cat(path, ": ", e.what()));
  }
}

void write_png(const fs::path& path, const torch::Tensor& image) { write_file(path, encode_png(image)); }

torch::Tensor read_label_png(const fs::path& path) {
  return decode_png_pixels(read_file(path), PNG_FORMAT_GRAY, 1).squeeze(2).to(torch::kInt64);
}

void write_label_png(const fs::path& path, const torch::Tensor& labels) {
  if (labels.dim() != 2) throw ArgumentError("label map must be (H, W)");
  if (labels.min().item<std::int64_t>() < 0 || labels.max().item<std::int64_t>() > 255) {
    throw ArgumentError("label ids must fit in 8 bits");
  }
  write_file(path, encode_png_pixels(labels.to(torch::kUInt8).unsqueeze(2), PNG_FORMAT_GRAY));
}

// ---- manifests ----

void DatasetManifest::save() const {
  nlohmann::json j;
  j["domain"] = domain;
  j["image_size"] = image_size;
  j["images"] = images;
  j["labels"] = labels;
  write_file(root / kFileName, j.dump(2) + "\n");
}

DatasetManifest DatasetManifest::load(const fs::path& dir) {
  DatasetManifest m;
  m.root = dir;
  try {
    const auto j = nlohmann::json::parse(read_file(dir / kFileName));
    m.domain = j.at("domain").get<std::string>();
    m.image_size = j.at("image_size").get<std::int64_t>();
    m.images = j.at("images").get<std::vector<std::string>>();
    m.labels = j.value("labels", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(cat("malformed manifest in ", dir, ": ", e.what()));
  }
  return m;
}

void DatasetManifest::validate() const {
  if (images.empty()) throw ArgumentError(cat("manifest ", root, " lists no images"));
  if (!labels.empty() && labels.size() != images.size()) {
    throw ArgumentError(cat("manifest ", root, ": ", labels.size(), " labels for ", images.size(), " images"));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto img = read_png(root / images[i]);
    if (img.size(1) != image_size || img.size(2) != image_size) {
      throw ArgumentError(cat(images[i], " is ", img.size(2), "x", img.size(1), ", manifest declares ", image_size));
    }
    if (!labels.empty()) {
      const auto lab = read_label_png(root / labels[i]);
      if (lab.size(0) != image_size || lab.size(1) != image_size) {
        throw ArgumentError(cat(labels[i], " does not match the declared image size"));
      }
    }
  }
}

// ---- synthetic domains ----

std::pair<torch::Tensor, torch::Tensor> render_content(std::uint64_t content_seed, std::int64_t index,
                                                       std::int64_t size) {
  std::seed_seq seq{static_cast<std::uint32_t>(content_seed), static_cast<std::uint32_t>(content_seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng(seq);
  const double s = static_cast<double>(size);

  // Brightness texture from three random plane waves.
  std::array<std::array<double, 4>, 3> waves{};
  for (auto& w : waves) {
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double freq = uniform(rng, 1.5, 5.0) * 2.0 * std::numbers::pi / s;
    w = {freq * std::cos(angle), freq * std::sin(angle), uniform(rng, 0.0, 2.0 * std::numbers::pi),
         uniform(rng, 0.5, 1.0)};
  }
  // Background hue stripes: equal-width bands of hue 90 and 270.
  const double stripe_angle = uniform(rng, 0.0, std::numbers::pi);
  const double stripe_freq = 2.0 * std::numbers::pi / uniform(rng, 12.0, 24.0);
  const double stripe_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);

  struct Shape {
    bool ellipse;
    double cx, cy, rx, ry, rot;
    std::vector<std::array<double, 2>> poly;
    double h, sat, val;
  };
  std::vector<Shape> shapes(2 + static_cast<std::size_t>(rng() % 3));
  for (auto& sh : shapes) {
    sh.ellipse = uniform01(rng) < 0.5;
    sh.cx = uniform(rng, 0.15, 0.85) * s;
    sh.cy = uniform(rng, 0.15, 0.85) * s;
    sh.rx = uniform(rng, 0.12, 0.24) * s;
    sh.ry = uniform(rng, 0.12, 0.24) * s;
    sh.rot = uniform(rng, 0.0, std::numbers::pi);
    if (!sh.ellipse) {
      const int k = 3 + static_cast<int>(rng() % 3);
      for (int v = 0; v < k; ++v) {
        const double a = sh.rot + 2.0 * std::numbers::pi * (v + uniform(rng, -0.2, 0.2)) / k;
        const double r = uniform(rng, 0.8, 1.2) * sh.rx;
        sh.poly.push_back({sh.cx + r * std::cos(a), sh.cy + r * std::sin(a)});
      }
    }
    sh.h = uniform(rng, -10.0, 10.0);
    sh.sat = uniform(rng, 0.85, 1.0);
    sh.val = uniform(rng, 0.7, 0.95);
  }

  auto image = torch::empty({3, size, size}, torch::kFloat32);
  auto mask = torch::zeros({size, size}, torch::kInt64);
  auto img = image.accessor<float, 3>();
  auto msk = mask.accessor<std::int64_t, 2>();
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      double texture = 0.0;
      for (const auto& w : waves) texture += w[3] * std::sin(w[0] * px + w[1] * py + w[2]);
      Hsv hsv{};
      const double stripe = std::sin(stripe_freq * (px * std::cos(stripe_angle) + py * std::sin(stripe_angle)) + stripe_phase);
      hsv = {stripe >= 0.0 ? 90.0 : 270.0, 0.75, 0.575 + 0.05 * texture};
      for (const auto& sh : shapes) {
        bool hit = false;
        if (sh.ellipse) {
          const double dx = px - sh.cx, dy = py - sh.cy;
          const double u = dx * std::cos(sh.rot) + dy * std::sin(sh.rot);
          const double v = -dx * std::sin(sh.rot) + dy * std::cos(sh.rot);
          hit = (u * u) / (sh.rx * sh.rx) + (v * v) / (sh.ry * sh.ry) <= 1.0;
        } else {
          hit = inside_polygon(sh.poly, px, py);
        }
        if (hit) {
          hsv = {sh.h, sh.sat, sh.val + 0.03 * texture};
          msk[y][x] = 1;
        }
      }
      const auto rgb = hsv_to_rgb(hsv);
      for (int c = 0; c < 3; ++c) img[c][y][x] = static_cast<float>(2.0 * rgb[c] - 1.0);
    }
  }
  return {image, mask};
}

torch::Tensor apply_style(const torch::Tensor& image, const SyntheticStyleSpec& spec) {
  auto out = image.to(torch::kFloat32).clone();
  if (spec.kind == StyleKind::kHueRotation) {
    auto acc = out.accessor<float, 3>();
    for (std::int64_t y = 0; y < out.size(1); ++y) {
      for (std::int64_t x = 0; x < out.size(2); ++x) {
        auto hsv = rgb_to_hsv((acc[0][y][x] + 1.0) / 2.0, (acc[1][y][x] + 1.0) / 2.0, (acc[2][y][x] + 1.0) / 2.0);
        hsv.h += spec.theta;
        const auto rgb = hsv_to_rgb(hsv);
        for (int c = 0; c < 3; ++c) acc[c][y][x] = static_cast<float>(2.0 * rgb[c] - 1.0);
      }
    }
  } else {
    out = (out + spec.theta).clamp(-1.0, 1.0);
  }
  if (spec.blur_sigma > 0.0) out = gaussian_blur(out, spec.blur_sigma);
  return out;
}

DatasetManifest generate_synthetic_domain(const SyntheticStyleSpec& spec, const std::string& name,
                                          const fs::path& out_dir) {
  if (spec.count < 1) throw ArgumentError("synthetic domain needs count >= 1");
  if (spec.image_size < 8) throw ArgumentError("synthetic image size must be >= 8");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (ec) throw IoError(cat("cannot create ", out_dir, ": ", ec.message()));
  DatasetManifest m;
  m.root = out_dir;
  m.domain = name;
  m.image_size = spec.image_size;
  for (std::int64_t i = 0; i < spec.count; ++i) {
    auto [content, mask] = render_content(spec.content_seed, i, spec.image_size);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%05lld.png", static_cast<long long>(i));
    m.images.push_back(std::string("images/") + stem);
    m.labels.push_back(std::string("labels/") + stem);
    write_png(out_dir / m.images.back(), apply_style(content, spec));
    write_label_png(out_dir / m.labels.back(), mask);
  }
  m.save();
  return m;
}

std::pair<DatasetManifest, DatasetManifest> generate_synthetic_domains(const SyntheticStyleSpec& source,
                                                                       const SyntheticStyleSpec& target,
                                                                       const fs::path& out_dir) {
  if (source.content_seed != target.content_seed || source.count != target.count ||
      source.image_size != target.image_size) {
    throw ArgumentError("paired synthetic domains must share content seed, count and image size");
  }
  return {generate_synthetic_domain(source, "source", out_dir / "source"),
          generate_synthetic_domain(target, "target", out_dir / "target")};
}

// ---- style statistics ----

std::pair<torch::Tensor, torch::Tensor> hue_and_chroma(const torch::Tensor& images) {
  const auto rgb = (images.to(torch::kFloat64) + 1.0) / 2.0;
  const auto r = rgb.select(-3, 0), g = rgb.select(-3, 1), b = rgb.select(-3, 2);
  const auto mx = torch::max(r, torch::max(g, b));
  const auto mn = torch::min(r, torch::min(g, b));
  const auto c = mx - mn;
  const auto safe = c.clamp_min(1e-12);
  auto hue_r = torch::remainder((g - b) / safe, 6.0);
  auto hue_g = (b - r) / safe + 2.0;
  auto hue_b = (r - g) / safe + 4.0;
  auto hue = torch::where(mx == r, hue_r, torch::where(mx == g, hue_g, hue_b)) * 60.0;
  hue = torch::where(c > 0, hue, torch::zeros_like(hue));
  return {hue, c};
}

std::pair<double, double> hue_resultant(std::span<const torch::Tensor> images) {
  double x = 0.0, y = 0.0, pixels = 0.0;
  for (const auto& im : images) {
    auto [hue, chroma] = hue_and_chroma(im);
    const auto rad = hue * kDegToRad;
    x += (chroma * torch::cos(rad)).sum().item<double>();
    y += (chroma * torch::sin(rad)).sum().item<double>();
    pixels += static_cast<double>(chroma.numel());
  }
  if (pixels == 0.0) throw ArgumentError("hue_resultant of an empty image set");
  return {x / pixels, y / pixels};
}

double measure_style_statistic(std::span<const torch::Tensor> images, StyleStatistic kind) {
  if (images.empty()) throw ArgumentError("style statistic of an empty image set");
  if (kind == StyleStatistic::kMeanBrightness) {
    double sum = 0.0, count = 0.0;
    for (const auto& im : images) {
      sum += im.to(torch::kFloat64).sum().item<double>();
      count += static_cast<double>(im.numel());
    }
    return sum / count;
  }
  const auto [x, y] = hue_resultant(images);
  if (std::hypot(x, y) < 1e-12) throw ArgumentError("mean hue undefined: images are achromatic");
  return std::atan2(y, x) / kDegToRad;
}

double hue_difference(double a, double b) {
  double d = std::fmod(a - b, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

// ---- translated datasets ----

ZAssignment ZAssignment::parse(const std::string& text) {
  if (text == "uniform") return uniform();
  if (text.rfind("fixed:", 0) == 0) {
    try {
      return constant(DomainnessValue(std::stod(text.substr(6))).value());
    } catch (const std::logic_error& e) {
      throw ArgumentError(cat("bad z mode '", text, "': ", e.what()));
    }
  }
  throw ArgumentError(cat("z mode must be 'uniform' or 'fixed:<z>', got '", text, "'"));
}

void write_index(const fs::path& path, std::span<const TranslatedSample> rows) {
  std::string text;
  for (const auto& row : rows) text += row.image + "\t" + row.label + "\t" + format_z(row.z) + "\n";
  write_file(path, text);
}

std::vector<TranslatedSample> read_index(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<TranslatedSample> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos) throw IoError(cat(path, ":", line_no, ": expected image<TAB>label<TAB>z"));
    TranslatedSample row{line.substr(0, a), line.substr(a + 1, b - a - 1), 0.0};
    try {
      row.z = DomainnessValue(std::stod(line.substr(b + 1))).value();
    } catch (const std::logic_error& e) {
      throw IoError(cat(path, ":", line_no, ": bad z: ", e.what()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

TranslateSummary translate_dataset(const DatasetManifest& manifest, Generator& generator, const ZAssignment& z_mode,
                                   std::uint64_t seed, const fs::path& out_dir) {
  if (generator->options().z_dim != 1) throw ArgumentError("translate_dataset needs a single-target generator");
  torch::NoGradGuard no_grad;
  const auto dtype = generator->parameters().front().scalar_type();
  Rng rng(seed);
  std::vector<TranslatedSample> rows;
  TranslateSummary summary;
  fs::create_directories(out_dir / "images");
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    // Draw before decoding so z assignment does not depend on failures.
    const double z = z_mode.fixed ? *z_mode.fixed : uniform01(rng);
    const auto& rel = manifest.images[i];
    try {
      const auto image = read_png(manifest.root / rel).to(dtype).unsqueeze(0);
      const auto out = translate(image, DomainnessValue(z), generator).squeeze(0);
      TranslatedSample row{"images/" + fs::path(rel).filename().string(), "", z};
      write_png(out_dir / row.image, out);
      if (manifest.has_labels()) {
        row.label = "labels/" + fs::path(manifest.labels[i]).filename().string();
        fs::create_directories(out_dir / "labels");
        fs::copy_file(manifest.root / manifest.labels[i], out_dir / row.label, fs::copy_options::overwrite_existing);
      }
      rows.push_back(std::move(row));
      ++summary.translated;
    } catch (const std::exception& e) {
      summary.failures.push_back(rel + ": " + e.what());
    }
  }
  summary.index_path = out_dir / "index.tsv";
  write_index(summary.index_path, rows);
  return summary;
}

// ---- image banks ----

ImageBank ImageBank::load(const DatasetManifest& manifest, std::int64_t image_size) {
  if (manifest.images.empty()) throw ArgumentError(cat("manifest ", manifest.root, " lists no images"));
  std::vector<torch::Tensor> images, labels;
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    images.push_back(resize_image(read_png(manifest.root / manifest.images[i]), image_size));
    if (manifest.has_labels()) {
      labels.push_back(resize_labels(read_label_png(manifest.root / manifest.labels[i]), image_size));
    }
  }
  ImageBank bank;
  bank.images = torch::stack(images);
  if (!labels.empty()) bank.labels = torch::stack(labels);
  return bank;
}

ImageBank ImageBank::load_index(const fs::path& index_path, std::int64_t image_size, torch::Tensor* z) {
  const auto rows = read_index(index_path);
  if (rows.empty()) throw ArgumentError(cat("index ", index_path, " has no rows"));
  const auto dir = index_path.parent_path();
  std::vector<torch::Tensor> images, labels;
  std::vector<double> zs;
  for (const auto& row : rows) {
    images.push_back(resize_image(read_png(dir / row.image), image_size));
    if (!row.label.empty()) labels.push_back(resize_labels(read_label_png(dir / row.label), image_size));
    zs.push_back(row.z);
  }
  ImageBank bank;
  bank.images = torch::stack(images);
  if (labels.size() == rows.size()) bank.labels = torch::stack(labels);
  if (z != nullptr) *z = torch::tensor(zs, torch::kFloat64).to(torch::kFloat32);
  return bank;
}

ImageBank::Batch ImageBank::sample(std::int64_t batch_size, std::int64_t crop, bool flip, Rng& rng) const {
  const auto n = size();
  const auto side = images.size(2);
  if (batch_size < 1 || crop < 1 || crop > side) throw ArgumentError("invalid batch or crop size");
  Batch batch;
  std::vector<torch::Tensor> imgs, labs;
  for (std::int64_t b = 0; b < batch_size; ++b) {
    const auto idx = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(n));
    const auto oy = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(side - crop + 1));
    const auto ox = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(side - crop + 1));
    const bool mirror = flip && uniform01(rng) < 0.5;
    auto img = images[idx].narrow(1, oy, crop).narrow(2, ox, crop);
    if (mirror) img = img.flip({2});
    imgs.push_back(img);
    if (labels.defined()) {
      auto lab = labels[idx].narrow(0, oy, crop).narrow(1, ox, crop);
      if (mirror) lab = lab.flip({1});
      labs.push_back(lab);
    }
    batch.indices.push_back(idx);
  }
  batch.images = torch::stack(imgs).contiguous();
  if (!labs.empty()) batch.labels = torch::stack(labs).contiguous();
  return batch;
}

}  // namespace dlow
