#include "symnet/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "symnet/error.hpp"

namespace symnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

double uniform(std::mt19937_64& rng, double a, double b) {
  std::uniform_real_distribution<double> d(a, b);
  return d(rng);
}

double normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  return d(rng);
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  std::array<double, 3> rgb{};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  for (auto& ch : rgb) ch += v - c;
  return rgb;
}

struct Placement {
  double cx, cy, radius, angle, aspect;
};

struct Texture {
  double freq, dir, phase;
  int k1, k2;
  double p1, p2;
};

Texture class_texture(const SyntheticClass& cls) {
  std::mt19937_64 rng(cls.texture_seed);
  Texture t{};
  t.freq = uniform(rng, 0.08, 0.22);
  t.dir = uniform(rng, 0.0, std::numbers::pi);
  t.phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  std::uniform_int_distribution<int> k(3, 6);
  t.k1 = k(rng);
  t.k2 = k(rng) + 2;
  t.p1 = uniform(rng, 0.0, 2 * std::numbers::pi);
  t.p2 = uniform(rng, 0.0, 2 * std::numbers::pi);
  return t;
}

// Shape membership in the object frame; (u, v) are in units of the radius.
bool inside(ShapeFamily f, double u, double v, double aspect, const Texture& tex) {
  const double r = std::hypot(u, v);
  switch (f) {
    case ShapeFamily::kEllipse:
      return u * u + (v / aspect) * (v / aspect) <= 1.0;
    case ShapeFamily::kRectangle:
      return std::abs(u) <= 0.9 && std::abs(v) <= 0.9 * aspect;
    case ShapeFamily::kTriangle: {
      // Equilateral triangle with circumradius 1, apex up.
      const double s3 = std::sqrt(3.0);
      return v >= -0.5 && s3 * u + v <= 1.0 && -s3 * u + v <= 1.0;
    }
    case ShapeFamily::kRing: {
      const double e = std::sqrt(u * u + (v / aspect) * (v / aspect));
      return e <= 1.0 && e >= 0.55;
    }
    case ShapeFamily::kCross:
      return (std::abs(u) <= 1.0 && std::abs(v) <= 0.32) || (std::abs(v) <= 1.0 && std::abs(u) <= 0.32);
    case ShapeFamily::kBlob: {
      const double phi = std::atan2(v, u);
      const double edge = 0.8 + 0.18 * std::sin(tex.k1 * phi + tex.p1) + 0.1 * std::sin(tex.k2 * phi + tex.p2);
      return r <= edge;
    }
  }
  return false;
}

// Paints one object into `rgb` and returns its coverage.
std::vector<std::uint8_t> paint(std::vector<double>& rgb, std::size_t res, const SyntheticClass& cls,
                                const Placement& p, std::mt19937_64& rng) {
  const Texture tex = class_texture(cls);
  std::array<double, 3> color{};
  const double brightness = uniform(rng, 0.85, 1.1);
  for (int c = 0; c < 3; ++c)
    color[c] = std::clamp(cls.rgb[c] * brightness + normal(rng, cls.color_jitter), 0.05, 0.95);
  std::vector<std::uint8_t> cover(res * res, 0);
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  const double tx = std::cos(tex.dir), ty = std::sin(tex.dir);
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - p.cx) / p.radius;
      const double dy = (static_cast<double>(y) + 0.5 - p.cy) / p.radius;
      const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
      if (!inside(cls.family, u, v, p.aspect, tex)) continue;
      cover[y * res + x] = 1;
      const double stripe =
          0.08 * std::sin(2 * std::numbers::pi * tex.freq * (tx * x + ty * y) + tex.phase);
      for (int c = 0; c < 3; ++c) rgb[(y * res + x) * 3 + c] = color[c] + stripe;
    }
  }
  return cover;
}

Placement place(std::mt19937_64& rng, std::size_t res, double r_min, double r_max, double rot) {
  const double n = static_cast<double>(res);
  Placement p{};
  p.radius = uniform(rng, r_min, r_max) * n;
  const double lo = std::min(p.radius * 0.8, n / 2), hi = std::max(n - p.radius * 0.8, n / 2);
  p.cx = uniform(rng, lo, hi);
  p.cy = uniform(rng, lo, hi);
  p.angle = uniform(rng, -rot, rot);
  p.aspect = uniform(rng, 0.65, 1.0);
  return p;
}

std::string sample_stem(std::size_t i) {
  std::ostringstream s;
  s.width(3);
  s.fill('0');
  s << i;
  return s.str();
}

}  // namespace

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kEllipse: return "ellipse";
    case ShapeFamily::kRectangle: return "rectangle";
    case ShapeFamily::kTriangle: return "triangle";
    case ShapeFamily::kRing: return "ring";
    case ShapeFamily::kCross: return "cross";
    case ShapeFamily::kBlob: return "blob";
  }
  return "unknown";
}

std::vector<SyntheticClass> synthetic_classes(std::size_t n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double hue0 = uniform(rng, 0.0, 1.0);
  std::vector<SyntheticClass> out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    SyntheticClass k;
    k.family = static_cast<ShapeFamily>(c % 6);
    const double hue = std::fmod(hue0 + 0.6180339887498949 * static_cast<double>(c), 1.0);
    const double sat = c % 2 == 0 ? 0.85 : 0.6;
    const auto rgb = hsv_to_rgb(hue, sat, 0.92);
    std::copy(rgb.begin(), rgb.end(), k.rgb);
    k.texture_seed = rng();
    std::ostringstream name;
    name << 'c';
    name.width(2);
    name.fill('0');
    name << c;
    k.name = name.str() + "_" + family_name(k.family);
    out.push_back(k);
  }
  return out;
}

GeneratedSample render_sample(const SyntheticClass& cls, const std::vector<SyntheticClass>& catalogue,
                              const GeneratorOptions& opts, std::mt19937_64& rng) {
  const std::size_t res = opts.resolution;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<double> rgb(res * res * 3);
    // Low-saturation gradient background with pixel noise.
    std::array<double, 3> c0{}, c1{};
    const double g0 = uniform(rng, 0.25, 0.75), g1 = uniform(rng, 0.25, 0.75);
    for (int c = 0; c < 3; ++c) {
      c0[c] = g0 + uniform(rng, -0.1, 0.1);
      c1[c] = g1 + uniform(rng, -0.1, 0.1);
    }
    const double dir = uniform(rng, 0.0, 2 * std::numbers::pi);
    const double gx = std::cos(dir), gy = std::sin(dir);
    for (std::size_t y = 0; y < res; ++y)
      for (std::size_t x = 0; x < res; ++x) {
        const double t = 0.5 + 0.5 * (gx * (x / double(res) - 0.5) + gy * (y / double(res) - 0.5)) * 1.4;
        for (int c = 0; c < 3; ++c) rgb[(y * res + x) * 3 + c] = c0[c] + (c1[c] - c0[c]) * t;
      }
    if (catalogue.size() > 1 && uniform(rng, 0.0, 1.0) < opts.distractor_prob) {
      std::uniform_int_distribution<std::size_t> pick(0, catalogue.size() - 2);
      std::size_t other = pick(rng);
      if (catalogue[other].name == cls.name) other = catalogue.size() - 1;
      const Placement d = place(rng, res, 0.10, 0.18, catalogue[other].rotation_range);
      paint(rgb, res, catalogue[other], d, rng);
    }
    const Placement p = place(rng, res, cls.scale_min, cls.scale_max, cls.rotation_range);
    const auto cover = paint(rgb, res, cls, p, rng);
    GeneratedSample s{{res, res, 3, std::vector<std::uint8_t>(res * res * 3)},
                      {res, res, 1, std::vector<std::uint8_t>(res * res)}};
    std::size_t fg = 0;
    for (std::size_t i = 0; i < res * res; ++i) {
      s.mask.pixels[i] = cover[i] ? 255 : 0;
      fg += cover[i];
    }
    for (std::size_t i = 0; i < rgb.size(); ++i) {
      const double v = std::clamp(rgb[i] + uniform(rng, -0.05, 0.05), 0.0, 1.0);
      s.image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(res * res);
    if (frac >= opts.min_foreground && frac <= opts.max_foreground) return s;
  }
  throw InvalidConfig("render_sample: could not meet the foreground bounds for " + cls.name);
}

void generate_synthetic_dataset(const std::string& out_dir, const GeneratorOptions& opts) {
  if (opts.n_classes < 8) throw InvalidConfig("gen-data: at least 8 classes are required");
  if (opts.per_class < 2) throw InvalidConfig("gen-data: at least 2 images per class are required");
  if (opts.resolution == 0 || opts.stride == 0 || opts.resolution % opts.stride != 0)
    throw InvalidConfig("gen-data: resolution must be a positive multiple of the encoder stride");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create dataset directory " + out_dir);

  const auto catalogue = synthetic_classes(opts.n_classes, opts.seed);
  json manifest;
  manifest["version"] = 1;
  manifest["resolution"] = opts.resolution;
  manifest["seed"] = opts.seed;
  manifest["per_class"] = opts.per_class;
  manifest["embeddings"] = "embeddings.txt";
  json classes = json::array();
  std::vector<std::string> names;
  for (std::size_t c = 0; c < catalogue.size(); ++c) {
    const auto& cls = catalogue[c];
    names.push_back(cls.name);
    fs::create_directories(fs::path(out_dir) / cls.name, ec);
    if (ec) throw IoError("cannot create " + (fs::path(out_dir) / cls.name).string());
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(c)};
    std::mt19937_64 rng(seq);
    json entry;
    entry["name"] = cls.name;
    entry["family"] = family_name(cls.family);
    entry["rgb"] = {cls.rgb[0], cls.rgb[1], cls.rgb[2]};
    json images = json::array(), masks = json::array();
    for (std::size_t i = 0; i < opts.per_class; ++i) {
      const auto s = render_sample(cls, catalogue, opts, rng);
      const std::string img = cls.name + "/" + sample_stem(i) + ".ppm";
      const std::string msk = cls.name + "/" + sample_stem(i) + ".pgm";
      write_ppm((fs::path(out_dir) / img).string(), s.image);
      write_pgm((fs::path(out_dir) / msk).string(), s.mask);
      images.push_back(img);
      masks.push_back(msk);
    }
    entry["images"] = images;
    entry["masks"] = masks;
    classes.push_back(entry);
  }
  manifest["classes"] = classes;
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + out_dir);
  out << manifest.dump(2) << "\n";
  TextEmbeddingTable<double>::random(names, 300, opts.seed ^ 0x7e57ull)
      .save((fs::path(out_dir) / "embeddings.txt").string());
}

Dataset::Dataset(std::vector<ClassData> classes, TextEmbeddingTable<double> text, std::size_t resolution)
    : classes_(std::move(classes)), text_(std::move(text)), resolution_(resolution) {
  require(text_.size() >= classes_.size(), "dataset: every class needs a text embedding");
}

Dataset Dataset::load(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir);
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  Dataset d;
  try {
    d.resolution_ = m.at("resolution").get<std::size_t>();
    d.text_ = TextEmbeddingTable<double>::load((root / m.at("embeddings").get<std::string>()).string());
    for (const auto& entry : m.at("classes")) {
      ClassData c;
      c.name = entry.at("name").get<std::string>();
      const auto& imgs = entry.at("images");
      const auto& msks = entry.at("masks");
      if (imgs.size() != msks.size()) throw FormatError("manifest: class " + c.name + " has unpaired files");
      for (std::size_t i = 0; i < imgs.size(); ++i) {
        c.images.push_back(read_ppm((root / imgs[i].get<std::string>()).string()));
        c.masks.push_back(read_pgm((root / msks[i].get<std::string>()).string()));
        const auto& im = c.images.back();
        const auto& mk = c.masks.back();
        if (im.height != d.resolution_ || im.width != d.resolution_ || mk.height != im.height ||
            mk.width != im.width)
          throw FormatError("dataset: " + c.name + " sample " + std::to_string(i) + " has the wrong size");
        for (auto v : mk.pixels)
          if (v != 0 && v != 255) throw FormatError("dataset: mask of " + c.name + " is not binary");
      }
      d.text_.embed(c.name);  // NotFound when the table lacks the class
      d.classes_.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  return d;
}

const ClassData& Dataset::cls(std::size_t id) const {
  if (id >= classes_.size()) throw NotFound("class id " + std::to_string(id) + " out of range");
  return classes_[id];
}

void SplitConfig::validate() const {
  if (n_folds == 0 || n_classes % n_folds != 0)
    throw InvalidConfig("split: " + std::to_string(n_classes) + " classes do not divide into " +
                        std::to_string(n_folds) + " folds");
  if (n_classes / n_folds < 2) throw InvalidConfig("split: each fold needs at least 2 classes");
  if (test_fold >= n_folds) throw InvalidConfig("split: test fold out of range");
}

std::vector<std::size_t> SplitConfig::fold_classes(std::size_t fold) const {
  validate();
  if (fold >= n_folds) throw InvalidConfig("split: fold out of range");
  const std::size_t per = n_classes / n_folds;
  std::vector<std::size_t> out;
  for (std::size_t c = fold * per; c < (fold + 1) * per; ++c) out.push_back(c);
  return out;
}

std::vector<std::size_t> SplitConfig::train_classes() const {
  validate();
  const std::size_t per = n_classes / n_folds;
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < n_classes; ++c)
    if (c / per != test_fold) out.push_back(c);
  return out;
}

template <typename T>
Episode<T> sample_episode(const Dataset& data, const SplitConfig& split, SplitMode mode,
                          std::size_t k_shot, std::mt19937_64& rng) {
  require(k_shot >= 1, "sample_episode: K must be at least 1");
  if (split.n_classes != data.n_classes())
    throw InvalidConfig("sample_episode: split expects " + std::to_string(split.n_classes) +
                        " classes, dataset has " + std::to_string(data.n_classes()));
  const auto pool = mode == SplitMode::kTrain ? split.train_classes() : split.test_classes();
  if (pool.empty()) throw InvalidConfig("sample_episode: empty class pool");
  std::uniform_int_distribution<std::size_t> pick_class(0, pool.size() - 1);
  const std::size_t cid = pool[pick_class(rng)];
  const ClassData& c = data.cls(cid);
  const std::size_t n = c.images.size();
  if (n < k_shot + 1)
    throw InvalidConfig("sample_episode: class " + c.name + " has " + std::to_string(n) +
                        " images, K + 1 = " + std::to_string(k_shot + 1) + " needed");
  // Partial Fisher-Yates: the first K + 1 slots are a draw without replacement.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i <= k_shot; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, n - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  Episode<T> ep;
  ep.class_id = cid;
  ep.query_index = idx[k_shot];
  for (std::size_t k = 0; k < k_shot; ++k) {
    ep.support_indices.push_back(idx[k]);
    ep.input.support_images.push_back(image_to_tensor<T>(c.images[idx[k]]));
    ep.input.support_masks.push_back(mask_to_tensor<T>(c.masks[idx[k]]));
  }
  ep.input.query_image = image_to_tensor<T>(c.images[ep.query_index]);
  ep.input.query_mask = mask_to_tensor<T>(c.masks[ep.query_index]);
  ep.input.text = data.text().embed(c.name).template cast<T>();
  return ep;
}

template Episode<float> sample_episode(const Dataset&, const SplitConfig&, SplitMode, std::size_t,
                                       std::mt19937_64&);
template Episode<double> sample_episode(const Dataset&, const SplitConfig&, SplitMode, std::size_t,
                                        std::mt19937_64&);

}  // namespace symnet
