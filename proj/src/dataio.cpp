#include "verse/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "verse/components.hpp"
#include "verse/errors.hpp"

namespace verse {

namespace fs = std::filesystem;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split: " + s);
}

void GenSpec::validate() const {
  if (n_samples < 0) throw ContractError("n_samples must be non-negative");
  if (image_size < 64 || image_size % 8 != 0) throw ContractError("image_size must be >= 64 and divisible by 8");
  if (n_targets < 1 || n_targets > 3) throw ContractError("synthetic generator supports 1 to 3 targets");
  if (!(noise_std >= 0.0)) throw ContractError("noise_std must be non-negative");
}

void to_json(nlohmann::json& j, const GenSpec& g) {
  j = {{"n_samples", g.n_samples},
       {"image_size", g.image_size},
       {"n_targets", g.n_targets},
       {"noise_std", g.noise_std},
       {"seed", g.seed}};
}

void from_json(const nlohmann::json& j, GenSpec& g) {
  g.n_samples = j.value("n_samples", g.n_samples);
  g.image_size = j.value("image_size", g.image_size);
  g.n_targets = j.value("n_targets", g.n_targets);
  g.noise_std = j.value("noise_std", g.noise_std);
  g.seed = j.value("seed", g.seed);
}

std::map<int, std::string> synthetic_target_names(int n_targets) {
  static const char* names[] = {"LV", "Myo", "RV"};
  std::map<int, std::string> out;
  for (int i = 0; i < n_targets; ++i) out[i] = i < 3 ? names[i] : "T" + std::to_string(i);
  return out;
}

namespace {

struct Heart {
  double cx, cy, r1, aspect, thick, phi;
  double rv_x, rv_y, rv_r, gap;
};

Heart draw_heart(std::mt19937_64& rng, int size) {
  const double k = size / 64.0;
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  for (int attempt = 0;; ++attempt) {
    Heart h{};
    const double shrink = attempt < 200 ? 1.0 : 0.8;
    h.r1 = u(6.0, 9.0) * k * shrink;
    h.aspect = u(0.8, 1.0);
    h.thick = u(3.5, 5.0) * k;
    h.phi = u(0.0, std::numbers::pi);
    h.gap = k;
    const double outer = h.r1 + h.thick;
    h.rv_r = u(1.0, 1.3) * outer;
    const double crescent = u(5.0, 8.0) * k;
    const double d = outer + h.gap + crescent - h.rv_r;
    const double theta = u(0.0, 2.0 * std::numbers::pi);
    h.cx = u(0.3 * size, 0.7 * size);
    h.cy = u(0.3 * size, 0.7 * size);
    h.rv_x = h.cx + d * std::cos(theta);
    h.rv_y = h.cy + d * std::sin(theta);
    const double lo = 2.0, hi = size - 2.0;
    const bool inside = h.cx - outer >= lo && h.cx + outer <= hi && h.cy - outer >= lo && h.cy + outer <= hi &&
                        h.rv_x - h.rv_r >= lo && h.rv_x + h.rv_r <= hi && h.rv_y - h.rv_r >= lo &&
                        h.rv_y + h.rv_r <= hi;
    if (inside) return h;
  }
}

bool in_ellipse(double u, double v, double rx, double ry) { return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0; }

std::vector<std::uint8_t> render_labels(const Heart& h, int size) {
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(size) * size, 0);
  const double c = std::cos(h.phi), s = std::sin(h.phi);
  const double rx = h.r1, ry = h.aspect * h.r1;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5 - h.cx, py = y + 0.5 - h.cy;
      const double u = c * px + s * py, v = -s * px + c * py;
      std::uint8_t& l = labels[static_cast<std::size_t>(y) * size + x];
      if (in_ellipse(u, v, rx, ry)) {
        l = 1;
      } else if (in_ellipse(u, v, rx + h.thick, ry + h.thick)) {
        l = 2;
      } else {
        const double dx = x + 0.5 - h.rv_x, dy = y + 0.5 - h.rv_y;
        if (dx * dx + dy * dy <= h.rv_r * h.rv_r && !in_ellipse(u, v, rx + h.thick + h.gap, ry + h.thick + h.gap))
          l = 3;
      }
    }
  }
  for (std::uint8_t target = 1; target <= 3; ++target) {
    std::vector<std::uint8_t> m(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == target;
    keep_largest_component(m.data(), size, size);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == target && !m[i]) labels[i] = 0;
  }
  return labels;
}

void blur3(std::vector<double>& img, int size) {
  std::vector<double> tmp(img.size());
  auto at = [size](int v) { return std::clamp(v, 0, size - 1); };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      tmp[y * size + x] =
          0.25 * img[y * size + at(x - 1)] + 0.5 * img[y * size + x] + 0.25 * img[y * size + at(x + 1)];
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      img[y * size + x] =
          0.25 * tmp[at(y - 1) * size + x] + 0.5 * tmp[y * size + x] + 0.25 * tmp[at(y + 1) * size + x];
}

std::uint64_t split_salt(Split s) {
  switch (s) {
    case Split::train: return 0x7472u;
    case Split::val: return 0x76616cu;
    case Split::test: return 0x74657374u;
  }
  return 0;
}

std::string sample_name(Split split, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05d", to_string(split).c_str(), index);
  return buf;
}

}  // namespace

std::vector<std::uint16_t> quantize16(const Image& image) {
  std::vector<std::uint16_t> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i)
    out[i] = static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(image[i]), 0.0, 1.0) * 65535.0));
  return out;
}

Sample synthesize_sample(const GenSpec& spec, int index, Split split) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(split_salt(split))};
  std::mt19937_64 rng(seq);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const int size = spec.image_size;
  const double k = size / 64.0;

  const Heart heart = draw_heart(rng, size);
  const std::vector<std::uint8_t> labels = render_labels(heart, size);

  const double level[4] = {u(0.05, 0.15), u(0.8, 0.95), u(0.32, 0.45), u(0.6, 0.75)};
  const double grad = u(0.0, 0.08), psi = u(0.0, 2.0 * std::numbers::pi);
  const bool distractor = u(0.0, 1.0) < 0.5;
  const double blob_r = u(2.5, 4.0) * k, blob_level = u(0.45, 0.75);
  double blob_x = -1e9, blob_y = -1e9;
  if (distractor) {
    const double extent = std::hypot(heart.rv_x - heart.cx, heart.rv_y - heart.cy) + heart.rv_r;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double bx = u(blob_r + 1, size - blob_r - 1), by = u(blob_r + 1, size - blob_r - 1);
      if (std::hypot(bx - heart.cx, by - heart.cy) > extent + blob_r + 2 * k) {
        blob_x = bx;
        blob_y = by;
        break;
      }
    }
  }

  std::vector<double> img(labels.size());
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * size + x;
      double v = level[labels[i]];
      if (labels[i] == 0) {
        v += grad * ((x + 0.5) * std::cos(psi) + (y + 0.5) * std::sin(psi)) / size;
        if (std::hypot(x + 0.5 - blob_x, y + 0.5 - blob_y) <= blob_r) v = blob_level;
      }
      img[i] = v;
    }
  }
  blur3(img, size);
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (auto& v : img) v += spec.noise_std > 0 ? noise(rng) : 0.0;
  const auto [lo_it, hi_it] = std::minmax_element(img.begin(), img.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;

  Sample s;
  s.sample_id = sample_name(split, index);
  s.image = Image({size, size});
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double norm = span > 0 ? (img[i] - lo) / span : 0.0;
    s.image[i] = static_cast<float>(std::lround(norm * 65535.0) / 65535.0);
  }
  for (int t = 0; t < spec.n_targets; ++t) {
    Mask m({size, size});
    for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == t + 1;
    s.masks[t] = std::move(m);
  }
  return s;
}

DatasetManifest generate_synthetic_dataset(const GenSpec& spec, const fs::path& root, Split split) {
  spec.validate();
  std::vector<Sample> samples;
  samples.reserve(spec.n_samples);
  for (int i = 0; i < spec.n_samples; ++i) samples.push_back(synthesize_sample(spec, i, split));
  return write_dataset(samples, root, split, synthetic_target_names(spec.n_targets), spec);
}

DatasetManifest write_dataset(const std::vector<Sample>& samples, const fs::path& root, Split split,
                              const std::map<int, std::string>& target_names, const nlohmann::json& generator) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  if (!ec) fs::create_directories(root / "masks", ec);
  if (ec) throw IoError("cannot create dataset directories under " + root.string() + ": " + ec.message());

  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.target_names = target_names;
  m.generator = generator;
  std::set<std::string> seen;
  for (const Sample& s : samples) {
    if (!seen.insert(s.sample_id).second) throw ContractError("duplicate sample id " + s.sample_id);
    const int h = s.height(), w = s.width();
    std::vector<std::uint8_t> label(static_cast<std::size_t>(h) * w, 0);
    ManifestEntry e;
    e.sample_id = s.sample_id;
    e.image_file = "images/" + s.sample_id + ".png";
    e.mask_file = "masks/" + s.sample_id + ".png";
    for (const auto& [t, mask] : s.masks) {
      if (!target_names.count(t)) throw ContractError("target id " + std::to_string(t) + " has no name");
      if (t < 0 || t > 254) throw ContractError("target id out of paletted range");
      if (mask.shape() != s.image.shape()) throw ContractError("mask shape differs from image in " + s.sample_id);
      for (std::size_t i = 0; i < label.size(); ++i) {
        if (!mask[i]) continue;
        if (label[i]) throw ContractError("overlapping target masks in " + s.sample_id);
        label[i] = static_cast<std::uint8_t>(t + 1);
      }
      e.target_ids.push_back(t);
    }
    png::write_file(root / e.image_file, png::encode_gray16(w, h, quantize16(s.image)));
    png::write_file(root / e.mask_file, png::encode_indexed(w, h, label));
    m.entries.push_back(std::move(e));
  }
  write_manifest(m);
  return m;
}

void write_manifest(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "verse-dataset";
  j["version"] = 1;
  j["split"] = to_string(m.split);
  nlohmann::json names = nlohmann::json::object();
  for (const auto& [id, name] : m.target_names) names[std::to_string(id)] = name;
  j["target_names"] = names;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back(
        {{"sample_id", e.sample_id}, {"image_file", e.image_file}, {"mask_file", e.mask_file}, {"target_ids", e.target_ids}});
  if (!m.generator.is_null()) j["generator"] = m.generator;
  std::ofstream os(m.root / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest under " + m.root.string());
  os << j.dump(2) << "\n";
  if (!os) throw IoError("manifest write failed under " + m.root.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream is(file);
  if (!is) throw IoError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    const nlohmann::json j = nlohmann::json::parse(is);
    if (j.value("format", "") != "verse-dataset") throw FormatError("not a verse dataset manifest");
    m.split = split_from_string(j.value("split", "train"));
    for (const auto& [k, v] : j.at("target_names").items()) m.target_names[std::stoi(k)] = v.get<std::string>();
    std::set<std::string> seen;
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.sample_id = je.at("sample_id").get<std::string>();
      e.image_file = je.at("image_file").get<std::string>();
      e.mask_file = je.at("mask_file").get<std::string>();
      e.target_ids = je.at("target_ids").get<std::vector<int>>();
      if (!seen.insert(e.sample_id).second) throw FormatError("duplicate sample id " + e.sample_id);
      for (int t : e.target_ids)
        if (!m.target_names.count(t)) throw FormatError("entry " + e.sample_id + " references unknown target");
      m.entries.push_back(std::move(e));
    }
    if (j.contains("generator")) m.generator = j["generator"];
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw FormatError("malformed target id in manifest");
  }
  return m;
}

Image image_from_raster(const png::Raster& r) {
  if (r.paletted) throw FormatError("image PNG must not be paletted");
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  std::vector<double> gray(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t* px = r.samples.data() + i * r.channels;
    gray[i] = r.channels >= 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
  }
  Image img({r.height, r.width});
  if (n == 0) return img;
  const auto [lo_it, hi_it] = std::minmax_element(gray.begin(), gray.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  for (std::size_t i = 0; i < n; ++i) img[i] = span > 0 ? static_cast<float>((gray[i] - lo) / span) : 0.0f;
  return img;
}

Sample load_sample(const DatasetManifest& m, std::size_t index) {
  if (index >= m.entries.size())
    throw RangeError("sample index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(m.entries.size()) + ")");
  const ManifestEntry& e = m.entries[index];
  Sample s;
  s.sample_id = e.sample_id;
  s.image = image_from_raster(png::read_file(m.root / e.image_file));
  const png::Raster lr = png::read_file(m.root / e.mask_file);
  if (lr.width != s.width() || lr.height != s.height())
    throw FormatError("mask shape differs from image for " + e.sample_id);
  if (lr.channels != 1) throw FormatError("mask PNG must be single-channel for " + e.sample_id);
  for (int t : e.target_ids) s.masks[t] = Mask({s.height(), s.width()});
  for (std::size_t i = 0; i < lr.samples.size(); ++i) {
    const int v = lr.samples[i];
    if (v == 0) continue;
    auto it = s.masks.find(v - 1);
    if (it == s.masks.end()) throw FormatError("mask value " + std::to_string(v) + " not listed for " + e.sample_id);
    it->second[i] = 1;
  }
  return s;
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) out.push_back(load_sample(manifest, i));
  return out;
}

}  // namespace verse
