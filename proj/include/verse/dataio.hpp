#pragma once

// Datasets on disk: 16-bit grayscale PNG images, 8-bit paletted PNG label maps
// (value = target id + 1, 0 = background) and a JSON manifest whose paths are
// relative to the manifest directory.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "verse/png_io.hpp"
#include "verse/tensor.hpp"

namespace verse {

/// [H, W] intensities in [0, 1].
using Image = Tensor<float>;
/// [H, W] values in {0, 1}.
using Mask = Tensor<std::uint8_t>;

struct Sample {
  std::string sample_id;
  Image image;
  std::map<int, Mask> masks;

  int height() const { return image.dim(0); }
  int width() const { return image.dim(1); }
};

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string sample_id;
  std::string image_file;
  std::string mask_file;
  std::vector<int> target_ids;
};

struct DatasetManifest {
  std::filesystem::path root;
  Split split = Split::train;
  std::map<int, std::string> target_names;
  std::vector<ManifestEntry> entries;
  nlohmann::json generator = nullptr;

  std::size_t size() const { return entries.size(); }
};

struct GenSpec {
  int n_samples = 200;
  int image_size = 256;
  int n_targets = 3;
  double noise_std = 0.04;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const GenSpec& g);
void from_json(const nlohmann::json& j, GenSpec& g);

/// Default names for the synthetic anatomy.
std::map<int, std::string> synthetic_target_names(int n_targets);

/// The index-th synthetic sample, exactly as generate_synthetic_dataset stores it.
Sample synthesize_sample(const GenSpec& spec, int index, Split split = Split::train);

DatasetManifest generate_synthetic_dataset(const GenSpec& spec, const std::filesystem::path& root,
                                           Split split = Split::train);

/// Writes images, label maps and manifest.json under root.
DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& root, Split split,
                              const std::map<int, std::string>& target_names,
                              const nlohmann::json& generator = nullptr);

void write_manifest(const DatasetManifest& manifest);
/// Accepts either a manifest.json path or the directory holding it.
DatasetManifest read_manifest(const std::filesystem::path& path);

Sample load_sample(const DatasetManifest& manifest, std::size_t index);
std::vector<Sample> load_dataset(const DatasetManifest& manifest);

/// Grayscale conversion plus per-image min-max normalization to [0, 1].
Image image_from_raster(const png::Raster& raster);
/// Quantizes [0, 1] intensities to 16 bits.
std::vector<std::uint16_t> quantize16(const Image& image);

}  // namespace verse
