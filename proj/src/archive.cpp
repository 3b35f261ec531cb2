#include "verse/archive.hpp"

#include <cstring>
#include <fstream>

#include "verse/errors.hpp"

namespace verse {

namespace {

constexpr char kMagic[8] = {'V', 'E', 'R', 'S', 'E', 'C', 'K', 'P'};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U take(std::istream& is, const std::string& what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw FormatError("truncated archive: " + what);
  return v;
}

}  // namespace

void Archive::add(const std::string& name, Tensor<float> array) {
  if (contains(name)) throw ContractError("duplicate archive entry: " + name);
  arrays_.emplace_back(name, std::move(array));
}

bool Archive::contains(const std::string& name) const {
  for (const auto& [n, a] : arrays_)
    if (n == name) return true;
  return false;
}

const Tensor<float>& Archive::get(const std::string& name) const {
  for (const auto& [n, a] : arrays_)
    if (n == name) return a;
  throw NotFoundError("archive has no entry " + name);
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, a] : archive.arrays()) header["arrays"].push_back({{"name", name}, {"shape", a.shape()}});
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kArchiveVersion);
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, a] : archive.arrays())
    os.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open archive: " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw FormatError("not a verse archive: " + path.string());
  const auto version = take<std::uint32_t>(is, "version");
  if (version != kArchiveVersion)
    throw VersionError("archive format version " + std::to_string(version) + ", expected " +
                       std::to_string(kArchiveVersion));
  const auto len = take<std::uint64_t>(is, "header length");
  if (len > (1u << 26)) throw FormatError("archive header too large");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated archive header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad archive header: ") + e.what());
  }
  Archive out;
  out.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("arrays")) {
    Shape shape = entry.at("shape").get<Shape>();
    for (int d : shape)
      if (d < 0) throw FormatError("negative dimension in archive");
    Tensor<float> a(shape);
    if (!is.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(float))))
      throw FormatError("truncated archive payload at " + entry.at("name").get<std::string>());
    out.add(entry.at("name").get<std::string>(), std::move(a));
  }
  return out;
}

}  // namespace verse
