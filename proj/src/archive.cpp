#include "vid2act/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vid2act/errors.hpp"

namespace vid2act {

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', '2', 'A', 'A', 'R', 'C', 'H', '1'};

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("archive truncated: " + path.string());
  return v;
}

}  // namespace

void Archive::put(const std::string& name, std::string bytes) { entries_[name] = std::move(bytes); }

void Archive::put_json(const std::string& name, const nlohmann::json& j) { put(name, j.dump(2)); }

void Archive::put_matrix(const std::string& name, const ad::Matrix& m) {
  std::string bytes(8 + m.size() * sizeof(double), '\0');
  const auto rows = static_cast<std::uint32_t>(m.rows());
  const auto cols = static_cast<std::uint32_t>(m.cols());
  std::memcpy(bytes.data(), &rows, 4);
  std::memcpy(bytes.data() + 4, &cols, 4);
  std::memcpy(bytes.data() + 8, m.data(), m.size() * sizeof(double));
  put(name, std::move(bytes));
}

const std::string& Archive::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("archive has no entry '" + name + "'");
  return it->second;
}

nlohmann::json Archive::get_json(const std::string& name) const {
  try {
    return nlohmann::json::parse(get(name));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("archive entry '" + name + "' is not valid JSON: " + e.what());
  }
}

ad::Matrix Archive::get_matrix(const std::string& name) const {
  const std::string& bytes = get(name);
  if (bytes.size() < 8) throw ValidationError("tensor entry '" + name + "' truncated");
  std::uint32_t rows = 0, cols = 0;
  std::memcpy(&rows, bytes.data(), 4);
  std::memcpy(&cols, bytes.data() + 4, 4);
  const std::size_t expect = 8 + static_cast<std::size_t>(rows) * cols * sizeof(double);
  if (bytes.size() != expect) throw ValidationError("tensor entry '" + name + "' has wrong payload length");
  ad::Matrix m(rows, cols);
  std::memcpy(m.data(), bytes.data() + 8, m.size() * sizeof(double));
  return m;
}

void Archive::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, bytes] : entries_) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(os, bytes.size());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

Archive Archive::read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open archive: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw ValidationError("not a checkpoint archive: " + path.string());
  Archive a;
  const auto count = read_pod<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw ValidationError("archive truncated: " + path.string());
    const auto size = read_pod<std::uint64_t>(is, path);
    std::string bytes(size, '\0');
    if (!is.read(bytes.data(), static_cast<std::streamsize>(size))) throw ValidationError("archive truncated: " + path.string());
    a.entries_[std::move(name)] = std::move(bytes);
  }
  return a;
}

}  // namespace vid2act
