#include "nctrl/io_util.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "nctrl/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are not supported");

namespace nctrl {

namespace {
std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}
}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint32_t c = seed ^ 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<char> buf(static_cast<std::size_t>(len));
  if (len > 0) f.read(buf.data(), len);
  if (!f) throw IoError("short read: " + path);
  return buf;
}

void write_file_bytes(const std::string& path, const void* data,
                      std::size_t len) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!f) throw IoError("short write: " + path);
}

void write_f64_file(const std::string& path, const std::vector<double>& v) {
  write_file_bytes(path, v.data(), v.size() * sizeof(double));
}

std::vector<double> read_f64_file(const std::string& path) {
  const std::vector<char> raw = read_file_bytes(path);
  if (raw.size() % sizeof(double) != 0)
    throw FormatError("f64 file size not a multiple of 8: " + path);
  std::vector<double> v(raw.size() / sizeof(double));
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

void write_u32_file(const std::string& path,
                    const std::vector<std::uint32_t>& v) {
  write_file_bytes(path, v.data(), v.size() * sizeof(std::uint32_t));
}

std::vector<std::uint32_t> read_u32_file(const std::string& path) {
  const std::vector<char> raw = read_file_bytes(path);
  if (raw.size() % sizeof(std::uint32_t) != 0)
    throw FormatError("u32 file size not a multiple of 4: " + path);
  std::vector<std::uint32_t> v(raw.size() / sizeof(std::uint32_t));
  std::memcpy(v.data(), raw.data(), raw.size());
  return v;
}

std::uint32_t file_crc32(const std::string& path) {
  const std::vector<char> raw = read_file_bytes(path);
  return crc32(raw.data(), raw.size());
}

bool path_exists(const std::string& path) {
  return std::filesystem::exists(path);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec && !std::filesystem::is_directory(path))
    throw IoError("cannot create directory " + path + ": " + ec.message());
}

void write_csv_matrix(const std::string& path, const Tensor& m,
                      const std::string& header) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.precision(17);
  if (!header.empty()) f << header << "\n";
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) f << ",";
      f << m.at(i, j);
    }
    f << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

}  // namespace nctrl
