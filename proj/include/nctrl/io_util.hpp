#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nctrl/tensor.hpp"

namespace nctrl {

// CRC-32 (IEEE 802.3 polynomial, reflected).
std::uint32_t crc32(const void* data, std::size_t len,
                    std::uint32_t seed = 0);

std::vector<char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const void* data,
                      std::size_t len);

// Raw little-endian arrays.  The on-disk layout is defined little-endian;
// the build targets little-endian hosts (enforced at compile time).
void write_f64_file(const std::string& path, const std::vector<double>& v);
std::vector<double> read_f64_file(const std::string& path);
void write_u32_file(const std::string& path, const std::vector<std::uint32_t>& v);
std::vector<std::uint32_t> read_u32_file(const std::string& path);

std::uint32_t file_crc32(const std::string& path);

bool path_exists(const std::string& path);
void ensure_dir(const std::string& path);

void write_csv_matrix(const std::string& path, const Tensor& m,
                      const std::string& header);

}  // namespace nctrl
