#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "nctrl/checkpoint.hpp"
#include "nctrl/error.hpp"
#include "nctrl/io_util.hpp"
#include "nctrl/nn.hpp"
#include "nctrl/rng.hpp"
#include "nctrl/tensor.hpp"

using namespace nctrl;

namespace {

std::string temp_dir(const char* tag) {
  const auto dir =
      std::filesystem::temp_directory_path() / (std::string("nctrl_io_") + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

void flip_byte(const std::string& path, std::size_t offset) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  REQUIRE(offset < bytes.size());
  bytes[offset] ^= 0xFF;
  write_file_bytes(path, bytes);
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("crc32 of known vector") {
  // "123456789" is the standard check string for CRC-32 (IEEE 802.3).
  const std::uint8_t data[] = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
  CHECK(crc32(data, 9) == 0xCBF43926u);
  CHECK(crc32(nullptr, 0) == 0x00000000u);
}

TEST_CASE("f64 file round trip is bitwise") {
  const std::string dir = temp_dir("f64");
  const std::string path = dir + "/m.f64";
  Rng rng(3);
  Tensor t({7, 5});
  for (double& v : t.values) v = rng.uniform(-1e6, 1e6);
  t.values[3] = 1e-308;  // subnormal-adjacent values must survive
  write_f64_file(path, t);
  const Tensor back = read_f64_file(path, 7, 5);
  REQUIRE(back.shape == t.shape);
  for (std::size_t i = 0; i < t.values.size(); ++i)
    CHECK(back.values[i] == t.values[i]);
}

TEST_CASE("f64 reader rejects wrong element count") {
  const std::string dir = temp_dir("f64short");
  const std::string path = dir + "/m.f64";
  write_f64_file(path, Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS((void)read_f64_file(path, 3, 2), FormatError);
}

TEST_CASE("u32 file round trip") {
  const std::string dir = temp_dir("u32");
  const std::string path = dir + "/c.u32";
  const std::vector<std::uint32_t> v = {0, 1, 4294967295u, 7, 2};
  write_u32_file(path, v);
  CHECK(read_u32_file(path) == v);
}

TEST_CASE("missing file raises IoError") {
  CHECK_THROWS_AS((void)read_file_bytes("/nonexistent/nctrl/nope.bin"),
                  IoError);
  CHECK_THROWS_AS((void)read_u32_file("/nonexistent/nctrl/nope.u32"), IoError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const std::string dir = temp_dir("ckpt");
  const std::string path = dir + "/model.ckpt";
  Rng rng(11);
  ParamStore store;
  Tensor a({3, 4}), b({1, 6}), c({2, 2});
  for (double& v : a.values) v = rng.normal();
  for (double& v : b.values) v = rng.uniform(-1e300, 1e300);
  for (double& v : c.values) v = rng.normal() * 1e-300;
  store.add("net.w0", a);
  store.add("net.b0", b);
  store.add("other", c);
  save_checkpoint(path, store);

  const ParamStore back = load_checkpoint(path);
  REQUIRE(back.size() == store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(back.name_at(i) == store.name_at(i));
    REQUIRE(back.at(i).shape == store.at(i).shape);
    for (std::size_t j = 0; j < store.at(i).values.size(); ++j)
      CHECK(back.at(i).values[j] == store.at(i).values[j]);
  }

  // Same store saved twice produces identical bytes.
  const std::string path2 = dir + "/model2.ckpt";
  save_checkpoint(path2, store);
  CHECK(read_file_bytes(path) == read_file_bytes(path2));
}

TEST_CASE("checkpoint payload corruption is detected") {
  const std::string dir = temp_dir("ckpt_corrupt");
  const std::string path = dir + "/model.ckpt";
  ParamStore store;
  store.add("w", Tensor({4, 4}, 1.25));
  save_checkpoint(path, store);
  const std::size_t total = read_file_bytes(path).size();
  flip_byte(path, total - 5);  // inside the float payload
  CHECK_THROWS_AS((void)load_checkpoint(path), ChecksumError);
}

TEST_CASE("checkpoint truncation is detected") {
  const std::string dir = temp_dir("ckpt_trunc");
  const std::string path = dir + "/model.ckpt";
  ParamStore store;
  store.add("w", Tensor({8, 8}, -2.0));
  save_checkpoint(path, store);
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  bytes.resize(bytes.size() - 16);
  write_file_bytes(path, bytes);
  CHECK_THROWS_AS((void)load_checkpoint(path), FormatError);
}

TEST_CASE("checkpoint with bad magic is rejected") {
  const std::string dir = temp_dir("ckpt_magic");
  const std::string path = dir + "/model.ckpt";
  ParamStore store;
  store.add("w", Tensor({1, 1}, 0.5));
  save_checkpoint(path, store);
  flip_byte(path, 0);
  CHECK_THROWS_AS((void)load_checkpoint(path), FormatError);
}

TEST_CASE("csv writer emits header and rows") {
  const std::string dir = temp_dir("csv");
  const std::string path = dir + "/t.csv";
  Tensor t({2, 3}, 0.0);
  t.at(0, 0) = 1.5;
  t.at(1, 2) = -2.25;
  write_csv_matrix(path, t, "a,b,c");
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const std::string text(bytes.begin(), bytes.end());
  CHECK(text.rfind("a,b,c\n", 0) == 0);
  CHECK(text.find("1.5") != std::string::npos);
  CHECK(text.find("-2.25") != std::string::npos);
}

TEST_CASE("ensure_dir and path_exists") {
  const std::string dir = temp_dir("dirs");
  const std::string sub = dir + "/a/b/c";
  CHECK(!path_exists(sub));
  ensure_dir(sub);
  CHECK(path_exists(sub));
  ensure_dir(sub);  // idempotent
  CHECK(path_exists(sub));
}

}  // TEST_SUITE
