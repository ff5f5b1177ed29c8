#include "nctrl/checkpoint.hpp"

#include <cstring>

#include "json.hpp"
#include "nctrl/error.hpp"
#include "nctrl/io_util.hpp"

namespace nctrl {

namespace {
constexpr char kMagic[8] = {'N', 'C', 'T', 'R', 'L', 'C', 'K', '1'};
}

void save_checkpoint(const ParamStore& store, const std::string& path) {
  nlohmann::json arrays = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.at(i);
    arrays.push_back({{"name", store.name_at(i)},
                      {"shape", t.shape},
                      {"offset", offset}});
    offset += t.numel() * sizeof(double);
  }

  std::vector<char> payload(offset);
  offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.at(i);
    std::memcpy(payload.data() + offset, t.values.data(),
                t.numel() * sizeof(double));
    offset += t.numel() * sizeof(double);
  }

  nlohmann::json manifest = {
      {"arrays", arrays},
      {"payload_bytes", payload.size()},
      {"crc32", crc32(payload.data(), payload.size())},
  };
  const std::string mtext = manifest.dump();

  std::vector<char> out;
  out.reserve(16 + mtext.size() + payload.size());
  out.insert(out.end(), kMagic, kMagic + 8);
  const std::uint64_t mlen = mtext.size();
  const char* mlenp = reinterpret_cast<const char*>(&mlen);
  out.insert(out.end(), mlenp, mlenp + 8);
  out.insert(out.end(), mtext.begin(), mtext.end());
  out.insert(out.end(), payload.begin(), payload.end());
  write_file_bytes(path, out.data(), out.size());
}

ParamStore load_checkpoint(const std::string& path) {
  const std::vector<char> raw = read_file_bytes(path);
  if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 8) != 0)
    throw FormatError("not a parameter checkpoint: " + path);
  std::uint64_t mlen = 0;
  std::memcpy(&mlen, raw.data() + 8, 8);
  if (16 + mlen > raw.size())
    throw FormatError("truncated checkpoint manifest: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(raw.begin() + 16, raw.begin() + 16 + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest in " + path + ": " + e.what());
  }

  const std::size_t payload_bytes = manifest.at("payload_bytes");
  if (16 + mlen + payload_bytes != raw.size())
    throw FormatError("checkpoint payload size mismatch: " + path);
  const char* payload = raw.data() + 16 + mlen;

  const std::uint32_t want_crc = manifest.at("crc32");
  const std::uint32_t got_crc = crc32(payload, payload_bytes);
  if (want_crc != got_crc)
    throw ChecksumError("checkpoint payload checksum mismatch: " + path);

  ParamStore store;
  for (const auto& a : manifest.at("arrays")) {
    const std::string name = a.at("name");
    const std::vector<std::size_t> shape = a.at("shape");
    const std::size_t offset = a.at("offset");
    Tensor t(shape);
    if (offset + t.numel() * sizeof(double) > payload_bytes)
      throw FormatError("checkpoint array out of bounds: " + name);
    std::memcpy(t.values.data(), payload + offset, t.numel() * sizeof(double));
    store.add(name, std::move(t));
  }
  return store;
}

}  // namespace nctrl
