#pragma once

#include <string>

#include "nctrl/nn.hpp"

namespace nctrl {

// Single-file parameter container:
//
//   bytes 0..7    magic "NCTRLCK1"
//   bytes 8..15   u64 little-endian manifest length M
//   M bytes       JSON manifest {"arrays":[{name, shape, offset}...],
//                                "payload_bytes", "crc32"}
//   payload       raw little-endian float64 data; offsets are relative to
//                 the payload start and 8-byte aligned
//
// Round trips are bit-exact.  Loading verifies magic, version, manifest
// consistency and the payload CRC-32.
void save_checkpoint(const ParamStore& store, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

}  // namespace nctrl
