#include "readout/crc32.hpp"

#include <libdeflate.h>

namespace readout {

std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t crc) {
  return libdeflate_crc32(crc, bytes.data(), bytes.size());
}

}  // namespace readout
