#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace readout {

// CRC-32/ISO-HDLC: poly 0x04C11DB7 reflected, init and xorout 0xFFFFFFFF.
// `crc` is the value returned by a previous call, which allows incremental use.
std::uint32_t crc32(std::span<const std::uint8_t> bytes, std::uint32_t crc = 0);

}  // namespace readout
