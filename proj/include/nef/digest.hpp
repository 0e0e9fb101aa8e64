#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace nef {

// IEEE 802.3 CRC-32 (the zlib polynomial).
std::uint32_t crc32(std::span<const std::byte> bytes, std::uint32_t running = 0) noexcept;

// Incremental SHA-256; hex() finalizes.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::byte> bytes);
    template <class T>
    void update_values(std::span<const T> values)
    {
        update(std::as_bytes(values));
    }
    std::string hex();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const std::byte> bytes);

} // namespace nef
