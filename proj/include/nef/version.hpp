#pragma once

namespace nef {
inline constexpr const char* kLibraryVersion = "nefarena 0.1.0";
inline constexpr int kDatasetFormatVersion = 1;
} // namespace nef
