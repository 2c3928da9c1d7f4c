#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sthoi/error.hpp"
#include "sthoi/nn.hpp"

namespace sthoi {

/// Decoded 8-bit RGB frames of one video, row-major with interleaved channels.
struct VideoFrames {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t frame_count = 0;
  std::vector<std::uint8_t> rgb;  // frame_count * height * width * 3

  std::size_t frame_bytes() const { return static_cast<std::size_t>(width) * height * 3; }

  std::uint8_t& at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) {
    return rgb[((f * height + y) * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) const {
    return rgb[((f * height + y) * width + x) * 3 + c];
  }

  static VideoFrames blank(std::uint32_t w, std::uint32_t h, std::uint32_t n) {
    VideoFrames v{w, h, n, {}};
    v.rgb.assign(static_cast<std::size_t>(w) * h * n * 3, 0);
    return v;
  }

  friend bool operator==(const VideoFrames&, const VideoFrames&) = default;
};

// VHFR container, little-endian:
//   "VHFR" | u32 version (1) | u32 width | u32 height | u32 frame_count | RGB bytes
namespace vhfr {

inline constexpr std::uint32_t kVersion = 1;

inline std::vector<unsigned char> encode(const VideoFrames& v) {
  if (v.rgb.size() != v.frame_bytes() * v.frame_count) {
    throw FormatError("VHFR: pixel buffer does not match dimensions");
  }
  std::vector<unsigned char> out{'V', 'H', 'F', 'R'};
  checkpoint::io::put_le<std::uint32_t>(out, kVersion);
  checkpoint::io::put_le<std::uint32_t>(out, v.width);
  checkpoint::io::put_le<std::uint32_t>(out, v.height);
  checkpoint::io::put_le<std::uint32_t>(out, v.frame_count);
  out.insert(out.end(), v.rgb.begin(), v.rgb.end());
  return out;
}

inline VideoFrames decode(const std::vector<unsigned char>& in) {
  if (in.size() < 20 || in[0] != 'V' || in[1] != 'H' || in[2] != 'F' || in[3] != 'R') {
    throw FormatError("VHFR: bad magic");
  }
  std::size_t pos = 4;
  const auto version = checkpoint::io::get_le<std::uint32_t>(in, pos);
  if (version != kVersion) throw FormatError(detail::concat("VHFR: unsupported version ", version));
  VideoFrames v;
  v.width = checkpoint::io::get_le<std::uint32_t>(in, pos);
  v.height = checkpoint::io::get_le<std::uint32_t>(in, pos);
  v.frame_count = checkpoint::io::get_le<std::uint32_t>(in, pos);
  const std::size_t n = v.frame_bytes() * v.frame_count;
  if (in.size() - pos != n) {
    throw FormatError(detail::concat("VHFR: expected ", n, " pixel bytes, found ", in.size() - pos));
  }
  v.rgb.assign(in.begin() + static_cast<long>(pos), in.end());
  return v;
}

inline void save(const std::string& path, const VideoFrames& v) {
  checkpoint::write_file(path, encode(v));
}

inline VideoFrames load(const std::string& path) { return decode(checkpoint::read_file(path)); }

}  // namespace vhfr
}  // namespace sthoi
