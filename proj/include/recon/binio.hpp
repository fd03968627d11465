// Copyright (c) 2026 The recon3d Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recon/error.hpp"

// Little-endian byte helpers shared by the RCPTS1, RCEMB1 and checkpoint codecs.
namespace recon::binio
{

inline void put_u16(std::vector<std::uint8_t> & out, std::uint16_t v)
{
  out.push_back(static_cast<std::uint8_t>(v & 0xFFU));
  out.push_back(static_cast<std::uint8_t>(v >> 8U));
}

inline void put_u32(std::vector<std::uint8_t> & out, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFU));
  }
}

inline void put_f32(std::vector<std::uint8_t> & out, float v)
{
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_bytes(std::vector<std::uint8_t> & out, std::string_view s)
{
  out.insert(out.end(), s.begin(), s.end());
}

class Reader
{
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const noexcept {return bytes_.size() - pos_;}

  void need(std::size_t n, const char * what) const
  {
    check(remaining() >= n, Errc::Truncated, std::string("payload ends inside ") + what);
  }

  std::uint16_t u16(const char * what)
  {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8U));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32(const char * what)
  {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32(const char * what) {return std::bit_cast<float>(u32(what));}

  std::string str(std::size_t n, const char * what)
  {
    need(n, what);
    std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path & path);
void write_file(const std::filesystem::path & path, std::span<const std::uint8_t> bytes);

}  // namespace recon::binio
