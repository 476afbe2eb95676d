// Copyright 2026 The ResT Kit Authors.
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

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "rest/model.hpp"

// RESTW1: "RESTW1\0", u32 count, then per tensor u16 name length, name,
// u8 rank, rank x u64 extents, f32 payload. All integers little-endian.

namespace rest {
namespace {

constexpr char kMagic[] = {'R', 'E', 'S', 'T', 'W', '1', '\0'};

template <typename U>
void put(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw WeightFormatError(std::string("truncated weight file while reading ") + what +
                              " at byte " + std::to_string(pos_));
    }
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_weights(const ParameterSet& params) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw WeightFormatError("parameter name too long: " + p.name);
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) put<std::uint64_t>(out, e);
    for (double v : p.value.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(
                                                               static_cast<float>(v)));
  }
  return out;
}

void decode_weights(ParameterSet& params, std::string_view bytes) {
  Reader r(bytes);
  const auto magic = r.take(sizeof kMagic, "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) {
    throw WeightFormatError("bad magic: not a RESTW1 weight file");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::vector<std::pair<std::string, Tensor>> loaded;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.get<std::uint16_t>("name length");
    std::string name(r.take(name_len, "name"));
    const auto rank = r.get<std::uint8_t>("rank");
    if (rank == 0 || rank > kMaxRank) {
      throw WeightFormatError("tensor '" + name + "' has unsupported rank " +
                              std::to_string(rank));
    }
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>("extent"));
    std::size_t elements = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw WeightFormatError("tensor '" + name + "' has a zero extent");
      if (elements > r.remaining() / e) elements = r.remaining() + 1;  // saturate
      else elements *= e;
    }
    if (elements > r.remaining() / sizeof(float)) {
      throw WeightFormatError("truncated weight file: payload of tensor '" + name +
                              "' extends past the end");
    }
    Tensor t(shape);
    for (double& v : t.values()) {
      v = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("payload")));
    }
    loaded.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) {
    throw WeightFormatError("tensor count " + std::to_string(count) +
                            " in header does not cover the file (trailing bytes)");
  }
  if (loaded.size() != params.size()) {
    throw WeightFormatError("weight file holds " + std::to_string(loaded.size()) +
                            " tensors, model expects " + std::to_string(params.size()));
  }
  std::size_t index = 0;
  for (const auto& p : params) {
    const auto& [name, t] = loaded[index];
    if (name != p.name) {
      throw WeightFormatError("tensor " + std::to_string(index) + " is named '" + name +
                              "', expected '" + p.name + "'");
    }
    if (t.shape() != p.value.shape()) {
      throw WeightFormatError("tensor '" + name + "' has shape " + to_string(t.shape()) +
                              ", expected " + to_string(p.value.shape()));
    }
    ++index;
  }
  index = 0;
  for (auto& p : params) p.value = std::move(loaded[index++].second);
}

void save_weights(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WeightFormatError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_weights(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw WeightFormatError("failed writing " + path.string());
}

void load_weights(ParameterSet& params, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  decode_weights(params, ss.str());
}

}  // namespace rest
