// Copyright 2026 The CVPT Lab Authors. All Rights Reserved.
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

#include "cvpt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "cvpt/error.hpp"

namespace cvpt {

namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'V', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw FormatError("truncated checkpoint at byte offset " + std::to_string(pos_) + ": need " +
                        std::to_string(n) + " bytes for " + what + ", " + std::to_string(in_.size() - pos_) +
                        " available");
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw FormatError("tensor name too long: " + name.substr(0, 64) + "...");
  }
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("tensor rank too large: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name.data(), name.size());
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension too large in " + name);
    w.u32(static_cast<std::uint32_t>(d));
  }
  for (float v : t.data()) w.f32(v);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size() + 1));

  const std::string meta = ckpt.meta.dump();
  std::vector<float> meta_values(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) meta_values[i] = static_cast<unsigned char>(meta[i]);
  write_tensor(w, kMetaTensorName, Tensor({meta.size()}, std::move(meta_values)));

  for (const auto& e : ckpt.tensors.entries()) {
    if (e.name == kMetaTensorName) throw FormatError("tensor name __meta__ is reserved");
    write_tensor(w, e.name, e.value);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic at byte offset 0");
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint format version " + std::to_string(version) + " (this build reads " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  Checkpoint ckpt;
  bool have_meta = false;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t start = r.offset();
    const std::uint16_t name_len = r.u16("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    const std::uint8_t rank = r.u8("tensor rank");
    if (rank == 0) throw FormatError("tensor '" + name + "' at byte offset " + std::to_string(start) + " has rank 0");
    Shape shape(rank);
    std::size_t elements = 1;
    for (auto& d : shape) {
      d = r.u32("tensor dimension");
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
      elements *= d;
    }
    r.need(elements * 4, "tensor data");
    std::vector<float> data(elements);
    for (auto& v : data) v = std::bit_cast<float>(r.u32("tensor data"));
    if (name == kMetaTensorName) {
      std::string text(elements, '\0');
      for (std::size_t i = 0; i < elements; ++i) text[i] = static_cast<char>(static_cast<unsigned char>(data[i]));
      try {
        ckpt.meta = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
      }
      have_meta = true;
      continue;
    }
    if (ckpt.tensors.contains(name)) throw FormatError("duplicate tensor name '" + name + "'");
    ckpt.tensors.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!have_meta) throw FormatError("checkpoint has no __meta__ tensor");
  if (!r.done()) {
    throw FormatError("trailing bytes after last tensor at byte offset " + std::to_string(r.offset()));
  }
  return ckpt;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error("error while reading " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("error while writing " + path.string());
}

void save_checkpoint_file(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint_file(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cvpt
