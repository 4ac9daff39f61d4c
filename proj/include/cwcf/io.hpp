#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "cwcf/common.hpp"

namespace cwcf::io {

// Little binary container used by dataset snapshots and checkpoints:
//
//   magic[8] | u32 version | u64 header_len | header (JSON, UTF-8) | payload
//
// Payload blocks are raw host-endian arrays whose lengths are implied by the
// header. Files are only expected to be read back on the same architecture.

using Magic = std::array<char, 8>;

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open for writing: " + path);
  }

  void header(const Magic& magic, std::uint32_t version, const nlohmann::json& meta) {
    out_.write(magic.data(), magic.size());
    pod(version);
    const std::string text = meta.dump();
    pod(static_cast<std::uint64_t>(text.size()));
    out_.write(text.data(), static_cast<std::streamsize>(text.size()));
  }

  template <typename T>
  void pod(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  template <typename T>
  void block(const T* data, std::size_t count) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  }

  template <typename T>
  void block(const std::vector<T>& v) {
    block(v.data(), v.size());
  }

  void close() {
    out_.flush();
    if (!out_) throw Error("write failed");
    out_.close();
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw Error("cannot open for reading: " + path);
  }

  // Returns the JSON header after validating magic and version.
  nlohmann::json header(const Magic& magic, std::uint32_t max_version, std::uint32_t* version_out = nullptr) {
    Magic got{};
    in_.read(got.data(), got.size());
    if (!in_ || got != magic) throw ParseError(path_ + ": bad magic header");
    const auto version = pod<std::uint32_t>();
    if (version == 0 || version > max_version)
      throw ParseError(path_ + ": unsupported version " + std::to_string(version));
    if (version_out) *version_out = version;
    const auto len = pod<std::uint64_t>();
    std::string text(len, '\0');
    in_.read(text.data(), static_cast<std::streamsize>(len));
    check();
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path_ + ": corrupt header: " + e.what());
    }
  }

  template <typename T>
  T pod() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    check();
    return value;
  }

  template <typename T>
  void block(T* data, std::size_t count) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
    check();
  }

  template <typename T>
  std::vector<T> block(std::size_t count) {
    std::vector<T> v(count);
    block(v.data(), count);
    return v;
  }

 private:
  void check() {
    if (!in_) throw ParseError(path_ + ": truncated file");
  }

  std::ifstream in_;
  std::string path_;
};

}  // namespace cwcf::io
