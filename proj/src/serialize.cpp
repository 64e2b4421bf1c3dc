// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#include "icv/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace icv {
namespace fs = std::filesystem;

namespace {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
}

template <typename U>
void put(std::ostream& out, U v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& origin) {
  U v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw CorruptFileError("truncated tensor header in " + origin);
  }
  return to_little(v);
}

template <typename Stored, typename T>
void read_values(std::istream& in, Tensor<T>& t, const std::string& origin) {
  std::vector<Stored> raw(t.numel());
  const auto bytes = static_cast<std::streamsize>(raw.size() * sizeof(Stored));
  if (!in.read(reinterpret_cast<char*>(raw.data()), bytes)) {
    throw CorruptFileError("truncated tensor payload in " + origin + ": expected " +
                           std::to_string(bytes) + " bytes for shape " + shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<T>(to_little(raw[i]));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t) {
  out.write(kTensorMagic, sizeof(kTensorMagic));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put<std::uint64_t>(out, e);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
  } else {
    for (auto v : t.data()) put<T>(out, v);
  }
}

template <typename T>
Tensor<T> read_tensor(std::istream& in, const std::string& origin) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0) {
    throw CorruptFileError("bad tensor magic in " + origin);
  }
  const auto code = get<std::uint8_t>(in, origin);
  const auto rank = get<std::uint8_t>(in, origin);
  Shape shape(rank);
  for (auto& e : shape) {
    const auto v = get<std::uint64_t>(in, origin);
    if (v == 0 || v > (std::uint64_t{1} << 40)) {
      throw CorruptFileError("implausible extent " + std::to_string(v) + " in " + origin);
    }
    e = static_cast<std::size_t>(v);
  }
  Tensor<T> t(shape);
  switch (static_cast<DType>(code)) {
    case DType::F32:
      read_values<float>(in, t, origin);
      break;
    case DType::F64:
      read_values<double>(in, t, origin);
      break;
    default:
      throw CorruptFileError("unknown dtype code " + std::to_string(code) + " in " + origin);
  }
  return t;
}

DType peek_tensor_dtype(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char header[9];
  if (!in.read(header, sizeof(header)) || std::memcmp(header, kTensorMagic, 8) != 0) {
    throw CorruptFileError("bad tensor magic in " + path.string());
  }
  const auto code = static_cast<std::uint8_t>(header[8]);
  if (code != 1 && code != 2) {
    throw CorruptFileError("unknown dtype code " + std::to_string(code) + " in " + path.string());
  }
  return static_cast<DType>(code);
}

template <typename T>
void save_tensor(const fs::path& path, const Tensor<T>& t) {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, t);
  write_file_atomic(path, out.str());
}

template <typename T>
Tensor<T> load_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFileError("cannot open tensor file " + path.string());
  auto t = read_tensor<T>(in, path.string());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CorruptFileError("trailing bytes after tensor payload in " + path.string());
  }
  return t;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error("write failed for " + path.string() + " (disk full?)");
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void commit_directory(const fs::path& staging, const fs::path& target) {
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path aside = target;
  aside += ".old";
  fs::remove_all(aside);
  if (fs::exists(target)) fs::rename(target, aside);
  fs::rename(staging, target);
  fs::remove_all(aside);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&, const std::string&);
template Tensor<double> read_tensor(std::istream&, const std::string&);
template void save_tensor(const fs::path&, const Tensor<float>&);
template void save_tensor(const fs::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const fs::path&);
template Tensor<double> load_tensor(const fs::path&);

}  // namespace icv
