// Copyright 2026 The icvideo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "icv/tensor.hpp"

namespace icv {

// Tensor binary format:
//   8 bytes  magic "ICTXTNSR"
//   u8       dtype code (1 = f32, 2 = f64)
//   u8       rank
//   rank x   little-endian u64 extents
//   numel x  little-endian values
inline constexpr char kTensorMagic[8] = {'I', 'C', 'T', 'X', 'T', 'N', 'S', 'R'};

template <typename T>
void write_tensor(std::ostream& out, const Tensor<T>& t);

// Reads one tensor, converting from the stored dtype when it differs from T.
// Throws CorruptFileError on bad magic, unknown dtype, or short payload.
template <typename T>
Tensor<T> read_tensor(std::istream& in, const std::string& origin = "<stream>");

DType peek_tensor_dtype(const std::filesystem::path& path);

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path);

// Write-then-rename: the target only appears once its bytes are complete.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Replace a directory atomically from the reader's point of view: `staging`
// is renamed onto `target` after any existing target is moved aside.
void commit_directory(const std::filesystem::path& staging,
                      const std::filesystem::path& target);

}  // namespace icv
