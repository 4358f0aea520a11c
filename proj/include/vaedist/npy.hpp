#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vaedist {

class NpyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class NpyDtype { UInt8, Float32, Float64 };

std::size_t dtype_size(NpyDtype t);
const char *dtype_descr(NpyDtype t);

/// A C-contiguous NPY v1.0 array. Payloads are either owned or memory-mapped
/// read-only; either way the bytes are never copied after load.
class NpyArray {
public:
  NpyArray(NpyDtype dtype, std::vector<std::size_t> shape,
           std::vector<std::byte> bytes);

  static NpyArray load(const std::filesystem::path &path, bool memory_map = false);
  static NpyArray parse(std::span<const std::byte> file);

  NpyDtype dtype() const { return dtype_; }
  const std::vector<std::size_t> &shape() const { return shape_; }
  std::size_t count() const;
  std::span<const std::byte> bytes() const { return {data_, nbytes_}; }

  /// Element `i` (flat, C order) converted to double.
  double value(std::size_t i) const;

private:
  NpyArray() = default;

  NpyDtype dtype_ = NpyDtype::UInt8;
  std::vector<std::size_t> shape_;
  std::shared_ptr<void> storage_;
  const std::byte *data_ = nullptr;
  std::size_t nbytes_ = 0;
};

void save_npy(const std::filesystem::path &path, NpyDtype dtype,
              const std::vector<std::size_t> &shape,
              std::span<const std::byte> payload);

template <typename T>
void save_npy(const std::filesystem::path &path,
              const std::vector<std::size_t> &shape, std::span<const T> values);

} // namespace vaedist
