#include "vaedist/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <regex>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

static_assert(std::endian::native == std::endian::little,
              "NPY reader assumes a little-endian host");

namespace vaedist {

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

struct Header {
  NpyDtype dtype;
  std::vector<std::size_t> shape;
  std::size_t data_offset;
};

NpyDtype parse_descr(const std::string &descr) {
  if (descr == "|u1" || descr == "<u1" || descr == "u1")
    return NpyDtype::UInt8;
  if (descr == "<f4")
    return NpyDtype::Float32;
  if (descr == "<f8")
    return NpyDtype::Float64;
  throw NpyError("unsupported dtype '" + descr + "'");
}

Header parse_header(std::span<const std::byte> file) {
  if (file.size() < 10 ||
      std::memcmp(file.data(), kMagic, kMagicLen) != 0)
    throw NpyError("bad magic string");
  auto major = std::to_integer<unsigned>(file[6]);
  auto minor = std::to_integer<unsigned>(file[7]);
  if (major != 1 || minor != 0)
    throw NpyError("unsupported NPY version " + std::to_string(major) + "." +
                   std::to_string(minor));
  std::size_t hlen = std::to_integer<std::size_t>(file[8]) |
                     (std::to_integer<std::size_t>(file[9]) << 8);
  if (file.size() < 10 + hlen)
    throw NpyError("truncated header");
  std::string dict(reinterpret_cast<const char *>(file.data()) + 10, hlen);

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  if (!std::regex_search(dict, m, descr_re))
    throw NpyError("header missing descr");
  Header h{parse_descr(m[1]), {}, 10 + hlen};
  if (!std::regex_search(dict, m, fortran_re))
    throw NpyError("header missing fortran_order");
  if (m[1] == "True")
    throw NpyError("Fortran-ordered arrays are not supported");
  if (!std::regex_search(dict, m, shape_re))
    throw NpyError("header missing shape");
  std::string dims = m[1];
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re);
       it != std::sregex_iterator(); ++it)
    h.shape.push_back(std::stoull(it->str()));
  return h;
}

std::size_t product(const std::vector<std::size_t> &shape) {
  std::size_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

std::string shape_string(const std::vector<std::size_t> &shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size())
      s += ",";
    if (i + 1 < shape.size())
      s += " ";
  }
  return s + ")";
}

} // namespace

std::size_t dtype_size(NpyDtype t) {
  switch (t) {
  case NpyDtype::UInt8:
    return 1;
  case NpyDtype::Float32:
    return 4;
  case NpyDtype::Float64:
    return 8;
  }
  return 0;
}

const char *dtype_descr(NpyDtype t) {
  switch (t) {
  case NpyDtype::UInt8:
    return "|u1";
  case NpyDtype::Float32:
    return "<f4";
  case NpyDtype::Float64:
    return "<f8";
  }
  return "";
}

NpyArray::NpyArray(NpyDtype dtype, std::vector<std::size_t> shape,
                   std::vector<std::byte> bytes)
    : dtype_(dtype), shape_(std::move(shape)) {
  if (bytes.size() != product(shape_) * dtype_size(dtype_))
    throw NpyError("payload size does not match shape");
  auto owned = std::make_shared<std::vector<std::byte>>(std::move(bytes));
  data_ = owned->data();
  nbytes_ = owned->size();
  storage_ = std::move(owned);
}

std::size_t NpyArray::count() const { return product(shape_); }

double NpyArray::value(std::size_t i) const {
  switch (dtype_) {
  case NpyDtype::UInt8:
    return static_cast<double>(std::to_integer<std::uint8_t>(data_[i]));
  case NpyDtype::Float32: {
    float f;
    std::memcpy(&f, data_ + i * 4, 4);
    return f;
  }
  case NpyDtype::Float64: {
    double d;
    std::memcpy(&d, data_ + i * 8, 8);
    return d;
  }
  }
  return 0.0;
}

NpyArray NpyArray::parse(std::span<const std::byte> file) {
  Header h = parse_header(file);
  std::size_t need = product(h.shape) * dtype_size(h.dtype);
  if (file.size() - h.data_offset < need)
    throw NpyError("truncated payload: expected " + std::to_string(need) +
                   " bytes, found " + std::to_string(file.size() - h.data_offset));
  auto payload = file.subspan(h.data_offset, need);
  return NpyArray(h.dtype, std::move(h.shape),
                  std::vector<std::byte>(payload.begin(), payload.end()));
}

NpyArray NpyArray::load(const std::filesystem::path &path, bool memory_map) {
  if (!memory_map) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw NpyError("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    return parse(std::as_bytes(std::span<const char>(raw)));
  }

  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0)
    throw NpyError("cannot open " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw NpyError("cannot stat " + path.string());
  }
  auto size = static_cast<std::size_t>(st.st_size);
  void *addr = size ? ::mmap(nullptr, size, PROT_READ, MAP_PRIVATE, fd, 0)
                    : MAP_FAILED;
  ::close(fd);
  if (addr == MAP_FAILED)
    throw NpyError("cannot map " + path.string());
  std::shared_ptr<void> mapping(addr, [size](void *p) { ::munmap(p, size); });

  std::span<const std::byte> file(static_cast<const std::byte *>(addr), size);
  Header h = parse_header(file);
  std::size_t need = product(h.shape) * dtype_size(h.dtype);
  if (size - h.data_offset < need)
    throw NpyError("truncated payload in " + path.string());

  NpyArray out;
  out.dtype_ = h.dtype;
  out.shape_ = std::move(h.shape);
  out.data_ = file.data() + h.data_offset;
  out.nbytes_ = need;
  out.storage_ = std::move(mapping);
  return out;
}

void save_npy(const std::filesystem::path &path, NpyDtype dtype,
              const std::vector<std::size_t> &shape,
              std::span<const std::byte> payload) {
  if (payload.size() != product(shape) * dtype_size(dtype))
    throw NpyError("payload size does not match shape");
  std::string dict = std::string("{'descr': '") + dtype_descr(dtype) +
                     "', 'fortran_order': False, 'shape': " +
                     shape_string(shape) + ", }";
  // Pad so the payload starts on a 64-byte boundary; header ends with '\n'.
  std::size_t total = kMagicLen + 4 + dict.size() + 1;
  std::size_t pad = (64 - total % 64) % 64;
  dict.append(pad, ' ');
  dict.push_back('\n');
  if (dict.size() > 0xffff)
    throw NpyError("header too long for NPY v1.0");

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw NpyError("cannot write " + path.string());
  out.write(kMagic, kMagicLen);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const char hlen[2] = {static_cast<char>(dict.size() & 0xff),
                        static_cast<char>((dict.size() >> 8) & 0xff)};
  out.write(hlen, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(reinterpret_cast<const char *>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out)
    throw NpyError("write failed for " + path.string());
}

template <typename T>
void save_npy(const std::filesystem::path &path,
              const std::vector<std::size_t> &shape, std::span<const T> values) {
  NpyDtype dt;
  if constexpr (std::is_same_v<T, std::uint8_t>)
    dt = NpyDtype::UInt8;
  else if constexpr (std::is_same_v<T, float>)
    dt = NpyDtype::Float32;
  else
    dt = NpyDtype::Float64;
  save_npy(path, dt, shape, std::as_bytes(values));
}

template void save_npy<std::uint8_t>(const std::filesystem::path &,
                                     const std::vector<std::size_t> &,
                                     std::span<const std::uint8_t>);
template void save_npy<float>(const std::filesystem::path &,
                              const std::vector<std::size_t> &,
                              std::span<const float>);
template void save_npy<double>(const std::filesystem::path &,
                               const std::vector<std::size_t> &,
                               std::span<const double>);

} // namespace vaedist
