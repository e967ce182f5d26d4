#include "resa/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace resa {

namespace {

static_assert(std::endian::native == std::endian::little, "RTEN I/O assumes a little-endian host");

constexpr std::array<char, 4> kTensorMagic{'R', 'T', 'E', 'N'};
constexpr std::array<char, 4> kArchiveMagic{'R', 'T', 'A', 'R'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("RTEN: unexpected end of stream");
  return v;
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  is.read(got.data(), 4);
  if (!is || got != magic) {
    throw FormatError("RTEN: bad magic, expected " + std::string(magic.begin(), magic.end()));
  }
}

template <typename Stored, typename Scalar>
void read_payload(std::istream& is, Tensor<Scalar>& t) {
  std::vector<Stored> buf(static_cast<std::size_t>(t.size()));
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Stored)));
  if (!is) throw FormatError("RTEN: truncated payload");
  for (std::size_t i = 0; i < buf.size(); ++i) t[static_cast<Index>(i)] = static_cast<Scalar>(buf[i]);
}

}  // namespace

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t) {
  os.write(kTensorMagic.data(), 4);
  put<std::uint8_t>(os, kVersion);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<Scalar>()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (Index d : t.dims()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic);
  const auto version = get<std::uint8_t>(is);
  if (version != kVersion) throw FormatError("RTEN: unsupported version " + std::to_string(version));
  const auto dtype = get<std::uint8_t>(is);
  const auto ndim = get<std::uint8_t>(is);
  Dims dims;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const auto d = get<std::uint64_t>(is);
    if (d == 0 || d > (1ull << 40)) throw FormatError("RTEN: invalid dimension");
    dims.push_back(static_cast<Index>(d));
  }
  Tensor<Scalar> t(dims);
  switch (static_cast<DType>(dtype)) {
    case DType::kFloat32: read_payload<float>(is, t); break;
    case DType::kFloat64: read_payload<double>(is, t); break;
    default: throw FormatError("RTEN: unknown dtype " + std::to_string(dtype));
  }
  return t;
}

template <typename Scalar>
void TensorArchive<Scalar>::add(std::string name, Tensor<Scalar> t) {
  if (index_.count(name)) throw FormatError("duplicate archive entry " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(t));
}

template <typename Scalar>
const Tensor<Scalar>& TensorArchive<Scalar>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw FormatError("archive has no entry " + name);
  return entries_[it->second].second;
}

template <typename Scalar>
void TensorArchive<Scalar>::write(std::ostream& os) const {
  os.write(kArchiveMagic.data(), 4);
  put<std::uint8_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
}

template <typename Scalar>
void TensorArchive<Scalar>::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write(os);
  if (!os) throw FormatError("failed writing " + path.string());
}

template <typename Scalar>
TensorArchive<Scalar> TensorArchive<Scalar>::read(std::istream& is) {
  expect_magic(is, kArchiveMagic);
  if (get<std::uint8_t>(is) != kVersion) throw FormatError("RTAR: unsupported version");
  const auto count = get<std::uint32_t>(is);
  TensorArchive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(is);
    if (len > 4096) throw FormatError("RTAR: entry name too long");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw FormatError("RTAR: truncated entry name");
    archive.add(std::move(name), read_tensor<Scalar>(is));
  }
  return archive;
}

template <typename Scalar>
TensorArchive<Scalar> TensorArchive<Scalar>::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read(is);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template class TensorArchive<float>;
template class TensorArchive<double>;

}  // namespace resa
