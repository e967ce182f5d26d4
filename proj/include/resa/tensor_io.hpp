#pragma once

// RTEN binary tensor container.
//
//   tensor record:  "RTEN" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim
//                   | ndim x u64 LE dims | raw LE payload
//   named archive:  "RTAR" | u8 version=1 | u32 LE count
//                   | count x (u32 LE name length | name bytes | tensor record)

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "resa/tensor.hpp"

namespace resa {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <>
constexpr DType dtype_of<double>() { return DType::kFloat64; }

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& t);

/// Reads one record, converting the stored element type to Scalar.
template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is);

/// Ordered collection of named tensors.
template <typename Scalar>
class TensorArchive {
 public:
  void add(std::string name, Tensor<Scalar> t);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor<Scalar>& at(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor<Scalar>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void write(std::ostream& os) const;
  void save(const std::filesystem::path& path) const;
  static TensorArchive read(std::istream& is);
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor<Scalar>>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace resa
