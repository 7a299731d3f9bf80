#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace anim3d {

/// Self-describing binary container for named dense arrays.
///
/// Layout:
///   bytes 0..6   magic "ANIM3D\0"
///   bytes 7..10  format version, u32 little-endian (currently 1)
///   bytes 11..18 header length H, u64 little-endian
///   H bytes      UTF-8 JSON header:
///                  {"arrays": {name: {"dtype": "f64"|"i64",
///                                     "shape": [..], "offset": N}},
///                   "meta": {...}}
///                offsets are relative to the start of the data section
///   rest         little-endian array payloads, row-major element order
///
/// Saving is deterministic: arrays are laid out in name order and the JSON
/// header is emitted with sorted keys, so equal contents give equal bytes.
/// Writes go to a temporary file in the target directory and are renamed
/// into place, so interrupted runs never leave a truncated file behind.
class Container {
 public:
  struct Array {
    std::string dtype;  // "f64" or "i64"
    std::vector<Eigen::Index> shape;
    Eigen::VectorXd f64;              // valid when dtype == "f64"
    std::vector<std::int64_t> i64;    // valid when dtype == "i64"

    Eigen::Index numel() const;
  };

  /// Store a flat f64 array with the given logical shape (row-major).
  void putArray(const std::string& name, std::vector<Eigen::Index> shape,
                Eigen::VectorXd flat);
  void putIntArray(const std::string& name, std::vector<Eigen::Index> shape,
                   std::vector<std::int64_t> values);

  /// Row-major 2-D convenience wrappers.
  void putMatrix(const std::string& name, const Eigen::MatrixXd& m);
  void putVector(const std::string& name, const Eigen::VectorXd& v);
  void putScalar(const std::string& name, double v);
  void putIntMatrix(const std::string& name,
                    const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& m);
  void putIntVector(const std::string& name, const Eigen::VectorX<std::int64_t>& v);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  const Array& array(const std::string& name) const;

  /// Fetches with shape checks; throw SchemaError on missing name,
  /// wrong dtype, or wrong rank.
  Eigen::MatrixXd getMatrix(const std::string& name) const;
  Eigen::VectorXd getVector(const std::string& name) const;
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> getIntMatrix(
      const std::string& name) const;
  Eigen::VectorX<std::int64_t> getIntVector(const std::string& name) const;
  double getScalar(const std::string& name) const;
  const Eigen::VectorXd& getFlat(const std::string& name) const;
  const std::vector<Eigen::Index>& shape(const std::string& name) const;

  /// Free-form metadata carried in the header.
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

 private:
  std::map<std::string, Array> arrays_;
  nlohmann::json meta_ = nlohmann::json::object();
};

/// Writes bytes to `path` atomically (temp file + rename).
void atomicWriteFile(const std::filesystem::path& path, const std::string& bytes);

}  // namespace anim3d
