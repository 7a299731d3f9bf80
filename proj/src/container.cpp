#include "anim3d/container.hpp"

#include <unistd.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "anim3d/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "container IO assumes a little-endian host");

namespace anim3d {

namespace {

constexpr char kMagic[7] = {'A', 'N', 'I', 'M', '3', 'D', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void appendPod(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

Eigen::Index shapeNumel(const std::vector<Eigen::Index>& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

}  // namespace

Eigen::Index Container::Array::numel() const { return shapeNumel(shape); }

void Container::putArray(const std::string& name, std::vector<Eigen::Index> shape,
                         Eigen::VectorXd flat) {
  if (shapeNumel(shape) != flat.size())
    throw ArgumentError("container array '" + name + "': shape does not match " +
                        std::to_string(flat.size()) + " elements");
  Array a;
  a.dtype = "f64";
  a.shape = std::move(shape);
  a.f64 = std::move(flat);
  arrays_[name] = std::move(a);
}

void Container::putIntArray(const std::string& name, std::vector<Eigen::Index> shape,
                            std::vector<std::int64_t> values) {
  if (shapeNumel(shape) != static_cast<Eigen::Index>(values.size()))
    throw ArgumentError("container array '" + name + "': shape does not match " +
                        std::to_string(values.size()) + " elements");
  Array a;
  a.dtype = "i64";
  a.shape = std::move(shape);
  a.i64 = std::move(values);
  arrays_[name] = std::move(a);
}

void Container::putMatrix(const std::string& name, const Eigen::MatrixXd& m) {
  Eigen::VectorXd flat(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat[r * m.cols() + c] = m(r, c);
  putArray(name, {m.rows(), m.cols()}, std::move(flat));
}

void Container::putVector(const std::string& name, const Eigen::VectorXd& v) {
  putArray(name, {v.size()}, v);
}

void Container::putScalar(const std::string& name, double v) {
  putArray(name, {1}, Eigen::VectorXd::Constant(1, v));
}

void Container::putIntMatrix(
    const std::string& name,
    const Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>& m) {
  std::vector<std::int64_t> flat(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      flat[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  putIntArray(name, {m.rows(), m.cols()}, std::move(flat));
}

void Container::putIntVector(const std::string& name, const Eigen::VectorX<std::int64_t>& v) {
  std::vector<std::int64_t> flat(v.data(), v.data() + v.size());
  putIntArray(name, {v.size()}, std::move(flat));
}

bool Container::has(const std::string& name) const { return arrays_.count(name) > 0; }

std::vector<std::string> Container::names() const {
  std::vector<std::string> out;
  out.reserve(arrays_.size());
  for (const auto& [name, a] : arrays_) out.push_back(name);
  return out;
}

const Container::Array& Container::array(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw SchemaError("container: missing array '" + name + "'");
  return it->second;
}

Eigen::MatrixXd Container::getMatrix(const std::string& name) const {
  const Array& a = array(name);
  if (a.dtype != "f64")
    throw SchemaError("container array '" + name + "': expected dtype f64, got " + a.dtype);
  if (a.shape.size() != 2)
    throw SchemaError("container array '" + name + "': expected rank 2, got rank " +
                      std::to_string(a.shape.size()));
  Eigen::MatrixXd m(a.shape[0], a.shape[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.f64[r * m.cols() + c];
  return m;
}

Eigen::VectorXd Container::getVector(const std::string& name) const {
  const Array& a = array(name);
  if (a.dtype != "f64")
    throw SchemaError("container array '" + name + "': expected dtype f64, got " + a.dtype);
  if (a.shape.size() != 1)
    throw SchemaError("container array '" + name + "': expected rank 1, got rank " +
                      std::to_string(a.shape.size()));
  return a.f64;
}

Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> Container::getIntMatrix(
    const std::string& name) const {
  const Array& a = array(name);
  if (a.dtype != "i64")
    throw SchemaError("container array '" + name + "': expected dtype i64, got " + a.dtype);
  if (a.shape.size() != 2)
    throw SchemaError("container array '" + name + "': expected rank 2, got rank " +
                      std::to_string(a.shape.size()));
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> m(a.shape[0], a.shape[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = a.i64[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

Eigen::VectorX<std::int64_t> Container::getIntVector(const std::string& name) const {
  const Array& a = array(name);
  if (a.dtype != "i64")
    throw SchemaError("container array '" + name + "': expected dtype i64, got " + a.dtype);
  if (a.shape.size() != 1)
    throw SchemaError("container array '" + name + "': expected rank 1, got rank " +
                      std::to_string(a.shape.size()));
  Eigen::VectorX<std::int64_t> v(a.shape[0]);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = a.i64[static_cast<std::size_t>(i)];
  return v;
}

double Container::getScalar(const std::string& name) const {
  const Array& a = array(name);
  if (a.dtype != "f64" || a.numel() != 1)
    throw SchemaError("container array '" + name + "': expected a single f64 value");
  return a.f64[0];
}

const Eigen::VectorXd& Container::getFlat(const std::string& name) const {
  const Array& a = array(name);
  if (a.dtype != "f64")
    throw SchemaError("container array '" + name + "': expected dtype f64, got " + a.dtype);
  return a.f64;
}

const std::vector<Eigen::Index>& Container::shape(const std::string& name) const {
  return array(name).shape;
}

void Container::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["arrays"] = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, a] : arrays_) {  // std::map: sorted, deterministic
    nlohmann::json rec;
    rec["dtype"] = a.dtype;
    rec["shape"] = a.shape;
    rec["offset"] = offset;
    header["arrays"][name] = std::move(rec);
    offset += static_cast<std::uint64_t>(a.numel()) * 8;
  }
  header["meta"] = meta_;
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(19 + header_text.size() + offset);
  out.append(kMagic, sizeof(kMagic));
  appendPod(out, kVersion);
  appendPod(out, static_cast<std::uint64_t>(header_text.size()));
  out.append(header_text);
  for (const auto& [name, a] : arrays_) {
    if (a.dtype == "f64") {
      out.append(reinterpret_cast<const char*>(a.f64.data()), a.f64.size() * 8);
    } else {
      out.append(reinterpret_cast<const char*>(a.i64.data()), a.i64.size() * 8);
    }
  }
  atomicWriteFile(path, out);
}

Container Container::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");

  if (bytes.size() < 19 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw SchemaError("'" + path.string() + "': not an ANIM3D container (bad magic)");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 7, 4);
  if (version != kVersion)
    throw SchemaError("'" + path.string() + "': unsupported container version " +
                      std::to_string(version));
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 11, 8);
  if (19 + header_len > bytes.size())
    throw SchemaError("'" + path.string() + "': truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(19, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("'" + path.string() + "': malformed JSON header: " + e.what());
  }
  if (!header.contains("arrays") || !header["arrays"].is_object())
    throw SchemaError("'" + path.string() + "': header field 'arrays' missing");

  Container c;
  if (header.contains("meta")) c.meta_ = header["meta"];
  const char* data = bytes.data() + 19 + header_len;
  const std::uint64_t data_len = bytes.size() - 19 - header_len;
  for (const auto& [name, rec] : header["arrays"].items()) {
    if (!rec.contains("dtype") || !rec.contains("shape") || !rec.contains("offset"))
      throw SchemaError("'" + path.string() + "': array '" + name + "' header incomplete");
    const std::string dtype = rec["dtype"].get<std::string>();
    std::vector<Eigen::Index> shape = rec["shape"].get<std::vector<Eigen::Index>>();
    for (Eigen::Index d : shape)
      if (d < 0) throw SchemaError("'" + path.string() + "': array '" + name + "' negative dim");
    const std::uint64_t off = rec["offset"].get<std::uint64_t>();
    const Eigen::Index numel = shapeNumel(shape);
    if (off + static_cast<std::uint64_t>(numel) * 8 > data_len)
      throw SchemaError("'" + path.string() + "': array '" + name + "' exceeds file size");
    if (dtype == "f64") {
      Eigen::VectorXd flat(numel);
      std::memcpy(flat.data(), data + off, static_cast<std::size_t>(numel) * 8);
      c.putArray(name, std::move(shape), std::move(flat));
    } else if (dtype == "i64") {
      std::vector<std::int64_t> vals(static_cast<std::size_t>(numel));
      std::memcpy(vals.data(), data + off, static_cast<std::size_t>(numel) * 8);
      c.putIntArray(name, std::move(shape), std::move(vals));
    } else {
      throw SchemaError("'" + path.string() + "': array '" + name + "' has unknown dtype '" +
                        dtype + "'");
    }
  }
  return c;
}

void atomicWriteFile(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path dir = path.parent_path();
  if (dir.empty()) dir = ".";
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path tmp = dir / (path.filename().string() + ".tmp." +
                              std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw IoError("write failure on '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename temporary file onto '" + path.string() + "'");
  }
}

}  // namespace anim3d
