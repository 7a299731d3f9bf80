#include "anim3d/container.hpp"

#include <Eigen/Dense>

#include "anim3d/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using anim3d::ArgumentError;
using anim3d::Container;
using anim3d::IoError;
using anim3d::SchemaError;
using testutil::TempDir;

namespace {

Container sampleContainer() {
  Container c;
  Eigen::MatrixXd m(2, 3);
  m << 1.5, -2.0, 0.25, 3.0, 4.5, -6.125;
  c.putMatrix("m", m);
  c.putVector("v", Eigen::Vector3d(0.1, 0.2, 0.3));
  c.putScalar("s", 42.0);
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> im(2, 2);
  im << 0, 1, 2, 3;
  c.putIntMatrix("im", im);
  Eigen::VectorX<std::int64_t> iv(3);
  iv << 7, -8, 9;
  c.putIntVector("iv", iv);
  c.meta()["fps"] = 25.0;
  c.meta()["name"] = "sample";
  return c;
}

}  // namespace

TEST_CASE("container round-trips every field bit-exactly") {
  TempDir dir;
  const auto path = dir.path / "sample.anim3d";
  const Container c = sampleContainer();
  c.save(path);

  const Container r = Container::load(path);
  CHECK(r.getMatrix("m") == c.getMatrix("m"));
  CHECK(r.getVector("v") == c.getVector("v"));
  CHECK(r.getScalar("s") == 42.0);
  CHECK(r.getIntMatrix("im") == c.getIntMatrix("im"));
  CHECK(r.getIntVector("iv") == c.getIntVector("iv"));
  CHECK(r.meta()["fps"] == 25.0);
  CHECK(r.meta()["name"] == "sample");
  CHECK(r.names() == c.names());
}

TEST_CASE("container saves are byte-deterministic") {
  TempDir dir;
  const Container c = sampleContainer();
  c.save(dir.path / "a.bin");
  c.save(dir.path / "b.bin");
  const std::string a = testutil::slurp(dir.path / "a.bin");
  CHECK(a == testutil::slurp(dir.path / "b.bin"));
  CHECK(a.substr(0, 7) == std::string("ANIM3D\0", 7));

  Container::load(dir.path / "a.bin").save(dir.path / "c.bin");
  CHECK(a == testutil::slurp(dir.path / "c.bin"));
}

TEST_CASE("container rejects malformed files") {
  TempDir dir;
  const auto path = dir.path / "x.bin";
  sampleContainer().save(path);
  const std::string good = testutil::slurp(path);

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'Z';
    testutil::spit(path, bad);
    CHECK_THROWS_AS(Container::load(path), SchemaError);
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[7] = 9;
    testutil::spit(path, bad);
    CHECK_THROWS_AS(Container::load(path), SchemaError);
  }
  SUBCASE("truncated payload") {
    testutil::spit(path, good.substr(0, good.size() - 8));
    CHECK_THROWS_AS(Container::load(path), SchemaError);
  }
  SUBCASE("truncated header") {
    testutil::spit(path, good.substr(0, 12));
    CHECK_THROWS_AS(Container::load(path), SchemaError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(Container::load(dir.path / "nope.bin"), IoError);
  }
}

TEST_CASE("container accessors enforce dtype and rank") {
  const Container c = sampleContainer();
  CHECK_THROWS_AS(c.getMatrix("missing"), SchemaError);
  CHECK_THROWS_AS(c.getMatrix("iv"), SchemaError);   // i64, not f64
  CHECK_THROWS_AS(c.getMatrix("v"), SchemaError);    // rank 1, not 2
  CHECK_THROWS_AS(c.getVector("m"), SchemaError);    // rank 2, not 1
  CHECK_THROWS_AS(c.getScalar("v"), SchemaError);    // 3 values, not 1
  CHECK_THROWS_AS(c.getIntVector("v"), SchemaError); // f64, not i64
  CHECK(c.has("m"));
  CHECK_FALSE(c.has("missing"));
}

TEST_CASE("putArray validates shape against data length") {
  Container c;
  CHECK_THROWS_AS(c.putArray("x", {2, 3}, Eigen::VectorXd::Zero(5)), ArgumentError);
  CHECK_NOTHROW(c.putArray("x", {2, 3}, Eigen::VectorXd::Zero(6)));
  CHECK(c.shape("x") == std::vector<Eigen::Index>{2, 3});
}

TEST_CASE("atomic writes leave no temporaries behind") {
  TempDir dir;
  sampleContainer().save(dir.path / "out.bin");
  int entries = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path)) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 1);
}
