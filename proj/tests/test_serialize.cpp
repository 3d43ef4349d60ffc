#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "sfi/serialize.hpp"
#include "test_util.hpp"

using namespace sfi;
using sfi::test::random_tensor;
using sfi::test::values;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sfi_serialize_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Serialize, CsvRoundTripIsBitExact) {
  Rng rng(1);
  auto t = random_tensor({3, 4, 2}, rng, false, -1e6, 1e6);
  std::vector<double> v = values(t);
  v[0] = 1e-300;
  v[1] = -0.1;
  v[2] = 1.0 / 3.0;
  t = Tensor::from(t.shape(), v);
  std::stringstream ss;
  write_tensor_csv(ss, t);
  auto back = read_tensor_csv(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(values(back), values(t));
}

TEST(Serialize, CsvHeaderFormat) {
  std::stringstream ss;
  write_tensor_csv(ss, Tensor::from({2, 2}, {1, 2.5, -3, 0}));
  EXPECT_EQ(ss.str(), "shape: 2,2\n1,2.5\n-3,0\n");
}

TEST(Serialize, MalformedCsvIsRejected) {
  std::stringstream missing("1,2\n");
  EXPECT_THROW(read_tensor_csv(missing), FormatError);
  std::stringstream short_body("shape: 2,2\n1,2\n");
  EXPECT_THROW(read_tensor_csv(short_body), FormatError);
  std::stringstream bad_value("shape: 2\n1,x\n");
  EXPECT_THROW(read_tensor_csv(bad_value), FormatError);
}

TEST(Serialize, CheckpointRoundTrip) {
  Rng rng(2);
  NamedTensors named{{"a.weight", random_tensor({3, 2}, rng)}, {"a.bias", random_tensor({2}, rng)}};
  const auto path = scratch_dir("ckpt") / "ckpt.txt";
  save_checkpoint(path, named);
  auto loaded = load_checkpoint(path);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(values(loaded.at("a.weight")), values(named[0].second));
  EXPECT_EQ(values(loaded.at("a.bias")), values(named[1].second));
  EXPECT_THROW(load_checkpoint(path.parent_path() / "missing.txt"), FormatError);
}

TEST(Serialize, PgmIsMinMaxNormalized) {
  const auto path = scratch_dir("pgm") / "map.pgm";
  // W=3, H=2: pixel (x, y) lands at row y, column x.
  save_pgm(path, Tensor::from({3, 2}, {0, 1, 2, 3, 4, 5}));
  auto img = read_pnm(path);
  EXPECT_EQ(img.width, 3u);
  EXPECT_EQ(img.height, 2u);
  EXPECT_EQ(img.channels, 1u);
  EXPECT_EQ(img.pixels, (std::vector<unsigned char>{0, 102, 204, 51, 153, 255}));
  save_pgm(path, Tensor::full({2, 2}, 1.0));
  EXPECT_EQ(read_pnm(path).pixels, std::vector<unsigned char>(4, 255));
}

TEST(Serialize, PpmImageRoundTrip) {
  const auto path = scratch_dir("ppm") / "img.ppm";
  std::vector<double> v;
  for (int i = 0; i < 4 * 3 * 3; ++i) v.push_back((i * 7 % 256) / 255.0);
  auto img = Tensor::from({4, 3, 3}, v);
  save_ppm(path, img);
  auto back = load_image(path);
  EXPECT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(back.data()[i], v[i], 1e-12);
  std::ofstream(path.parent_path() / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(load_image(path.parent_path() / "bad.ppm"), FormatError);
}

TEST(Serialize, FormatDoubleRoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-1.0, 1.0) * std::pow(10.0, rng.uniform(-30.0, 30.0));
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_THROW(parse_double("1.5abc"), FormatError);
}
