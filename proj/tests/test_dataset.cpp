#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "test_support.hpp"

using namespace sloth;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.classes = 4;
  s.samples = 80;
  s.height = 8;
  s.width = 8;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Synthetic, Deterministic) {
  const Dataset a = gen_synthetic(small_spec()), b = gen_synthetic(small_spec());
  EXPECT_TRUE(a == b);
  SyntheticSpec other = small_spec();
  other.seed = 2;
  EXPECT_FALSE(gen_synthetic(other) == a);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.size(), 80u);
  EXPECT_EQ(a.sample_shape(), (Shape{1, 8, 8}));
  for (std::uint32_t c = 0; c < 4; ++c) EXPECT_EQ(a.of_class(c).size(), 20u);
}

TEST(Synthetic, NoiselessDataIsLinearlySeparable) {
  SyntheticSpec s = small_spec();
  s.difficulty = 0.0;
  s.polarity_flip = 0.0;
  s.samples = 200;
  const Dataset d = gen_synthetic(s);
  // Classify by correlation with each class's mean-centred template direction.
  std::vector<std::vector<double>> centred(s.classes);
  for (std::uint32_t c = 0; c < s.classes; ++c) {
    const Tensor x = d.of_class(c).inputs.at(0);
    centred[c].resize(x.size());
    double norm = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      centred[c][i] = x[i] - 0.5;
      norm += centred[c][i] * centred[c][i];
    }
    for (double& v : centred[c]) v /= std::sqrt(norm);
  }
  for (std::size_t n = 0; n < d.size(); ++n) {
    std::vector<double> z(d.inputs[n].size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = d.inputs[n][i] - 0.5;
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.classes; ++c) {
      if (dot(z, centred[c]) > dot(z, centred[best])) best = c;
    }
    EXPECT_EQ(best, d.labels[n]) << "sample " << n;
  }
}

TEST(Synthetic, TemplateSeedChangesDomain) {
  SyntheticSpec a = small_spec(), b = small_spec();
  b.template_seed = 2;
  EXPECT_FALSE(gen_synthetic(a) == gen_synthetic(b));
}

TEST(Synthetic, RejectsBadSpecs) {
  SyntheticSpec s = small_spec();
  s.classes = 1;
  EXPECT_THROW(gen_synthetic(s), Error);
  s = small_spec();
  s.contrast = 0.0;
  EXPECT_THROW(gen_synthetic(s), Error);
  s = small_spec();
  s.polarity_flip = 1.5;
  EXPECT_THROW(gen_synthetic(s), Error);
}

TEST(Splits, DisjointAndComplete) {
  const Dataset d = gen_synthetic(small_spec());
  const DatasetSplits s = split_dataset(d, 0.25, 0.2, 7);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.holdout.size(), 12u);
  EXPECT_EQ(s.train.size(), 48u);
  std::set<std::vector<double>> seen;
  for (const Dataset* part : {&s.train, &s.holdout, &s.test})
    for (const Tensor& x : part->inputs) seen.insert(x.values());
  EXPECT_EQ(seen.size(), d.size());
  EXPECT_TRUE(split_dataset(d, 0.25, 0.2, 7).test == s.test);
  EXPECT_THROW(split_dataset(d, 0.0, 0.2, 7), Error);
  EXPECT_THROW(split_dataset(d, 0.25, 1.0, 7), Error);
}

TEST(DatasetIO, RoundTrip) {
  const Dataset d = gen_synthetic(small_spec());
  EXPECT_TRUE(deserialize_dataset(serialize_dataset(d)) == d);
  const auto path = std::filesystem::temp_directory_path() / "sloth_dataset_roundtrip.mxds";
  save_dataset(d, path.string());
  EXPECT_TRUE(load_dataset(path.string()) == d);
  std::filesystem::remove(path);
}

TEST(DatasetIO, CorruptionIsDetected) {
  const auto bytes = serialize_dataset(gen_synthetic(small_spec()));
  EXPECT_THROW(deserialize_dataset(std::vector<unsigned char>(bytes.begin(), bytes.end() - 5)), FormatError);
  auto flipped = bytes;
  flipped[40] ^= 0x10;
  EXPECT_THROW(deserialize_dataset(flipped), FormatError);
  auto magic = bytes;
  magic[1] = 'Z';
  EXPECT_THROW(deserialize_dataset(magic), FormatError);
  auto trailing = bytes;
  trailing.push_back(1);
  EXPECT_THROW(deserialize_dataset(trailing), FormatError);
}

TEST(DatasetIO, RejectsOutOfRangePixels) {
  Dataset d = gen_synthetic(small_spec());
  d.inputs[3][5] = 1.5;
  EXPECT_THROW(serialize_dataset(d), FormatError);
  d.inputs[3][5] = 0.5;
  d.labels[2] = 9;
  EXPECT_THROW(serialize_dataset(d), FormatError);
}

TEST(DatasetIO, CsvImport) {
  std::istringstream in("label,a,b,c\n0,0.1,0.2,0.3\n2,1,0,0.5\n\n1,0.25,0.5,0.75\n");
  const Dataset d = import_csv(in, 3);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.sample_shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(d.labels, (std::vector<std::uint32_t>{0, 2, 1}));
  EXPECT_EQ(d.inputs[1].values(), (std::vector<double>{1.0, 0.0, 0.5}));

  std::istringstream ragged("0,0.1,0.2\n1,0.3\n");
  EXPECT_THROW(import_csv(ragged, 2), FormatError);
  std::istringstream bad_label("5,0.1\n");
  EXPECT_THROW(import_csv(bad_label, 2), FormatError);
  std::istringstream bad_pixel("0,2.0\n");
  EXPECT_THROW(import_csv(bad_pixel, 2), FormatError);
  std::istringstream text("0,0.1\n1,abc\n");
  EXPECT_THROW(import_csv(text, 2), FormatError);
}
