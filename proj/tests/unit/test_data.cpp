#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "gradma/data.hpp"
#include "gradma/model.hpp"

using namespace gradma;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto dir = fs::temp_directory_path() / "gradma_unit_data";
  fs::create_directories(dir);
  return dir;
}

void put_be32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

// Writes an IDX image file with `count` rows x cols images whose pixels are i % 256.
fs::path write_images(const std::string& name, std::uint32_t magic, std::uint32_t count, std::uint32_t rows,
                      std::uint32_t cols, std::size_t pixels_written) {
  const auto path = scratch_dir() / name;
  std::ofstream os(path, std::ios::binary);
  put_be32(os, magic);
  put_be32(os, count);
  put_be32(os, rows);
  put_be32(os, cols);
  for (std::size_t i = 0; i < pixels_written; ++i) os.put(static_cast<char>(i % 256));
  return path;
}

fs::path write_labels(const std::string& name, std::uint32_t magic, std::uint32_t count,
                      const std::vector<unsigned char>& labels) {
  const auto path = scratch_dir() / name;
  std::ofstream os(path, std::ios::binary);
  put_be32(os, magic);
  put_be32(os, count);
  os.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  return path;
}

data::IdxError::Kind idx_kind(const fs::path& images, const fs::path& labels) {
  try {
    data::load_mnist_idx(images, labels);
  } catch (const data::IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no IdxError raised";
  return data::IdxError::Kind::io;
}

std::vector<data::Label> balanced_labels(int classes, int per_class) {
  std::vector<data::Label> labels;
  for (int k = 0; k < classes; ++k) labels.insert(labels.end(), static_cast<std::size_t>(per_class), k);
  return labels;
}

}  // namespace

TEST(MnistIdx, SmallWellFormedFile) {
  const auto img = write_images("ok_img", data::kIdxImagesMagic, 3, 2, 2, 12);
  const auto lab = write_labels("ok_lab", data::kIdxLabelsMagic, 3, {4, 0, 9});
  const auto ds = data::load_mnist_idx(img, lab);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 4);
  EXPECT_EQ(ds.num_classes, 10);
  EXPECT_EQ(ds.labels, (std::vector<data::Label>{4, 0, 9}));
  EXPECT_DOUBLE_EQ(ds.features(2, 3), 11 / 255.0);
}

TEST(MnistIdx, LabelsWithImageMagic) {
  const auto img = write_images("m_img", data::kIdxImagesMagic, 2, 2, 2, 8);
  const auto lab = write_labels("m_lab", data::kIdxImagesMagic, 2, {1, 2});
  EXPECT_EQ(idx_kind(img, lab), data::IdxError::Kind::bad_magic);
}

TEST(MnistIdx, CountMismatch) {
  const auto img = write_images("c_img", data::kIdxImagesMagic, 3, 2, 2, 12);
  const auto lab = write_labels("c_lab", data::kIdxLabelsMagic, 2, {1, 2});
  EXPECT_EQ(idx_kind(img, lab), data::IdxError::Kind::count_mismatch);
}

TEST(MnistIdx, TruncatedPixels) {
  const auto img = write_images("t_img", data::kIdxImagesMagic, 3, 2, 2, 10);
  const auto lab = write_labels("t_lab", data::kIdxLabelsMagic, 3, {1, 2, 3});
  EXPECT_EQ(idx_kind(img, lab), data::IdxError::Kind::truncated);
}

TEST(MnistIdx, LabelOutOfRange) {
  const auto img = write_images("l_img", data::kIdxImagesMagic, 2, 2, 2, 8);
  const auto lab = write_labels("l_lab", data::kIdxLabelsMagic, 2, {1, 12});
  EXPECT_EQ(idx_kind(img, lab), data::IdxError::Kind::bad_label);
}

TEST(MnistIdx, MissingFile) {
  EXPECT_EQ(idx_kind(scratch_dir() / "nope_img", scratch_dir() / "nope_lab"), data::IdxError::Kind::io);
}

TEST(MnistIdx, OfficialFilesWhenAvailable) {
  const char* dir = std::getenv("GRADMA_DATA_DIR");
  if (!dir || !fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) GTEST_SKIP() << "GRADMA_DATA_DIR not set";
  const auto splits = data::load_mnist_dir(dir);
  EXPECT_EQ(splits.train.size(), 60000u);
  EXPECT_EQ(splits.test.size(), 10000u);
  EXPECT_EQ(splits.train.dim(), 784);
  EXPECT_EQ(splits.train.num_classes, 10);
  EXPECT_GE(splits.train.features.minCoeff(), 0.0);
  EXPECT_LE(splits.train.features.maxCoeff(), 1.0);
}

TEST(Synthetic, DeterministicAndSized) {
  const auto a = data::gen_synthetic(4, 6, 25, 3);
  const auto b = data::gen_synthetic(4, 6, 25, 3);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.features, data::gen_synthetic(4, 6, 25, 4).features);
  EXPECT_NE(a.features, data::gen_synthetic(4, 6, 25, 3, 1).features);
}

// Separability oracle: centrally trained logistic regression.
TEST(Synthetic, LinearlySeparableEnough) {
  const auto ds = data::gen_synthetic(3, 8, 500, 0);
  const model::Architecture arch{8, {}, 3};
  ParamVec x = ParamVec::Zero(model::param_count(arch));
  for (int it = 0; it < 300; ++it)
    x -= 0.5 * model::loss_and_grad(arch, x, ds.features, std::span<const data::Label>(ds.labels)).grad;
  EXPECT_GE(model::evaluate(arch, x, ds).accuracy, 0.9);
}

TEST(Gmlb, RoundTripAndHeader) {
  const auto ds = data::gen_synthetic(3, 5, 7, 9);
  const auto path = scratch_dir() / "rt.gmlb";
  data::save_gmlb(ds, path);
  const auto back = data::load_gmlb(path);
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_classes, ds.num_classes);
  EXPECT_EQ(fs::file_size(path), 16u + 4u + 21u * 4u + 21u * 5u * 8u);
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "GMLB");
}

TEST(Gmlb, RejectsGarbage) {
  const auto path = scratch_dir() / "bad.gmlb";
  std::ofstream(path, std::ios::binary) << "NOPE and more bytes";
  EXPECT_ANY_THROW(data::load_gmlb(path));
}

TEST(Apportion, ExactTotalsAndTies) {
  const std::vector<double> w{0.5, 0.5};
  EXPECT_EQ(data::apportion(3, w), (std::vector<data::Index>{2, 1}));
  const std::vector<double> w3{0.2, 0.3, 0.5};
  const auto a = data::apportion(10, w3);
  EXPECT_EQ(a, (std::vector<data::Index>{2, 3, 5}));
  const std::vector<double> skew{1e-300, 1.0 - 1e-300};
  EXPECT_EQ(data::apportion(7, skew), (std::vector<data::Index>{0, 7}));
}

TEST(Partition, SingleWorkerGetsEverything) {
  const auto labels = balanced_labels(3, 10);
  const auto p = data::dirichlet_partition(labels, 3, 1, 0.5, 1);
  ASSERT_EQ(p.shards.size(), 1u);
  std::vector<data::Index> all(30);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(p.shards[0], all);
}

TEST(PartitionProperty, DisjointAndExhaustive) {
  const auto labels = balanced_labels(10, 137);
  for (int N : {1, 7, 100, 2000})
    for (double omega : {0.01, 0.3, 1.0, 100.0})
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto p = data::dirichlet_partition(labels, 10, N, omega, seed);
        ASSERT_EQ(p.shards.size(), static_cast<std::size_t>(N));
        std::vector<int> seen(labels.size(), 0);
        for (const auto& s : p.shards) {
          EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
          for (auto i : s) ++seen[i];
        }
        EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }))
            << "N=" << N << " omega=" << omega << " seed=" << seed;
      }
}

TEST(Partition, DeterministicGivenSeed) {
  const auto labels = balanced_labels(10, 50);
  EXPECT_EQ(data::dirichlet_partition(labels, 10, 20, 0.1, 4).shards,
            data::dirichlet_partition(labels, 10, 20, 0.1, 4).shards);
  EXPECT_NE(data::dirichlet_partition(labels, 10, 20, 0.1, 4).shards,
            data::dirichlet_partition(labels, 10, 20, 0.1, 5).shards);
}

// Monte-Carlo check of the concentration: omega = 100 is close to iid.
TEST(Partition, LargeOmegaIsNearlyUniform) {
  const int classes = 10, per_class = 1000, N = 10, seeds = 10;
  const auto labels = balanced_labels(classes, per_class);
  std::vector<double> hist(static_cast<std::size_t>(N * classes), 0);
  for (int seed = 0; seed < seeds; ++seed) {
    const auto p = data::dirichlet_partition(labels, classes, N, 100.0, static_cast<std::uint64_t>(seed));
    for (int i = 0; i < N; ++i)
      for (auto r : p.shards[static_cast<std::size_t>(i)]) hist[static_cast<std::size_t>(i * classes + labels[r])] += 1;
  }
  const double expected = double(per_class) / N;
  for (double h : hist) EXPECT_NEAR(h / seeds, expected, 0.3 * expected);
}

TEST(PartitionProperty, EntropyDecreasesWithOmega) {
  const auto labels = balanced_labels(10, 600);
  double previous = INFINITY;
  for (double omega : {1.0, 0.1, 0.01}) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = data::dirichlet_partition(labels, 10, 100, omega, seed);
      for (const auto& s : p.shards) total += data::label_entropy(labels, 10, s);
    }
    EXPECT_LE(total, previous);
    previous = total;
  }
}

TEST(LabelEntropy, HandValues) {
  const std::vector<data::Label> labels{0, 0, 1, 1, 2};
  const std::vector<data::Index> two{0, 2}, one{0, 1}, none{};
  EXPECT_NEAR(data::label_entropy(labels, 3, two), std::log(2.0), 1e-15);
  EXPECT_EQ(data::label_entropy(labels, 3, one), 0.0);
  EXPECT_EQ(data::label_entropy(labels, 3, none), 0.0);
}

TEST(Batches, FullShardEveryStep) {
  for (std::uint64_t step = 0; step < 5; ++step) {
    auto rows = data::batch_rows(64, 64, 1, step);
    std::sort(rows.begin(), rows.end());
    std::vector<data::Index> all(64);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(rows, all);
  }
  EXPECT_NE(data::batch_rows(64, 64, 1, 0), data::batch_rows(64, 64, 1, 1));
}

TEST(Batches, RemainderBatchKept) {
  EXPECT_EQ(data::batch_rows(100, 64, 3, 0).size(), 64u);
  EXPECT_EQ(data::batch_rows(100, 64, 3, 1).size(), 36u);
  EXPECT_EQ(data::batch_rows(100, 64, 3, 2).size(), 64u);
}

TEST(BatchesProperty, EachEpochConsumesEverySampleOnce) {
  for (data::Index n : {1u, 5u, 64u, 100u, 129u}) {
    const data::Index per_epoch = (n + 63) / 64;
    for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
      std::vector<int> seen(n, 0);
      for (data::Index b = 0; b < per_epoch; ++b)
        for (auto r : data::batch_rows(n, 64, 11, epoch * per_epoch + b)) ++seen[r];
      EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; })) << "n=" << n;
    }
  }
}

TEST(Batches, DeterministicAndEmptyShardRejected) {
  const auto ds = data::gen_synthetic(2, 3, 20, 0);
  std::vector<data::Index> shard{1, 5, 9, 30, 31};
  const auto a = data::batch_iter(ds, shard, 2, 7, 4);
  const auto b = data::batch_iter(ds, shard, 2, 7, 4);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_THROW(data::batch_iter(ds, std::vector<data::Index>{}, 2, 7, 0), StructuralError);
}
