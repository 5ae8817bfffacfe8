#include "gradma/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "gradma/rng.hpp"

namespace gradma::data {

void Dataset::validate() const {
  if (labels.empty()) throw StructuralError("dataset: empty");
  if (static_cast<Index>(features.rows()) != labels.size())
    throw StructuralError("dataset: feature rows and labels disagree");
  for (Label l : labels)
    if (l < 0 || l >= num_classes) throw StructuralError("dataset: label out of range");
}

Batch gather(const Dataset& ds, std::span<const Index> rows) {
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(rows.size()), ds.dim());
  b.labels.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    b.features.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(rows[r]));
    b.labels[r] = ds.labels[rows[r]];
  }
  return b;
}

// ---- IDX ---------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off) {
  return (std::uint32_t(buf[off]) << 24) | (std::uint32_t(buf[off + 1]) << 16) | (std::uint32_t(buf[off + 2]) << 8) |
         std::uint32_t(buf[off + 3]);
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (img.size() < 16) throw IdxError(IdxError::Kind::truncated, images_path.string() + ": header truncated");
  if (lab.size() < 8) throw IdxError(IdxError::Kind::truncated, labels_path.string() + ": header truncated");
  if (read_be32(img, 0) != kIdxImagesMagic)
    throw IdxError(IdxError::Kind::bad_magic, images_path.string() + ": not an IDX image file");
  if (read_be32(lab, 0) != kIdxLabelsMagic)
    throw IdxError(IdxError::Kind::bad_magic, labels_path.string() + ": not an IDX label file");

  const std::size_t n_img = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t n_lab = read_be32(lab, 4);
  if (n_img != n_lab)
    throw IdxError(IdxError::Kind::count_mismatch,
                   "image count " + std::to_string(n_img) + " != label count " + std::to_string(n_lab));

  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n_img * dim) throw IdxError(IdxError::Kind::truncated, images_path.string() + ": truncated");
  if (lab.size() < 8 + n_lab) throw IdxError(IdxError::Kind::truncated, labels_path.string() + ": truncated");

  Dataset ds;
  ds.num_classes = 10;
  ds.features.resize(static_cast<Eigen::Index>(n_img), static_cast<Eigen::Index>(dim));
  ds.labels.resize(n_img);
  const unsigned char* px = img.data() + 16;
  for (std::size_t i = 0; i < n_img; ++i) {
    for (std::size_t j = 0; j < dim; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px[i * dim + j] / 255.0;
    const Label l = lab[8 + i];
    if (l >= ds.num_classes) throw IdxError(IdxError::Kind::bad_label, "label out of range at " + std::to_string(i));
    ds.labels[i] = l;
  }
  return ds;
}

MnistSplits load_mnist_dir(const std::filesystem::path& dir) {
  return {load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"),
          load_mnist_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte")};
}

// ---- synthetic ---------------------------------------------------------------------

Dataset gen_synthetic(int num_classes, int dim, int n_per_class, std::uint64_t seed, std::uint64_t stream) {
  if (num_classes < 1 || dim < 1 || n_per_class < 1) throw StructuralError("gen_synthetic: counts must be >= 1");

  auto mean_rng = make_rng(seed, Stream::synthetic_means);
  std::uniform_real_distribution<double> centre(-2.0, 2.0);
  RowMatrix<real> means(num_classes, dim);
  for (Eigen::Index k = 0; k < means.rows(); ++k)
    for (Eigen::Index j = 0; j < means.cols(); ++j) means(k, j) = centre(mean_rng);

  auto point_rng = make_rng(seed, Stream::synthetic_points, {stream});
  std::normal_distribution<double> noise(0.0, std::sqrt(0.5));

  Dataset ds;
  ds.num_classes = num_classes;
  const auto n = static_cast<Eigen::Index>(num_classes) * n_per_class;
  ds.features.resize(n, dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  Eigen::Index r = 0;
  for (int k = 0; k < num_classes; ++k) {
    for (int i = 0; i < n_per_class; ++i, ++r) {
      for (Eigen::Index j = 0; j < dim; ++j) ds.features(r, j) = means(k, j) + noise(point_rng);
      ds.labels[static_cast<std::size_t>(r)] = k;
    }
  }
  return ds;
}

namespace {

void put_le32(std::ofstream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

void put_le64(std::ofstream& out, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint32_t get_le32(const std::vector<unsigned char>& buf, std::size_t off) {
  return std::uint32_t(buf[off]) | (std::uint32_t(buf[off + 1]) << 8) | (std::uint32_t(buf[off + 2]) << 16) |
         (std::uint32_t(buf[off + 3]) << 24);
}

std::uint64_t get_le64(const std::vector<unsigned char>& buf, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[off + static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

void save_gmlb(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("GMLB", 4);
  put_le32(out, kGmlbVersion);
  put_le32(out, static_cast<std::uint32_t>(ds.size()));
  put_le32(out, static_cast<std::uint32_t>(ds.dim()));
  put_le32(out, static_cast<std::uint32_t>(ds.num_classes));
  for (Label l : ds.labels) put_le32(out, static_cast<std::uint32_t>(l));
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i)
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      std::uint64_t bits;
      const double v = ds.features(i, j);
      std::memcpy(&bits, &v, sizeof bits);
      put_le64(out, bits);
    }
}

Dataset load_gmlb(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 20 || std::memcmp(buf.data(), "GMLB", 4) != 0)
    throw std::runtime_error(path.string() + ": not a GMLB file");
  if (get_le32(buf, 4) != kGmlbVersion) throw std::runtime_error(path.string() + ": unsupported GMLB version");
  const std::size_t n = get_le32(buf, 8);
  const std::size_t dim = get_le32(buf, 12);
  Dataset ds;
  ds.num_classes = static_cast<int>(get_le32(buf, 16));
  std::size_t off = 20;
  if (buf.size() != off + 4 * n + 8 * n * dim) throw std::runtime_error(path.string() + ": truncated GMLB payload");
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i, off += 4) ds.labels[i] = static_cast<Label>(get_le32(buf, off));
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j, off += 8) {
      const std::uint64_t bits = get_le64(buf, off);
      double v;
      std::memcpy(&v, &bits, sizeof v);
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  ds.validate();
  return ds;
}

// ---- partitioning -----------------------------------------------------------------

std::vector<Index> apportion(Index total, std::span<const double> weights) {
  std::vector<Index> counts(weights.size(), 0);
  std::vector<double> rem(weights.size(), 0.0);
  Index assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i];
    counts[i] = static_cast<Index>(std::floor(exact));
    rem[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  // Floating error can push the floors past the total; trim from the largest.
  while (assigned > total) {
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    ++counts[order[k]];
    ++assigned;
  }
  return counts;
}

Partition dirichlet_partition(std::span<const Label> labels, int num_classes, int num_workers, double omega,
                              std::uint64_t seed) {
  if (num_workers < 1) throw std::invalid_argument("dirichlet_partition: need at least one worker");
  if (!(omega > 0)) throw std::invalid_argument("dirichlet_partition: omega must be positive");

  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  Partition part;
  part.omega = omega;
  part.shards.resize(static_cast<std::size_t>(num_workers));
  for (int k = 0; k < num_classes; ++k) {
    auto& idx = by_class[static_cast<std::size_t>(k)];
    auto rng = make_rng(seed, Stream::partition, {static_cast<std::uint64_t>(k)});
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto q = sample_dirichlet(rng, num_workers, omega);
    const auto counts = apportion(idx.size(), q);
    Index cursor = 0;
    for (int w = 0; w < num_workers; ++w) {
      auto& shard = part.shards[static_cast<std::size_t>(w)];
      const Index c = counts[static_cast<std::size_t>(w)];
      shard.insert(shard.end(), idx.begin() + static_cast<std::ptrdiff_t>(cursor),
                   idx.begin() + static_cast<std::ptrdiff_t>(cursor + c));
      cursor += c;
    }
  }
  for (auto& s : part.shards) std::sort(s.begin(), s.end());
  return part;
}

Partition dirichlet_partition(const Dataset& ds, int num_workers, double omega, std::uint64_t seed) {
  return dirichlet_partition(ds.labels, ds.num_classes, num_workers, omega, seed);
}

double label_entropy(std::span<const Label> labels, int num_classes, std::span<const Index> shard) {
  if (shard.empty()) return 0.0;
  std::vector<double> hist(static_cast<std::size_t>(num_classes), 0.0);
  for (Index i : shard) hist[static_cast<std::size_t>(labels[i])] += 1.0;
  double h = 0;
  for (double c : hist) {
    if (c == 0) continue;
    const double p = c / static_cast<double>(shard.size());
    h -= p * std::log(p);
  }
  return h;
}

// ---- minibatches ----------------------------------------------------------------------

std::vector<Index> batch_rows(Index shard_size, Index batch_size, std::uint64_t seed, std::uint64_t step) {
  if (shard_size == 0) throw StructuralError("batch_iter: empty shard");
  if (batch_size == 0) throw std::invalid_argument("batch_iter: batch size must be positive");
  const Index per_epoch = (shard_size + batch_size - 1) / batch_size;
  const std::uint64_t epoch = step / per_epoch;
  const Index slot = static_cast<Index>(step % per_epoch);

  std::vector<Index> perm(shard_size);
  std::iota(perm.begin(), perm.end(), Index{0});
  auto rng = make_rng(seed, Stream::batches, {epoch});
  std::shuffle(perm.begin(), perm.end(), rng);

  const Index begin = slot * batch_size;
  const Index end = std::min(shard_size, begin + batch_size);
  return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

Batch batch_iter(const Dataset& ds, std::span<const Index> shard, Index batch_size, std::uint64_t seed,
                 std::uint64_t step) {
  const auto pos = batch_rows(shard.size(), batch_size, seed, step);
  std::vector<Index> rows(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) rows[i] = shard[pos[i]];
  return gather(ds, rows);
}

}  // namespace gradma::data
