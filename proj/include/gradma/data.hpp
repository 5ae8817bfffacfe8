#ifndef GRADMA_DATA_HPP
#define GRADMA_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradma/types.hpp"

namespace gradma::data {

using Index = std::size_t;
using Label = std::int32_t;

struct Dataset {
  RowMatrix<real> features;  // n x dim
  std::vector<Label> labels;
  int num_classes = 0;

  Index size() const { return labels.size(); }
  Eigen::Index dim() const { return features.cols(); }
  void validate() const;
};

// A minibatch or any gathered subset of rows.
struct Batch {
  RowMatrix<real> features;
  std::vector<Label> labels;

  Index size() const { return labels.size(); }
};

Batch gather(const Dataset& ds, std::span<const Index> rows);

// ---- MNIST IDX ------------------------------------------------------------

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, count_mismatch, bad_label };
  IdxError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Pixels are scaled to [0, 1]. Throws IdxError.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct MnistSplits {
  Dataset train;
  Dataset test;
};

// Looks for the four standard file names in `dir`.
MnistSplits load_mnist_dir(const std::filesystem::path& dir);

// ---- synthetic Gaussian mixtures ------------------------------------------

// Class k draws points from Normal(mu_k, 0.5 I) with mu_k ~ Uniform[-2, 2]^dim.
// The class means depend only on `seed`; `stream` selects an independent draw of
// points around the same means (0 for training data, 1 for a held-out set).
Dataset gen_synthetic(int num_classes, int dim, int n_per_class, std::uint64_t seed, std::uint64_t stream = 0);

// Flat little-endian container: 16-byte header {"GMLB", u32 version, u32 n,
// u32 dim}, then u32 num_classes, n x u32 labels, n x dim f64 row-major.
inline constexpr std::uint32_t kGmlbVersion = 1;
void save_gmlb(const Dataset& ds, const std::filesystem::path& path);
Dataset load_gmlb(const std::filesystem::path& path);

// ---- partitioning -----------------------------------------------------------

struct Partition {
  std::vector<std::vector<Index>> shards;
  double omega = 0;

  Index num_shards() const { return shards.size(); }
};

// Per class: draw q ~ Dirichlet(omega 1_N), shuffle that class's indices, and
// cut them by largest-remainder apportionment of n_k q. Shards hold sorted indices.
Partition dirichlet_partition(const Dataset& ds, int num_workers, double omega, std::uint64_t seed);
Partition dirichlet_partition(std::span<const Label> labels, int num_classes, int num_workers, double omega,
                              std::uint64_t seed);

// Largest-remainder rounding of total * weights (weights sum to 1); ties go to the lower index.
std::vector<Index> apportion(Index total, std::span<const double> weights);

// Shannon entropy (nats) of the label histogram of one shard; 0 for an empty shard.
double label_entropy(std::span<const Label> labels, int num_classes, std::span<const Index> shard);

// ---- minibatches ---------------------------------------------------------------

// Positions into `shard` used by batch number `step`. Every epoch is a fresh
// seeded permutation of the shard; the last batch of an epoch may be short.
std::vector<Index> batch_rows(Index shard_size, Index batch_size, std::uint64_t seed, std::uint64_t step);
Batch batch_iter(const Dataset& ds, std::span<const Index> shard, Index batch_size, std::uint64_t seed,
                 std::uint64_t step);

}  // namespace gradma::data

#endif  // GRADMA_DATA_HPP
