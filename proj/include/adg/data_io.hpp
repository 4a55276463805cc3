#pragma once

// Dataset loading, synthetic generation, splitting and partitioning.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "adg/losses.hpp"
#include "adg/types.hpp"

namespace adg {

struct ClassificationDataset {
  std::vector<LabeledExample> examples;
  std::size_t dim = 0;

  bool operator==(const ClassificationDataset&) const = default;
};

struct RatingMatrix {
  std::vector<Rating> ratings;
  std::size_t n_users = 0;
  std::size_t n_items = 0;

  bool operator==(const RatingMatrix&) const = default;
};

// A loaded rating file plus the raw ids behind each dense index.
struct LoadedRatings {
  RatingMatrix matrix;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
};

enum class RatingFormat { tab_separated, double_colon };

RatingFormat parse_rating_format(const std::string& s);

// Reads a whole file; paths ending in ".gz" are decompressed.
std::string read_text_file(const std::string& path);

// "label idx:val idx:val ..." with 1-based strictly increasing indices.
// Labels 0/1 and -1/+1 are accepted; 0 maps to -1.
ClassificationDataset parse_sparse_classification(std::istream& in);
ClassificationDataset load_sparse_classification(const std::string& path);
void write_sparse_classification(std::ostream& out, const ClassificationDataset& data);

// user, item, rating[, timestamp]; ids are re-indexed densely in first-seen order.
LoadedRatings parse_ratings(std::istream& in, RatingFormat format);
LoadedRatings load_ratings(const std::string& path, RatingFormat format);
// Writes dense indices as ids, in stored order.
void write_ratings(std::ostream& out, const RatingMatrix& m, RatingFormat format);

struct SyntheticClassification {
  ClassificationDataset data;
  ParamVector planted_normal;  // unit normal of the separating hyperplane
  std::vector<bool> flipped;   // which labels were flipped by noise
};

// x ~ N(0, I), pushed by `separation` along the planted normal on its side;
// each label is then flipped with probability `noise`.
SyntheticClassification synth_classification(std::size_t n, std::size_t d, double separation,
                                             double noise, std::uint64_t seed);

struct SyntheticRatings {
  RatingMatrix matrix;
  DenseMatrix p_true;
  DenseMatrix q_true;
};

// Planted factors have i.i.d. N(0, k_true^{-1/2}) entries, so noiseless
// ratings have unit variance. Each entry is observed with probability
// `density` and carries N(0, noise^2) noise.
SyntheticRatings synth_ratings(std::size_t n_users, std::size_t n_items, std::size_t k_true,
                               double noise, double density, std::uint64_t seed);

template <typename T>
struct Split {
  T train;
  T validation;
  T test;
};

// Record j goes to test/validation/train by a hash of (seed, j).
Split<ClassificationDataset> split_dataset(const ClassificationDataset& data, std::uint64_t seed,
                                           double validation_fraction, double test_fraction);
Split<RatingMatrix> split_dataset(const RatingMatrix& data, std::uint64_t seed,
                                  double validation_fraction, double test_fraction);

enum class PartitionScheme { example_round_robin, user_row_blocks };

struct Partition {
  std::vector<std::size_t> assignment;  // machine per example or per user row
  std::size_t m = 1;

  std::vector<std::size_t> sizes() const;
};

// Example j -> machine j mod m.
Partition partition(const ClassificationDataset& data, std::size_t m);
// Contiguous user ranges balanced by rating count.
Partition partition(const RatingMatrix& data, std::size_t m);

struct IndexRange {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  std::uint32_t size() const { return end - begin; }
  bool contains(std::uint32_t x) const { return x >= begin && x < end; }
  bool operator==(const IndexRange&) const = default;
};

// Contiguous ranges of a row-block partition, one per machine.
std::vector<IndexRange> block_ranges(const Partition& p);
// m contiguous ranges of (almost) equal length covering [0, n).
std::vector<IndexRange> equal_ranges(std::size_t n, std::size_t m);

std::vector<std::vector<LabeledExample>> shard_examples(const ClassificationDataset& data,
                                                        const Partition& p);

// Ratings of each user block, with user indices made local to the block.
std::vector<std::vector<Rating>> shard_ratings(const RatingMatrix& data,
                                               std::span<const IndexRange> user_blocks);

}  // namespace adg
