#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semfilter/embedding_store.hpp"
#include "semfilter/lexical.hpp"

namespace semfilter {

/// Mixing of embedding distance and lexical dissimilarity. lambda = 1 is
/// pure Euclidean distance; lambda < 1 needs a LexicalIndex.
struct DistanceSpec {
  double lambda = 1.0;
  Bm25Params bm25;

  void validate() const;
  bool pure_euclidean() const { return lambda >= 1.0; }
};

double euclidean(std::span<const float> a, std::span<const float> b);
double squared_euclidean(std::span<const float> a, std::span<const float> b);

/// lambda * l2_norm + (1 - lambda) * (1 - lexical_sim_norm).
double mix_distance(double l2_norm, double lexical_sim_norm, double lambda);

/// Hybrid distance with both components min-max normalized over the pairs
/// (rows x cols) of a batch. d(a, a) = 0 and d(a, b) = d(b, a) when the
/// batch is square; values outside the batch are clamped into [0, 1].
class HybridDistance {
 public:
  HybridDistance(const EmbeddingSet& embeddings, const LexicalIndex* lexical, DistanceSpec spec,
                 std::span<const RecordId> rows, std::span<const RecordId> cols);

  double operator()(RecordId a, RecordId b) const;
  double l2_normalized(RecordId a, RecordId b) const;
  double lexical_similarity_normalized(RecordId a, RecordId b) const;
  /// Same as operator()(rows[i], rows[j]) without id lookups.
  double between_rows(std::size_t i, std::size_t j) const;

  const DistanceSpec& spec() const { return spec_; }

 private:
  struct Point {
    RecordId id = 0;
    std::span<const float> vec;
    std::size_t doc = 0;
  };
  Point point(RecordId id) const;
  double l2_of(const Point& a, const Point& b) const;
  double lexical_of(const Point& a, const Point& b) const;
  double distance(const Point& a, const Point& b) const;

  const EmbeddingSet& embeddings_;
  const LexicalIndex* lexical_;
  DistanceSpec spec_;
  std::vector<Point> rows_;
  double l2_min_ = 0.0, l2_max_ = 0.0;
  double lex_min_ = 0.0, lex_max_ = 0.0;
};

/// Hybrid distance between two records, normalized over every id in the
/// embedding set. Quadratic in the set size; intended for inspection.
double hybrid_distance(RecordId a, RecordId b, const EmbeddingSet& embeddings,
                       const LexicalIndex* lexical, const DistanceSpec& spec);

struct Cluster {
  std::size_t id = 0;
  std::vector<RecordId> members;
  std::vector<float> centroid;
  std::optional<RecordId> medoid;  // set when clustering under a hybrid distance
};

struct Partition {
  std::vector<Cluster> clusters;
  std::map<RecordId, std::size_t> assignment;
  /// Objective after each Lloyd iteration: sum of squared distances to
  /// centroids (lambda = 1) or sum of hybrid distances to medoids.
  std::vector<double> objective_history;
  int iterations = 0;

  bool operator==(const Partition& other) const;
};

struct KMeansOptions {
  std::size_t k = 4;
  DistanceSpec distance;
  std::uint64_t seed = 0;
  int max_iters = 100;
};

/// Seeded k-means++ initialization followed by Lloyd iterations. Under
/// lambda < 1 centroids are replaced by medoids. Deterministic given the id
/// order and seed.
Partition kmeans(std::span<const RecordId> ids, const EmbeddingSet& embeddings,
                 const KMeansOptions& options, const LexicalIndex* lexical = nullptr);

std::string partition_to_jsonl(const Partition& partition);

}  // namespace semfilter
