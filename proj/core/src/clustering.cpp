#include "semfilter/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>

namespace semfilter {

void DistanceSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "lambda must lie in [0, 1]");
  }
  if (bm25.k1 < 0.0 || bm25.b < 0.0 || bm25.b > 1.0) {
    throw Error(ErrorKind::kInvalidArgument, "BM25 parameters out of range");
  }
}

double squared_euclidean(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "vectors have different dimensions");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum;
}

double euclidean(std::span<const float> a, std::span<const float> b) {
  return std::sqrt(squared_euclidean(a, b));
}

double mix_distance(double l2_norm, double lexical_sim_norm, double lambda) {
  return lambda * l2_norm + (1.0 - lambda) * (1.0 - lexical_sim_norm);
}

HybridDistance::HybridDistance(const EmbeddingSet& embeddings, const LexicalIndex* lexical,
                               DistanceSpec spec, std::span<const RecordId> rows,
                               std::span<const RecordId> cols)
    : embeddings_(embeddings), lexical_(lexical), spec_(spec) {
  spec_.validate();
  const bool need_lexical = spec_.lambda < 1.0;
  if (need_lexical && (lexical_ == nullptr || lexical_->empty())) {
    throw Error(ErrorKind::kInvalidArgument, "lambda < 1 requires a non-empty lexical corpus");
  }
  rows_.reserve(rows.size());
  for (RecordId id : rows) rows_.push_back(point(id));
  // Both components are symmetric, so a square batch only needs its upper triangle.
  const bool square = rows.data() == cols.data() && rows.size() == cols.size();
  std::vector<Point> col_points;
  if (!square) {
    col_points.reserve(cols.size());
    for (RecordId id : cols) col_points.push_back(point(id));
  }
  const std::vector<Point>& col_ref = square ? rows_ : col_points;
  bool first = true;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const Point& a = rows_[i];
    for (std::size_t j = square ? i : 0; j < col_ref.size(); ++j) {
      const Point& b = col_ref[j];
      const double l2 = euclidean(a.vec, b.vec);
      const double lex = need_lexical ? lexical_->symmetric_score_at(a.doc, b.doc) : 0.0;
      if (first) {
        l2_min_ = l2_max_ = l2;
        lex_min_ = lex_max_ = lex;
        first = false;
      } else {
        l2_min_ = std::min(l2_min_, l2);
        l2_max_ = std::max(l2_max_, l2);
        lex_min_ = std::min(lex_min_, lex);
        lex_max_ = std::max(lex_max_, lex);
      }
    }
  }
}

HybridDistance::Point HybridDistance::point(RecordId id) const {
  Point p;
  p.id = id;
  p.vec = embeddings_.at(id);
  if (spec_.lambda < 1.0 && lexical_ != nullptr) p.doc = lexical_->position(id);
  return p;
}

double HybridDistance::l2_of(const Point& a, const Point& b) const {
  if (a.id == b.id) return 0.0;
  const double range = l2_max_ - l2_min_;
  if (range <= 0.0) return 0.0;
  return std::clamp((euclidean(a.vec, b.vec) - l2_min_) / range, 0.0, 1.0);
}

double HybridDistance::lexical_of(const Point& a, const Point& b) const {
  if (a.id == b.id || lexical_->same_terms_at(a.doc, b.doc)) return 1.0;
  const double range = lex_max_ - lex_min_;
  if (range <= 0.0) return lex_max_ > 0.0 ? 1.0 : 0.0;
  return std::clamp((lexical_->symmetric_score_at(a.doc, b.doc) - lex_min_) / range, 0.0, 1.0);
}

double HybridDistance::distance(const Point& a, const Point& b) const {
  if (a.id == b.id) return 0.0;
  const double l2 = l2_of(a, b);
  if (spec_.lambda >= 1.0) return l2;
  return mix_distance(l2, lexical_of(a, b), spec_.lambda);
}

double HybridDistance::l2_normalized(RecordId a, RecordId b) const {
  Point pa, pb;
  pa.id = a;
  pa.vec = embeddings_.at(a);
  pb.id = b;
  pb.vec = embeddings_.at(b);
  return l2_of(pa, pb);
}

double HybridDistance::lexical_similarity_normalized(RecordId a, RecordId b) const {
  if (lexical_ == nullptr) {
    throw Error(ErrorKind::kInvalidArgument, "no lexical corpus configured");
  }
  Point pa, pb;
  pa.id = a;
  pa.doc = lexical_->position(a);
  pb.id = b;
  pb.doc = lexical_->position(b);
  return lexical_of(pa, pb);
}

double HybridDistance::operator()(RecordId a, RecordId b) const {
  if (a == b) return 0.0;
  return distance(point(a), point(b));
}

double HybridDistance::between_rows(std::size_t i, std::size_t j) const {
  return distance(rows_[i], rows_[j]);
}

double hybrid_distance(RecordId a, RecordId b, const EmbeddingSet& embeddings,
                       const LexicalIndex* lexical, const DistanceSpec& spec) {
  if (!embeddings.contains(a) || !embeddings.contains(b)) {
    throw Error(ErrorKind::kInvalidArgument, "hybrid_distance: id missing from embeddings");
  }
  if (spec.lambda < 1.0 && lexical != nullptr && (!lexical->contains(a) || !lexical->contains(b))) {
    throw Error(ErrorKind::kInvalidArgument, "hybrid_distance: id missing from lexical corpus");
  }
  const auto& ids = embeddings.ids();
  HybridDistance metric(embeddings, lexical, spec, ids, ids);
  return metric(a, b);
}

bool Partition::operator==(const Partition& other) const {
  if (clusters.size() != other.clusters.size() || assignment != other.assignment) return false;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto& x = clusters[i];
    const auto& y = other.clusters[i];
    if (x.id != y.id || x.members != y.members || x.centroid != y.centroid || x.medoid != y.medoid) {
      return false;
    }
  }
  return true;
}

namespace {

std::vector<float> mean_of(std::span<const RecordId> members, const EmbeddingSet& embeddings) {
  std::vector<double> sum(embeddings.dim(), 0.0);
  for (RecordId id : members) {
    const auto v = embeddings.at(id);
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += v[d];
  }
  std::vector<float> out(sum.size());
  for (std::size_t d = 0; d < sum.size(); ++d) {
    out[d] = static_cast<float>(sum[d] / static_cast<double>(members.size()));
  }
  return out;
}

// Pairwise cost between point i and center c, abstracted over the two modes.
struct CentroidModel {
  const EmbeddingSet& embeddings;
  std::span<const RecordId> ids;
  std::vector<std::vector<double>> centers;

  double cost(std::size_t i, std::size_t c) const {
    const auto v = embeddings.at(ids[i]);
    const auto& center = centers[c];
    double sum = 0.0;
    for (std::size_t d = 0; d < center.size(); ++d) {
      const double diff = static_cast<double>(v[d]) - center[d];
      sum += diff * diff;
    }
    return sum;
  }
  void set_center_to_point(std::size_t c, std::size_t i) {
    const auto v = embeddings.at(ids[i]);
    centers[c].assign(v.begin(), v.end());
  }
  void update(const std::vector<std::vector<std::size_t>>& members) {
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (members[c].empty()) continue;
      std::vector<double> sum(embeddings.dim(), 0.0);
      for (std::size_t i : members[c]) {
        const auto v = embeddings.at(ids[i]);
        for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += v[d];
      }
      for (double& s : sum) s /= static_cast<double>(members[c].size());
      centers[c] = std::move(sum);
    }
  }
};

struct MedoidModel {
  const HybridDistance& metric;
  std::span<const RecordId> ids;
  std::vector<std::size_t> medoids;

  double cost(std::size_t i, std::size_t c) const { return metric.between_rows(i, medoids[c]); }
  void set_center_to_point(std::size_t c, std::size_t i) { medoids[c] = i; }
  void update(const std::vector<std::vector<std::size_t>>& members) {
    for (std::size_t c = 0; c < medoids.size(); ++c) {
      if (members[c].empty()) continue;
      const auto& group = members[c];
      std::vector<double> totals(group.size(), 0.0);
      for (std::size_t p = 0; p < group.size(); ++p) {
        for (std::size_t q = p + 1; q < group.size(); ++q) {
          const double d = metric.between_rows(group[p], group[q]);
          totals[p] += d;
          totals[q] += d;
        }
      }
      medoids[c] = group[std::min_element(totals.begin(), totals.end()) - totals.begin()];
    }
  }
};

// Greedy k-means++: first center uniform; each later center is the best of
// 2 + ln k candidates drawn proportional to squared cost.
std::vector<std::size_t> seed_centers(std::size_t n, std::size_t k, Rng& rng, auto&& point_cost) {
  std::vector<std::size_t> chosen;
  std::vector<bool> is_chosen(n, false);
  chosen.push_back(static_cast<std::size_t>(rng.uniform_below(n)));
  is_chosen[chosen.back()] = true;
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = point_cost(i, chosen.back());
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::vector<double> candidate_weight(n), best_weight(n);
  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_chosen[i]) total += weight[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double best_potential = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < trials; ++t) {
        const double r = rng.uniform01() * total;
        double cumulative = 0.0;
        std::size_t candidate = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (is_chosen[i] || weight[i] <= 0.0) continue;
          cumulative += weight[i];
          candidate = i;
          if (cumulative > r) break;
        }
        double potential = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          candidate_weight[i] = std::min(weight[i], point_cost(i, candidate));
          potential += candidate_weight[i];
        }
        if (potential < best_potential) {
          best_potential = potential;
          pick = candidate;
          best_weight.swap(candidate_weight);
        }
      }
      weight.swap(best_weight);
    } else {
      // All remaining points coincide with a center; pick uniformly among them.
      std::size_t remaining = n - chosen.size();
      std::size_t skip = static_cast<std::size_t>(rng.uniform_below(remaining));
      for (std::size_t i = 0; i < n; ++i) {
        if (is_chosen[i]) continue;
        if (skip-- == 0) {
          pick = i;
          break;
        }
      }
      for (std::size_t i = 0; i < n; ++i) weight[i] = std::min(weight[i], point_cost(i, pick));
    }
    chosen.push_back(pick);
    is_chosen[pick] = true;
  }
  return chosen;
}

template <typename Model>
void lloyd(Model& model, std::size_t n, std::size_t k, int max_iters,
           std::vector<std::size_t>& assignment, Partition& out) {
  assignment.assign(n, k);  // k = unassigned sentinel
  std::vector<double> cost(n);
  std::vector<std::vector<std::size_t>> members(k);
  for (int iter = 0; iter < std::max(1, max_iters); ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_cost = model.cost(i, 0);
      for (std::size_t c = 1; c < k; ++c) {
        const double value = model.cost(i, c);
        if (value < best_cost) {
          best_cost = value;
          best = c;
        }
      }
      if (assignment[i] != best) changed = true;
      assignment[i] = best;
      cost[i] = best_cost;
    }
    for (auto& m : members) m.clear();
    for (std::size_t i = 0; i < n; ++i) members[assignment[i]].push_back(i);

    // Empty-cluster repair: move the point farthest from its center (taken
    // from a cluster that keeps at least one member) into the empty cluster.
    for (std::size_t c = 0; c < k; ++c) {
      if (!members[c].empty()) continue;
      std::size_t far = n;
      double far_cost = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (members[assignment[i]].size() > 1 && cost[i] > far_cost) {
          far_cost = cost[i];
          far = i;
        }
      }
      auto& old = members[assignment[far]];
      old.erase(std::find(old.begin(), old.end(), far));
      assignment[far] = c;
      cost[far] = 0.0;
      members[c].push_back(far);
      model.set_center_to_point(c, far);
      changed = true;
    }

    model.update(members);
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) objective += model.cost(i, assignment[i]);
    out.objective_history.push_back(objective);
    out.iterations = iter + 1;
    if (!changed) break;
  }
}

}  // namespace

Partition kmeans(std::span<const RecordId> ids, const EmbeddingSet& embeddings,
                 const KMeansOptions& options, const LexicalIndex* lexical) {
  if (options.k == 0) throw Error(ErrorKind::kInvalidArgument, "k must be at least 1");
  if (ids.empty()) throw Error(ErrorKind::kInvalidArgument, "kmeans needs at least one id");
  options.distance.validate();
  for (RecordId id : ids) {
    if (!embeddings.contains(id)) {
      throw Error(ErrorKind::kInvalidArgument, "no embedding for record " + std::to_string(id));
    }
  }

  const std::size_t n = ids.size();
  const bool hybrid = !options.distance.pure_euclidean();
  Partition out;

  if (n <= options.k) {
    for (std::size_t i = 0; i < n; ++i) {
      Cluster cluster;
      cluster.id = i;
      cluster.members = {ids[i]};
      const auto v = embeddings.at(ids[i]);
      cluster.centroid.assign(v.begin(), v.end());
      if (hybrid) cluster.medoid = ids[i];
      out.assignment[ids[i]] = i;
      out.clusters.push_back(std::move(cluster));
    }
    out.objective_history.push_back(0.0);
    return out;
  }

  const std::size_t k = options.k;
  Rng rng(options.seed);
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> medoids;

  if (!hybrid) {
    CentroidModel model{embeddings, ids, {}};
    auto init = seed_centers(n, k, rng, [&](std::size_t i, std::size_t j) {
      return squared_euclidean(embeddings.at(ids[i]), embeddings.at(ids[j]));
    });
    model.centers.resize(k);
    for (std::size_t c = 0; c < k; ++c) model.set_center_to_point(c, init[c]);
    lloyd(model, n, k, options.max_iters, assignment, out);
  } else {
    HybridDistance metric(embeddings, lexical, options.distance, ids, ids);
    MedoidModel model{metric, ids, {}};
    auto init = seed_centers(n, k, rng, [&](std::size_t i, std::size_t j) {
      const double d = metric.between_rows(i, j);
      return d * d;
    });
    model.medoids = init;
    lloyd(model, n, k, options.max_iters, assignment, out);
    medoids = model.medoids;
  }

  out.clusters.resize(k);
  for (std::size_t c = 0; c < k; ++c) out.clusters[c].id = c;
  for (std::size_t i = 0; i < n; ++i) {
    out.clusters[assignment[i]].members.push_back(ids[i]);
    out.assignment[ids[i]] = assignment[i];
  }
  for (std::size_t c = 0; c < k; ++c) {
    out.clusters[c].centroid = mean_of(out.clusters[c].members, embeddings);
    if (hybrid) out.clusters[c].medoid = ids[medoids[c]];
  }
  return out;
}

std::string partition_to_jsonl(const Partition& partition) {
  std::string out;
  for (const auto& cluster : partition.clusters) {
    for (RecordId id : cluster.members) {
      out += nlohmann::json{{"id", id}, {"cluster", cluster.id}}.dump();
      out.push_back('\n');
    }
  }
  return out;
}

}  // namespace semfilter
