#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>

#include "igada/core.hpp"

namespace igada {

/// Row-major set of equal-length real vectors.
class PointSet {
 public:
  PointSet() = default;
  explicit PointSet(std::size_t dim) : dim_(dim) {}
  PointSet(std::size_t dim, std::vector<double> coords) : dim_(dim), coords_(std::move(coords)) {
    if (dim_ == 0 || coords_.size() % dim_ != 0) throw ValidationError("point set coordinates do not match dim");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ == 0 ? 0 : coords_.size() / dim_; }
  bool empty() const noexcept { return size() == 0; }
  std::span<const double> row(std::size_t i) const { return {coords_.data() + i * dim_, dim_}; }
  double operator()(std::size_t i, std::size_t j) const { return coords_[i * dim_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return coords_[i * dim_ + j]; }
  const std::vector<double>& coords() const noexcept { return coords_; }

  void push_back(std::span<const double> p) {
    if (p.size() != dim_) throw ValidationError("point dimension mismatch");
    coords_.insert(coords_.end(), p.begin(), p.end());
  }

  PointSet column(std::size_t j) const {
    PointSet out(1);
    out.coords_.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.coords_.push_back((*this)(i, j));
    return out;
  }

  bool operator==(const PointSet&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> coords_;
};

inline PointSet concat_columns(const PointSet& a, const PointSet& b) {
  if (a.size() != b.size()) throw ValidationError("point sets differ in size");
  PointSet out(a.dim() + b.dim());
  std::vector<double> row(a.dim() + b.dim());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto ra = a.row(i), rb = b.row(i);
    std::copy(ra.begin(), ra.end(), row.begin());
    std::copy(rb.begin(), rb.end(), row.begin() + static_cast<std::ptrdiff_t>(a.dim()));
    out.push_back(row);
  }
  return out;
}

inline double max_norm_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, std::abs(a[j] - b[j]));
  return d;
}

/// Exact neighbor queries under the max-norm. Below `brute_force_limit` points
/// every query is a linear scan; above it a k-d tree with bounding boxes is used.
class NeighborIndex {
 public:
  static constexpr std::size_t brute_force_limit = 256;
  static constexpr std::size_t leaf_size = 12;

  explicit NeighborIndex(const PointSet& points) : pts_(&points) {
    const std::size_t n = points.size();
    perm_.resize(n);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    if (n >= brute_force_limit) {
      nodes_.reserve(2 * n / leaf_size + 2);
      build(0, n);
      pos_.resize(n);
      for (std::size_t p = 0; p < n; ++p) pos_[perm_[p]] = p;
    }
  }

  bool uses_tree() const noexcept { return !nodes_.empty(); }

  /// Distance from point i to its k-th nearest other point.
  double kth_neighbor_distance(std::size_t i, std::size_t k) const {
    auto q = pts_->row(i);
    std::priority_queue<double> heap;  // max-heap of the k best distances
    if (!uses_tree()) {
      for (std::size_t j = 0; j < pts_->size(); ++j) {
        if (j == i) continue;
        push_bounded(heap, max_norm_distance(q, pts_->row(j)), k);
      }
    } else {
      knn(0, q, i, k, heap);
    }
    return heap.top();
  }

  /// Number of points j != exclude with distance(q, p_j) < radius (strict).
  std::size_t count_within(std::span<const double> q, double radius, std::size_t exclude) const {
    if (!uses_tree()) {
      std::size_t c = 0;
      for (std::size_t j = 0; j < pts_->size(); ++j)
        if (j != exclude && max_norm_distance(q, pts_->row(j)) < radius) ++c;
      return c;
    }
    return count(0, q, radius, exclude);
  }

 private:
  struct Node {
    std::size_t begin, end;
    std::vector<double> lo, hi;
    std::size_t left = 0, right = 0;  // 0 means leaf
  };

  static void push_bounded(std::priority_queue<double>& heap, double d, std::size_t k) {
    if (heap.size() < k) heap.push(d);
    else if (d < heap.top()) {
      heap.pop();
      heap.push(d);
    }
  }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t dim = pts_->dim();
    std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end, std::vector<double>(dim, std::numeric_limits<double>::infinity()),
                          std::vector<double>(dim, -std::numeric_limits<double>::infinity())});
    for (std::size_t p = begin; p < end; ++p) {
      auto r = pts_->row(perm_[p]);
      for (std::size_t j = 0; j < dim; ++j) {
        nodes_[id].lo[j] = std::min(nodes_[id].lo[j], r[j]);
        nodes_[id].hi[j] = std::max(nodes_[id].hi[j], r[j]);
      }
    }
    if (end - begin <= leaf_size) return id;
    std::size_t split_dim = 0;
    double spread = -1;
    for (std::size_t j = 0; j < dim; ++j) {
      double s = nodes_[id].hi[j] - nodes_[id].lo[j];
      if (s > spread) {
        spread = s;
        split_dim = j;
      }
    }
    if (spread <= 0) return id;
    std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(perm_.begin() + static_cast<std::ptrdiff_t>(begin), perm_.begin() + static_cast<std::ptrdiff_t>(mid),
                     perm_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return (*pts_)(a, split_dim) < (*pts_)(b, split_dim);
                     });
    std::size_t l = build(begin, mid);
    std::size_t r = build(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  double box_min_distance(const Node& n, std::span<const double> q) const {
    double d = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      if (q[j] < n.lo[j]) d = std::max(d, n.lo[j] - q[j]);
      else if (q[j] > n.hi[j]) d = std::max(d, q[j] - n.hi[j]);
    }
    return d;
  }

  double box_max_distance(const Node& n, std::span<const double> q) const {
    double d = 0;
    for (std::size_t j = 0; j < q.size(); ++j) d = std::max({d, std::abs(q[j] - n.lo[j]), std::abs(q[j] - n.hi[j])});
    return d;
  }

  void knn(std::size_t id, std::span<const double> q, std::size_t self, std::size_t k,
           std::priority_queue<double>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_min_distance(n, q) >= heap.top()) return;
    if (n.left == 0) {
      for (std::size_t p = n.begin; p < n.end; ++p) {
        std::size_t j = perm_[p];
        if (j != self) push_bounded(heap, max_norm_distance(q, pts_->row(j)), k);
      }
      return;
    }
    double dl = box_min_distance(nodes_[n.left], q);
    double dr = box_min_distance(nodes_[n.right], q);
    if (dl <= dr) {
      knn(n.left, q, self, k, heap);
      knn(n.right, q, self, k, heap);
    } else {
      knn(n.right, q, self, k, heap);
      knn(n.left, q, self, k, heap);
    }
  }

  std::size_t count(std::size_t id, std::span<const double> q, double radius, std::size_t exclude) const {
    const Node& n = nodes_[id];
    if (box_min_distance(n, q) >= radius) return 0;
    if (box_max_distance(n, q) < radius) {
      std::size_t c = n.end - n.begin;
      if (exclude < pos_.size() && pos_[exclude] >= n.begin && pos_[exclude] < n.end) --c;
      return c;
    }
    if (n.left == 0) {
      std::size_t c = 0;
      for (std::size_t p = n.begin; p < n.end; ++p) {
        std::size_t j = perm_[p];
        if (j != exclude && max_norm_distance(q, pts_->row(j)) < radius) ++c;
      }
      return c;
    }
    return count(n.left, q, radius, exclude) + count(n.right, q, radius, exclude);
  }

  const PointSet* pts_;
  std::vector<std::size_t> perm_;
  std::vector<std::size_t> pos_;
  std::vector<Node> nodes_;
};

namespace detail {

inline bool has_duplicate_points(const PointSet& p) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto less = [&](std::size_t a, std::size_t b) {
    auto ra = p.row(a), rb = p.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  };
  std::sort(idx.begin(), idx.end(), less);
  for (std::size_t i = 1; i < idx.size(); ++i) {
    auto ra = p.row(idx[i - 1]), rb = p.row(idx[i]);
    if (std::equal(ra.begin(), ra.end(), rb.begin())) return true;
  }
  return false;
}

/// Adds U(-1e-10, 1e-10) noise, scaled by the coordinate magnitude when it
/// exceeds 1, to every coordinate. Only applied when exact duplicates exist.
inline PointSet jitter_if_duplicated(const PointSet& p, std::uint64_t seed) {
  if (!has_duplicate_points(p)) return p;
  double magnitude = 1.0;
  for (double v : p.coords()) magnitude = std::max(magnitude, std::abs(v));
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(-1e-10 * magnitude, 1e-10 * magnitude);
  PointSet out = p;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out.dim(); ++j) out(i, j) += u(rng);
  return out;
}

inline double digamma(double x) { return boost::math::digamma(x); }

}  // namespace detail

/// KSG estimator (variant 1, max-norm) of I(X; Y) in nats. x.row(i) pairs with y.row(i).
/// The result may be negative.
inline double ksg_mi(const PointSet& x, const PointSet& y, std::size_t k = 3, std::uint64_t jitter_seed = 0) {
  const std::size_t n = x.size();
  if (y.size() != n) throw ValidationError("ksg_mi: x and y differ in length");
  if (k < 1) throw ValidationError("ksg_mi: k must be >= 1");
  if (n <= k) throw ValidationError("ksg_mi: need more than k=" + std::to_string(k) + " pairs, got " + std::to_string(n));
  for (double v : x.coords())
    if (!std::isfinite(v)) throw ValidationError("ksg_mi: non-finite x");
  for (double v : y.coords())
    if (!std::isfinite(v)) throw ValidationError("ksg_mi: non-finite y");

  PointSet xs = detail::jitter_if_duplicated(x, derive_seed(jitter_seed, 1));
  PointSet ys = detail::jitter_if_duplicated(y, derive_seed(jitter_seed, 2));
  PointSet joint = concat_columns(xs, ys);

  NeighborIndex joint_index(joint), x_index(xs), y_index(ys);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double eps = joint_index.kth_neighbor_distance(i, k);
    std::size_t nx = x_index.count_within(xs.row(i), eps, i);
    std::size_t ny = y_index.count_within(ys.row(i), eps, i);
    acc += detail::digamma(static_cast<double>(nx) + 1) + detail::digamma(static_cast<double>(ny) + 1);
  }
  return detail::digamma(static_cast<double>(k)) + detail::digamma(static_cast<double>(n)) -
         acc / static_cast<double>(n);
}

/// Kozachenko-Leonenko differential entropy in nats under the max-norm
/// (unit ball volume 2^d).
inline double kl_entropy(const PointSet& points, std::size_t k = 3, std::uint64_t jitter_seed = 0) {
  const std::size_t n = points.size();
  if (k < 1 || n <= k) throw ValidationError("kl_entropy: need more than k points");
  PointSet p = detail::jitter_if_duplicated(points, derive_seed(jitter_seed, 3));
  NeighborIndex index(p);
  const double d = static_cast<double>(p.dim());
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = index.kth_neighbor_distance(i, k);
    acc += std::log(2.0 * std::max(r, std::numeric_limits<double>::min()));
  }
  return detail::digamma(static_cast<double>(n)) - detail::digamma(static_cast<double>(k)) +
         d * acc / static_cast<double>(n);
}

enum class PairingMode { aligned, independent };

struct MiEstimate {
  double raw = 0;
  double baseline = 0;
  double corrected = 0;
  std::size_t k = 3;
  std::size_t n_pairs = 0;
  std::size_t n_permutations = 0;
};

namespace detail {

inline PointSet permute_rows(const PointSet& p, const std::vector<std::size_t>& order) {
  PointSet out(p.dim());
  for (std::size_t i : order) out.push_back(p.row(i));
  return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace detail

/// Permutation-corrected MI.
///
/// Aligned: x.row(i) is paired with y.row(i); raw is a single KSG estimate.
/// Independent: each of n_perm repairings shuffles both sets independently and
/// truncates to the shorter one; raw is their mean.
/// The baseline averages KSG over n_perm random permutations of y against the
/// raw pairing, and corrected = max(0, raw - baseline).
inline MiEstimate permutation_corrected_mi(const PointSet& x, const PointSet& y, PairingMode mode, std::size_t k,
                                           std::size_t n_perm, std::uint64_t seed) {
  if (n_perm == 0) throw ValidationError("n_perm must be >= 1");
  MiEstimate est;
  est.k = k;
  est.n_permutations = n_perm;
  Rng rng = make_rng(seed);

  std::vector<std::pair<PointSet, PointSet>> pairings;
  if (mode == PairingMode::aligned) {
    if (x.size() != y.size()) throw ValidationError("aligned pairing needs equal-length sets");
    pairings.emplace_back(x, y);
  } else {
    const std::size_t m = std::min(x.size(), y.size());
    for (std::size_t r = 0; r < n_perm; ++r) {
      auto ix = detail::shuffled_indices(x.size(), rng);
      auto iy = detail::shuffled_indices(y.size(), rng);
      ix.resize(m);
      iy.resize(m);
      pairings.emplace_back(detail::permute_rows(x, ix), detail::permute_rows(y, iy));
    }
  }
  est.n_pairs = pairings.front().first.size();
  if (est.n_pairs < k + 1) throw ValidationError("permutation_corrected_mi: too few pairs for k");

  double raw = 0;
  for (std::size_t r = 0; r < pairings.size(); ++r)
    raw += ksg_mi(pairings[r].first, pairings[r].second, k, derive_seed(seed, 10, r));
  est.raw = raw / static_cast<double>(pairings.size());

  double base = 0;
  for (std::size_t r = 0; r < n_perm; ++r) {
    const auto& [px, py] = pairings[r % pairings.size()];
    auto order = detail::shuffled_indices(py.size(), rng);
    base += ksg_mi(px, detail::permute_rows(py, order), k, derive_seed(seed, 20, r));
  }
  est.baseline = base / static_cast<double>(n_perm);
  est.corrected = std::max(0.0, est.raw - est.baseline);
  return est;
}

/// Fixed-edge histogram layout on one coordinate.
struct HistogramEdges {
  double lo = 0;
  double hi = 1;
  std::size_t bins = 16;

  /// Edges from the reference range, widened by 1% of the range on each side.
  static HistogramEdges from_reference(std::span<const double> values, std::size_t bins = 16) {
    if (values.empty()) throw ValidationError("histogram reference is empty");
    if (bins == 0) throw ValidationError("histogram needs at least one bin");
    auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    double width = *mx - *mn;
    double pad = width > 0 ? 0.01 * width : 0.01 * std::max(1.0, std::abs(*mn));
    return {*mn - pad, *mx + pad, bins};
  }

  std::size_t bin_of(double v) const {
    if (v <= lo) return 0;
    if (v >= hi) return bins - 1;
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    return std::min(b, bins - 1);
  }
};

/// Normalized histogram with additive smoothing; out-of-range values land in the edge bins.
inline std::vector<double> histogram(std::span<const double> values, const HistogramEdges& edges,
                                     double alpha = 1e-6) {
  std::vector<double> h(edges.bins, alpha);
  for (double v : values) h[edges.bin_of(v)] += 1.0;
  double total = std::accumulate(h.begin(), h.end(), 0.0);
  if (total <= 0) throw ValidationError("histogram has zero mass");
  for (double& x : h) x /= total;
  return h;
}

/// 1 - Jensen-Shannon distance (square root of the base-2 JS divergence).
inline double js_similarity(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw ValidationError("js_similarity: histograms have different bins");
  auto check = [](std::span<const double> h) {
    double s = 0;
    for (double v : h) {
      if (!(v >= 0) || !std::isfinite(v)) throw ValidationError("js_similarity: invalid histogram mass");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ValidationError("js_similarity: histogram does not sum to 1");
  };
  check(p);
  check(q);
  double js = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) js += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0) js += 0.5 * q[i] * std::log2(q[i] / m);
  }
  js = std::clamp(js, 0.0, 1.0);
  return 1.0 - std::sqrt(js);
}

}  // namespace igada
