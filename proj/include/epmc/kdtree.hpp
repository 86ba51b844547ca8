#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "epmc/common.hpp"

namespace epmc {

/// Static kd-tree over N points in R^dim with exact k-NN and radius
/// traversal. Neighbor ties are broken toward the smaller original
/// sample index so queries are fully deterministic.
class KdTree {
public:
    KdTree() = default;

    /// Copies the points (row-major, n x dim).
    KdTree(const double* pts, std::size_t n, int dim) { build(pts, n, dim); }

    void build(const double* pts, std::size_t n, int dim) {
        dim_ = dim;
        n_ = n;
        idx_.resize(n);
        for (std::size_t i = 0; i < n; ++i) idx_[i] = static_cast<int>(i);
        nodes_.clear();
        boxes_.clear();
        nodes_.reserve(2 * n / kLeaf + 4);
        src_ = pts;
        if (n > 0) build_node(0, static_cast<int>(n));
        // materialize reordered points for contiguous leaf scans
        pts_.resize(n * dim);
        for (std::size_t i = 0; i < n; ++i)
            for (int d = 0; d < dim; ++d) pts_[i * dim + d] = pts[static_cast<std::size_t>(idx_[i]) * dim + d];
        src_ = nullptr;
    }

    std::size_t size() const { return n_; }
    int dim() const { return dim_; }

    /// Index of the nearest point (smallest original index on ties).
    int nearest(const double* q, double* dist2_out = nullptr) const {
        Best b{std::numeric_limits<double>::infinity(), std::numeric_limits<int>::max()};
        nearest_rec(0, q, b);
        if (dist2_out) *dist2_out = b.d2;
        return b.idx;
    }

    /// k nearest neighbors as (dist2, original index), ascending.
    void knn(const double* q, int k, std::vector<std::pair<double, int>>& out) const {
        out.clear();
        if (n_ == 0 || k <= 0) return;
        k = std::min<int>(k, static_cast<int>(n_));
        out.reserve(k);
        knn_rec(0, q, k, out);
        std::sort_heap(out.begin(), out.end(), heap_less);
    }

    /// Calls f(original_index, dist2) for every point within `radius` of q.
    template <class F>
    void for_each_within(const double* q, double radius, F&& f) const {
        if (n_ == 0) return;
        within_rec(0, q, radius * radius, f);
    }

private:
    static constexpr int kLeaf = 16;

    struct Node {
        int begin, end;
        int left = -1, right = -1;  // leaf when left < 0
    };
    struct Best {
        double d2;
        int idx;
    };

    // max-heap comparator: (d2, idx) lexicographic, larger is "worse"
    static bool heap_less(const std::pair<double, int>& a, const std::pair<double, int>& b) {
        return a.first != b.first ? a.first < b.first : a.second < b.second;
    }

    int build_node(int begin, int end) {
        const int me = static_cast<int>(nodes_.size());
        nodes_.push_back({begin, end});
        boxes_.resize(boxes_.size() + 2 * dim_);
        double* lo = &boxes_[static_cast<std::size_t>(me) * 2 * dim_];
        double* hi = lo + dim_;
        for (int d = 0; d < dim_; ++d) {
            lo[d] = std::numeric_limits<double>::infinity();
            hi[d] = -std::numeric_limits<double>::infinity();
        }
        for (int i = begin; i < end; ++i) {
            const double* p = src_ + static_cast<std::size_t>(idx_[i]) * dim_;
            for (int d = 0; d < dim_; ++d) {
                lo[d] = std::min(lo[d], p[d]);
                hi[d] = std::max(hi[d], p[d]);
            }
        }
        if (end - begin <= kLeaf) return me;
        int axis = 0;
        double width = -1.0;
        for (int d = 0; d < dim_; ++d)
            if (hi[d] - lo[d] > width) { width = hi[d] - lo[d]; axis = d; }
        if (width <= 0.0) return me;  // all points identical
        const int mid = (begin + end) / 2;
        const double* base = src_;
        const int dd = dim_;
        std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                         [base, dd, axis](int a, int b) {
                             const double xa = base[static_cast<std::size_t>(a) * dd + axis];
                             const double xb = base[static_cast<std::size_t>(b) * dd + axis];
                             return xa != xb ? xa < xb : a < b;
                         });
        const int l = build_node(begin, mid);
        const int r = build_node(mid, end);
        nodes_[me].left = l;
        nodes_[me].right = r;
        return me;
    }

    double box_dist2(int node, const double* q) const {
        const double* lo = &boxes_[static_cast<std::size_t>(node) * 2 * dim_];
        const double* hi = lo + dim_;
        double s = 0.0;
        for (int d = 0; d < dim_; ++d) {
            const double e = std::max({0.0, lo[d] - q[d], q[d] - hi[d]});
            s += e * e;
        }
        return s;
    }

    double point_dist2(int flat, const double* q) const {
        const double* p = &pts_[static_cast<std::size_t>(flat) * dim_];
        double s = 0.0;
        for (int d = 0; d < dim_; ++d) s += sqr(p[d] - q[d]);
        return s;
    }

    void nearest_rec(int node, const double* q, Best& b) const {
        const Node& nd = nodes_[node];
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                const double d2 = point_dist2(i, q);
                const int oi = idx_[i];
                if (d2 < b.d2 || (d2 == b.d2 && oi < b.idx)) b = {d2, oi};
            }
            return;
        }
        const double dl = box_dist2(nd.left, q), dr = box_dist2(nd.right, q);
        const int first = dl <= dr ? nd.left : nd.right;
        const int second = dl <= dr ? nd.right : nd.left;
        if (std::min(dl, dr) <= b.d2) nearest_rec(first, q, b);
        if (std::max(dl, dr) <= b.d2) nearest_rec(second, q, b);
    }

    void knn_rec(int node, const double* q, int k,
                 std::vector<std::pair<double, int>>& heap) const {
        const Node& nd = nodes_[node];
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                const std::pair<double, int> cand{point_dist2(i, q), idx_[i]};
                if (static_cast<int>(heap.size()) < k) {
                    heap.push_back(cand);
                    std::push_heap(heap.begin(), heap.end(), heap_less);
                } else if (heap_less(cand, heap.front())) {
                    std::pop_heap(heap.begin(), heap.end(), heap_less);
                    heap.back() = cand;
                    std::push_heap(heap.begin(), heap.end(), heap_less);
                }
            }
            return;
        }
        const double dl = box_dist2(nd.left, q), dr = box_dist2(nd.right, q);
        const int first = dl <= dr ? nd.left : nd.right;
        const int second = dl <= dr ? nd.right : nd.left;
        const double dfirst = std::min(dl, dr), dsecond = std::max(dl, dr);
        if (static_cast<int>(heap.size()) < k || dfirst <= heap.front().first)
            knn_rec(first, q, k, heap);
        if (static_cast<int>(heap.size()) < k || dsecond <= heap.front().first)
            knn_rec(second, q, k, heap);
    }

    template <class F>
    void within_rec(int node, const double* q, double r2, F& f) const {
        if (box_dist2(node, q) > r2) return;
        const Node& nd = nodes_[node];
        if (nd.left < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                const double d2 = point_dist2(i, q);
                if (d2 <= r2) f(idx_[i], d2);
            }
            return;
        }
        within_rec(nd.left, q, r2, f);
        within_rec(nd.right, q, r2, f);
    }

    int dim_ = 0;
    std::size_t n_ = 0;
    const double* src_ = nullptr;  // only during build
    std::vector<double> pts_;
    std::vector<int> idx_;
    std::vector<Node> nodes_;
    std::vector<double> boxes_;
};

/// Sorted-array neighbor search for one-dimensional samples: k-NN is a
/// two-pointer window around the insertion point, O(log n + k) per query.
class Sorted1d {
public:
    Sorted1d() = default;
    explicit Sorted1d(std::span<const double> xs) { build(xs); }

    void build(std::span<const double> xs) {
        const std::size_t n = xs.size();
        order_.resize(n);
        vals_.resize(n);
        for (std::size_t i = 0; i < n; ++i) order_[i] = static_cast<int>(i);
        std::sort(order_.begin(), order_.end(), [&](int a, int b) {
            return xs[a] != xs[b] ? xs[a] < xs[b] : a < b;
        });
        for (std::size_t i = 0; i < n; ++i) vals_[i] = xs[order_[i]];
    }

    std::size_t size() const { return vals_.size(); }

    /// Appends the original indices of the k nearest samples to `out`.
    void knn(double q, int k, std::vector<int>& out) const {
        out.clear();
        const long n = static_cast<long>(vals_.size());
        k = std::min<long>(k, n);
        long r = std::lower_bound(vals_.begin(), vals_.end(), q) - vals_.begin();
        long l = r - 1;
        for (int taken = 0; taken < k; ++taken) {
            const bool left_ok = l >= 0, right_ok = r < n;
            if (left_ok && (!right_ok || q - vals_[l] <= vals_[r] - q))
                out.push_back(order_[l--]);
            else if (right_ok)
                out.push_back(order_[r++]);
        }
    }

    int nearest(double q) const {
        thread_local std::vector<int> buf;
        knn(q, 1, buf);
        return buf.front();
    }

    /// Calls f(original_index, value) for samples within |x - q| <= radius.
    template <class F>
    void for_each_within(double q, double radius, F&& f) const {
        const auto lo = std::lower_bound(vals_.begin(), vals_.end(), q - radius) - vals_.begin();
        const auto hi = std::upper_bound(vals_.begin(), vals_.end(), q + radius) - vals_.begin();
        for (auto i = lo; i < hi; ++i) f(order_[i], vals_[i]);
    }

private:
    std::vector<int> order_;
    std::vector<double> vals_;
};

}  // namespace epmc
