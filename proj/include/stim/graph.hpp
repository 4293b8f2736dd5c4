#ifndef STIM_GRAPH_HPP
#define STIM_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace stim {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// One undirected, unweighted snapshot of a TVG. Neighbor lists are kept
/// sorted; no self-loops or duplicate edges are stored.
struct SnapshotGraph {
    int num_nodes = 0;
    int step_index = 0;
    std::vector<std::vector<int>> adj;

    SnapshotGraph() = default;
    explicit SnapshotGraph(int n, int step = 0)
        : num_nodes(n), step_index(step), adj(static_cast<std::size_t>(n)) {}

    int degree(int v) const { return static_cast<int>(adj[v].size()); }

    bool has_edge(int u, int v) const {
        const auto& nu = adj[u];
        return std::binary_search(nu.begin(), nu.end(), v);
    }

    // Returns false if the edge already exists or is a self-loop.
    bool add_edge(int u, int v) {
        if (u == v || has_edge(u, v)) return false;
        adj[u].insert(std::upper_bound(adj[u].begin(), adj[u].end(), v), v);
        adj[v].insert(std::upper_bound(adj[v].begin(), adj[v].end(), u), u);
        return true;
    }

    bool remove_edge(int u, int v) {
        auto it = std::lower_bound(adj[u].begin(), adj[u].end(), v);
        if (it == adj[u].end() || *it != v) return false;
        adj[u].erase(it);
        auto jt = std::lower_bound(adj[v].begin(), adj[v].end(), u);
        adj[v].erase(jt);
        return true;
    }

    long long num_edges() const {
        long long s = 0;
        for (const auto& nb : adj) s += static_cast<long long>(nb.size());
        return s / 2;
    }
};

/// Time-varying graph: a fixed node set observed over T snapshots.
struct Tvg {
    int num_nodes = 0;
    std::vector<SnapshotGraph> snapshots;

    int num_steps() const { return static_cast<int>(snapshots.size()); }
};

/// D^{-1/2} (A + I) D^{-1/2}, sparse and symmetric. Stored entry count is
/// 2|E| + N (every edge twice plus the self-loop diagonal).
inline SpMat build_normalized_adjacency(const SnapshotGraph& g) {
    const int n = g.num_nodes;
    std::vector<double> inv_sqrt(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(g.degree(i) + 1.0);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(2 * g.num_edges() + n));
    for (int i = 0; i < n; ++i) {
        trips.emplace_back(i, i, inv_sqrt[i] * inv_sqrt[i]);
        for (int j : g.adj[i]) trips.emplace_back(i, j, inv_sqrt[i] * inv_sqrt[j]);
    }
    SpMat m(n, n);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

/// Row sums of the normalized adjacency; the degree input of the embedding.
inline Eigen::VectorXd normalized_degree_vector(const SnapshotGraph& g) {
    SpMat m = build_normalized_adjacency(g);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(g.num_nodes);
    for (int i = 0; i < m.outerSize(); ++i)
        for (SpMat::InnerIterator it(m, i); it; ++it) d[i] += it.value();
    return d;
}

struct CentralityResult {
    Eigen::VectorXd values;
    bool converged = false;
    bool degenerate = false;  // edgeless input, all-zero result
    double eigenvalue = 0.0;
};

/// Dominant eigenvector of the plain adjacency via power iteration,
/// max-normalized to [0,1].
inline CentralityResult eigenvector_centrality(const SnapshotGraph& g,
                                               double tol = 1e-8,
                                               int max_iter = 1000) {
    const int n = g.num_nodes;
    CentralityResult res;
    if (g.num_edges() == 0) {
        res.values = Eigen::VectorXd::Zero(n);
        res.degenerate = true;
        return res;
    }
    // Iterate on A + I: same eigenvectors, but strictly dominant top
    // eigenvalue even on bipartite graphs where A alone oscillates.
    Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(double(n)));
    Eigen::VectorXd next(n);
    for (int iter = 0; iter < max_iter; ++iter) {
        next = v;
        for (int i = 0; i < n; ++i)
            for (int j : g.adj[i]) next[i] += v[j];
        next /= next.norm();
        double diff = (next - v).lpNorm<Eigen::Infinity>();
        v = next;
        if (diff < tol) {
            res.converged = true;
            break;
        }
    }
    // Rayleigh quotient of the plain adjacency at the unit-norm iterate.
    Eigen::VectorXd av = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i)
        for (int j : g.adj[i]) av[i] += v[j];
    res.eigenvalue = v.dot(av);
    double mx = v.maxCoeff();
    if (mx > 0) v /= mx;
    v = v.cwiseMax(0.0);
    res.values = v;
    return res;
}

/// Raw node features at snapshot t. Columns: normalized degree (deg/(N-1)),
/// eigenvector centrality (omitted when with_eigcent is false), mean and
/// population std-dev of normalized degree over the trailing window.
inline Eigen::MatrixXd build_feature_matrix(const Tvg& tvg, int t, int window = 5,
                                            bool with_eigcent = true) {
    if (t < 0 || t >= tvg.num_steps()) throw std::out_of_range("feature step index");
    const int n = tvg.num_nodes;
    const double denom = n > 1 ? double(n - 1) : 1.0;
    const int cols = with_eigcent ? 4 : 3;
    Eigen::MatrixXd fm(n, cols);

    const SnapshotGraph& g = tvg.snapshots[static_cast<std::size_t>(t)];
    for (int i = 0; i < n; ++i) fm(i, 0) = g.degree(i) / denom;

    int c = 1;
    if (with_eigcent) {
        fm.col(1) = eigenvector_centrality(g).values;
        c = 2;
    }

    const int lo = std::max(0, t - window + 1);
    const int len = t - lo + 1;
    for (int i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int s = lo; s <= t; ++s)
            mean += tvg.snapshots[static_cast<std::size_t>(s)].degree(i) / denom;
        mean /= len;
        double var = 0.0;
        for (int s = lo; s <= t; ++s) {
            double x = tvg.snapshots[static_cast<std::size_t>(s)].degree(i) / denom - mean;
            var += x * x;
        }
        var /= len;
        fm(i, c) = mean;
        fm(i, c + 1) = std::sqrt(var);
    }
    return fm;
}

// ---------------------------------------------------------------------------
// TVG text format: first line "N T", then one line "t u v" per temporal edge.
// Duplicate lines collapse to a single edge.
// ---------------------------------------------------------------------------

inline void write_tvg(std::ostream& os, const Tvg& tvg) {
    os << tvg.num_nodes << ' ' << tvg.num_steps() << '\n';
    for (int t = 0; t < tvg.num_steps(); ++t) {
        const SnapshotGraph& g = tvg.snapshots[static_cast<std::size_t>(t)];
        for (int u = 0; u < g.num_nodes; ++u)
            for (int v : g.adj[u])
                if (u < v) os << t << ' ' << u << ' ' << v << '\n';
    }
}

inline void write_tvg(const std::string& path, const Tvg& tvg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_tvg(os, tvg);
}

inline Tvg read_tvg(std::istream& is) {
    int n = 0, t_count = 0;
    if (!(is >> n >> t_count) || n <= 0 || t_count <= 0)
        throw std::runtime_error("malformed TVG header");
    Tvg tvg;
    tvg.num_nodes = n;
    tvg.snapshots.reserve(static_cast<std::size_t>(t_count));
    for (int t = 0; t < t_count; ++t) tvg.snapshots.emplace_back(n, t);
    int t, u, v;
    while (is >> t >> u >> v) {
        if (t < 0 || t >= t_count || u < 0 || u >= n || v < 0 || v >= n || u == v)
            throw std::runtime_error("malformed TVG edge line");
        tvg.snapshots[static_cast<std::size_t>(t)].add_edge(u, v);
    }
    return tvg;
}

inline Tvg read_tvg(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open TVG file: " + path);
    return read_tvg(is);
}

}  // namespace stim

#endif  // STIM_GRAPH_HPP
