#ifndef STIM_SYNTH_HPP
#define STIM_SYNTH_HPP

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "stim/graph.hpp"
#include "stim/rng.hpp"

namespace stim {

struct SynthConfig {
    int n_min = 500;
    int n_max = 1000;
    int t_min = 30;
    int t_max = 60;
    double cyclic_fraction = 0.02;
    double perturb_min = 0.01;
    double perturb_max = 0.07;
    double p_c = 0.15;         // per-step degree change of cyclic nodes
    double p_v = 0.40;         // valid-window fraction of T
    double seed_fraction = 0.02;
    double growth_high = 0.6;  // normalized-degree flip thresholds
    double shrink_low = 0.05;
    int peak_hold = 0;         // steps a cyclic node sits at its peak degree
    int pa_edges_per_node = 2;
    bool random_window = false;  // k,q drawn per episode instead of the T/2 rule
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (n_min < 3) throw std::invalid_argument("n_min must be >= 3");
        if (n_min > n_max || t_min > t_max) throw std::invalid_argument("bad range");
        for (double f : {cyclic_fraction, perturb_min, perturb_max, p_c, p_v, seed_fraction})
            if (f < 0.0 || f > 1.0) throw std::invalid_argument("fraction out of [0,1]");
        if (peak_hold < 0) throw std::invalid_argument("peak_hold must be >= 0");
    }
};

enum class CyclicStage { Growth, Hold, Shrinking };

struct EpisodeWindow {
    int start = 0;
    int length = 0;
};

/// A generated TVG plus the ground truth the oracle and the confusion matrix
/// rely on: cyclic flags and the per-step node-type table.
struct SynthTvg {
    Tvg tvg;
    std::vector<char> cyclic;                 // N flags
    std::vector<std::vector<int>> node_types; // T x N
    double perturb_prob = 0.0;
};

/// The 5-class taxonomy on one snapshot. Threshold 0.4 on degree/(N-1).
/// Cyclic: type 4 when high, else 1. Non-cyclic: 3 when high, 2 when adjacent
/// to a type-1 node, else 0.
inline std::vector<int> classify_nodes(const SnapshotGraph& g,
                                       const std::vector<char>& cyclic) {
    const int n = g.num_nodes;
    if (static_cast<int>(cyclic.size()) != n)
        throw std::invalid_argument("cyclic flag length mismatch");
    const double denom = n > 1 ? double(n - 1) : 1.0;
    std::vector<int> types(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        double nd = g.degree(i) / denom;
        if (cyclic[i]) types[i] = nd >= 0.4 ? 4 : 1;
        else if (nd >= 0.4) types[i] = 3;
    }
    for (int i = 0; i < n; ++i) {
        if (types[i] != 0) continue;
        for (int j : g.adj[i])
            if (types[j] == 1) {
                types[i] = 2;
                break;
            }
    }
    return types;
}

/// Deterministic episode window: start at floor(T/2), length floor(p_v * T)
/// truncated at T.
inline EpisodeWindow valid_window(int t_total, const SynthConfig& cfg) {
    if (t_total < 2) throw std::invalid_argument("T must be >= 2");
    int start = t_total / 2;
    int end = std::min(start + static_cast<int>(cfg.p_v * t_total), t_total);
    return {start, end - start};
}

/// Random-window mode: k ~ U[1, T/2], q ~ U[5, floor(p_v*T)], truncated at T.
inline EpisodeWindow random_window(int t_total, const SynthConfig& cfg, Rng& rng) {
    int start = uniform_int(rng, 1, std::max(1, t_total / 2));
    int qmax = std::max(5, static_cast<int>(cfg.p_v * t_total));
    int q = uniform_int(rng, std::min(5, qmax), qmax);
    q = std::min(q, t_total - start);
    return {start, q};
}

/// P lowest-degree nodes adjacent to at least one cyclic node, ties by id;
/// topped up with globally lowest-degree nodes when candidates run short.
inline std::vector<int> select_seed_set(const SnapshotGraph& g0,
                                        const std::vector<char>& cyclic, int p) {
    const int n = g0.num_nodes;
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        int da = g0.degree(a), db = g0.degree(b);
        return da != db ? da < db : a < b;
    });

    std::vector<int> seeds;
    for (int v : order) {
        if (static_cast<int>(seeds.size()) >= p) break;
        bool near_cyclic = false;
        for (int u : g0.adj[v])
            if (cyclic[u]) {
                near_cyclic = true;
                break;
            }
        if (near_cyclic) {
            seeds.push_back(v);
            chosen[v] = 1;
        }
    }
    for (int v : order) {
        if (static_cast<int>(seeds.size()) >= p) break;
        if (!chosen[v]) {
            seeds.push_back(v);
            chosen[v] = 1;
        }
    }
    return seeds;
}

namespace detail {

// Barabasi-Albert preferential attachment; endpoint list sampling.
inline SnapshotGraph preferential_attachment(int n, int m, Rng& rng) {
    SnapshotGraph g(n, 0);
    std::vector<int> endpoints;
    int m0 = m + 1;
    for (int u = 0; u < m0; ++u)
        for (int v = u + 1; v < m0; ++v) {
            g.add_edge(u, v);
            endpoints.push_back(u);
            endpoints.push_back(v);
        }
    for (int v = m0; v < n; ++v) {
        int added = 0;
        int guard = 0;
        while (added < m && guard < 100 * m) {
            int idx = uniform_int(rng, 0, static_cast<int>(endpoints.size()) - 1);
            int target = endpoints[static_cast<std::size_t>(idx)];
            if (g.add_edge(v, target)) ++added;
            ++guard;
        }
        for (int u : g.adj[v]) {
            endpoints.push_back(v);
            endpoints.push_back(u);
        }
    }
    return g;
}

inline int random_non_neighbor(const SnapshotGraph& g, int v,
                               const std::vector<char>& excluded, Rng& rng) {
    // rejection sampling with a bounded number of tries; dense nodes fall back
    // to an explicit scan
    for (int tries = 0; tries < 32; ++tries) {
        int u = uniform_int(rng, 0, g.num_nodes - 1);
        if (u != v && !excluded[u] && !g.has_edge(v, u)) return u;
    }
    std::vector<int> pool;
    for (int u = 0; u < g.num_nodes; ++u)
        if (u != v && !excluded[u] && !g.has_edge(v, u)) pool.push_back(u);
    if (pool.empty()) return -1;
    return pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
}

// Like random_non_neighbor but preferring targets of degree >= min_deg;
// falls back to the unrestricted draw when the preferred pool is scarce.
inline int random_non_neighbor_min_deg(const SnapshotGraph& g, int v,
                                       const std::vector<char>& excluded, Rng& rng,
                                       int min_deg) {
    for (int tries = 0; tries < 24; ++tries) {
        int u = uniform_int(rng, 0, g.num_nodes - 1);
        if (u != v && !excluded[u] && g.degree(u) >= min_deg && !g.has_edge(v, u)) return u;
    }
    return random_non_neighbor(g, v, excluded, rng);
}

}  // namespace detail

/// Generates one artificial TVG: scale-free first snapshot, per-step edge
/// perturbations on normal nodes, and growth/shrink cycles on cyclic nodes.
/// Normal-node perturbations only touch edges between two normal nodes so the
/// cyclic degree trajectories stay strictly monotone within a stage.
///
/// Each cyclic node keeps a single persistent "anchor" edge to a mid-degree
/// normal node: at snapshot 0 its edge set is reduced to that one edge, growth
/// pushes random attachments onto a stack, and shrinking pops the stack
/// newest-first. A cyclic node therefore always bottoms out at degree 1 next
/// to the same neighborhood it started in, which is what makes the low point
/// of the cycle reachable by diffusion from the seed set.
inline SynthTvg generate_tvg(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = make_rng(seed);

    const int n = uniform_int(rng, cfg.n_min, cfg.n_max);
    const int t_total = uniform_int(rng, cfg.t_min, cfg.t_max);
    const double denom = n > 1 ? double(n - 1) : 1.0;

    SynthTvg out;
    out.perturb_prob = uniform_real(rng, cfg.perturb_min, cfg.perturb_max);
    out.tvg.num_nodes = n;

    const int num_cyclic = static_cast<int>(std::ceil(cfg.cyclic_fraction * n));
    out.cyclic.assign(static_cast<std::size_t>(n), 0);
    {
        std::vector<int> ids(static_cast<std::size_t>(n));
        std::iota(ids.begin(), ids.end(), 0);
        for (int k = 0; k < num_cyclic; ++k) {
            int idx = uniform_int(rng, k, n - 1);
            std::swap(ids[k], ids[idx]);
            out.cyclic[ids[k]] = 1;
        }
    }
    std::vector<CyclicStage> stage(static_cast<std::size_t>(n), CyclicStage::Growth);

    SnapshotGraph g = detail::preferential_attachment(n, cfg.pa_edges_per_node, rng);

    // Reduce every cyclic node to its anchor edge: keep the non-cyclic
    // neighbor whose degree is closest to 8 (ties by id) and drop the rest.
    // Anchors are unique per cyclic node; corner cases re-attach randomly.
    {
        std::vector<char> taken = out.cyclic;  // not usable as an anchor
        for (int c = 0; c < n; ++c) {
            if (!out.cyclic[c]) continue;
            int anchor = -1;
            int best = std::numeric_limits<int>::max();
            for (int u : g.adj[c]) {
                if (taken[u]) continue;
                int badness = std::abs(g.degree(u) - 8);
                if (badness < best || (badness == best && u < anchor)) {
                    best = badness;
                    anchor = u;
                }
            }
            std::vector<int> nbrs = g.adj[c];
            for (int u : nbrs)
                if (u != anchor) g.remove_edge(c, u);
            if (anchor < 0) {
                anchor = detail::random_non_neighbor(g, c, taken, rng);
                if (anchor >= 0) g.add_edge(c, anchor);
            }
            if (anchor >= 0) taken[anchor] = 1;
        }
    }
    // Give every distinct anchor one degree-1 "pendant" neighbor. Seeds are
    // drawn from the anchors, so activating a seed reliably reaches both its
    // dormant cyclic neighbor and the pendant; the cyclic node later adopts
    // the pendant while it grows, marking it as a safe low-value burn.
    std::vector<int> anchor_pendant(static_cast<std::size_t>(n), -1);
    std::vector<char> is_pendant(static_cast<std::size_t>(n), 0);
    std::vector<char> is_anchor(static_cast<std::size_t>(n), 0);
    {
        for (int c = 0; c < n; ++c)
            if (out.cyclic[c] && g.degree(c) == 1) is_anchor[g.adj[c][0]] = 1;
        for (int a = 0; a < n; ++a) {
            if (!is_anchor[a]) continue;
            for (int tries = 0; tries < 50; ++tries) {
                int u = uniform_int(rng, 0, n - 1);
                if (u == a || out.cyclic[u] || is_anchor[u] || is_pendant[u]) continue;
                int du = g.degree(u);
                if (du < 2 || du > 4) continue;
                std::vector<int> nbrs = g.adj[u];
                for (int v : nbrs) g.remove_edge(u, v);
                g.add_edge(a, u);
                anchor_pendant[a] = u;
                is_pendant[u] = 1;
                break;
            }
        }
        // strip anchors of incidental low-degree neighbors: an activated
        // anchor transmits near-certainly to any degree-1/2 neighbor, and
        // those incidental catches refuel naive high-degree play
        for (int a = 0; a < n; ++a) {
            if (!is_anchor[a]) continue;
            std::vector<int> nbrs = g.adj[a];
            for (int u : nbrs) {
                if (out.cyclic[u] || is_pendant[u] || is_anchor[u]) continue;
                if (g.degree(u) <= 3) g.remove_edge(a, u);
            }
        }
        // top up low-degree anchors with mid-degree neighbors so every
        // anchor transmits reliably to its degree-1 leaves when activated
        for (int a = 0; a < n; ++a) {
            if (!is_anchor[a]) continue;
            for (int tries = 0; tries < 400 && g.degree(a) < 14; ++tries) {
                int u = uniform_int(rng, 0, n - 1);
                if (u == a || out.cyclic[u] || is_pendant[u] || is_anchor[u]) continue;
                if (g.degree(u) < 4 || g.has_edge(a, u)) continue;
                g.add_edge(a, u);
            }
        }
    }

    // Pre-wake "flicker": while dormant, each cyclic node gains and loses one
    // edge to a dedicated mid-degree partner on alternating steps. Its recent
    // degree variance is therefore nonzero from the very first transitions, so
    // a dormant cyclic node is never feature-identical to a pendant leaf.
    std::vector<int> flicker_partner(static_cast<std::size_t>(n), -1);
    for (int c = 0; c < n; ++c) {
        if (!out.cyclic[c]) continue;
        for (int tries = 0; tries < 200; ++tries) {
            int u = uniform_int(rng, 0, n - 1);
            if (out.cyclic[u] || is_pendant[u] || is_anchor[u]) continue;
            if (g.degree(u) < 5 || g.has_edge(c, u)) continue;
            flicker_partner[static_cast<std::size_t>(c)] = u;
            break;
        }
    }

    // nodes that growth targeting and perturbation must not touch: cyclic
    // nodes, pendants (adopted explicitly, never sampled) and anchors (their
    // degree stays constant so they are recognizably stable burn targets)
    std::vector<char> immobile = out.cyclic;
    for (int i = 0; i < n; ++i)
        if (is_pendant[i] || is_anchor[i]) immobile[static_cast<std::size_t>(i)] = 1;

    // LIFO stacks of grown attachments; the anchor edge itself is never stored
    // so shrinking stops at degree 1.
    std::vector<std::vector<int>> grown(static_cast<std::size_t>(n));

    // one growth/shrink update for a single cyclic node
    std::vector<int> hold_left(static_cast<std::size_t>(n), 0);
    auto cyclic_update = [&](int c) {
        int deg = g.degree(c);
        int delta = std::max(1, static_cast<int>(std::ceil(cfg.p_c * deg)));
        auto& stack = grown[static_cast<std::size_t>(c)];
        if (stage[c] == CyclicStage::Hold) {
            if (--hold_left[c] <= 0) stage[c] = CyclicStage::Shrinking;
            return;
        }
        if (stage[c] == CyclicStage::Growth) {
            if (stack.empty()) {
                // fresh cycle: adopt the anchor's pendant first so the pendant
                // spends every growth phase next to this cyclic node
                int p = anchor_pendant[static_cast<std::size_t>(g.adj[c][0])];
                if (p >= 0 && !g.has_edge(c, p)) {
                    g.add_edge(c, p);
                    stack.push_back(p);
                }
            }
            for (int k = 0; k < delta; ++k) {
                int u = detail::random_non_neighbor_min_deg(g, c, immobile, rng, 5);
                if (u < 0) break;
                g.add_edge(c, u);
                stack.push_back(u);
            }
            if (g.degree(c) / denom >= cfg.growth_high) {
                // optionally sit at the peak for a few steps before shrinking
                stage[c] = cfg.peak_hold > 0 ? CyclicStage::Hold : CyclicStage::Shrinking;
                hold_left[c] = cfg.peak_hold;
            }
        } else {
            // detach the most recent attachments first; the anchor edge is
            // not on the stack and survives every cycle
            for (int k = 0; k < delta && !stack.empty(); ++k) {
                g.remove_edge(c, stack.back());
                stack.pop_back();
            }
            if (stack.empty() || g.degree(c) / denom <= cfg.shrink_low)
                stage[c] = CyclicStage::Growth;
        }
    };

    // Every cyclic node starts dormant at its anchor and wakes a few steps
    // into the second half of the trace, cycling from then on. This places
    // the first growth phase inside the valid episode window.
    const int wake = std::min(t_total / 2 + 3, t_total - 1);

    out.tvg.snapshots.push_back(g);
    out.node_types.push_back(classify_nodes(g, out.cyclic));

    for (int t = 1; t < t_total; ++t) {
        g.step_index = t;
        // normal-node perturbation: with prob p flip one incident slot;
        // pendants are left alone so they stay low-degree leaves
        for (int i = 0; i < n; ++i) {
            if (out.cyclic[i] || is_pendant[i] || is_anchor[i]) continue;
            if (uniform_real(rng) >= out.perturb_prob) continue;
            if (uniform_real(rng) < 0.5) {
                int u = detail::random_non_neighbor(g, i, immobile, rng);
                if (u >= 0) g.add_edge(i, u);
            } else {
                std::vector<int> removable;
                for (int u : g.adj[i])
                    if (!out.cyclic[u] && !is_pendant[u] && !is_anchor[u]) removable.push_back(u);
                if (!removable.empty()) {
                    int u = removable[static_cast<std::size_t>(
                        uniform_int(rng, 0, static_cast<int>(removable.size()) - 1))];
                    g.remove_edge(i, u);
                }
            }
        }
        // cyclic nodes: flicker against the partner while dormant, then
        // +- max(1, ceil(p_c * degree)) connections per step once awake
        for (int c = 0; c < n; ++c) {
            if (!out.cyclic[c]) continue;
            int p = flicker_partner[static_cast<std::size_t>(c)];
            if (t < wake) {
                if (p < 0) continue;
                if (t % 2 == 1) {
                    if (!g.has_edge(c, p)) g.add_edge(c, p);
                } else if (g.has_edge(c, p)) {
                    g.remove_edge(c, p);
                }
            } else {
                if (t == wake && p >= 0 && g.has_edge(c, p)) g.remove_edge(c, p);
                cyclic_update(c);
            }
        }
        out.tvg.snapshots.push_back(g);
        out.node_types.push_back(classify_nodes(g, out.cyclic));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sidecar metadata ("t node_id node_type is_cyclic") and dataset manifest.
// ---------------------------------------------------------------------------

inline void write_meta(const std::string& path, const SynthTvg& s) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (int t = 0; t < s.tvg.num_steps(); ++t)
        for (int i = 0; i < s.tvg.num_nodes; ++i)
            os << t << ' ' << i << ' ' << s.node_types[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]
               << ' ' << int(s.cyclic[static_cast<std::size_t>(i)]) << '\n';
}

inline void read_meta(const std::string& path, SynthTvg& s) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open metadata file: " + path);
    const int n = s.tvg.num_nodes;
    const int t_total = s.tvg.num_steps();
    s.cyclic.assign(static_cast<std::size_t>(n), 0);
    s.node_types.assign(static_cast<std::size_t>(t_total),
                        std::vector<int>(static_cast<std::size_t>(n), 0));
    int t, id, type, cyc;
    while (is >> t >> id >> type >> cyc) {
        if (t < 0 || t >= t_total || id < 0 || id >= n)
            throw std::runtime_error("malformed metadata line in " + path);
        s.node_types[static_cast<std::size_t>(t)][static_cast<std::size_t>(id)] = type;
        if (cyc) s.cyclic[static_cast<std::size_t>(id)] = 1;
    }
}

struct DatasetEntry {
    std::string tvg_path;
    std::string meta_path;  // empty when the TVG has no ground-truth types
    double perturb_prob = 0.0;
};

inline void write_manifest(const std::string& path, const std::vector<DatasetEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& e : entries)
        os << e.tvg_path << ' ' << (e.meta_path.empty() ? "-" : e.meta_path) << ' '
           << e.perturb_prob << '\n';
}

inline std::vector<DatasetEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<DatasetEntry> entries;
    DatasetEntry e;
    while (is >> e.tvg_path >> e.meta_path >> e.perturb_prob) {
        if (e.meta_path == "-") e.meta_path.clear();
        entries.push_back(e);
    }
    if (entries.empty()) throw std::runtime_error("empty manifest: " + path);
    return entries;
}

/// Loads a dataset directory (looks for manifest.txt) into memory.
inline std::vector<SynthTvg> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::string manifest = (fs::path(dir) / "manifest.txt").string();
    std::vector<SynthTvg> out;
    for (const auto& e : read_manifest(manifest)) {
        SynthTvg s;
        s.tvg = read_tvg((fs::path(dir) / e.tvg_path).string());
        s.perturb_prob = e.perturb_prob;
        if (!e.meta_path.empty()) read_meta((fs::path(dir) / e.meta_path).string(), s);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace stim

#endif  // STIM_SYNTH_HPP
