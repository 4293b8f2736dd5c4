#ifndef STIM_DIFFUSION_HPP
#define STIM_DIFFUSION_HPP

#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "stim/graph.hpp"
#include "stim/rng.hpp"
#include "stim/synth.hpp"

namespace stim {

/// Lazy per-snapshot cache of the derived matrices every consumer of a TVG
/// needs (normalized adjacency, embedding degree vector, feature matrix).
/// Not thread-safe; share one per thread.
class TvgContext {
  public:
    explicit TvgContext(const Tvg& tvg, int feature_window = 5, bool with_eigcent = true)
        : tvg_(&tvg),
          feature_window_(feature_window),
          with_eigcent_(with_eigcent),
          adj_(static_cast<std::size_t>(tvg.num_steps())),
          deg_(static_cast<std::size_t>(tvg.num_steps())),
          feat_(static_cast<std::size_t>(tvg.num_steps())) {}

    const Tvg& tvg() const { return *tvg_; }

    const SpMat& norm_adj(int t) const {
        auto& slot = adj_[static_cast<std::size_t>(t)];
        if (!slot) slot = build_normalized_adjacency(tvg_->snapshots[static_cast<std::size_t>(t)]);
        return *slot;
    }

    const Eigen::VectorXd& degree_vector(int t) const {
        auto& slot = deg_[static_cast<std::size_t>(t)];
        if (!slot) {
            const SpMat& m = norm_adj(t);
            Eigen::VectorXd d = Eigen::VectorXd::Zero(tvg_->num_nodes);
            for (int i = 0; i < m.outerSize(); ++i)
                for (SpMat::InnerIterator it(m, i); it; ++it) d[i] += it.value();
            slot = std::move(d);
        }
        return *slot;
    }

    const Eigen::MatrixXd& features(int t) const {
        auto& slot = feat_[static_cast<std::size_t>(t)];
        if (!slot) slot = build_feature_matrix(*tvg_, t, feature_window_, with_eigcent_);
        return *slot;
    }

    int feature_cols() const { return with_eigcent_ ? 4 : 3; }

  private:
    const Tvg* tvg_;
    int feature_window_;
    bool with_eigcent_;
    mutable std::vector<std::optional<SpMat>> adj_;
    mutable std::vector<std::optional<Eigen::VectorXd>> deg_;
    mutable std::vector<std::optional<Eigen::MatrixXd>> feat_;
};

enum class NodeState : unsigned char { Neutral, Retain, Informed };

struct DiffusionConfig {
    double psi = 0.002;
    double m_c = 3.0;
    bool clamp_phi = true;
    double mu_max = 10.0;  // cap for degenerate or overflowing degree ratios
};

/// phi_ij: the chance node j accepts a broadcast from node i, as a function
/// of the normalized-degree ratio mu = d_i / d_j. Cyclic receivers get the
/// m_c multiplier.
inline double transmission_probability(double di_norm, double dj_norm, bool j_is_cyclic,
                                       const DiffusionConfig& cfg) {
    double mu = dj_norm > 0.0 ? di_norm / dj_norm : cfg.mu_max;
    mu = std::min(mu, cfg.mu_max);
    double phi = (j_is_cyclic ? cfg.m_c : 1.0) * cfg.psi * std::exp(mu);
    if (cfg.clamp_phi) phi = std::clamp(phi, 0.0, 1.0);
    return phi;
}

/// Number of neutral nodes adjacent to at least one retain-state node.
inline int influence_count(const SnapshotGraph& g, const std::vector<NodeState>& states) {
    if (static_cast<int>(states.size()) != g.num_nodes)
        throw std::invalid_argument("state vector length mismatch");
    int count = 0;
    for (int i = 0; i < g.num_nodes; ++i) {
        if (states[static_cast<std::size_t>(i)] != NodeState::Neutral) continue;
        for (int j : g.adj[i])
            if (states[static_cast<std::size_t>(j)] == NodeState::Retain) {
                ++count;
                break;
            }
    }
    return count;
}

/// Running min/max normalization of the two reward terms. The bounds persist
/// for the duration of training and are frozen for evaluation.
struct RewardNormalizer {
    double w_dif = 1.0;
    double w_inf = 0.5;
    double dif_min = std::numeric_limits<double>::infinity();
    double dif_max = -std::numeric_limits<double>::infinity();
    double inf_min = std::numeric_limits<double>::infinity();
    double inf_max = -std::numeric_limits<double>::infinity();
    bool frozen = false;

    static double norm(double x, double mn, double mx) {
        if (!(mn <= mx) || mx == mn) return 0.0;
        return (x - mn) / (mx - mn);
    }

    // Updates bounds with the raw sample (unless frozen), then returns the
    // final reward of Eq-style weighted normalization, always in [0,1].
    double reward(double dif_raw, double inf_raw) {
        if (!frozen) {
            dif_min = std::min(dif_min, dif_raw);
            dif_max = std::max(dif_max, dif_raw);
            inf_min = std::min(inf_min, inf_raw);
            inf_max = std::max(inf_max, inf_raw);
        }
        double dif_n = w_dif * std::clamp(norm(dif_raw, dif_min, dif_max), 0.0, 1.0);
        double inf_n = w_inf * std::clamp(norm(inf_raw, inf_min, inf_max), 0.0, 1.0);
        return (dif_n + inf_n) / (w_dif + w_inf);
    }
};

struct EnvObservation {
    int t = 0;
    std::vector<NodeState> states;
    std::vector<int> retain_nodes;  // the action mask, ascending ids
    double informed_fraction = 0.0;
    int influence = 0;
};

struct Transition {
    int t = 0;              // snapshot index the action was taken at
    int chosen = -1;        // -1 encodes a no-op step
    int chosen_type = -1;   // ground-truth type when metadata exists
    double reward = 0.0;
    bool terminal = false;
    std::vector<int> retain_before;
    std::vector<int> retain_after;
    double informed_fraction_after = 0.0;
    int influence_after = 0;
};

struct Episode {
    int tvg_index = -1;
    EpisodeWindow window;
    std::vector<Transition> transitions;
    double score = 0.0;  // final informed fraction
};

/// One diffusion episode over a TVG. States mutate in place; one instance is
/// single-threaded. Seeds are applied at step 0 and, with agent-driven
/// diffusion only, states stay static until the window opens.
class DiffusionEnv {
  public:
    DiffusionEnv(const SynthTvg& data, const TvgContext& ctx, const DiffusionConfig& cfg,
                 EpisodeWindow window, std::vector<int> seeds, Rng rng,
                 RewardNormalizer* normalizer)
        : data_(&data), ctx_(&ctx), cfg_(cfg), window_(window), rng_(std::move(rng)),
          normalizer_(normalizer) {
        const int t_total = data.tvg.num_steps();
        // the final advance lands on window.start + length, which must be a
        // real snapshot
        window_.length = std::min(window_.length, t_total - 1 - window_.start);
        if (window_.start < 0 || window_.start >= t_total || window_.length < 0)
            throw std::invalid_argument("episode window out of range");
        states_.assign(static_cast<std::size_t>(data.tvg.num_nodes), NodeState::Neutral);
        for (int s : seeds) states_[static_cast<std::size_t>(s)] = NodeState::Retain;
        t_ = window_.start;
        steps_done_ = 0;
        refresh_observation();
    }

    const EnvObservation& obs() const { return obs_; }
    int current_step() const { return t_; }
    bool done() const { return steps_done_ >= window_.length; }
    const SynthTvg& data() const { return *data_; }
    const TvgContext& ctx() const { return *ctx_; }
    const EpisodeWindow& window() const { return window_; }

    // Test hook: forces every transmission draw to succeed with this
    // probability instead of phi.
    std::optional<double> forced_phi;

    /// Activates `node` (must be in Retain state) or performs a no-op, then
    /// advances one snapshot. Returns the recorded transition.
    Transition step(std::optional<int> node) {
        if (done()) throw std::logic_error("episode already finished");
        const SnapshotGraph& g = data_->tvg.snapshots[static_cast<std::size_t>(t_)];
        const int n = g.num_nodes;
        const double denom = n > 1 ? double(n - 1) : 1.0;

        Transition tr;
        tr.t = t_;
        tr.retain_before = obs_.retain_nodes;
        double informed_before = obs_.informed_fraction;
        int influence_before = obs_.influence;

        if (node) {
            int v = *node;
            if (v < 0 || v >= n || states_[static_cast<std::size_t>(v)] != NodeState::Retain)
                throw std::logic_error("activated node is not in retain state");
            tr.chosen = v;
            if (!data_->node_types.empty())
                tr.chosen_type = data_->node_types[static_cast<std::size_t>(t_)][static_cast<std::size_t>(v)];
            states_[static_cast<std::size_t>(v)] = NodeState::Informed;
            double dv = g.degree(v) / denom;
            for (int u : g.adj[v]) {
                if (states_[static_cast<std::size_t>(u)] != NodeState::Neutral) continue;
                bool u_cyclic = !data_->cyclic.empty() && data_->cyclic[static_cast<std::size_t>(u)];
                double phi = forced_phi ? *forced_phi
                                        : transmission_probability(dv, g.degree(u) / denom,
                                                                   u_cyclic, cfg_);
                if (uniform_real(rng_) < phi)
                    states_[static_cast<std::size_t>(u)] = NodeState::Retain;
            }
        }

        ++t_;
        ++steps_done_;
        refresh_observation();

        double dif_raw = obs_.informed_fraction - informed_before;
        double inf_raw = double(obs_.influence - influence_before) / n;
        tr.reward = normalizer_ ? normalizer_->reward(dif_raw, inf_raw)
                                : dif_raw;  // raw fallback for tests
        tr.terminal = done();
        tr.retain_after = obs_.retain_nodes;
        tr.informed_fraction_after = obs_.informed_fraction;
        tr.influence_after = obs_.influence;
        return tr;
    }

  private:
    void refresh_observation() {
        const SnapshotGraph& g = data_->tvg.snapshots[static_cast<std::size_t>(t_)];
        obs_.t = t_;
        obs_.states = states_;
        obs_.retain_nodes.clear();
        int informed = 0;
        for (int i = 0; i < g.num_nodes; ++i) {
            if (states_[static_cast<std::size_t>(i)] == NodeState::Retain)
                obs_.retain_nodes.push_back(i);
            else if (states_[static_cast<std::size_t>(i)] == NodeState::Informed)
                ++informed;
        }
        obs_.informed_fraction = double(informed) / g.num_nodes;
        obs_.influence = influence_count(g, states_);
    }

    const SynthTvg* data_;
    const TvgContext* ctx_;
    DiffusionConfig cfg_;
    EpisodeWindow window_;
    Rng rng_;
    RewardNormalizer* normalizer_;
    std::vector<NodeState> states_;
    EnvObservation obs_;
    int t_ = 0;
    int steps_done_ = 0;
};

using Policy = std::function<std::optional<int>(const DiffusionEnv&)>;

/// Runs one full episode driven by `policy` and records every transition.
inline Episode run_episode(const SynthTvg& data, const TvgContext& ctx,
                           const DiffusionConfig& cfg, EpisodeWindow window,
                           const std::vector<int>& seeds, const Policy& policy, Rng rng,
                           RewardNormalizer* normalizer,
                           std::optional<double> forced_phi = std::nullopt) {
    DiffusionEnv env(data, ctx, cfg, window, seeds, std::move(rng), normalizer);
    env.forced_phi = forced_phi;
    Episode ep;
    ep.window = env.window();
    while (!env.done()) {
        std::optional<int> choice = env.obs().retain_nodes.empty() ? std::nullopt : policy(env);
        ep.transitions.push_back(env.step(choice));
    }
    ep.score = env.obs().informed_fraction;
    return ep;
}

/// Episode log CSV: one row per step.
inline void write_episode_log_header(std::ostream& os) {
    os << "episode_id,step,chosen_node,chosen_node_type,reward,informed_fraction,influence_count\n";
}

inline void write_episode_log(std::ostream& os, int episode_id, const Episode& ep) {
    for (std::size_t i = 0; i < ep.transitions.size(); ++i) {
        const Transition& tr = ep.transitions[i];
        os << episode_id << ',' << tr.t << ',' << tr.chosen << ',' << tr.chosen_type << ','
           << tr.reward << ',' << tr.informed_fraction_after << ',' << tr.influence_after
           << '\n';
    }
}

}  // namespace stim

#endif  // STIM_DIFFUSION_HPP
