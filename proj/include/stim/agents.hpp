#ifndef STIM_AGENTS_HPP
#define STIM_AGENTS_HPP

#include <optional>
#include <vector>

#include "stim/diffusion.hpp"
#include "stim/model.hpp"

namespace stim {

enum class DecisionBasis : unsigned char { NoOp, Degree, RuleTier, ExpectedQ, Random };

struct AgentDecision {
    std::optional<int> node;
    DecisionBasis basis = DecisionBasis::NoOp;
};

/// Highest-degree node in the mask; ties by lowest id; no-op on empty mask.
inline AgentDecision greedy_select(const SnapshotGraph& g, const std::vector<int>& mask) {
    AgentDecision d;
    int best_deg = -1;
    for (int v : mask)
        if (g.degree(v) > best_deg) {
            best_deg = g.degree(v);
            d.node = v;  // mask is ascending, so strict > keeps the lowest id
        }
    if (d.node) d.basis = DecisionBasis::Degree;
    return d;
}

/// Rule-tier policy for synthetic data: any type-4 node, else any type-2 node,
/// else the highest-degree masked node. "Any" resolves to lowest id.
inline AgentDecision oracle_select(const SnapshotGraph& g, const std::vector<int>& mask,
                                   const std::vector<int>& node_types) {
    if (static_cast<int>(node_types.size()) != g.num_nodes)
        throw std::invalid_argument("oracle requires node-type metadata");
    for (int tier : {4, 2})
        for (int v : mask)
            if (node_types[static_cast<std::size_t>(v)] == tier)
                return {v, DecisionBasis::RuleTier};
    AgentDecision d = greedy_select(g, mask);
    if (d.node) d.basis = DecisionBasis::RuleTier;
    return d;
}

inline AgentDecision random_select(const std::vector<int>& mask, Rng& rng) {
    if (mask.empty()) return {};
    return {mask[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(mask.size()) - 1))],
            DecisionBasis::Random};
}

/// Argmax of hand-in expected-Q values over the mask; ties by lowest id.
inline int argmax_masked(const std::vector<double>& q, const std::vector<int>& mask) {
    int best = mask.front();
    for (int v : mask)
        if (q[static_cast<std::size_t>(v)] > q[static_cast<std::size_t>(best)]) best = v;
    return best;
}

/// The B most recent snapshots up to and including `t`, front-padded by
/// repeating the earliest available snapshot (>= `earliest`).
inline std::vector<StimModel::SnapshotInput> make_window(const TvgContext& ctx, int t,
                                                         int batch, int earliest = 0) {
    std::vector<StimModel::SnapshotInput> window;
    window.reserve(static_cast<std::size_t>(batch));
    for (int k = batch - 1; k >= 0; --k) {
        int step = std::max(t - k, earliest);
        window.push_back({&ctx.norm_adj(step), &ctx.degree_vector(step), &ctx.features(step),
                          step});
    }
    return window;
}

/// epsilon-greedy over the model's expected Q, masked to Retain nodes after
/// scoring. The decision reads the last slice of the B-snapshot forward pass.
inline AgentDecision stim_select(const StimModel& model, const DiffusionEnv& env, double eps,
                                 Rng& rng) {
    const std::vector<int>& mask = env.obs().retain_nodes;
    if (mask.empty()) return {};
    if (eps > 0.0 && uniform_real(rng) < eps) return random_select(mask, rng);
    auto window = make_window(env.ctx(), env.current_step(), model.hyper().B,
                              env.window().start);
    Tensor3 qall = model.forward(window);
    const Matrix& last = qall.slices.back();
    std::vector<double> q(static_cast<std::size_t>(last.rows()));
    for (Eigen::Index i = 0; i < last.rows(); ++i)
        q[static_cast<std::size_t>(i)] =
            expected_q(last.row(i).transpose(), model.hyper().support);
    return {argmax_masked(q, mask), DecisionBasis::ExpectedQ};
}

// run_episode adapters -------------------------------------------------------

inline Policy greedy_policy() {
    return [](const DiffusionEnv& env) {
        return greedy_select(env.data().tvg.snapshots[static_cast<std::size_t>(env.current_step())],
                             env.obs().retain_nodes)
            .node;
    };
}

inline Policy oracle_policy() {
    return [](const DiffusionEnv& env) {
        int t = env.current_step();
        const SynthTvg& data = env.data();
        if (data.node_types.size() != data.tvg.snapshots.size())
            throw std::invalid_argument("oracle requires node-type metadata");
        return oracle_select(data.tvg.snapshots[static_cast<std::size_t>(t)],
                             env.obs().retain_nodes,
                             data.node_types[static_cast<std::size_t>(t)])
            .node;
    };
}

inline Policy random_policy(Rng& rng) {
    return [&rng](const DiffusionEnv& env) { return random_select(env.obs().retain_nodes, rng).node; };
}

inline Policy stim_policy(const StimModel& model, double eps, Rng& rng) {
    return [&model, eps, &rng](const DiffusionEnv& env) {
        return stim_select(model, env, eps, rng).node;
    };
}

}  // namespace stim

#endif  // STIM_AGENTS_HPP
