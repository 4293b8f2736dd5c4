#ifndef STIM_TRAIN_HPP
#define STIM_TRAIN_HPP

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stim/agents.hpp"
#include "stim/diffusion.hpp"
#include "stim/model.hpp"

namespace stim {

struct TrainConfig {
    double alpha = 1e-4;
    double alpha_min = 1e-6;
    double beta = 0.999;
    double epsilon_start = 0.8;
    double epsilon_end = 0.3;
    double gamma = 0.9;
    int batch = 8;
    int layers = 2;
    int embed_dim = 128;
    int flow2_dim = 32;
    int atoms = 11;
    bool eigcent = true;
    double w_dif = 1.0;
    double w_inf = 0.5;
    int replay_capacity = 25;
    int replay_interval = 3;
    double positive_threshold = 0.4;
    int episodes = 0;
    std::uint64_t seed = 0;
    int checkpoint_interval = 0;  // 0: final checkpoint only
    double seed_fraction = 0.02;

    void validate() const {
        if (alpha_min > alpha) throw std::invalid_argument("alpha_min must be <= alpha");
        if (positive_threshold < 0.0 || positive_threshold > 1.0)
            throw std::invalid_argument("positive_threshold must be in [0,1]");
        if (batch < 1 || layers < 1 || embed_dim < 1 || flow2_dim < 1 || atoms < 2)
            throw std::invalid_argument("network dimensions must be positive");
        if (replay_capacity < 0 || replay_interval < 1 || episodes < 0)
            throw std::invalid_argument("replay/episode settings out of range");
    }
};

inline StimHyper hyper_from(const TrainConfig& cfg) {
    StimHyper hy;
    hy.B = cfg.batch;
    hy.C = cfg.eigcent ? 4 : 3;
    hy.F = cfg.embed_dim;
    hy.E = cfg.flow2_dim;
    hy.L = cfg.layers;
    hy.gamma = cfg.gamma;
    hy.support.n_a = cfg.atoms;
    return hy;
}

inline double decay_learning_rate(double alpha, double beta, double alpha_min) {
    return std::max(alpha * beta, alpha_min);
}

/// Linear exploration schedule over training progress in [0, 1].
inline double epsilon_at(double progress, double start = 0.8, double end = 0.3) {
    progress = std::clamp(progress, 0.0, 1.0);
    return start + (end - start) * progress;
}

/// Bounded FIFO of positive episodes (final informed fraction >= threshold).
class ReplayBuffer {
  public:
    ReplayBuffer(int capacity, double threshold) : capacity_(capacity), threshold_(threshold) {}

    bool maybe_store(Episode ep) {
        if (ep.score < threshold_ || capacity_ == 0) return false;
        buf_.push_back(std::move(ep));
        if (static_cast<int>(buf_.size()) > capacity_) buf_.pop_front();
        return true;
    }

    bool empty() const { return buf_.empty(); }
    std::size_t size() const { return buf_.size(); }
    const Episode& at(std::size_t i) const { return buf_[i]; }

    const Episode& sample(Rng& rng) const {
        return buf_[static_cast<std::size_t>(
            uniform_int(rng, 0, static_cast<int>(buf_.size()) - 1))];
    }

  private:
    int capacity_;
    double threshold_;
    std::deque<Episode> buf_;
};

struct UpdateStats {
    double loss_sum = 0.0;
    int batches = 0;
};

/// One pass of sliding B-window distributional updates over a recorded
/// episode. Targets come from the online network (categorical Bellman backup
/// on the best next action under the Retain mask); an exhausted mask counts
/// as terminal.
inline void update_from_episode(StimModel& model, const TvgContext& ctx, const Episode& ep,
                                double& alpha, const TrainConfig& cfg, UpdateStats& stats) {
    const int len = static_cast<int>(ep.transitions.size());
    if (len == 0) return;
    const int b_total = model.hyper().B;
    const AtomSupport& support = model.hyper().support;
    const int pad = std::max(0, b_total - len);
    const int last_start = std::max(0, len - b_total);

    auto next_best_dist = [&](const Matrix& slice, const std::vector<int>& mask) {
        std::vector<double> q(static_cast<std::size_t>(slice.rows()));
        for (Eigen::Index i = 0; i < slice.rows(); ++i)
            q[static_cast<std::size_t>(i)] = expected_q(slice.row(i).transpose(), support);
        int best = argmax_masked(q, mask);
        return Eigen::VectorXd(slice.row(best).transpose());
    };

    for (int w = 0; w <= last_start; ++w) {
        std::vector<StimModel::SnapshotInput> inputs;
        std::vector<int> chosen(static_cast<std::size_t>(b_total), -1);
        std::vector<int> idx_of(static_cast<std::size_t>(b_total), -1);
        for (int b = 0; b < b_total; ++b) {
            int idx = b < pad ? 0 : w + b - pad;
            int step = ep.transitions[static_cast<std::size_t>(idx)].t;
            inputs.push_back({&ctx.norm_adj(step), &ctx.degree_vector(step),
                              &ctx.features(step), step});
            if (b >= pad) {
                idx_of[static_cast<std::size_t>(b)] = idx;
                chosen[static_cast<std::size_t>(b)] =
                    ep.transitions[static_cast<std::size_t>(idx)].chosen;
            }
        }

        StimModel::ForwardCache cache;
        model.forward(inputs, &cache);

        bool any = false;
        std::vector<Eigen::VectorXd> targets(static_cast<std::size_t>(b_total),
                                             Eigen::VectorXd::Zero(support.n_a));
        for (int b = 0; b < b_total; ++b) {
            if (chosen[static_cast<std::size_t>(b)] < 0) continue;
            any = true;
            const Transition& tr =
                ep.transitions[static_cast<std::size_t>(idx_of[static_cast<std::size_t>(b)])];
            bool terminal = tr.terminal || tr.retain_after.empty();
            Eigen::VectorXd next = Eigen::VectorXd::Zero(support.n_a);
            if (!terminal) {
                if (b + 1 < b_total) {
                    next = next_best_dist(cache.qall.slices[static_cast<std::size_t>(b + 1)],
                                          tr.retain_after);
                } else {
                    auto nwin = make_window(ctx, tr.t + 1, b_total, ep.window.start);
                    Tensor3 q_next = model.forward(nwin);
                    next = next_best_dist(q_next.slices.back(), tr.retain_after);
                }
            }
            // Rewards are normalized to [0,1] per step, so the discounted
            // return can reach 1/(1-gamma) and would clamp every target to
            // v_max, erasing the value differences between actions. Scaling
            // by (1-gamma) keeps returns inside the atom support.
            double r_scaled = tr.reward * (1.0 - model.hyper().gamma);
            targets[static_cast<std::size_t>(b)] =
                project_target(r_scaled, terminal, next, model.hyper().gamma, support);
        }
        if (!any) continue;

        stats.loss_sum += model.loss_for_batch(cache.qall, chosen, targets);
        ++stats.batches;
        model.params().zero_grads();
        model.backward(cache, chosen, targets);
        model.params().sgd_step(alpha);
    }
}

struct CurveRow {
    int episode = 0;
    double score = 0.0;
    double moving_avg = 0.0;
    double epsilon = 0.0;
    double alpha = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<CurveRow> curve;
    int updates = 0;
    double final_alpha = 0.0;
};

/// The main training loop: sample a TVG, roll an epsilon-greedy episode,
/// update over its sliding windows, and every `replay_interval` real episodes
/// replay one buffered positive episode as recorded.
inline TrainResult train_loop(
    const std::vector<SynthTvg>& dataset, const TrainConfig& cfg, StimModel& model,
    RewardNormalizer& norm,
    const std::function<void(int, const StimModel&)>& checkpoint_hook = nullptr) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
    if (model.hyper().C != (cfg.eigcent ? 4 : 3))
        throw std::invalid_argument("model feature width does not match the config");

    std::vector<std::unique_ptr<TvgContext>> contexts(dataset.size());
    auto ctx_for = [&](int i) -> const TvgContext& {
        auto& slot = contexts[static_cast<std::size_t>(i)];
        if (!slot)
            slot = std::make_unique<TvgContext>(dataset[static_cast<std::size_t>(i)].tvg, 5,
                                                cfg.eigcent);
        return *slot;
    };

    Rng master = make_rng(cfg.seed);
    ReplayBuffer buffer(cfg.replay_capacity, cfg.positive_threshold);
    SynthConfig window_cfg;  // p_v only; matches generation defaults
    double alpha = cfg.alpha;
    TrainResult result;
    std::deque<double> recent_scores;
    int since_replay = 0;

    for (int e = 0; e < cfg.episodes; ++e) {
        double progress = cfg.episodes > 1 ? double(e) / (cfg.episodes - 1) : 0.0;
        double eps = epsilon_at(progress, cfg.epsilon_start, cfg.epsilon_end);

        int tvg_idx = uniform_int(master, 0, static_cast<int>(dataset.size()) - 1);
        const SynthTvg& data = dataset[static_cast<std::size_t>(tvg_idx)];
        const TvgContext& ctx = ctx_for(tvg_idx);
        EpisodeWindow window = valid_window(data.tvg.num_steps(), window_cfg);
        std::vector<int> seeds = select_seed_set(
            data.tvg.snapshots[0], data.cyclic,
            std::max(1, static_cast<int>(cfg.seed_fraction * data.tvg.num_nodes)));

        Rng policy_rng = make_rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(e)));
        Episode ep = run_episode(
            data, ctx, DiffusionConfig{}, window, seeds, stim_policy(model, eps, policy_rng),
            make_rng(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(e) + 1)), &norm);
        ep.tvg_index = tvg_idx;

        UpdateStats stats;
        update_from_episode(model, ctx, ep, alpha, cfg, stats);
        buffer.maybe_store(ep);
        alpha = decay_learning_rate(alpha, cfg.beta, cfg.alpha_min);  // once per episode

        if (++since_replay >= cfg.replay_interval) {
            since_replay = 0;
            if (!buffer.empty()) {
                const Episode& past = buffer.sample(master);
                update_from_episode(model, ctx_for(past.tvg_index), past, alpha, cfg, stats);
            }
        }

        recent_scores.push_back(ep.score);
        if (recent_scores.size() > 25) recent_scores.pop_front();
        double avg = 0.0;
        for (double s : recent_scores) avg += s;
        avg /= static_cast<double>(recent_scores.size());

        result.curve.push_back({e, ep.score, avg, eps, alpha,
                                stats.batches ? stats.loss_sum / stats.batches : 0.0});
        result.updates += stats.batches;
        if (checkpoint_hook && cfg.checkpoint_interval > 0 &&
            (e + 1) % cfg.checkpoint_interval == 0)
            checkpoint_hook(e, model);
    }
    result.final_alpha = alpha;
    return result;
}

// checkpointing with the reward-normalizer state ------------------------------

inline void save_checkpoint(const StimModel& model, const RewardNormalizer& norm,
                            const std::string& path) {
    auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    model.save(path, {{"norm_dif_min", fmt(norm.dif_min)},
                      {"norm_dif_max", fmt(norm.dif_max)},
                      {"norm_inf_min", fmt(norm.inf_min)},
                      {"norm_inf_max", fmt(norm.inf_max)},
                      {"norm_w_dif", fmt(norm.w_dif)},
                      {"norm_w_inf", fmt(norm.w_inf)}});
}

inline StimModel load_checkpoint(const std::string& path, RewardNormalizer* norm_out) {
    std::map<std::string, std::string> header;
    StimModel model = StimModel::load(path, &header);
    if (norm_out && header.count("norm_dif_min")) {
        norm_out->dif_min = std::stod(header.at("norm_dif_min"));
        norm_out->dif_max = std::stod(header.at("norm_dif_max"));
        norm_out->inf_min = std::stod(header.at("norm_inf_min"));
        norm_out->inf_max = std::stod(header.at("norm_inf_max"));
        norm_out->w_dif = std::stod(header.at("norm_w_dif"));
        norm_out->w_inf = std::stod(header.at("norm_w_inf"));
        norm_out->frozen = true;
    }
    return model;
}

// config files and reports ----------------------------------------------------

/// Flat key=value config; '#' starts a comment; unknown keys are rejected.
inline TrainConfig parse_train_config(std::istream& is) {
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key=value");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "alpha") cfg.alpha = std::stod(val);
            else if (key == "alpha_min") cfg.alpha_min = std::stod(val);
            else if (key == "beta") cfg.beta = std::stod(val);
            else if (key == "epsilon_start") cfg.epsilon_start = std::stod(val);
            else if (key == "epsilon_end") cfg.epsilon_end = std::stod(val);
            else if (key == "gamma") cfg.gamma = std::stod(val);
            else if (key == "batch") cfg.batch = std::stoi(val);
            else if (key == "layers") cfg.layers = std::stoi(val);
            else if (key == "embed_dim") cfg.embed_dim = std::stoi(val);
            else if (key == "flow2_dim") cfg.flow2_dim = std::stoi(val);
            else if (key == "atoms") cfg.atoms = std::stoi(val);
            else if (key == "eigcent") cfg.eigcent = std::stoi(val) != 0;
            else if (key == "w_dif") cfg.w_dif = std::stod(val);
            else if (key == "w_inf") cfg.w_inf = std::stod(val);
            else if (key == "replay_capacity") cfg.replay_capacity = std::stoi(val);
            else if (key == "replay_interval") cfg.replay_interval = std::stoi(val);
            else if (key == "positive_threshold") cfg.positive_threshold = std::stod(val);
            else if (key == "episodes") cfg.episodes = std::stoi(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "checkpoint_interval") cfg.checkpoint_interval = std::stoi(val);
            else if (key == "seed_fraction") cfg.seed_fraction = std::stod(val);
            else
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": bad value for '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    return parse_train_config(is);
}

inline std::map<std::string, std::string> train_config_map(const TrainConfig& cfg) {
    auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    return {{"alpha", fmt(cfg.alpha)},
            {"alpha_min", fmt(cfg.alpha_min)},
            {"beta", fmt(cfg.beta)},
            {"epsilon_start", fmt(cfg.epsilon_start)},
            {"epsilon_end", fmt(cfg.epsilon_end)},
            {"gamma", fmt(cfg.gamma)},
            {"batch", std::to_string(cfg.batch)},
            {"layers", std::to_string(cfg.layers)},
            {"embed_dim", std::to_string(cfg.embed_dim)},
            {"flow2_dim", std::to_string(cfg.flow2_dim)},
            {"atoms", std::to_string(cfg.atoms)},
            {"eigcent", cfg.eigcent ? "1" : "0"},
            {"w_dif", fmt(cfg.w_dif)},
            {"w_inf", fmt(cfg.w_inf)},
            {"replay_capacity", std::to_string(cfg.replay_capacity)},
            {"replay_interval", std::to_string(cfg.replay_interval)},
            {"positive_threshold", fmt(cfg.positive_threshold)},
            {"episodes", std::to_string(cfg.episodes)},
            {"seed", std::to_string(cfg.seed)},
            {"checkpoint_interval", std::to_string(cfg.checkpoint_interval)},
            {"seed_fraction", fmt(cfg.seed_fraction)}};
}

inline void write_training_curve(std::ostream& os, const std::vector<CurveRow>& curve) {
    os << "episode,score,moving_avg,epsilon,alpha,loss\n";
    os.precision(17);
    for (const CurveRow& r : curve)
        os << r.episode << ',' << r.score << ',' << r.moving_avg << ',' << r.epsilon << ','
           << r.alpha << ',' << r.loss << '\n';
}

inline std::uint64_t dataset_hash(const std::vector<SynthTvg>& dataset) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the edge structure
    auto mix = [&h](std::uint64_t v) {
        h ^= v;
        h *= 1099511628211ULL;
    };
    for (const SynthTvg& s : dataset) {
        mix(static_cast<std::uint64_t>(s.tvg.num_nodes));
        mix(static_cast<std::uint64_t>(s.tvg.num_steps()));
        for (const SnapshotGraph& g : s.tvg.snapshots)
            for (int u = 0; u < g.num_nodes; ++u)
                for (int v : g.adj[u])
                    if (u < v) mix((static_cast<std::uint64_t>(u) << 32) |
                                   static_cast<std::uint64_t>(v));
    }
    return h;
}

inline void write_run_manifest(const std::string& path, const TrainConfig& cfg,
                               std::uint64_t data_hash) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& [k, v] : train_config_map(cfg)) os << k << '=' << v << '\n';
    os << "dataset_hash=" << data_hash << '\n';
}

}  // namespace stim

#endif  // STIM_TRAIN_HPP
