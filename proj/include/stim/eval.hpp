#ifndef STIM_EVAL_HPP
#define STIM_EVAL_HPP

#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stim/agents.hpp"
#include "stim/diffusion.hpp"
#include "stim/model.hpp"
#include "stim/synth.hpp"

namespace stim {

// ---------------------------------------------------------------------------
// Agent selection shared by the harness and the CLI.
// ---------------------------------------------------------------------------

enum class AgentKind { Greedy, Oracle, Stim, Random };

inline AgentKind parse_agent_kind(const std::string& s) {
    if (s == "greedy") return AgentKind::Greedy;
    if (s == "oracle") return AgentKind::Oracle;
    if (s == "stim") return AgentKind::Stim;
    if (s == "random") return AgentKind::Random;
    throw std::invalid_argument("unknown agent: " + s);
}

inline const char* agent_name(AgentKind k) {
    switch (k) {
        case AgentKind::Greedy: return "greedy";
        case AgentKind::Oracle: return "oracle";
        case AgentKind::Stim: return "stim";
        case AgentKind::Random: return "random";
    }
    return "?";
}

/// A factory lets each evaluation instance own a private RNG stream for
/// stochastic agents while deterministic agents ignore it.
using PolicyFactory = std::function<Policy(Rng&)>;

inline PolicyFactory agent_factory(AgentKind kind, const StimModel* model) {
    switch (kind) {
        case AgentKind::Greedy:
            return [](Rng&) { return greedy_policy(); };
        case AgentKind::Oracle:
            return [](Rng&) { return oracle_policy(); };
        case AgentKind::Random:
            return [](Rng& rng) { return random_policy(rng); };
        case AgentKind::Stim:
            if (!model) throw std::invalid_argument("stim agent requires a model");
            return [model](Rng& rng) { return stim_policy(*model, 0.0, rng); };
    }
    throw std::invalid_argument("unknown agent kind");
}

// ---------------------------------------------------------------------------
// evaluate: mean informed fraction over simulations, with repeated instances
// for mean-of-means reporting.
// ---------------------------------------------------------------------------

struct EvalOptions {
    int sims = 2000;
    int instances = 1;
    double seed_fraction = 0.02;
    std::uint64_t seed = 0;
    DiffusionConfig diffusion;
    SynthConfig window_cfg;  // p_v drives the episode-window rule
};

struct EvalReport {
    std::string agent;
    int sims = 0;
    int instances = 0;
    std::uint64_t seed = 0;
    std::vector<double> instance_means;
    double mean = 0.0;  // mean of the instance means
};

namespace detail {

/// Per-TVG fixtures reused across simulations: context, window, seed set.
struct EvalFixture {
    std::unique_ptr<TvgContext> ctx;
    EpisodeWindow window;
    std::vector<int> seeds;
};

inline std::vector<EvalFixture> build_fixtures(const std::vector<SynthTvg>& dataset,
                                               const EvalOptions& opt) {
    std::vector<EvalFixture> fixtures;
    fixtures.reserve(dataset.size());
    for (const SynthTvg& d : dataset) {
        EvalFixture f;
        f.ctx = std::make_unique<TvgContext>(d.tvg);
        f.window = valid_window(d.tvg.num_steps(), opt.window_cfg);
        int p = std::max(1, static_cast<int>(opt.seed_fraction * d.tvg.num_nodes));
        f.seeds = select_seed_set(d.tvg.snapshots[0], d.cyclic, p);
        fixtures.push_back(std::move(f));
    }
    return fixtures;
}

}  // namespace detail

inline EvalReport evaluate(const std::string& name, const PolicyFactory& factory,
                           const std::vector<SynthTvg>& dataset, const EvalOptions& opt) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    if (opt.sims <= 0 || opt.instances <= 0)
        throw std::invalid_argument("evaluate: sims and instances must be positive");

    std::vector<detail::EvalFixture> fixtures = detail::build_fixtures(dataset, opt);

    EvalReport rep;
    rep.agent = name;
    rep.sims = opt.sims;
    rep.instances = opt.instances;
    rep.seed = opt.seed;

    for (int inst = 0; inst < opt.instances; ++inst) {
        Rng rng = make_rng(derive_seed(opt.seed, static_cast<std::uint64_t>(2 * inst)));
        Rng agent_rng =
            make_rng(derive_seed(opt.seed, static_cast<std::uint64_t>(2 * inst + 1)));
        Policy pol = factory(agent_rng);
        double total = 0.0;
        for (int s = 0; s < opt.sims; ++s) {
            int i = uniform_int(rng, 0, static_cast<int>(dataset.size()) - 1);
            const detail::EvalFixture& f = fixtures[static_cast<std::size_t>(i)];
            Episode ep = run_episode(dataset[static_cast<std::size_t>(i)], *f.ctx,
                                     opt.diffusion, f.window, f.seeds, pol, make_rng(rng()),
                                     nullptr);
            total += ep.score;
        }
        rep.instance_means.push_back(total / opt.sims);
    }
    for (double m : rep.instance_means) rep.mean += m;
    rep.mean /= rep.instances;
    return rep;
}

inline EvalReport evaluate(AgentKind kind, const StimModel* model,
                           const std::vector<SynthTvg>& dataset, const EvalOptions& opt) {
    if (kind == AgentKind::Oracle)
        for (const SynthTvg& d : dataset)
            if (d.node_types.empty())
                throw std::invalid_argument("oracle requires node-type metadata");
    return evaluate(agent_name(kind), agent_factory(kind, model), dataset, opt);
}

/// Per-TVG means for one agent (oracle-dominance checks); entry i evaluates
/// only dataset[i] with `sims` simulations.
inline std::vector<double> per_tvg_means(AgentKind kind, const StimModel* model,
                                         const std::vector<SynthTvg>& dataset,
                                         const EvalOptions& opt) {
    std::vector<double> means;
    means.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        std::vector<SynthTvg> one;
        one.push_back(dataset[i]);  // copy keeps the shared API simple
        EvalOptions o = opt;
        o.seed = derive_seed(opt.seed, 7000 + i);
        means.push_back(evaluate(kind, model, one, o).mean);
    }
    return means;
}

inline void write_eval_report_csv(std::ostream& os, const EvalReport& rep) {
    os << "agent,instance,sims,seed,mean\n";
    for (std::size_t i = 0; i < rep.instance_means.size(); ++i)
        os << rep.agent << ',' << i << ',' << rep.sims << ',' << rep.seed << ','
           << rep.instance_means[i] << '\n';
    os << rep.agent << ",overall," << rep.sims << ',' << rep.seed << ',' << rep.mean << '\n';
}

// ---------------------------------------------------------------------------
// Confusion matrix vs the oracle: the environment follows the candidate
// agent; the oracle is queried counterfactually on the identical state.
// ---------------------------------------------------------------------------

struct ConfusionMatrix5 {
    std::array<std::array<double, 5>, 5> m{};  // (oracle type, agent type)
    long long decisions = 0;

    double row_sum(int i) const {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) s += m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        return s;
    }
    double total() const {
        double s = 0.0;
        for (int i = 0; i < 5; ++i) s += row_sum(i);
        return s;
    }
};

inline ConfusionMatrix5 confusion_vs_oracle(const PolicyFactory& agent,
                                            const std::vector<SynthTvg>& dataset, int sims,
                                            const EvalOptions& opt) {
    if (dataset.empty()) throw std::invalid_argument("confusion: empty dataset");
    if (sims <= 0) throw std::invalid_argument("confusion: sims must be positive");
    for (const SynthTvg& d : dataset)
        if (d.node_types.empty())
            throw std::invalid_argument("oracle requires node-type metadata");

    std::vector<detail::EvalFixture> fixtures = detail::build_fixtures(dataset, opt);
    Rng rng = make_rng(derive_seed(opt.seed, 0));
    Rng agent_rng = make_rng(derive_seed(opt.seed, 1));
    Policy pol = agent(agent_rng);

    ConfusionMatrix5 out;
    std::array<std::array<long long, 5>, 5> counts{};
    for (int s = 0; s < sims; ++s) {
        int i = uniform_int(rng, 0, static_cast<int>(dataset.size()) - 1);
        const SynthTvg& d = dataset[static_cast<std::size_t>(i)];
        const detail::EvalFixture& f = fixtures[static_cast<std::size_t>(i)];
        DiffusionEnv env(d, *f.ctx, opt.diffusion, f.window, f.seeds, make_rng(rng()),
                         nullptr);
        while (!env.done()) {
            if (env.obs().retain_nodes.empty()) {
                env.step(std::nullopt);
                continue;
            }
            int t = env.current_step();
            const SnapshotGraph& g = d.tvg.snapshots[static_cast<std::size_t>(t)];
            const std::vector<int>& types = d.node_types[static_cast<std::size_t>(t)];
            std::optional<int> oracle_choice =
                oracle_select(g, env.obs().retain_nodes, types).node;
            std::optional<int> agent_choice = pol(env);
            if (oracle_choice && agent_choice) {
                int oi = types[static_cast<std::size_t>(*oracle_choice)];
                int aj = types[static_cast<std::size_t>(*agent_choice)];
                ++counts[static_cast<std::size_t>(oi)][static_cast<std::size_t>(aj)];
                ++out.decisions;
            }
            env.step(agent_choice);
        }
    }
    if (out.decisions > 0)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                out.m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    double(counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) /
                    double(out.decisions);
    return out;
}

inline void write_confusion_csv(std::ostream& os, const ConfusionMatrix5& cm) {
    os << "oracle_type,agent_type,fraction\n";
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            os << i << ',' << j << ','
               << cm.m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] << '\n';
}

// ---------------------------------------------------------------------------
// Real-world ingestion: "SRC DST TIMESTAMP" lines -> binned snapshot TVG.
// ---------------------------------------------------------------------------

struct IngestResult {
    Tvg tvg;
    long long records = 0;  // parsed temporal edge records (lines)
};

/// Builds a TVG from a whitespace-separated temporal edge list. Node ids are
/// remapped densely in order of first appearance sorted by original id; the
/// node set is fixed across snapshots. Exactly one of `target_bins` /
/// `bin_width` must be positive.
inline IngestResult ingest_temporal_edge_list(const std::string& path, int target_bins,
                                              double bin_width = 0.0) {
    if ((target_bins > 0) == (bin_width > 0.0))
        throw std::invalid_argument("specify exactly one of target_bins or bin_width");
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);

    struct Record {
        long long u, v, ts;
    };
    std::vector<Record> records;
    std::string line;
    long long line_no = 0;
    long long max_ts = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ls(line);
        long long u, v, ts;
        std::string extra;
        if (!(ls >> u >> v >> ts) || (ls >> extra) || u < 0 || v < 0 || ts < 0)
            throw std::runtime_error("parse error at line " + std::to_string(line_no) +
                                     ": " + line);
        records.push_back({u, v, ts});
        max_ts = std::max(max_ts, ts);
    }
    if (records.empty()) throw std::runtime_error("empty temporal edge list: " + path);

    // dense remap over the union of endpoints, ordered by original id
    std::vector<long long> ids;
    ids.reserve(2 * records.size());
    for (const Record& r : records) {
        ids.push_back(r.u);
        ids.push_back(r.v);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    auto remap = [&ids](long long raw) {
        return static_cast<int>(std::lower_bound(ids.begin(), ids.end(), raw) - ids.begin());
    };

    double width = bin_width > 0.0 ? bin_width
                                   : (static_cast<double>(max_ts) + 1.0) / target_bins;
    int bins = bin_width > 0.0 ? static_cast<int>(static_cast<double>(max_ts) / width) + 1
                               : target_bins;

    IngestResult out;
    out.records = static_cast<long long>(records.size());
    out.tvg.num_nodes = static_cast<int>(ids.size());
    out.tvg.snapshots.assign(static_cast<std::size_t>(bins),
                             SnapshotGraph(out.tvg.num_nodes));
    for (int t = 0; t < bins; ++t) out.tvg.snapshots[static_cast<std::size_t>(t)].step_index = t;
    for (const Record& r : records) {
        if (r.u == r.v) continue;  // self-loops dropped
        int b = std::min(bins - 1, static_cast<int>(static_cast<double>(r.ts) / width));
        SnapshotGraph& g = out.tvg.snapshots[static_cast<std::size_t>(b)];
        int u = remap(r.u), v = remap(r.v);
        if (!g.has_edge(u, v)) g.add_edge(u, v);  // dedup + symmetrize
    }
    return out;
}

/// P lowest-degree nodes at snapshot 0, ties by id.
inline std::vector<int> select_real_seeds(const Tvg& tvg, int p) {
    if (p < 0 || p > tvg.num_nodes) throw std::invalid_argument("bad seed count");
    std::vector<int> order(static_cast<std::size_t>(tvg.num_nodes));
    std::iota(order.begin(), order.end(), 0);
    const SnapshotGraph& g0 = tvg.snapshots.front();
    std::stable_sort(order.begin(), order.end(), [&g0](int a, int b) {
        return g0.degree(a) < g0.degree(b);
    });
    order.resize(static_cast<std::size_t>(p));
    return order;
}

/// Wraps a metadata-free TVG so the diffusion environment and the non-oracle
/// agents can run on it (m_c never fires: no cyclic flags).
inline SynthTvg wrap_real_tvg(Tvg tvg) {
    SynthTvg d;
    d.tvg = std::move(tvg);
    d.cyclic.assign(static_cast<std::size_t>(d.tvg.num_nodes), 0);
    return d;
}

// ---------------------------------------------------------------------------
// Timing benchmark: forward-pass wall time vs snapshot edge count.
// ---------------------------------------------------------------------------

struct TimingSample {
    int nodes = 0;
    int edges = 0;
    double seconds = 0.0;
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("fit_line needs >= 2 paired samples");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw std::invalid_argument("fit_line: degenerate x values");
    LinearFit f;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    double ss_res = 0, ss_tot = 0, ybar = sy / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double e = y[i] - (f.slope * x[i] + f.intercept);
        ss_res += e * e;
        ss_tot += (y[i] - ybar) * (y[i] - ybar);
    }
    f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

inline LinearFit fit_line(const std::vector<TimingSample>& samples) {
    std::vector<double> x, y;
    for (const TimingSample& s : samples) {
        x.push_back(static_cast<double>(s.edges));
        y.push_back(s.seconds);
    }
    return fit_line(x, y);
}

/// Times one forward pass (batch of B most recent snapshots) per generated
/// TVG size. Strictly sequential; `repeats` forward passes are averaged per
/// sample after one untimed warmup.
inline std::vector<TimingSample> benchmark_timing(const StimModel& model,
                                                  const std::vector<int>& sizes,
                                                  std::uint64_t seed, int repeats = 3) {
    if (sizes.size() < 2) throw std::invalid_argument("benchmark needs >= 2 sizes");
    std::vector<TimingSample> samples;
    const int B = model.hyper().B;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        SynthConfig cfg;
        cfg.n_min = cfg.n_max = sizes[k];
        cfg.t_min = cfg.t_max = std::max(2, B);
        SynthTvg d = generate_tvg(cfg, derive_seed(seed, k));
        TvgContext ctx(d.tvg, 5, /*with_eigcent=*/model.hyper().C >= 4);
        int t = d.tvg.num_steps() - 1;
        auto window = make_window(ctx, t, B);
        (void)model.forward(window);  // warmup; also populates the ctx caches
        auto t0 = std::chrono::steady_clock::now();
        for (int r = 0; r < repeats; ++r) (void)model.forward(window);
        auto t1 = std::chrono::steady_clock::now();
        TimingSample s;
        s.nodes = d.tvg.num_nodes;
        s.edges = static_cast<int>(d.tvg.snapshots[static_cast<std::size_t>(t)].num_edges());
        s.seconds = std::chrono::duration<double>(t1 - t0).count() / repeats;
        samples.push_back(s);
    }
    return samples;
}

inline void write_timing_csv(std::ostream& os, const std::vector<TimingSample>& samples,
                             const LinearFit& fit) {
    os << "nodes,edges,seconds,slope,intercept,r2\n";
    for (const TimingSample& s : samples)
        os << s.nodes << ',' << s.edges << ',' << s.seconds << ',' << fit.slope << ','
           << fit.intercept << ',' << fit.r2 << '\n';
}

}  // namespace stim

#endif  // STIM_EVAL_HPP
