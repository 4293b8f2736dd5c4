// stim: command-line surface over the library.
//
// Subcommands: generate, train, evaluate, confusion, ingest, benchmark.
// Every report is CSV with a header row; see README.md for plotting recipes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stim/eval.hpp"
#include "stim/train.hpp"

namespace fs = std::filesystem;
using namespace stim;

namespace {

[[noreturn]] void usage(const std::string& msg = "") {
    if (!msg.empty()) std::cerr << "error: " << msg << "\n\n";
    std::cerr <<
        "usage: stim <subcommand> [flags]\n"
        "\n"
        "  generate  --count K --nodes-min A --nodes-max B --steps-min C --steps-max D\n"
        "            --seed S --out DIR\n"
        "            [--cyclic-fraction F --p-c F --growth-high F --shrink-low F\n"
        "             --seed-fraction F]\n"
        "  train     --data DIR --episodes M --config FILE --seed S --out DIR\n"
        "  evaluate  --agent {greedy|oracle|stim|random} --model FILE --data PATH\n"
        "            --sims 2000 --instances 5 --seed S --report FILE [--seed-fraction F]\n"
        "  confusion --model FILE --data DIR --sims K --out FILE [--seed-fraction F]\n"
        "  ingest    --input FILE --bins 60 --out FILE\n"
        "  benchmark --model FILE --sizes 1000,2000,3000,4000,5000 --out FILE\n";
    std::exit(2);
}

std::map<std::string, std::string> parse_flags(int argc, char** argv, int from) {
    std::map<std::string, std::string> flags;
    for (int i = from; i < argc; ++i) {
        std::string key = argv[i];
        if (key.rfind("--", 0) != 0) usage("unexpected argument: " + key);
        if (i + 1 >= argc) usage("missing value for " + key);
        flags[key.substr(2)] = argv[++i];
    }
    return flags;
}

std::string need(const std::map<std::string, std::string>& flags, const std::string& key) {
    auto it = flags.find(key);
    if (it == flags.end()) usage("missing required flag --" + key);
    return it->second;
}

std::string get(const std::map<std::string, std::string>& flags, const std::string& key,
                const std::string& fallback) {
    auto it = flags.find(key);
    return it == flags.end() ? fallback : it->second;
}

std::vector<SynthTvg> load_data(const std::string& path) {
    if (fs::is_directory(path)) return load_dataset(path);
    // a single TVG file (e.g. an ingested real-world graph): no metadata
    std::vector<SynthTvg> out;
    out.push_back(wrap_real_tvg(read_tvg(path)));
    return out;
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& body) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    body(os);
}

int cmd_generate(const std::map<std::string, std::string>& f) {
    SynthConfig cfg;
    int count = std::stoi(need(f, "count"));
    cfg.n_min = std::stoi(need(f, "nodes-min"));
    cfg.n_max = std::stoi(need(f, "nodes-max"));
    cfg.t_min = std::stoi(need(f, "steps-min"));
    cfg.t_max = std::stoi(need(f, "steps-max"));
    std::uint64_t seed = std::stoull(need(f, "seed"));
    std::string out_dir = need(f, "out");
    cfg.cyclic_fraction = std::stod(get(f, "cyclic-fraction", "0.02"));
    cfg.p_c = std::stod(get(f, "p-c", std::to_string(cfg.p_c)));
    cfg.growth_high = std::stod(get(f, "growth-high", std::to_string(cfg.growth_high)));
    cfg.shrink_low = std::stod(get(f, "shrink-low", std::to_string(cfg.shrink_low)));
    cfg.seed_fraction = std::stod(get(f, "seed-fraction", std::to_string(cfg.seed_fraction)));
    cfg.validate();

    fs::create_directories(out_dir);
    std::vector<DatasetEntry> manifest;
    for (int i = 0; i < count; ++i) {
        SynthTvg s = generate_tvg(cfg, derive_seed(seed, static_cast<std::uint64_t>(i)));
        char name[32];
        std::snprintf(name, sizeof(name), "tvg_%04d", i);
        std::string tvg_file = std::string(name) + ".tvg";
        std::string meta_file = std::string(name) + ".meta";
        write_tvg((fs::path(out_dir) / tvg_file).string(), s.tvg);
        write_meta((fs::path(out_dir) / meta_file).string(), s);
        manifest.push_back({tvg_file, meta_file, s.perturb_prob});
    }
    write_manifest((fs::path(out_dir) / "manifest.txt").string(), manifest);
    std::cout << "generated " << count << " TVGs into " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::map<std::string, std::string>& f) {
    std::vector<SynthTvg> dataset = load_dataset(need(f, "data"));
    TrainConfig cfg;
    if (f.count("config")) cfg = load_train_config(f.at("config"));
    if (f.count("episodes")) cfg.episodes = std::stoi(f.at("episodes"));
    if (f.count("seed")) cfg.seed = std::stoull(f.at("seed"));
    std::string out_dir = need(f, "out");
    fs::create_directories(out_dir);

    StimModel model(hyper_from(cfg), derive_seed(cfg.seed, 0xABCDEF));
    RewardNormalizer norm;
    norm.w_dif = cfg.w_dif;
    norm.w_inf = cfg.w_inf;
    auto hook = [&](int episode, const StimModel& m) {
        char name[48];
        std::snprintf(name, sizeof(name), "checkpoint_%06d.stim", episode + 1);
        save_checkpoint(m, norm, (fs::path(out_dir) / name).string());
    };
    TrainResult res = train_loop(dataset, cfg, model, norm, hook);

    save_checkpoint(model, norm, (fs::path(out_dir) / "model.stim").string());
    write_file((fs::path(out_dir) / "training_curve.csv").string(),
               [&](std::ostream& os) { write_training_curve(os, res.curve); });
    std::cout << "trained " << cfg.episodes << " episodes; " << res.updates
              << " gradient batches; final alpha " << res.final_alpha << "\n";
    return 0;
}

int cmd_evaluate(const std::map<std::string, std::string>& f) {
    AgentKind kind = parse_agent_kind(need(f, "agent"));
    std::vector<SynthTvg> dataset = load_data(need(f, "data"));
    EvalOptions opt;
    opt.sims = std::stoi(get(f, "sims", "2000"));
    opt.instances = std::stoi(get(f, "instances", "1"));
    opt.seed = std::stoull(get(f, "seed", "0"));
    opt.seed_fraction = std::stod(get(f, "seed-fraction", "0.02"));

    StimModel model = StimModel(StimHyper{}, 0);
    const StimModel* model_ptr = nullptr;
    RewardNormalizer norm;
    if (kind == AgentKind::Stim) {
        model = load_checkpoint(need(f, "model"), &norm);
        model_ptr = &model;
    }
    EvalReport rep = evaluate(kind, model_ptr, dataset, opt);
    write_file(need(f, "report"), [&](std::ostream& os) {
        os.precision(17);
        write_eval_report_csv(os, rep);
    });
    std::cout << rep.agent << " mean informed fraction " << rep.mean << " over "
              << rep.instances << " x " << rep.sims << " simulations\n";
    return 0;
}

int cmd_confusion(const std::map<std::string, std::string>& f) {
    std::vector<SynthTvg> dataset = load_dataset(need(f, "data"));
    int sims = std::stoi(need(f, "sims"));
    EvalOptions opt;
    opt.seed = std::stoull(get(f, "seed", "0"));
    opt.seed_fraction = std::stod(get(f, "seed-fraction", "0.02"));
    RewardNormalizer norm;
    StimModel model = load_checkpoint(need(f, "model"), &norm);
    ConfusionMatrix5 cm =
        confusion_vs_oracle(agent_factory(AgentKind::Stim, &model), dataset, sims, opt);
    write_file(need(f, "out"), [&](std::ostream& os) {
        os.precision(17);
        write_confusion_csv(os, cm);
    });
    std::cout << "confusion matrix over " << cm.decisions << " decision points\n";
    return 0;
}

int cmd_ingest(const std::map<std::string, std::string>& f) {
    int bins = std::stoi(get(f, "bins", "60"));
    IngestResult r = ingest_temporal_edge_list(need(f, "input"), bins);
    write_tvg(need(f, "out"), r.tvg);
    std::cout << "ingested " << r.records << " temporal edge records; " << r.tvg.num_nodes
              << " nodes, " << r.tvg.num_steps() << " snapshots\n";
    return 0;
}

int cmd_benchmark(const std::map<std::string, std::string>& f) {
    std::vector<int> sizes;
    std::stringstream ss(need(f, "sizes"));
    for (std::string tok; std::getline(ss, tok, ',');) sizes.push_back(std::stoi(tok));
    std::uint64_t seed = std::stoull(get(f, "seed", "0"));

    StimModel model = StimModel(StimHyper{}, 0);
    if (f.count("model")) {
        RewardNormalizer norm;
        model = load_checkpoint(f.at("model"), &norm);
    }
    auto samples = benchmark_timing(model, sizes, seed);
    LinearFit fit = fit_line(samples);
    write_file(need(f, "out"), [&](std::ostream& os) {
        os.precision(17);
        write_timing_csv(os, samples, fit);
    });
    std::cout << "fit: slope " << fit.slope << " s/edge, intercept " << fit.intercept
              << " s, R^2 " << fit.r2 << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) usage();
    std::string cmd = argv[1];
    auto flags = parse_flags(argc, argv, 2);
    try {
        if (cmd == "generate") return cmd_generate(flags);
        if (cmd == "train") return cmd_train(flags);
        if (cmd == "evaluate") return cmd_evaluate(flags);
        if (cmd == "confusion") return cmd_confusion(flags);
        if (cmd == "ingest") return cmd_ingest(flags);
        if (cmd == "benchmark") return cmd_benchmark(flags);
        usage("unknown subcommand: " + cmd);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
