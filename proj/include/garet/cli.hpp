#ifndef GARET_CLI_HPP
#define GARET_CLI_HPP

// Command implementations behind tools/garet. Kept in a header so tests can
// drive them in-process through run_cli().

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "garet/garet.hpp"
#include "garet/service.hpp"

namespace garet::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

/// Everything a subcommand can be configured with. Defaults here are the
/// desk-scale benchmark settings, so a plain gen-data / pretrain /
/// run-protocol pipeline reproduces the acceptance numbers.
struct CliConfig {
    std::string subcommand;
    std::string config_file;
    std::uint64_t seed = 0;
    std::string out;
    int verbosity = 0;

    // inputs
    std::string dataset;
    std::string params;

    // gen-data
    SyntheticConfig synthetic{};

    // pretrain
    std::size_t pretrain_epochs = 30;
    std::size_t batch_size = 16;
    double pretrain_lr = 1e-3;
    std::size_t hidden = 0;

    // run-protocol / sweep / select
    std::string variants = "pretrained,ours,random,coreset,kmeans,ours-wo-s,ours-wo-v";
    std::size_t trials = 10;
    std::vector<std::size_t> ks{5, 10};
    std::size_t workers = 1;
    std::size_t n_query = 3;
    bool no_others = false;
    SelectionConfig selection{};
    std::string coreset_metric = "cosine-distance";
    std::string ranking = "desc";
    FinetuneConfig finetune = [] {
        FinetuneConfig f;
        f.adam.lr = 1e-2;
        return f;
    }();
    bool no_reg = false;
    std::vector<std::size_t> nv_values{1, 2, 3, 4, 5, 6};
    std::vector<std::size_t> ne_values{2, 3, 4, 5};
    std::vector<std::string> queries;
    std::string split = "all";

    // serve
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string data_dir = "garet-data";
};

struct Io {
    std::ostream& out;
    std::ostream& err;
};

inline std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Sidecar next to an artifact; the only place a timestamp is written.
inline void write_sidecar(const fs::path& artifact, const CliConfig& cfg, const std::string& config_hash) {
    nlohmann::json meta = {{"artifact", artifact.filename().string()},
                           {"command", cfg.subcommand},
                           {"tool_version", std::string(kToolVersion)},
                           {"seed", cfg.seed},
                           {"config_hash", config_hash},
                           {"created_utc", utc_now()}};
    std::ofstream os(artifact.string() + ".meta.json");
    os << meta.dump(2) << '\n';
}

inline void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

inline std::ofstream open_out(const fs::path& p) {
    ensure_parent(p);
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + p.string() + "' for writing");
    return os;
}

inline nlohmann::json provenance_json(const CliConfig& cfg, const std::string& hash) {
    return {{"tool_version", std::string(kToolVersion)}, {"seed", cfg.seed}, {"config_hash", hash}};
}

inline Dataset require_dataset(const CliConfig& cfg) {
    if (cfg.dataset.empty()) throw ConfigError("--dataset is required");
    return load_dataset(cfg.dataset);
}

inline EncoderParams require_params(const CliConfig& cfg) {
    if (cfg.params.empty()) throw ConfigError("--params is required");
    return load_params(cfg.params);
}

inline std::string dataset_tag(const Dataset& ds) {
    return ds.provenance ? ds.provenance->config_hash : hex64(fnv1a64(ds.id));
}

inline SelectionConfig selection_from(const CliConfig& cfg) {
    SelectionConfig s = cfg.selection;
    if (cfg.coreset_metric == "cosine-distance") s.coreset_metric = CoresetMetric::cosine_distance;
    else if (cfg.coreset_metric == "cosine-similarity") s.coreset_metric = CoresetMetric::cosine_similarity;
    else throw ConfigError("--coreset-metric must be cosine-distance or cosine-similarity");
    if (cfg.ranking == "desc") s.ranking = Ranking::desc;
    else if (cfg.ranking == "asc") s.ranking = Ranking::asc;
    else throw ConfigError("--ranking must be desc or asc");
    s.seed = cfg.seed;
    s.validate();
    return s;
}

inline EvalConfig eval_from(const CliConfig& cfg) {
    EvalConfig e;
    e.ks = cfg.ks;
    e.trials_per_class = cfg.trials;
    e.n_query = cfg.n_query;
    e.evaluate_others = !cfg.no_others;
    e.seed = cfg.seed;
    e.workers = cfg.workers;
    e.selection = selection_from(cfg);
    e.finetune = cfg.finetune;
    e.finetune.use_reg = !cfg.no_reg;
    e.validate();
    return e;
}

inline std::vector<Variant> variants_from(const std::string& list) {
    std::vector<Variant> out;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(parse_variant(tok));
    if (out.empty()) throw ConfigError("--variants: at least one variant is required");
    return out;
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const CliConfig& cfg, Io io) {
    SyntheticConfig sc = cfg.synthetic;
    sc.seed = cfg.seed;
    sc.validate();
    const fs::path out = cfg.out.empty() ? "dataset.jsonl" : cfg.out;
    Dataset ds = generate_synthetic(sc);
    {
        auto os = open_out(out);
        save_dataset(ds, os);
    }
    write_sidecar(out, cfg, ds.provenance->config_hash);
    io.out << "wrote " << ds.videos.size() << " videos (" << ds.class_catalog.size() << " classes) to " << out.string()
           << '\n';
    return kOk;
}

inline int cmd_pretrain(const CliConfig& cfg, Io io) {
    const Dataset ds = require_dataset(cfg);
    PretrainConfig pc;
    pc.epochs = cfg.pretrain_epochs;
    pc.batch_size = cfg.batch_size;
    pc.adam.lr = cfg.pretrain_lr;
    pc.seed = cfg.seed;
    pc.validate();
    std::ostringstream canon;
    canon.precision(17);
    canon << "pretrain;epochs=" << pc.epochs << ";batch=" << pc.batch_size << ";lr=" << pc.adam.lr
          << ";mask_divisor=" << pc.mask_divisor << ";hidden=" << cfg.hidden << ";seed=" << cfg.seed
          << ";dataset=" << dataset_tag(ds);
    const std::string hash = hex64(fnv1a64(canon.str()));

    std::vector<VideoFeatures> train;
    for (auto k : ds.indices(Split::train)) train.push_back(ds.videos[k]);
    if (train.empty()) throw PreconditionError("dataset '" + cfg.dataset + "' has no train videos");
    PretrainHistory hist;
    EncoderParams params = pretrain(train, EncoderParams::init(ds.channels, cfg.seed, cfg.hidden), pc, &hist);

    const fs::path out = cfg.out.empty() ? "params.json" : cfg.out;
    {
        auto os = open_out(out);
        save_params(params, os, Provenance{std::string(kToolVersion), cfg.seed, hash});
    }
    write_sidecar(out, cfg, hash);
    io.out << "L_paf " << hist.initial_loss << " -> " << hist.final_loss << " over " << pc.epochs << " epochs; wrote "
           << out.string() << '\n';
    if (cfg.verbosity > 0)
        for (std::size_t e = 0; e < hist.epoch_loss.size(); ++e)
            io.err << "epoch " << e + 1 << " loss " << hist.epoch_loss[e] << '\n';
    return kOk;
}

inline int cmd_run_protocol(const CliConfig& cfg, Io io) {
    const Dataset ds = require_dataset(cfg);
    const EncoderParams params = require_params(cfg);
    const EvalConfig ec = eval_from(cfg);
    const auto variants = variants_from(cfg.variants);
    for (const auto& w : ec.warnings()) io.err << "warning: " << w << '\n';
    const std::string hash = hex64(fnv1a64(ec.canonical() + ";variants=" + cfg.variants + ";dataset=" + dataset_tag(ds)));

    const auto t0 = std::chrono::steady_clock::now();
    const ProtocolReport rep = run_protocol(ds, params, variants, ec);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const fs::path dir = cfg.out.empty() ? "results" : cfg.out;
    fs::create_directories(dir);
    {
        auto os = open_out(dir / "records.jsonl");
        write_records(os, rep, provenance_json(cfg, hash));
    }
    {
        auto os = open_out(dir / "table.txt");
        os << "# garet " << kToolVersion << " seed=" << cfg.seed << " config_hash=" << hash << '\n';
        write_table(os, rep, true);
    }
    write_sidecar(dir / "records.jsonl", cfg, hash);
    write_sidecar(dir / "table.txt", cfg, hash);
    write_table(io.out, rep, cfg.verbosity > 0);
    io.err << rep.trials.size() << " trials in " << secs << " s; records in " << (dir / "records.jsonl").string() << '\n';
    return kOk;
}

inline int cmd_sweep(const CliConfig& cfg, Io io) {
    const Dataset ds = require_dataset(cfg);
    const EncoderParams params = require_params(cfg);
    const EvalConfig ec = eval_from(cfg);
    std::ostringstream canon;
    canon << ec.canonical() << ";nv=";
    for (auto v : cfg.nv_values) canon << v << ' ';
    canon << ";ne=";
    for (auto v : cfg.ne_values) canon << v << ' ';
    canon << ";dataset=" << dataset_tag(ds);
    const std::string hash = hex64(fnv1a64(canon.str()));

    const auto points = run_sweep(ds, params, ec, cfg.nv_values, cfg.ne_values);
    const fs::path dir = cfg.out.empty() ? "sweep" : cfg.out;
    fs::create_directories(dir);
    {
        auto os = open_out(dir / "sweep_records.jsonl");
        std::ostringstream tmp;
        write_sweep_records(tmp, points);
        // stamp provenance onto every record
        std::istringstream lines(tmp.str());
        std::string line;
        const auto prov = provenance_json(cfg, hash);
        while (std::getline(lines, line)) {
            auto j = nlohmann::json::parse(line);
            for (auto& [k, v] : prov.items()) j[k] = v;
            os << j.dump() << '\n';
        }
    }
    {
        auto os = open_out(dir / "sweep_table.txt");
        os << "# garet " << kToolVersion << " seed=" << cfg.seed << " config_hash=" << hash << '\n';
        write_sweep_table(os, points);
    }
    write_sidecar(dir / "sweep_records.jsonl", cfg, hash);
    write_sidecar(dir / "sweep_table.txt", cfg, hash);
    write_sweep_table(io.out, points);
    return kOk;
}

inline int cmd_export_embeddings(const CliConfig& cfg, Io io) {
    const Dataset ds = require_dataset(cfg);
    const EncoderParams params = require_params(cfg);
    if (cfg.split != "all" && cfg.split != "train" && cfg.split != "test")
        throw ConfigError("--split must be all, train or test");
    std::optional<Provenance> pprov;
    (void)load_params(cfg.params, &pprov);
    const std::string hash = hex64(fnv1a64("export;split=" + cfg.split + ";dataset=" + dataset_tag(ds) +
                                           ";params=" + (pprov ? pprov->config_hash : std::string("none"))));
    const fs::path out = cfg.out.empty() ? "embeddings.jsonl" : cfg.out;
    auto os = open_out(out);
    std::size_t rows = 0;
    nlohmann::json header = {{"format", "garet-embeddings"}, {"dim", 2 * params.channels}, {"split", cfg.split}};
    const auto prov = provenance_json(cfg, hash);
    for (auto& [k, v] : prov.items()) header[k] = v;
    os << header.dump() << '\n';
    for (std::size_t k = 0; k < ds.videos.size(); ++k) {
        if (cfg.split != "all" && to_string(ds.splits[k]) != cfg.split) continue;
        const auto& v = ds.videos[k];
        const Gaf g = encode_gaf(v, params);
        nlohmann::json row = {{"id", v.id},
                              {"split", to_string(ds.splits[k])},
                              {"class", v.class_label ? nlohmann::json(*v.class_label) : nlohmann::json(nullptr)},
                              {"gaf", g.values}};
        os << row.dump() << '\n';
        ++rows;
    }
    os.close();
    write_sidecar(out, cfg, hash);
    io.out << "wrote " << rows << " embeddings to " << out.string() << '\n';
    return kOk;
}

inline int cmd_select(const CliConfig& cfg, Io io) {
    const Dataset ds = require_dataset(cfg);
    const EncoderParams params = require_params(cfg);
    const SelectionConfig sc = selection_from(cfg);
    if (cfg.queries.empty()) throw ConfigError("--queries: at least one query video id is required");
    std::vector<VideoFeatures> queries;
    for (const auto& q : cfg.queries) queries.push_back(ds.at(q));
    std::vector<std::string> pool_ids;
    std::vector<Gaf> pool;
    for (auto k : ds.indices(Split::train)) {
        const auto& v = ds.videos[k];
        if (std::find(cfg.queries.begin(), cfg.queries.end(), v.id) != cfg.queries.end()) continue;
        pool_ids.push_back(v.id);
        pool.push_back(encode_gaf(v, params));
    }
    const SelectionResult sel = select_for_annotation(queries, pool, params, sc);
    std::string canon = nlohmann::json(to_json(sc)).dump() + ";queries=";
    for (const auto& q : cfg.queries) canon += q + ' ';
    const std::string hash = hex64(fnv1a64(canon + ";dataset=" + dataset_tag(ds)));
    const fs::path out = cfg.out.empty() ? "selection.csv" : cfg.out;
    {
        auto os = open_out(out);
        os << "# garet " << kToolVersion << " seed=" << cfg.seed << " config_hash=" << hash << '\n';
        write_selection_report(os, cfg.queries, pool_ids, sel, sc.ranking);
    }
    write_sidecar(out, cfg, hash);
    io.out << "selected:";
    for (auto j : sel.selected) io.out << ' ' << pool_ids[j];
    io.out << "\nreport in " << out.string() << '\n';
    return kOk;
}

inline int cmd_serve(const CliConfig& cfg, Io io) {
    EncoderParams params = require_params(cfg);
    Service service(cfg.data_dir, std::move(params));
    httplib::Server srv;
    // httplib defaults to SO_REUSEPORT, which lets a second server share a
    // busy port silently.
    srv.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    service.bind(srv);
    if (!srv.bind_to_port(cfg.host, cfg.port)) {
        io.err << "error: cannot bind " << cfg.host << ':' << cfg.port << " (port in use or not permitted)\n";
        return kRuntime;
    }
    io.err << "serving on http://" << cfg.host << ':' << cfg.port << " (data in " << cfg.data_dir << ")\n";
    srv.listen_after_bind();
    return kOk;
}

// ---------------------------------------------------------------------------

inline void add_selection_flags(CLI::App* sc, CliConfig& c) {
    sc->add_option("--lambda", c.selection.lambda, "weight of local dissimilarity in I = S + lambda*V")->capture_default_str();
    sc->add_option("--patterns", c.selection.patterns, "masking patterns per query (P)")->capture_default_str();
    sc->add_option("--nv", c.selection.masked_persons, "persons masked per pattern (N_V)")->capture_default_str();
    sc->add_option("--ne", c.selection.extra_factor, "extra-selection multiplier (N_E)")->capture_default_str();
    sc->add_option("--n-select", c.selection.n_select, "annotation budget (N_select)")->capture_default_str();
    sc->add_option("--coreset-metric", c.coreset_metric, "cosine-distance or cosine-similarity")->capture_default_str();
    sc->add_option("--ranking", c.ranking, "desc (highest I first) or asc")->capture_default_str();
}

inline void add_eval_flags(CLI::App* sc, CliConfig& c) {
    sc->add_option("--dataset", c.dataset, "dataset file")->required();
    sc->add_option("--params", c.params, "pre-trained params file")->required();
    sc->add_option("--trials", c.trials, "trials per class")->capture_default_str();
    sc->add_option("--k", c.ks, "retrieval depths")->delimiter(',')->capture_default_str();
    sc->add_option("--workers", c.workers, "parallel trial workers")->capture_default_str();
    sc->add_option("--n-query", c.n_query, "queries per trial")->capture_default_str();
    sc->add_flag("--no-others", c.no_others, "skip the other-test-videos evaluation");
    sc->add_option("--margin", c.finetune.margin, "triplet margin")->capture_default_str();
    sc->add_option("--finetune-lr", c.finetune.adam.lr, "fine-tune learning rate")->capture_default_str();
    sc->add_option("--finetune-epochs", c.finetune.epochs, "fine-tune epochs")->capture_default_str();
    sc->add_option("--reg-weight", c.finetune.reg_weight, "weight of L_reg")->capture_default_str();
    sc->add_option("--patience", c.finetune.early_stop_patience, "epochs of L_ctr = 0 before stopping")->capture_default_str();
    sc->add_flag("--no-reg", c.no_reg, "drop L_reg from the objective");
    add_selection_flags(sc, c);
}

/// Parses argv and runs the chosen subcommand. Returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CliConfig c;
    CLI::App app{"garet: query-driven group activity retrieval with human-in-the-loop fine-tuning", "garet"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.set_config("--config", "", "TOML/INI config file; flags override it");
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--seed", c.seed, "random seed echoed into every artifact")->capture_default_str();
    app.add_option("--out", c.out, "output file or directory");
    app.add_flag("-v,--verbose", c.verbosity, "more output (repeatable)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    gen->add_option("--classes", c.synthetic.class_count)->capture_default_str();
    gen->add_option("--per-class", c.synthetic.videos_per_class)->capture_default_str();
    gen->add_option("--train-fraction", c.synthetic.train_fraction)->capture_default_str();
    gen->add_option("--persons", c.synthetic.persons)->capture_default_str();
    gen->add_option("--frames", c.synthetic.frames)->capture_default_str();
    gen->add_option("--channels", c.synthetic.channels)->capture_default_str();
    gen->add_option("--noise", c.synthetic.noise_scale, "jitter scale; 0 gives identical videos per class")->capture_default_str();

    auto* pre = app.add_subcommand("pretrain", "self-supervised pre-training on the train split");
    pre->add_option("--dataset", c.dataset, "dataset file")->required();
    pre->add_option("--epochs", c.pretrain_epochs)->capture_default_str();
    pre->add_option("--batch-size", c.batch_size)->capture_default_str();
    pre->add_option("--pretrain-lr", c.pretrain_lr)->capture_default_str();
    pre->add_option("--hidden", c.hidden, "appearance head width (0 = 2C)")->capture_default_str();

    auto* proto = app.add_subcommand("run-protocol", "repeated-trial retrieval protocol over variants");
    add_eval_flags(proto, c);
    proto->add_option("--variants", c.variants, "comma-separated variants")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "N_V and N_E sweeps of the full method");
    add_eval_flags(sweep, c);
    sweep->add_option("--nv-values", c.nv_values)->delimiter(',')->capture_default_str();
    sweep->add_option("--ne-values", c.ne_values)->delimiter(',')->capture_default_str();

    auto* exp = app.add_subcommand("export-embeddings", "dump GAFs as JSON lines for external plotting");
    exp->add_option("--dataset", c.dataset, "dataset file")->required();
    exp->add_option("--params", c.params, "params file")->required();
    exp->add_option("--split", c.split, "all, train or test")->capture_default_str();

    auto* sel = app.add_subcommand("select", "run selection for given queries and write the score report");
    sel->add_option("--dataset", c.dataset, "dataset file")->required();
    sel->add_option("--params", c.params, "params file")->required();
    sel->add_option("--queries", c.queries, "query video ids")->delimiter(',')->required();
    add_selection_flags(sel, c);

    auto* serve = app.add_subcommand("serve", "run the HTTP session service");
    serve->add_option("--params", c.params, "pre-trained params file")->required();
    serve->add_option("--host", c.host)->capture_default_str();
    serve->add_option("--port", c.port)->capture_default_str();
    serve->add_option("--data-dir", c.data_dir, "session store directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n(run 'garet --help')\n";
        return kUsage;
    }

    if (auto* o = app.get_config_ptr(); o && o->count() > 0) c.config_file = o->as<std::string>();
    Io io{out, err};
    try {
        for (auto* sub : app.get_subcommands()) {
            c.subcommand = sub->get_name();
            if (sub == gen) return cmd_gen_data(c, io);
            if (sub == pre) return cmd_pretrain(c, io);
            if (sub == proto) return cmd_run_protocol(c, io);
            if (sub == sweep) return cmd_sweep(c, io);
            if (sub == exp) return cmd_export_embeddings(c, io);
            if (sub == sel) return cmd_select(c, io);
            if (sub == serve) return cmd_serve(c, io);
        }
    } catch (const ConfigError& e) {
        err << "invalid configuration: " << e.what() << '\n';
        return kValidation;
    } catch (const ParseError& e) {
        err << "invalid input: " << e.what() << '\n';
        return kValidation;
    } catch (const NotFoundError& e) {
        err << "not found: " << e.what() << '\n';
        return kValidation;
    } catch (const ShapeError& e) {
        err << "invalid input: " << e.what() << '\n';
        return kValidation;
    } catch (const PreconditionError& e) {
        err << "invalid input: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<const char*> argv{"garet"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace garet::cli

#endif  // GARET_CLI_HPP
