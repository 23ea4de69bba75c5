// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Uses the same benchmark settings as the CLI defaults
// (gen-data, pretrain, run-protocol with seed 0).
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "garet/garet.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace garet;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
    std::printf("[%s] %-28s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Benchmark

struct Benchmark {
    Dataset ds;
    EncoderParams params;
    EvalConfig eval;
    ProtocolReport report;
    double seconds = 0;
};

const Variant kBenchVariants[] = {Variant::pretrained, Variant::ours, Variant::ours_wo_v, Variant::random};

Benchmark run_benchmark() {
    const auto t0 = std::chrono::steady_clock::now();
    Benchmark b;
    b.ds = generate_synthetic(SyntheticConfig{});
    std::vector<VideoFeatures> train;
    for (auto k : b.ds.indices(Split::train)) train.push_back(b.ds.videos[k]);
    PretrainConfig pc;
    pc.epochs = 30;
    pc.batch_size = 16;
    pc.adam.lr = 1e-3;
    pc.seed = 0;
    b.params = pretrain(train, EncoderParams::init(b.ds.channels, 0), pc);
    b.eval.ks = {5, 10};
    b.eval.trials_per_class = 10;
    b.eval.seed = 0;
    b.eval.finetune.adam.lr = 1e-2;
    b.report = run_protocol(b.ds, b.params, kBenchVariants, b.eval);
    b.seconds = seconds_since(t0);
    return b;
}

std::string records_of(const ProtocolReport& rep) {
    std::ostringstream os;
    write_records(os, rep);
    return os.str();
}

// ---------------------------------------------------------------------------
// Selection oracle

Outcome selection_oracle() {
    std::size_t qa_ok = 0, cs_ok = 0;
    const std::size_t n = 150;
    std::string first_bad;
    for (std::size_t inst = 0; inst < n; ++inst) {
        Rng rng = derive_rng(inst, {0xacce});
        std::uniform_int_distribution<std::size_t> nq(1, 3), persons(3, 6), frames(1, 3), pats(1, 6), nsel(1, 3), ne(1, 3);
        std::uniform_real_distribution<double> lam(0.0, 20.0);
        const std::size_t C = 8;
        const auto params = EncoderParams::init(C, inst);
        std::vector<VideoFeatures> queries;
        std::size_t min_persons = 99;
        for (std::size_t q = nq(rng); q > 0; --q) {
            queries.push_back(testutil::random_video(rng, frames(rng), persons(rng), C));
            min_persons = std::min(min_persons, queries.back().persons);
        }
        SelectionConfig cfg;
        cfg.lambda = lam(rng);
        cfg.patterns = pats(rng);
        cfg.masked_persons = std::uniform_int_distribution<std::size_t>(0, min_persons - 1)(rng);
        cfg.n_select = nsel(rng);
        cfg.extra_factor = ne(rng);
        cfg.use_similarity = rng() % 5 != 0;
        const std::size_t pool_size = queries.size() * cfg.n_select * cfg.extra_factor + rng() % 20;
        std::vector<Gaf> pool;
        for (std::size_t j = 0; j < pool_size; ++j) pool.push_back(encode_gaf(testutil::random_video(rng, 2, 4, C), params));
        Rng a = derive_rng(inst, {1}), b = a;
        const auto got = query_aware_select(queries, pool, params, cfg, a).extracted;
        const auto want = oracle::query_aware(queries, testutil::values(pool), params, cfg, b);
        if (got == want && std::set(got.begin(), got.end()) == std::set(want.begin(), want.end())) ++qa_ok;
        else if (first_bad.empty()) first_bad = "query-aware instance " + std::to_string(inst);

        std::uniform_int_distribution<std::size_t> cand_n(2, 10);
        std::vector<Gaf> cand;
        for (std::size_t j = cand_n(rng); j > 0; --j) cand.push_back(testutil::random_gaf(rng, 6));
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, cand.size())(rng);
        const bool literal = inst % 2 == 1;
        Rng c1 = derive_rng(inst, {2}), c2 = c1;
        const auto cg = coreset_select(cand, k, literal ? CoresetMetric::cosine_similarity : CoresetMetric::cosine_distance, c1);
        const auto cw = oracle::k_center(testutil::values(cand), k, literal, c2);
        if (std::set(cg.begin(), cg.end()) == std::set(cw.begin(), cw.end())) ++cs_ok;
        else if (first_bad.empty()) first_bad = "core-set instance " + std::to_string(inst);
    }
    Outcome o;
    o.pass = qa_ok == n && cs_ok == n;
    o.detail = std::to_string(qa_ok) + "/" + std::to_string(n) + " query-aware, " + std::to_string(cs_ok) + "/" +
               std::to_string(n) + " core-set instances match" + (first_bad.empty() ? "" : "; first mismatch: " + first_bad);
    return o;
}

// ---------------------------------------------------------------------------
// Gradients

Outcome gradient_suite() {
    struct Tally {
        std::size_t configs = 0, clean = 0, checked = 0;
        double worst = 0;
        std::string first;
    };
    Tally paf, ctr, reg;
    auto add = [](Tally& t, const gradcheck::Result& r) {
        ++t.configs;
        t.checked += r.checked;
        t.worst = std::max(t.worst, r.worst);
        if (r.failed == 0 && r.checked > 0) ++t.clean;
        else if (t.first.empty()) t.first = r.first_failure;
    };
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        add(paf, gradcheck::check_paf(gradcheck::make_paf_case(1000 + seed)));
        const auto fc = gradcheck::make_finetune_case(2000 + seed);
        add(ctr, gradcheck::check_finetune(fc, gradcheck::Term::ctr));
        add(reg, gradcheck::check_finetune(fc, gradcheck::Term::reg));
    }
    Outcome o;
    o.pass = paf.clean == 50 && ctr.clean == 50 && reg.clean == 50;
    o.detail = fmt("L_paf %.0f/50 (worst rel %.1e), ", double(paf.clean), paf.worst) +
               fmt("L_ctr %.0f/50 (%.1e), ", double(ctr.clean), ctr.worst) +
               fmt("L_reg %.0f/50 (%.1e); ", double(reg.clean), reg.worst) +
               std::to_string(paf.checked + ctr.checked + reg.checked) + " coordinates compared";
    if (!o.pass) o.detail += "; " + paf.first + ctr.first + reg.first;
    return o;
}

// ---------------------------------------------------------------------------
// Properties, 1000 random cases each

Outcome prop_loss_decomposition() {
    std::size_t ok = 0, epochs = 0;
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
        auto c = gradcheck::make_finetune_case(5000 + i);
        Rng rng = derive_rng(i, {0x10});
        for (auto& l : c.labels) l = rng() % 2 ? Label::positive : Label::negative;
        FinetuneConfig cfg;
        cfg.epochs = 2;
        cfg.margin = c.margin;
        cfg.reg_weight = std::uniform_real_distribution<double>(0.0, 5.0)(rng);
        cfg.use_reg = rng() % 4 != 0;
        cfg.adam.lr = 1e-2;
        LossReport rep;
        finetune(c.batch(), c.params, cfg, &rep);
        bool good = true;
        for (const auto& e : rep.epochs) {
            ++epochs;
            good = good && e.total == e.ctr + cfg.reg_weight * e.reg && (cfg.use_reg || e.reg == 0.0);
        }
        ok += good;
    }
    return {ok == n, std::to_string(ok) + "/" + std::to_string(n) + " cases (" + std::to_string(epochs) +
                         " epochs) satisfy L == L_ctr + reg_weight * L_reg exactly"};
}

Outcome prop_hit_precision() {
    std::size_t ok_equiv = 0, ok_mono = 0;
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = derive_rng(i, {0x11});
        LabelMap labels;
        std::vector<std::string> ids;
        const std::size_t m = 5 + rng() % 30;
        const std::size_t classes = 2 + rng() % 6;
        for (std::size_t j = 0; j < m; ++j) {
            ids.push_back("v" + std::to_string(j));
            labels[ids.back()] = "c" + std::to_string(rng() % classes);
        }
        std::shuffle(ids.begin(), ids.end(), rng);
        const std::string target = "c0";
        bool equiv = true, mono = true;
        int prev_hit = 0;
        for (std::size_t k = 1; k <= m; ++k) {
            const std::span<const std::string> top(ids.data(), k);
            const double p = precision_at_k(top, target, labels);
            const int h = hit_at_k(top, target, labels);
            equiv = equiv && (h == 1) == (p > 0);
            mono = mono && h >= prev_hit;
            prev_hit = h;
        }
        ok_equiv += equiv;
        ok_mono += mono;
    }
    return {ok_equiv == n && ok_mono == n,
            "hit<=>precision>0 in " + std::to_string(ok_equiv) + "/" + std::to_string(n) + ", hit monotone in K in " +
                std::to_string(ok_mono) + "/" + std::to_string(n) + " rankings (all K)"};
}

Outcome prop_variance() {
    std::size_t ok_nonneg = 0, ok_single = 0;
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = derive_rng(i, {0x12});
        const std::size_t C = 4 * (1 + rng() % 2);
        const auto params = EncoderParams::init(C, i);
        const auto q = testutil::random_video(rng, 1 + rng() % 3, 2 + rng() % 5, C);
        std::vector<Gaf> pool;
        for (int j = 0; j < 5; ++j) pool.push_back(testutil::random_gaf(rng, 2 * C));
        SelectionConfig cfg;
        cfg.masked_persons = rng() % q.persons;
        cfg.patterns = 2 + rng() % 8;
        Rng r1 = rng;
        const auto many = local_dissimilarity(q, pool, params, cfg, r1);
        ok_nonneg += std::all_of(many.v.begin(), many.v.end(), [](double v) { return v >= 0.0; });
        cfg.patterns = 1;
        const auto one = local_dissimilarity(q, pool, params, cfg, rng);
        ok_single += std::all_of(one.v.begin(), one.v.end(), [](double v) { return v == 0.0; });
    }
    return {ok_nonneg == n && ok_single == n, "V >= 0 in " + std::to_string(ok_nonneg) + "/" + std::to_string(n) +
                                                  ", V == 0 at P=1 in " + std::to_string(ok_single) + "/" + std::to_string(n)};
}

Outcome prop_permutation() {
    std::size_t ok = 0;
    const std::size_t n = 1000;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = derive_rng(i, {0x13});
        const std::size_t C = 4 * (1 + rng() % 3);
        const auto params = EncoderParams::init(C, i % 17);
        const auto v = testutil::random_video(rng, 1 + rng() % 4, 1 + rng() % 8, C);
        std::vector<std::size_t> perm(v.persons);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        VideoFeatures w = v;
        for (std::size_t t = 0; t < v.frames; ++t)
            for (std::size_t p = 0; p < v.persons; ++p) {
                w.pos(t, p) = v.pos(t, perm[p]);
                auto src = v.app(t, perm[p]);
                std::copy(src.begin(), src.end(), w.app(t, p).begin());
            }
        ok += encode_gaf(v, params).values == encode_gaf(w, params).values;
    }
    return {ok == n, std::to_string(ok) + "/" + std::to_string(n) + " person permutations give identical GAFs"};
}

// ---------------------------------------------------------------------------
// Sweep

Outcome sweep_structure(const Benchmark& b) {
    EvalConfig cfg = b.eval;
    cfg.trials_per_class = 2;
    const std::vector<std::size_t> nv{1, 2, 3, 4, 5, 6}, ne{2, 3, 4, 5};
    const auto pts = run_sweep(b.ds, b.params, cfg, nv, ne);
    std::ostringstream rec, table;
    write_sweep_records(rec, pts);
    write_sweep_table(table, pts);
    std::istringstream is(rec.str());
    std::string line, problem;
    std::size_t rows = 0;
    std::set<std::pair<std::string, std::size_t>> seen;
    while (std::getline(is, line)) {
        ++rows;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            problem = "unparseable record";
            break;
        }
        bool ok = j.contains("sweep") && j["sweep"].contains("param") && j["sweep"].contains("value") &&
                  j.contains("metrics") && j["metrics"].size() == cfg.ks.size() && j.contains("variant") && j.contains("class");
        for (const auto& m : ok ? j["metrics"] : nlohmann::json::array())
            for (const char* key : {"k", "precision_original", "hit_original", "precision_others", "hit_others"})
                ok = ok && m.contains(key) && m[key].is_number();
        if (!ok) {
            problem = "record " + std::to_string(rows) + " misses required fields";
            break;
        }
        seen.insert({j["sweep"]["param"].get<std::string>(), j["sweep"]["value"].get<std::size_t>()});
    }
    const std::string table_text = table.str();
    const std::size_t table_rows = std::count(table_text.begin(), table_text.end(), '\n');
    const bool structure = pts.size() == 10 && seen.size() == 10 && table_rows == 11 &&
                           rows == 10 * b.ds.class_catalog.size() * cfg.trials_per_class;
    std::cout << table_text;
    return {problem.empty() && structure, std::to_string(pts.size()) + " sweep points (N_V 1..6, N_E 2..5), " +
                                              std::to_string(rows) + " schema-valid records, " +
                                              std::to_string(table_rows - 1) + " table rows" +
                                              (problem.empty() ? "" : "; " + problem)};
}

}  // namespace

int main() {
    const auto t_all = std::chrono::steady_clock::now();

    const Benchmark b = run_benchmark();
    std::cout << "benchmark (800 synthetic videos, 10 trials x 8 classes, seed 0):\n";
    write_table(std::cout, b.report, false);
    const double base = b.report.overall_metric(Variant::pretrained, 10);
    const double ours = b.report.overall_metric(Variant::ours, 10);
    const double wo_v = b.report.overall_metric(Variant::ours_wo_v, 10);
    const double rnd = b.report.overall_metric(Variant::random, 10);

    report("headline", {base >= 0.4 && base <= 0.7 && ours - base >= 0.05 && b.seconds < 600,
                        fmt("P@10 pre-trained %.3f (band [0.4, 0.7]), ours %.3f, gain %+.3f (need >= +0.05); ", base, ours,
                            ours - base) +
                            fmt("pipeline %.1f s (limit 600 s)", b.seconds)});
    report("ablation-ordering", {ours >= wo_v - 0.01 && ours - rnd >= 0.03,
                                 fmt("ours %.3f vs w/o V %.3f (tolerance 0.01); ours - random %+.3f (need >= +0.03)", ours,
                                     wo_v, ours - rnd)});

    report("selection-oracle", selection_oracle());
    report("gradient-suite", gradient_suite());
    report("prop-loss-decomposition", prop_loss_decomposition());
    report("prop-hit-precision", prop_hit_precision());
    report("prop-variance", prop_variance());
    report("prop-permutation-invariance", prop_permutation());

    {
        EvalConfig again = b.eval;
        again.workers = 4;  // scheduling must not matter either
        const auto rep2 = run_protocol(b.ds, b.params, kBenchVariants, again);
        const std::string r1 = records_of(b.report), r2 = records_of(rep2);
        report("protocol-determinism", {r1 == r2, std::to_string(b.report.trials.size()) + " trial records, " +
                                                      std::to_string(r1.size()) + " bytes, " +
                                                      (r1 == r2 ? "byte-identical" : "DIFFERENT") + " across reruns"});
    }
    report("sweep-harness", sweep_structure(b));

    std::printf("%d criteria failed; total %.1f s\n", failures, seconds_since(t_all));
    return failures == 0 ? 0 : 1;
}
