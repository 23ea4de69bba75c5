#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "garet/garet.hpp"
#include "oracles.hpp"

using namespace garet;

namespace {

Dataset small_dataset(double noise = 0.9, std::uint64_t seed = 0) {
    SyntheticConfig c;
    c.class_count = 4;
    c.videos_per_class = 20;
    c.persons = 5;
    c.frames = 3;
    c.channels = 8;
    c.noise_scale = noise;
    c.seed = seed;
    return generate_synthetic(c);
}

EvalConfig small_eval() {
    EvalConfig e;
    e.ks = {5, 10};
    e.trials_per_class = 2;
    e.n_query = 2;
    e.finetune.epochs = 5;
    e.finetune.adam.lr = 1e-2;
    return e;
}

std::string records(const ProtocolReport& rep) {
    std::ostringstream os;
    write_records(os, rep);
    return os.str();
}

}  // namespace

TEST(RetrieveTopK, HandExampleAndTies) {
    const std::vector<Gaf> pool{{{1, 0}}, {{0, 1}}, {{1, 1}}};
    const std::vector<std::string> ids{"x", "y", "z"};
    const auto hits = retrieve_topk(Gaf{{1, 0}}, pool, ids, 3);
    ASSERT_EQ(hits.size(), 3u);
    EXPECT_EQ(hits[0].index, 0u);
    EXPECT_EQ(hits[1].index, 2u);
    EXPECT_EQ(hits[2].index, 1u);
    EXPECT_NEAR(hits[1].score, 1 / std::sqrt(2.0), 1e-15);

    const std::vector<Gaf> dup{{{1, 0}}, {{2, 0}}};
    const std::vector<std::string> dup_ids{"b", "a"};
    EXPECT_EQ(retrieve_topk(Gaf{{1, 0}}, dup, dup_ids, 1)[0].index, 1u);
    EXPECT_TRUE(retrieve_topk(Gaf{{1, 0}}, dup, dup_ids, 0).empty());
    EXPECT_THROW(retrieve_topk(Gaf{{1, 0}}, dup, dup_ids, 3), PreconditionError);
}

TEST(RetrieveTopK, MatchesFullSort) {
    Rng rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<Gaf> pool;
        std::vector<std::string> ids;
        for (int j = 0; j < 40; ++j) {
            pool.push_back(testutil::random_gaf(rng, 6));
            ids.push_back("v" + std::to_string(1000 - j));
        }
        const Gaf q = testutil::random_gaf(rng, 6);
        std::vector<std::pair<double, std::string>> all;
        for (int j = 0; j < 40; ++j) all.push_back({oracle::cosine(q.values, pool[j].values), ids[j]});
        std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
        const auto hits = retrieve_topk(q, pool, ids, 10);
        for (std::size_t r = 0; r < 10; ++r) EXPECT_EQ(ids[hits[r].index], all[r].second);
    }
}

TEST(Metrics, PrecisionAndHit) {
    const LabelMap labels{{"a", "x"}, {"b", "y"}, {"c", "x"}, {"d", "z"}};
    const std::vector<std::string> r{"a", "b", "c", "d"};
    EXPECT_EQ(precision_at_k(r, "x", labels), 0.5);
    EXPECT_EQ(hit_at_k(r, "x", labels), 1);
    EXPECT_EQ(precision_at_k(r, "w", labels), 0.0);
    EXPECT_EQ(hit_at_k(r, "w", labels), 0);
}

TEST(Metrics, HitIsPositivePrecision) {
    Rng rng(2);
    std::uniform_int_distribution<int> cls(0, 3);
    LabelMap labels;
    std::vector<std::string> ids;
    for (int i = 0; i < 30; ++i) {
        ids.push_back("v" + std::to_string(i));
        labels[ids.back()] = "c" + std::to_string(cls(rng));
    }
    for (int rep = 0; rep < 200; ++rep) {
        std::shuffle(ids.begin(), ids.end(), rng);
        const std::vector<std::string> top(ids.begin(), ids.begin() + 5);
        const double p = precision_at_k(top, "c0", labels);
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
        EXPECT_EQ(hit_at_k(top, "c0", labels), p > 0 ? 1 : 0);
        EXPECT_EQ(p * 5, double(count_matches(top, "c0", labels)));
    }
}

TEST(RunTrial, NoiselessDataRetrievesPerfectly) {
    const Dataset ds = small_dataset(0.0);
    ProtocolContext ctx(ds, EncoderParams::init(8, 0));
    const auto t = run_trial(ctx, ds.class_catalog[0].name, Variant::pretrained, small_eval(), 7);
    for (const auto& m : t.metrics) {
        EXPECT_EQ(m.precision_original, 1.0);
        EXPECT_EQ(m.precision_others, 1.0);
        EXPECT_EQ(m.hit_original, 1.0);
    }
    EXPECT_EQ(t.others_count, 3u);
}

TEST(RunTrial, DeterministicAndSharedQueries) {
    const Dataset ds = small_dataset();
    ProtocolContext ctx(ds, EncoderParams::init(8, 0));
    const auto cfg = small_eval();
    const auto a = run_trial(ctx, ds.class_catalog[1].name, Variant::ours, cfg, 11);
    const auto b = run_trial(ctx, ds.class_catalog[1].name, Variant::ours, cfg, 11);
    EXPECT_EQ(trial_record(a), trial_record(b));
    const auto r = run_trial(ctx, ds.class_catalog[1].name, Variant::random, cfg, 11);
    EXPECT_EQ(a.query_ids, r.query_ids);
    EXPECT_EQ(a.selected_ids.size(), cfg.selection.n_select);
    for (const auto& q : a.query_ids) EXPECT_EQ(ds.at(q).class_label, ds.class_catalog[1].name);
}

TEST(RunTrial, ZeroEpochsMatchesThePretrainedBaseline) {
    const Dataset ds = small_dataset();
    ProtocolContext ctx(ds, EncoderParams::init(8, 0));
    auto cfg = small_eval();
    cfg.finetune.epochs = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto base = run_trial(ctx, ds.class_catalog[2].name, Variant::pretrained, cfg, seed);
        const auto ours = run_trial(ctx, ds.class_catalog[2].name, Variant::ours, cfg, seed);
        EXPECT_EQ(base.metrics, ours.metrics);
    }
}

TEST(RunTrial, SkipsClassesWithTooFewTestVideos) {
    const Dataset ds = small_dataset();
    ProtocolContext ctx(ds, EncoderParams::init(8, 0));
    auto cfg = small_eval();
    cfg.n_query = 6;
    const auto t = run_trial(ctx, ds.class_catalog[0].name, Variant::ours, cfg, 1);
    EXPECT_TRUE(t.skipped);
    EXPECT_NE(t.skip_reason.find("N_query=6"), std::string::npos);
}

TEST(RunTrial, EveryVariantSelectsTheBudget) {
    const Dataset ds = small_dataset();
    ProtocolContext ctx(ds, EncoderParams::init(8, 0));
    const auto cfg = small_eval();
    for (Variant v : {Variant::ours, Variant::random, Variant::coreset, Variant::kmeans, Variant::ours_wo_s, Variant::ours_wo_v}) {
        const auto t = run_trial(ctx, ds.class_catalog[0].name, v, cfg, 3);
        std::set<std::string> uniq(t.selected_ids.begin(), t.selected_ids.end());
        EXPECT_EQ(uniq.size(), cfg.selection.n_select) << to_string(v);
        for (const auto& id : t.selected_ids) EXPECT_EQ(ds.splits[*ds.find(id)], Split::train);
    }
}

TEST(Protocol, AggregatesAreCatalogWeightedMeansOfRecords) {
    SyntheticConfig c;
    c.class_count = 3;
    c.videos_per_class = 20;
    c.persons = 5;
    c.frames = 3;
    c.channels = 8;
    Dataset ds = generate_synthetic(c);
    // uneven class sizes: drop some test videos of the first class
    Dataset uneven;
    uneven.id = ds.id;
    uneven.channels = ds.channels;
    for (std::size_t k = 0; k < ds.videos.size(); ++k) {
        if (ds.videos[k].class_label == ds.class_catalog[0].name && ds.splits[k] == Split::test && ds.videos[k].id.back() > '7')
            continue;
        uneven.videos.push_back(ds.videos[k]);
        uneven.splits.push_back(ds.splits[k]);
    }
    uneven.finalize();
    ASSERT_NE(uneven.class_catalog[0].count, uneven.class_catalog[1].count);

    const Variant vs[] = {Variant::pretrained, Variant::random};
    const auto rep = run_protocol(uneven, EncoderParams::init(8, 0), vs, small_eval());
    for (Variant v : vs) {
        for (std::size_t ki = 0; ki < 2; ++ki) {
            std::map<std::string, std::pair<double, int>> per;
            for (const auto& t : rep.trials)
                if (t.variant == v && !t.skipped) {
                    per[t.target_class].first += t.metrics[ki].precision_others;
                    per[t.target_class].second += 1;
                }
            double num = 0, den = 0;
            for (const auto& e : uneven.class_catalog) {
                num += double(e.count) * per[e.name].first / per[e.name].second;
                den += double(e.count);
            }
            EXPECT_NEAR(rep.overall_metric(v, rep.ks[ki], true), num / den, 1e-12);
        }
    }
}

TEST(Protocol, TrialsStartFromTheSnapshot) {
    const Dataset ds = small_dataset();
    const auto params = EncoderParams::init(8, 0);
    const auto cfg = small_eval();
    const Variant vs[] = {Variant::ours};
    const auto rep = run_protocol(ds, params, vs, cfg);
    ProtocolContext ctx(ds, params);
    const auto& last = rep.trials.back();
    const std::size_t cls = ds.class_catalog.size() - 1;
    const auto alone = run_trial(ctx, ds.class_catalog[cls].name, Variant::ours, cfg, trial_seed(cfg.seed, cls, last.trial), last.trial);
    EXPECT_EQ(trial_record(alone), trial_record(last));
}

TEST(Protocol, WorkerCountDoesNotChangeResults) {
    const Dataset ds = small_dataset();
    const auto params = EncoderParams::init(8, 0);
    auto cfg = small_eval();
    const Variant vs[] = {Variant::ours, Variant::coreset};
    const auto one = run_protocol(ds, params, vs, cfg);
    cfg.workers = 4;
    const auto four = run_protocol(ds, params, vs, cfg);
    EXPECT_EQ(records(one), records(four));
    EXPECT_EQ(one.trials.size(), 2 * 4 * cfg.trials_per_class);
}

TEST(Protocol, TrialSeedsDiffer) {
    std::set<std::uint64_t> s;
    for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t t = 0; t < 10; ++t) s.insert(trial_seed(0, c, t));
    EXPECT_EQ(s.size(), 80u);
    EXPECT_NE(trial_seed(0, 0, 0), trial_seed(1, 0, 0));
}

TEST(Protocol, ReportWriters) {
    const Dataset ds = small_dataset();
    const Variant vs[] = {Variant::pretrained};
    const auto rep = run_protocol(ds, EncoderParams::init(8, 0), vs, small_eval());
    std::istringstream is(records(rep));
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        const auto j = nlohmann::json::parse(line);
        for (const char* key : {"variant", "class", "trial", "seed", "queries", "selected", "metrics", "stop_reason"})
            EXPECT_TRUE(j.contains(key)) << key;
        ++n;
    }
    EXPECT_EQ(n, rep.trials.size());
    std::ostringstream table;
    write_table(table, rep);
    EXPECT_NE(table.str().find("(weighted)"), std::string::npos);
    EXPECT_NE(table.str().find("P@10o"), std::string::npos);
}

TEST(EvalConfig, ValidationAndWarnings) {
    EvalConfig c;
    EXPECT_EQ(c.warnings().size(), 1u);
    c.ks = {};
    EXPECT_THROW(c.validate(), ConfigError);
    c = EvalConfig{};
    c.ks = {0};
    EXPECT_THROW(c.validate(), ConfigError);
    c = EvalConfig{};
    c.workers = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(parse_variant("ours-wo-v"), Variant::ours_wo_v);
    EXPECT_THROW(parse_variant("best"), ConfigError);
}

TEST(Sweep, OnePointPerValue) {
    const Dataset ds = small_dataset();
    auto cfg = small_eval();
    cfg.trials_per_class = 1;
    const std::size_t nv[] = {1, 2}, ne[] = {2};
    const auto pts = run_sweep(ds, EncoderParams::init(8, 0), cfg, nv, ne);
    ASSERT_EQ(pts.size(), 3u);
    EXPECT_EQ(pts[1].param, SweepParam::masked_persons);
    EXPECT_EQ(pts[1].value, 2u);
    EXPECT_EQ(pts[2].param, SweepParam::extra_factor);
    std::ostringstream os;
    write_sweep_records(os, pts);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(nlohmann::json::parse(line)["sweep"]["param"], "N_V");
}
