// Writes the per-candidate selection scores for three queries as CSV.
#include <iostream>

#include "garet/garet.hpp"

int main(int argc, char** argv) {
    using namespace garet;
    SyntheticConfig sc;
    sc.videos_per_class = 20;
    sc.seed = argc > 1 ? std::stoull(argv[1]) : 0;
    const Dataset ds = generate_synthetic(sc);
    const EncoderParams params = EncoderParams::init(ds.channels, sc.seed);

    const auto test = ds.indices(Split::test, ds.class_catalog[2].name);
    std::vector<VideoFeatures> queries;
    std::vector<std::string> query_ids;
    for (std::size_t q = 0; q < 3; ++q) {
        queries.push_back(ds.videos[test[q]]);
        query_ids.push_back(ds.videos[test[q]].id);
    }
    std::vector<std::string> ids;
    std::vector<Gaf> pool;
    for (auto k : ds.indices(Split::train)) {
        ids.push_back(ds.videos[k].id);
        pool.push_back(encode_gaf(ds.videos[k], params));
    }
    SelectionConfig cfg;
    cfg.seed = sc.seed;
    write_selection_report(std::cout, query_ids, ids, select_for_annotation(queries, pool, params, cfg));
}
