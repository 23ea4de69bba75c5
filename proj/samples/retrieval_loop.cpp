// One pass of the human-in-the-loop workflow with the oracle annotator
// standing in for the analyst: pick queries, select clips, label, fine-tune,
// compare rankings.
#include <iomanip>
#include <iostream>

#include "garet/garet.hpp"

using namespace garet;

int main() {
    SyntheticConfig sc;
    sc.videos_per_class = 40;
    const Dataset ds = generate_synthetic(sc);

    std::vector<VideoFeatures> train;
    for (auto k : ds.indices(Split::train)) train.push_back(ds.videos[k]);
    PretrainConfig pc;
    pc.epochs = 10;
    pc.adam.lr = 1e-3;
    const EncoderParams pretrained = pretrain(train, EncoderParams::init(ds.channels, 1), pc);

    const std::string target = ds.class_catalog[0].name;
    const auto test = ds.indices(Split::test, target);
    std::vector<VideoFeatures> queries;
    for (std::size_t q = 0; q < 3; ++q) queries.push_back(ds.videos[test[q]]);

    std::vector<std::string> pool_ids;
    std::vector<Gaf> pool;
    for (const auto& v : train) {
        pool_ids.push_back(v.id);
        pool.push_back(encode_gaf(v, pretrained));
    }
    const SelectionResult sel = select_for_annotation(queries, pool, pretrained, SelectionConfig{});

    std::vector<std::string> chosen;
    for (auto j : sel.selected) chosen.push_back(pool_ids[j]);
    const auto labels = oracle_annotate(chosen, target, ds);

    FinetuneBatch batch;
    for (const auto& q : queries) batch.queries.push_back(&q);
    for (const auto& a : labels) {
        batch.selected.push_back(&ds.videos[*ds.find(a.video_id)]);
        batch.labels.push_back(a.label);
        std::cout << a.video_id << ' ' << to_string(a.label) << '\n';
    }
    FinetuneConfig fc;
    fc.adam.lr = 1e-2;
    LossReport report;
    const EncoderParams tuned = finetune(batch, pretrained, fc, &report);
    write_loss_csv(std::cout, report);

    const LabelMap lm = label_map(ds);
    auto p_at_10 = [&](const EncoderParams& p) {
        std::vector<Gaf> g;
        for (const auto& v : train) g.push_back(encode_gaf(v, p));
        double sum = 0.0;
        for (const auto& q : queries) {
            std::vector<std::string> got;
            for (const auto& h : retrieve_topk(encode_gaf(q, p), g, pool_ids, 10)) got.push_back(pool_ids[h.index]);
            sum += precision_at_k(got, target, lm);
        }
        return sum / static_cast<double>(queries.size());
    };
    std::cout << std::fixed << std::setprecision(3) << "P@10 pretrained " << p_at_10(pretrained) << ", fine-tuned "
              << p_at_10(tuned) << '\n';
}
