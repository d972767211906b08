#include <cmath>
#include <random>

#include "doctest.h"
#include "drtext/harness.hpp"
#include "testutil.hpp"

using namespace drtext;

namespace {

struct ToyData {
    Vocabulary vocab;
    LabelMap labels;
    std::vector<Example> examples;
};

ToyData load_toy(int n, std::uint64_t seed, int max_sentences = 1) {
    testutil::TempDir dir("toy");
    testutil::write_file(dir.file("d.tsv"), testutil::make_toy_tsv(n, seed, max_sentences));
    ParseOptions opts;
    if (max_sentences > 1) opts.format = DataFormat::kDocument;
    RawDataset raw = read_raw(dir.file("d.tsv"), opts);
    std::vector<std::vector<std::string>> corpus;
    for (const auto& ex : raw.examples)
        for (const auto& s : ex.sentences) corpus.push_back(s);
    ToyData data;
    data.vocab = Vocabulary::build(corpus, 1);
    auto parsed = parse_dataset(dir.file("d.tsv"), opts, data.vocab);
    data.labels = parsed.labels;
    data.examples = std::move(parsed.examples);
    return data;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.embedding_size = 12;
    cfg.hidden_units = 10;
    cfg.capsules = 2;
    cfg.capsule_dim = 6;
    cfg.capsule_iters = 2;
    cfg.l2 = 1e-6;
    cfg.lr = 0.01;
    cfg.lr_decay = 0.95;
    cfg.lr_decay_steps = 500;
    cfg.batch_size = 8;
    cfg.batch_low_bound = 4;
    cfg.dropout = 0.0;
    cfg.aggregator = "dr-standard";
    cfg.seed = 7;
    cfg.max_epochs = 200;
    cfg.patience = 200;
    cfg.threads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("config key-value round trip and validation") {
    TrainConfig cfg = tiny_config();
    cfg.train_path = "a.tsv";
    cfg.hierarchical = true;
    const KvMap kv = cfg.to_kv();
    TrainConfig back = TrainConfig::from_kv(kv);
    CHECK(back.to_kv() == kv);

    KvMap bad = kv;
    bad["no-such-knob"] = "1";
    CHECK_THROWS_WITH_AS(TrainConfig::from_kv(bad), doctest::Contains("no-such-knob"),
                         ConfigError);

    TrainConfig invalid = cfg;
    invalid.capsule_iters = 0;
    CHECK_THROWS_WITH_AS(invalid.validate(), doctest::Contains("iterations must be >= 1"),
                         ConfigError);
    invalid = cfg;
    invalid.dropout = 1.0;
    CHECK_THROWS_AS(invalid.validate(), ConfigError);
}

TEST_CASE("parallel per-example backward equals the single-graph loss gradient") {
    ToyData data = load_toy(6, 21);
    TrainConfig cfg = tiny_config();
    const ModelConfig mc = cfg.model_config(data.vocab.size(), data.labels.size());
    std::mt19937_64 rng(3);
    Model model(mc, rng);
    auto params = model.params();
    std::vector<ad::TensorPtr> tensors;
    for (auto& p : params) tensors.push_back(p.tensor);
    const double lambda = 1e-3;
    const auto n = static_cast<std::int64_t>(data.examples.size());

    // route 1: one graph over the whole batch via the loss() op
    {
        ad::Tape tape;
        std::vector<ad::TensorPtr> rows;
        std::vector<std::int64_t> targets;
        for (const auto& ex : data.examples) {
            rows.push_back(model.forward_example(ex, DropoutContext{}).probabilities);
            targets.push_back(ex.label);
        }
        auto l = loss(rows, targets, params, lambda);
        for (auto& t : tensors) t->zero_grad();
        tape.backward(l);
    }
    std::vector<std::vector<double>> single_graph;
    for (auto& t : tensors) single_graph.push_back(t->grad);

    // route 2: per-example scaled backwards into a sink + analytic epoch of
    // the L2 term, the decomposition the trainer uses
    ad::GradSink sink;
    for (auto& t : tensors) sink.watch(t);
    for (const auto& ex : data.examples) {
        ad::Tape tape;
        auto probs = model.forward_example(ex, DropoutContext{}).probabilities;
        auto nll = ad::scale(ad::log_floor(ad::pick(probs, ex.label), 1e-12), -1.0);
        tape.backward(ad::scale(nll, 1.0 / static_cast<double>(n)), &sink);
    }
    for (auto& t : tensors) t->zero_grad();
    sink.flush_into_grads();
    {
        ad::Tape tape;
        tape.backward(l2_penalty(params, lambda));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        double worst = 0.0;
        for (std::size_t z = 0; z < tensors[i]->grad.size(); ++z)
            worst = std::max(worst, std::abs(tensors[i]->grad[z] - single_graph[i][z]));
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("training memorizes a tiny balanced set") {
    ToyData data = load_toy(32, 5);
    TrainConfig cfg = tiny_config();
    TrainResult result = train(cfg, data.examples, data.examples, data.vocab, data.labels);
    CHECK(result.best_dev_accuracy == doctest::Approx(1.0));
    CHECK(result.epochs_run <= 200);

    // evaluating the memorized subset through the checkpoint reproduces 1.0
    Metrics m = evaluate_checkpoint(result.best, data.examples, 2);
    CHECK(m.accuracy == doctest::Approx(1.0));
}

TEST_CASE("train is deterministic and the checkpoint round-trips dev accuracy") {
    ToyData data = load_toy(24, 9);
    std::vector<Example> dev(data.examples.begin() + 16, data.examples.end());
    std::vector<Example> tr(data.examples.begin(), data.examples.begin() + 16);
    TrainConfig cfg = tiny_config();
    cfg.max_epochs = 6;
    cfg.dropout = 0.2;

    TrainResult a = train(cfg, tr, dev, data.vocab, data.labels);
    TrainResult b = train(cfg, tr, dev, data.vocab, data.labels);
    CHECK(a.log_tsv() == b.log_tsv());
    CHECK(a.best_dev_accuracy == b.best_dev_accuracy);

    // bit-identical weights at the best epoch
    REQUIRE(a.best.tensor_values.size() == b.best.tensor_values.size());
    for (std::size_t i = 0; i < a.best.tensor_values.size(); ++i)
        CHECK(a.best.tensor_values[i] == b.best.tensor_values[i]);

    // save -> load -> evaluate is bit-identical to the in-memory best
    testutil::TempDir dir("ckpt");
    save_checkpoint(dir.file("m.ckpt"), a.best);
    Checkpoint loaded = load_checkpoint(dir.file("m.ckpt"));
    CHECK(loaded.config == a.best.config);
    CHECK(loaded.vocab_tokens == a.best.vocab_tokens);
    const Metrics m1 = evaluate_checkpoint(a.best, dev, 2);
    const Metrics m2 = evaluate_checkpoint(loaded, dev, 1);  // thread count must not matter
    CHECK(m1.accuracy == m2.accuracy);
    CHECK(m1.mean_loss == m2.mean_loss);
}

TEST_CASE("early stopping keeps the best epoch and stops after patience") {
    ToyData data = load_toy(24, 13);
    std::vector<Example> dev(data.examples.begin() + 16, data.examples.end());
    std::vector<Example> tr(data.examples.begin(), data.examples.begin() + 16);
    TrainConfig cfg = tiny_config();
    cfg.patience = 3;
    cfg.max_epochs = 100;
    cfg.lr = 0.02;

    TrainResult result = train(cfg, tr, dev, data.vocab, data.labels);
    // best dev accuracy equals the max over the per-epoch log
    double max_acc = 0.0;
    for (const auto& row : result.log) max_acc = std::max(max_acc, row.dev_accuracy);
    CHECK(result.best_dev_accuracy == doctest::Approx(max_acc));
    if (result.epochs_run < cfg.max_epochs) {
        CHECK(result.epochs_run == result.best_epoch + cfg.patience);
    }
    // the logged batch size never grows and the window never shrinks
    for (std::size_t i = 1; i < result.log.size(); ++i) {
        CHECK(result.log[i].batch_size <= result.log[i - 1].batch_size);
        CHECK(result.log[i].window_size >= result.log[i - 1].window_size);
    }
}

TEST_CASE("train loss is mostly non-increasing without dropout") {
    ToyData data = load_toy(8, 17);
    TrainConfig cfg = tiny_config();
    cfg.batch_size = 8;  // full batch: one step per epoch
    cfg.bucket_window = 8;
    cfg.dropout = 0.0;
    cfg.max_epochs = 50;
    cfg.patience = 50;
    cfg.lr = 0.005;
    TrainResult result = train(cfg, data.examples, data.examples, data.vocab, data.labels);
    REQUIRE(result.log.size() == 50);
    int non_increasing = 0;
    for (std::size_t i = 1; i < result.log.size(); ++i)
        if (result.log[i].train_loss <= result.log[i - 1].train_loss + 1e-12) ++non_increasing;
    CHECK(non_increasing >= 44);  // >= 90% of 49 transitions
}

TEST_CASE("divergence aborts with the failing step named") {
    ToyData data = load_toy(8, 19);
    TrainConfig cfg = tiny_config();
    std::mt19937_64 rng(1);
    auto poisoned =
        ad::randn({data.vocab.size(), cfg.embedding_size}, 0.0, 0.1, rng, true);
    poisoned->values[50] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(
        train(cfg, data.examples, data.examples, data.vocab, data.labels, poisoned),
        doctest::Contains("global step"), Error);
}

TEST_CASE("evaluate: hand-counted accuracy and class checks") {
    ToyData data = load_toy(10, 23);
    TrainConfig cfg = tiny_config();
    const ModelConfig mc = cfg.model_config(data.vocab.size(), data.labels.size());
    std::mt19937_64 rng(31);
    Model model(mc, rng);

    Metrics m = evaluate_model(model, data.examples, 2);
    // independent count: argmax of each forward pass
    std::int64_t correct = 0;
    for (const auto& ex : data.examples) {
        auto probs = model.forward_example(ex, DropoutContext{}).probabilities->values;
        std::int64_t arg = 0;
        for (std::size_t i = 1; i < probs.size(); ++i)
            if (probs[i] > probs[static_cast<std::size_t>(arg)])
                arg = static_cast<std::int64_t>(i);
        if (arg == ex.label) ++correct;
    }
    CHECK(m.accuracy ==
          doctest::Approx(static_cast<double>(correct) / 10.0).epsilon(1e-15));
    CHECK(m.count == 10);
    // confusion counts total the dataset
    std::int64_t total = 0;
    for (auto c : m.confusion) total += c;
    CHECK(total == 10);

    // label outside the model's classes
    auto bad = data.examples;
    bad[0].label = 5;
    CHECK_THROWS_AS(evaluate_model(model, bad, 1), ContractError);
}

TEST_CASE("hierarchical training works end to end") {
    ToyData data = load_toy(16, 29, /*max_sentences=*/3);
    TrainConfig cfg = tiny_config();
    cfg.hierarchical = true;
    cfg.format = "document";
    cfg.max_epochs = 8;
    cfg.patience = 8;
    TrainResult result = train(cfg, data.examples, data.examples, data.vocab, data.labels);
    CHECK(result.best_dev_accuracy > 0.4);  // runs and produces sane numbers
    Metrics m = evaluate_checkpoint(result.best, data.examples, 2);
    CHECK(m.count == 16);
}

TEST_CASE("iteration sweep is sorted, deterministic, and composes train+eval") {
    ToyData data = load_toy(20, 31);
    std::vector<Example> dev(data.examples.begin() + 12, data.examples.begin() + 16);
    std::vector<Example> test(data.examples.begin() + 16, data.examples.end());
    std::vector<Example> tr(data.examples.begin(), data.examples.begin() + 12);
    TrainConfig cfg = tiny_config();
    cfg.max_epochs = 3;
    cfg.patience = 3;

    auto rows = iteration_sweep(cfg, {2, 1}, {2, 1}, {7}, tr, dev, test, data.vocab,
                                data.labels);
    REQUIRE(rows.size() == 4);
    // sorted by (T, M, seed)
    CHECK(rows[0].iterations == 1);
    CHECK(rows[0].capsules == 1);
    CHECK(rows[1].capsules == 2);
    CHECK(rows[2].iterations == 2);

    // single cell equals a direct train + evaluate run
    TrainConfig direct_cfg = cfg;
    direct_cfg.capsule_iters = 1;
    direct_cfg.capsules = 1;
    direct_cfg.seed = 7;
    TrainResult direct = train(direct_cfg, tr, dev, data.vocab, data.labels);
    const Metrics direct_test = evaluate_checkpoint(direct.best, test, 2);
    CHECK(rows[0].dev_accuracy == doctest::Approx(direct.best_dev_accuracy));
    CHECK(rows[0].test_accuracy == doctest::Approx(direct_test.accuracy));

    const std::string tsv = sweep_tsv(rows);
    CHECK(tsv.substr(0, 26) == "T\tM\tseed\tdev_acc\ttest_acc\n");
}

TEST_CASE("gradcheck helper covers every aggregator under tolerance") {
    const auto lines = run_gradcheck(123);
    REQUIRE(lines.size() == 5);
    for (const auto& line : lines) CHECK(line.max_rel_error < kGradCheckTolerance);
    CHECK(lines[0].aggregator == "max");
    CHECK(lines[4].aggregator == "dr-reversed");
}
