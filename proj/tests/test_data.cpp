#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "drtext/data.hpp"
#include "testutil.hpp"

using namespace drtext;

TEST_CASE("vocabulary construction") {
    // corpus "a a b": both kept at min_freq 1, a (freq 2) before b
    Vocabulary v1 = Vocabulary::build({{"a", "a", "b"}}, 1);
    CHECK(v1.size() == 4);
    CHECK(v1.id_of("a") == 2);
    CHECK(v1.id_of("b") == 3);

    // min_freq 2 keeps only a
    Vocabulary v2 = Vocabulary::build({{"a", "a", "b"}}, 2);
    CHECK(v2.size() == 3);
    CHECK(v2.id_of("a") == 2);
    CHECK(v2.id_of("b") == Vocabulary::kUnkId);

    // deterministic rebuild, frequency ties broken lexicographically
    Vocabulary v3 = Vocabulary::build({{"z", "c", "z", "c", "m"}}, 1);
    Vocabulary v4 = Vocabulary::build({{"z", "c", "z", "c", "m"}}, 1);
    CHECK(v3.tokens() == v4.tokens());
    CHECK(v3.id_of("c") == 2);  // freq 2, before z
    CHECK(v3.id_of("z") == 3);
    CHECK(v3.id_of("m") == 4);

    CHECK(v3.token_of(0) == Vocabulary::kPadToken);
    CHECK(v3.token_of(1) == Vocabulary::kUnkToken);
    CHECK_THROWS_AS(v3.token_of(99), LookupError);
    CHECK_THROWS_AS(Vocabulary::build({}, 1), ContractError);
}

TEST_CASE("dataset parsing: sentence and document formats") {
    testutil::TempDir dir("parse");
    testutil::write_file(dir.file("s.tsv"), "1\tGood Movie\n0\tbad plot\n1\tgood fun\n");

    Vocabulary vocab = Vocabulary::build(
        {{"good", "movie"}, {"bad", "plot"}, {"good", "fun"}}, 1);
    ParseOptions opts;
    auto parsed = parse_dataset(dir.file("s.tsv"), opts, vocab);
    REQUIRE(parsed.examples.size() == 3);
    CHECK(parsed.examples[0].sentences.size() == 1);
    CHECK(parsed.examples[0].sentences[0].size() == 2);
    // labels mapped in first-seen order: "1" -> 0, "0" -> 1
    CHECK(parsed.examples[0].label == 0);
    CHECK(parsed.examples[1].label == 1);
    CHECK(parsed.labels.raw_labels() == std::vector<std::string>{"1", "0"});
    // lowercasing applied by default
    CHECK(parsed.examples[0].sentences[0][0] == vocab.id_of("good"));

    // document format splits on the separator and drops empty sentences
    testutil::write_file(dir.file("d.tsv"),
                         "4\ts1 w w <sssss> s2 w\n2\t<sssss> only <sssss> <sssss>\n");
    ParseOptions dopts;
    dopts.format = DataFormat::kDocument;
    auto docs = parse_dataset(dir.file("d.tsv"), dopts, vocab);
    REQUIRE(docs.examples.size() == 2);
    CHECK(docs.examples[0].sentences.size() == 2);
    CHECK(docs.examples[0].sentences[0].size() == 3);
    CHECK(docs.examples[0].sentences[1].size() == 2);
    CHECK(docs.examples[1].sentences.size() == 1);

    // empty file -> empty list
    testutil::write_file(dir.file("e.tsv"), "");
    CHECK(parse_dataset(dir.file("e.tsv"), opts, vocab).examples.empty());

    // fully empty text is rejected with a warning count
    testutil::write_file(dir.file("w.tsv"), "1\tok ok\n0\t   \n");
    auto warned = parse_dataset(dir.file("w.tsv"), opts, vocab);
    CHECK(warned.examples.size() == 1);
    CHECK(warned.dropped_empty == 1);

    // parse errors carry the line number
    testutil::write_file(dir.file("bad1.tsv"), "1\tok\nno tab here\n");
    CHECK_THROWS_WITH_AS(parse_dataset(dir.file("bad1.tsv"), opts, vocab).examples.size(),
                         doctest::Contains(":2:"), ParseError);
    testutil::write_file(dir.file("bad2.tsv"), "x9\tok\n");
    CHECK_THROWS_AS(parse_dataset(dir.file("bad2.tsv"), opts, vocab), ParseError);

    // dev/test reuse the training label map; unseen labels are an error
    testutil::write_file(dir.file("dev.tsv"), "0\tgood\n7\tbad\n");
    CHECK_THROWS_AS(parse_dataset(dir.file("dev.tsv"), opts, vocab, &parsed.labels),
                    ContractError);
}

TEST_CASE("label map tsv round trip") {
    LabelMap map;
    map.intern("4");
    map.intern("1");
    map.intern("3");
    const auto text = map.to_tsv();
    CHECK(text == "4\t0\n1\t1\n3\t2\n");
    LabelMap back = LabelMap::from_tsv(text);
    CHECK(back.raw_labels() == map.raw_labels());
    CHECK(back.id_of("3") == 2);
}

TEST_CASE("pretrained embedding loading") {
    testutil::TempDir dir("glove");
    Vocabulary vocab = Vocabulary::build({{"cat", "dog", "bird"}}, 1);

    // exact cover: match rate 1 and file values copied bit-exactly
    testutil::write_file(dir.file("full.txt"),
                         "cat 0.125 -1.5\ndog 3.25 0.0078125\nbird -2 42\n");
    auto full = load_pretrained(dir.file("full.txt"), vocab, 2, 9);
    CHECK(full.match_rate == doctest::Approx(1.0));
    CHECK(full.matched == 3);
    const auto cat = vocab.id_of("cat");
    CHECK(full.table->values[cat * 2 + 0] == 0.125);
    CHECK(full.table->values[cat * 2 + 1] == -1.5);
    // pad row zero, table trainable
    CHECK(full.table->values[0] == 0.0);
    CHECK(full.table->values[1] == 0.0);
    CHECK(full.table->requires_grad);

    // no overlap: match rate 0, rows are seeded draws
    testutil::write_file(dir.file("none.txt"), "fish 1 2\n");
    auto none = load_pretrained(dir.file("none.txt"), vocab, 2, 9);
    CHECK(none.match_rate == doctest::Approx(0.0));
    auto again = load_pretrained(dir.file("none.txt"), vocab, 2, 9);
    CHECK(none.table->values == again.table->values);  // seeded => reproducible

    // malformed line cites its number
    testutil::write_file(dir.file("bad.txt"), "cat 1 2\ndog 3\n");
    CHECK_THROWS_WITH_AS(load_pretrained(dir.file("bad.txt"), vocab, 2, 9),
                         doctest::Contains(":2:"), ParseError);
    testutil::write_file(dir.file("nan.txt"), "cat 1 oops\n");
    CHECK_THROWS_AS(load_pretrained(dir.file("nan.txt"), vocab, 2, 9), ParseError);
}

TEST_CASE("batch padding and round trip") {
    std::vector<Example> data;
    data.push_back({0, {{2, 3, 4}}});
    data.push_back({1, {{5}, {6, 7}}});
    data.push_back({0, {{8, 9}}});

    Batch batch = make_batch(data, {1, 2});
    CHECK(batch.rows == 2);
    CHECK(batch.cols == 3);
    CHECK(batch.labels == std::vector<std::int64_t>{1, 0});
    CHECK(batch.lengths == std::vector<std::int64_t>{3, 2});

    // mask true exactly at real tokens
    CHECK(batch.mask_row(0) == std::vector<bool>{true, true, true});
    CHECK(batch.mask_row(1) == std::vector<bool>{true, true, false});
    CHECK(batch.padded_row(1) == std::vector<std::int64_t>{8, 9, Vocabulary::kPadId});

    // un-padding reproduces the original sentence structure exactly
    CHECK(batch.unpad_row(0) == data[1].sentences);
    CHECK(batch.unpad_row(1) == data[2].sentences);
}

TEST_CASE("bucket sampler: coverage, windows, feedback") {
    const std::int64_t n = 40;
    std::vector<std::int64_t> lengths(n);
    std::mt19937_64 rng(3);
    for (auto& l : lengths) l = 3 + static_cast<std::int64_t>(rng() % 20);

    // every epoch yields every example exactly once
    BucketSampler sampler(lengths, {8, 2, 0, 11});
    for (int epoch = 0; epoch < 3; ++epoch) {
        auto batches = sampler.epoch_batches();
        std::multiset<std::int64_t> seen;
        for (const auto& b : batches) seen.insert(b.begin(), b.end());
        CHECK(seen.size() == static_cast<std::size_t>(n));
        std::multiset<std::int64_t> want;
        for (std::int64_t i = 0; i < n; ++i) want.insert(i);
        CHECK(seen == want);
    }

    // window = batch size -> strictly length-ordered batches
    BucketSampler ordered(lengths, {8, 2, 8, 11});
    auto batches = ordered.epoch_batches();
    std::vector<std::int64_t> flattened;
    for (const auto& b : batches) flattened.insert(flattened.end(), b.begin(), b.end());
    for (std::size_t i = 1; i < flattened.size(); ++i)
        CHECK(lengths[static_cast<std::size_t>(flattened[i - 1])] <=
              lengths[static_cast<std::size_t>(flattened[i])]);

    // window = dataset size -> batches sample uniformly from everything;
    // with two epochs the order differs (shuffling) but coverage holds
    BucketSampler uniform(lengths, {8, 2, n, 11});
    auto e1 = uniform.epoch_batches();
    auto e2 = uniform.epoch_batches();
    CHECK(e1 != e2);

    // same seed + same feedback -> identical batch streams
    BucketSampler s1(lengths, {8, 2, 0, 99});
    BucketSampler s2(lengths, {8, 2, 0, 99});
    CHECK(s1.epoch_batches() == s2.epoch_batches());
    s1.on_no_improvement();
    s2.on_no_improvement();
    CHECK(s1.epoch_batches() == s2.epoch_batches());

    // feedback: window doubles (capped), batch halves to the low bound
    BucketSampler fb(lengths, {64 /*batch*/, 16 /*low*/, 0, 1});
    CHECK(fb.batch_size() == 64);
    CHECK(fb.window_size() == 40);  // 4 x 64 capped at dataset size
    fb.on_no_improvement();
    CHECK(fb.batch_size() == 32);
    fb.on_no_improvement();
    CHECK(fb.batch_size() == 16);
    fb.on_no_improvement();
    CHECK(fb.batch_size() == 16);  // floored
    CHECK(fb.window_size() == 40);

    CHECK_THROWS_AS(BucketSampler({}, {8, 2, 0, 1}), ContractError);
    CHECK_THROWS_AS(BucketSampler(lengths, {0, 2, 0, 1}), ConfigError);
}

TEST_CASE("tokenizer") {
    CHECK(tokenize("  The  Quick\tfox ", true) ==
          std::vector<std::string>{"the", "quick", "fox"});
    CHECK(tokenize("The Fox", false) == std::vector<std::string>{"The", "Fox"});
    CHECK(tokenize("", true).empty());
}
