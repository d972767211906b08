#include "drtext/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "drtext/gradcheck.hpp"

namespace drtext {

std::string format_double(double v) {
    char buf[40];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

namespace {

// splitmix64 step; used to derive independent seed streams from the run seed
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 0x632BE59BD9B4E019ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSamplerStream = 2;
constexpr std::uint64_t kDropoutStream = 3;

double parse_double_value(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected number, got '" + value + "'");
    }
}

std::int64_t parse_i64_value(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const auto v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected integer, got '" + value + "'");
    }
}

bool parse_bool_value(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("key '" + key + "': expected true/false, got '" + value + "'");
}

// Runs fn(begin, end, slot) on contiguous index chunks. Chunking depends only
// on (n, threads), so a fixed thread count gives a fixed work partition.
void parallel_chunks(std::int64_t n, std::int64_t threads,
                     const std::function<void(std::int64_t, std::int64_t, std::int64_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        fn(0, n, 0);
        return;
    }
    const std::int64_t used = std::min<std::int64_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(used));
    for (std::int64_t t = 0; t < used; ++t) {
        const std::int64_t b0 = n * t / used;
        const std::int64_t b1 = n * (t + 1) / used;
        pool.emplace_back([&fn, b0, b1, t] { fn(b0, b1, t); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (embedding_size < 1) throw ConfigError("embedding-size must be >= 1");
    if (hidden_units < 1) throw ConfigError("hidden-units must be >= 1");
    if (capsule_dim < 1) throw ConfigError("capsule-dim must be >= 1");
    if (capsules < 1) throw ConfigError("capsules must be >= 1");
    if (capsule_iters < 1) throw ConfigError("iterations must be >= 1");
    if (l2 < 0) throw ConfigError("l2 must be >= 0");
    lr_schedule().validate();
    if (batch_size < 1) throw ConfigError("batch-size must be >= 1");
    if (batch_low_bound < 1) throw ConfigError("batch-low-bound must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
    aggregator_from_string(aggregator);
    if (!sentence_aggregator.empty()) aggregator_from_string(sentence_aggregator);
    if (max_epochs < 1) throw ConfigError("max-epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (bucket_window < 0) throw ConfigError("bucket-window must be >= 0");
    if (threads < 0) throw ConfigError("threads must be >= 0");
    if (min_freq < 1) throw ConfigError("min-freq must be >= 1");
    if (format != "sentence" && format != "document") {
        throw ConfigError("format must be sentence or document, got '" + format + "'");
    }
    if (mlp_hidden < 0) throw ConfigError("mlp-hidden must be >= 0");
    if (clip_norm < 0) throw ConfigError("clip-norm must be >= 0");
}

KvMap TrainConfig::to_kv() const {
    KvMap kv;
    kv["embedding-size"] = std::to_string(embedding_size);
    kv["hidden-units"] = std::to_string(hidden_units);
    kv["capsule-dim"] = std::to_string(capsule_dim);
    kv["capsules"] = std::to_string(capsules);
    kv["capsule-iters"] = std::to_string(capsule_iters);
    kv["l2"] = format_double(l2);
    kv["lr"] = format_double(lr);
    kv["lr-decay"] = format_double(lr_decay);
    kv["lr-decay-steps"] = std::to_string(lr_decay_steps);
    kv["batch-size"] = std::to_string(batch_size);
    kv["batch-low-bound"] = std::to_string(batch_low_bound);
    kv["dropout"] = format_double(dropout);
    kv["aggregator"] = aggregator;
    kv["sentence-aggregator"] = sentence_aggregator;
    kv["hierarchical"] = hierarchical ? "true" : "false";
    kv["seed"] = std::to_string(seed);
    kv["max-epochs"] = std::to_string(max_epochs);
    kv["patience"] = std::to_string(patience);
    kv["bucket-window"] = std::to_string(bucket_window);
    kv["threads"] = std::to_string(threads);
    kv["min-freq"] = std::to_string(min_freq);
    kv["lowercase"] = lowercase ? "true" : "false";
    kv["sentence-separator"] = sentence_separator;
    kv["format"] = format;
    kv["mlp-hidden"] = std::to_string(mlp_hidden);
    kv["clip-norm"] = format_double(clip_norm);
    kv["stop-on-loss"] = stop_on_loss ? "true" : "false";
    kv["reg-embeddings"] = reg_embeddings ? "true" : "false";
    kv["train"] = train_path;
    kv["dev"] = dev_path;
    kv["test"] = test_path;
    kv["embeddings"] = embeddings_path;
    kv["out"] = out_dir;
    return kv;
}

TrainConfig TrainConfig::from_kv(const KvMap& kv) {
    TrainConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "embedding-size") c.embedding_size = parse_i64_value(key, value);
        else if (key == "hidden-units") c.hidden_units = parse_i64_value(key, value);
        else if (key == "capsule-dim") c.capsule_dim = parse_i64_value(key, value);
        else if (key == "capsules") c.capsules = parse_i64_value(key, value);
        else if (key == "capsule-iters") c.capsule_iters = parse_i64_value(key, value);
        else if (key == "l2") c.l2 = parse_double_value(key, value);
        else if (key == "lr") c.lr = parse_double_value(key, value);
        else if (key == "lr-decay") c.lr_decay = parse_double_value(key, value);
        else if (key == "lr-decay-steps") c.lr_decay_steps = parse_i64_value(key, value);
        else if (key == "batch-size") c.batch_size = parse_i64_value(key, value);
        else if (key == "batch-low-bound") c.batch_low_bound = parse_i64_value(key, value);
        else if (key == "dropout") c.dropout = parse_double_value(key, value);
        else if (key == "aggregator") c.aggregator = value;
        else if (key == "sentence-aggregator") c.sentence_aggregator = value;
        else if (key == "hierarchical") c.hierarchical = parse_bool_value(key, value);
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_i64_value(key, value));
        else if (key == "max-epochs") c.max_epochs = parse_i64_value(key, value);
        else if (key == "patience") c.patience = parse_i64_value(key, value);
        else if (key == "bucket-window") c.bucket_window = parse_i64_value(key, value);
        else if (key == "threads") c.threads = parse_i64_value(key, value);
        else if (key == "min-freq") c.min_freq = parse_i64_value(key, value);
        else if (key == "lowercase") c.lowercase = parse_bool_value(key, value);
        else if (key == "sentence-separator") c.sentence_separator = value;
        else if (key == "format") c.format = value;
        else if (key == "mlp-hidden") c.mlp_hidden = parse_i64_value(key, value);
        else if (key == "clip-norm") c.clip_norm = parse_double_value(key, value);
        else if (key == "stop-on-loss") c.stop_on_loss = parse_bool_value(key, value);
        else if (key == "reg-embeddings") c.reg_embeddings = parse_bool_value(key, value);
        else if (key == "train") c.train_path = value;
        else if (key == "dev") c.dev_path = value;
        else if (key == "test") c.test_path = value;
        else if (key == "embeddings") c.embeddings_path = value;
        else if (key == "out") c.out_dir = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    return c;
}

ParseOptions TrainConfig::parse_options() const {
    ParseOptions opt;
    opt.format = format == "document" ? DataFormat::kDocument : DataFormat::kSentence;
    opt.sentence_separator = sentence_separator;
    opt.lowercase = lowercase;
    return opt;
}

ModelConfig TrainConfig::model_config(std::int64_t vocab_size, std::int64_t classes) const {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.classes = classes;
    mc.embedding_dim = embedding_size;
    mc.hidden_units = hidden_units;
    mc.capsules = capsules;
    mc.capsule_dim = capsule_dim;
    mc.iterations = capsule_iters;
    mc.aggregator = aggregator_kind();
    if (!sentence_aggregator.empty())
        mc.sentence_aggregator = aggregator_from_string(sentence_aggregator);
    mc.hierarchical = hierarchical;
    mc.mlp_hidden = mlp_hidden;
    return mc;
}

std::int64_t TrainConfig::resolved_threads() const {
    if (threads > 0) return threads;
    const auto hw = static_cast<std::int64_t>(std::thread::hardware_concurrency());
    return std::max<std::int64_t>(1, hw);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

std::string Metrics::to_tsv() const {
    std::ostringstream os;
    os << "accuracy\t" << format_double(accuracy) << "\n";
    os << "mean_loss\t" << format_double(mean_loss) << "\n";
    os << "count\t" << count << "\n";
    for (std::int64_t i = 0; i < classes; ++i) {
        for (std::int64_t j = 0; j < classes; ++j) {
            const auto n = confusion[static_cast<std::size_t>(i * classes + j)];
            if (n != 0) os << "confusion\t" << i << "\t" << j << "\t" << n << "\n";
        }
    }
    return os.str();
}

std::string TrainResult::log_tsv() const {
    std::ostringstream os;
    os << "epoch\ttrain_loss\tdev_acc\tlr\tbatch_size\twindow_size\n";
    for (const auto& row : log) {
        os << row.epoch << '\t' << format_double(row.train_loss) << '\t'
           << format_double(row.dev_accuracy) << '\t' << format_double(row.learning_rate)
           << '\t' << row.batch_size << '\t' << row.window_size << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// forward helpers
// ---------------------------------------------------------------------------

namespace {

ForwardResult forward_batch_member(const Model& model, const Batch& batch, std::int64_t b,
                                   const DropoutContext& dropout) {
    if (model.config().hierarchical) {
        const auto sentences = batch.unpad_row(b);
        std::vector<std::vector<bool>> masks;
        masks.reserve(sentences.size());
        for (const auto& s : sentences) masks.emplace_back(s.size(), true);
        return model.forward(sentences, masks, dropout);
    }
    return model.forward({batch.padded_row(b)}, {batch.mask_row(b)}, dropout);
}

std::int64_t argmax_row(const std::vector<double>& v) {
    std::int64_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<std::int64_t>(i);
    return best;
}

constexpr double kLogFloor = 1e-12;

}  // namespace

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

Metrics evaluate_model(const Model& model, const std::vector<Example>& dataset,
                       std::int64_t threads) {
    if (dataset.empty()) throw ContractError("evaluate: empty dataset");
    const std::int64_t classes = model.config().classes;
    for (const auto& ex : dataset) {
        if (ex.label < 0 || ex.label >= classes) {
            throw ContractError("evaluate: label " + std::to_string(ex.label) +
                                " outside the model's " + std::to_string(classes) +
                                " classes");
        }
    }
    const auto n = static_cast<std::int64_t>(dataset.size());
    std::vector<std::int64_t> predictions(static_cast<std::size_t>(n));
    std::vector<double> losses(static_cast<std::size_t>(n));
    parallel_chunks(n, std::max<std::int64_t>(1, threads),
                    [&](std::int64_t b0, std::int64_t b1, std::int64_t) {
                        for (std::int64_t i = b0; i < b1; ++i) {
                            const auto& ex = dataset[static_cast<std::size_t>(i)];
                            auto fr = model.forward_example(ex, DropoutContext{});
                            const auto& probs = fr.probabilities->values;
                            predictions[static_cast<std::size_t>(i)] = argmax_row(probs);
                            losses[static_cast<std::size_t>(i)] = -std::log(
                                std::max(probs[static_cast<std::size_t>(ex.label)], kLogFloor));
                        }
                    });
    Metrics m;
    m.count = n;
    m.classes = classes;
    m.confusion.assign(static_cast<std::size_t>(classes * classes), 0);
    std::int64_t correct = 0;
    double loss_sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& ex = dataset[static_cast<std::size_t>(i)];
        const auto pred = predictions[static_cast<std::size_t>(i)];
        if (pred == ex.label) ++correct;
        ++m.confusion[static_cast<std::size_t>(ex.label * classes + pred)];
        loss_sum += losses[static_cast<std::size_t>(i)];
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    m.mean_loss = loss_sum / static_cast<double>(n);
    return m;
}

Metrics evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<Example>& dataset,
                            std::int64_t threads) {
    const Model model = restore_model(ckpt);
    return evaluate_model(model, dataset, threads);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const std::vector<Example>& train_set,
                  const std::vector<Example>& dev_set, const Vocabulary& vocab,
                  const LabelMap& labels, ad::TensorPtr pretrained_embeddings) {
    config.validate();
    if (train_set.empty()) throw ContractError("train: training set is empty");
    if (dev_set.empty()) throw ContractError("train: dev set is empty");

    const ModelConfig mc = config.model_config(vocab.size(), labels.size());
    std::mt19937_64 init_rng(mix_seed(config.seed, kInitStream));
    Model model = pretrained_embeddings
                      ? Model(mc, std::move(pretrained_embeddings), init_rng)
                      : Model(mc, init_rng);

    auto params = model.params();
    if (config.reg_embeddings)
        for (auto& p : params) p.regularize = true;
    std::vector<ad::TensorPtr> param_tensors;
    param_tensors.reserve(params.size());
    for (const auto& p : params) param_tensors.push_back(p.tensor);

    Adam adam(param_tensors);
    const LrSchedule schedule = config.lr_schedule();

    std::vector<std::int64_t> lengths;
    lengths.reserve(train_set.size());
    for (const auto& ex : train_set) lengths.push_back(ex.total_tokens());
    BucketSampler sampler(std::move(lengths),
                          SamplerConfig{config.batch_size, config.batch_low_bound,
                                        config.bucket_window,
                                        mix_seed(config.seed, kSamplerStream)});

    const std::int64_t nthreads = config.resolved_threads();
    std::vector<ad::GradSink> sinks(static_cast<std::size_t>(nthreads));
    for (auto& sink : sinks)
        for (const auto& t : param_tensors) sink.watch(t);

    TrainResult result;
    double best_signal = -std::numeric_limits<double>::infinity();
    std::int64_t epochs_since_improvement = 0;

    for (std::int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const std::int64_t epoch_batch_size = sampler.batch_size();
        const std::int64_t epoch_window = sampler.window_size();
        const auto batches = sampler.epoch_batches();

        double epoch_loss_sum = 0.0;
        std::int64_t epoch_examples = 0;
        double last_lr = schedule.at(adam.step_count());

        for (const auto& batch_indices : batches) {
            const Batch batch = make_batch(train_set, batch_indices);
            const std::int64_t bsize = batch.rows;
            const double lr_now = schedule.at(adam.step_count());
            last_lr = lr_now;
            const auto step_id = static_cast<std::uint64_t>(adam.step_count());

            std::vector<double> nlls(static_cast<std::size_t>(bsize), 0.0);
            for (auto& sink : sinks) sink.reset();
            parallel_chunks(
                bsize, nthreads, [&](std::int64_t b0, std::int64_t b1, std::int64_t slot) {
                    ad::GradSink* sink = &sinks[static_cast<std::size_t>(slot)];
                    for (std::int64_t b = b0; b < b1; ++b) {
                        std::mt19937_64 drop_rng(mix_seed(
                            mix_seed(config.seed, kDropoutStream + step_id),
                            static_cast<std::uint64_t>(b)));
                        DropoutContext dctx{config.dropout, &drop_rng};
                        ad::Tape tape;
                        auto fr = forward_batch_member(model, batch, b, dctx);
                        auto nll = ad::scale(
                            ad::log_floor(ad::pick(fr.probabilities,
                                                   batch.labels[static_cast<std::size_t>(b)]),
                                          kLogFloor),
                            -1.0);
                        nlls[static_cast<std::size_t>(b)] = nll->item();
                        tape.backward(ad::scale(nll, 1.0 / static_cast<double>(bsize)), sink);
                    }
                });

            for (const auto& t : param_tensors) t->zero_grad();
            for (auto& sink : sinks) sink.flush_into_grads();

            double l2_value = 0.0;
            if (config.l2 > 0) {
                ad::Tape tape;
                auto penalty = l2_penalty(params, config.l2);
                tape.backward(penalty);
                l2_value = penalty->item();
            }
            double data_loss = 0.0;
            for (double v : nlls) data_loss += v;
            data_loss /= static_cast<double>(bsize);
            const double batch_loss = data_loss + l2_value;
            if (!std::isfinite(batch_loss)) {
                throw Error("training diverged: non-finite loss at global step " +
                            std::to_string(adam.step_count()) + " (epoch " +
                            std::to_string(epoch) + ")");
            }
            if (config.clip_norm > 0) clip_global_norm(param_tensors, config.clip_norm);
            adam.step(lr_now);

            epoch_loss_sum += batch_loss * static_cast<double>(bsize);
            epoch_examples += bsize;
        }

        const Metrics dev = evaluate_model(model, dev_set, nthreads);
        const double signal = config.stop_on_loss ? -dev.mean_loss : dev.accuracy;
        const bool improved = signal > best_signal;  // ties keep the earlier epoch

        result.log.push_back({epoch, epoch_loss_sum / static_cast<double>(epoch_examples),
                              dev.accuracy, last_lr, epoch_batch_size, epoch_window});
        result.epochs_run = epoch;

        if (improved) {
            best_signal = signal;
            result.best_dev_accuracy = dev.accuracy;
            result.best_epoch = epoch;
            result.best = snapshot_model(model, config.to_kv(), labels, vocab);
            epochs_since_improvement = 0;
        } else {
            ++epochs_since_improvement;
            sampler.on_no_improvement();
        }
        if (epochs_since_improvement >= config.patience) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// iteration sweep
// ---------------------------------------------------------------------------

std::vector<SweepRow> iteration_sweep(const TrainConfig& base,
                                      const std::vector<std::int64_t>& t_values,
                                      const std::vector<std::int64_t>& m_values,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::vector<Example>& train_set,
                                      const std::vector<Example>& dev_set,
                                      const std::vector<Example>& test_set,
                                      const Vocabulary& vocab, const LabelMap& labels) {
    if (t_values.empty() || m_values.empty() || seeds.empty()) {
        throw ConfigError("sweep: iteration, capsule and seed lists must be non-empty");
    }
    auto ts = t_values;
    auto ms = m_values;
    auto ss = seeds;
    std::sort(ts.begin(), ts.end());
    std::sort(ms.begin(), ms.end());
    std::sort(ss.begin(), ss.end());

    std::vector<SweepRow> rows;
    rows.reserve(ts.size() * ms.size() * ss.size());
    for (auto t : ts) {
        for (auto m : ms) {
            for (auto s : ss) {
                TrainConfig cfg = base;
                cfg.capsule_iters = t;
                cfg.capsules = m;
                cfg.seed = s;
                auto tr = train(cfg, train_set, dev_set, vocab, labels);
                const Metrics test = evaluate_checkpoint(tr.best, test_set,
                                                         cfg.resolved_threads());
                rows.push_back({t, m, s, tr.best_dev_accuracy, test.accuracy});
            }
        }
    }
    return rows;
}

namespace {

// Central differences are only valid where the loss is C^1 across the step.
// The model has two kink sources: the max-pool argmax and the classifier
// rectifier. Examples are redrawn until the pooled maxima have a safe margin,
// and hidden units whose pre-activation sits near the rectifier kink get
// their bias nudged off it (both gradient routes then run at the nudged
// point). Margins are 100x the 1e-5 step.
constexpr double kKinkMargin = 1e-3;

bool max_pool_margins_ok(const Model& model, const std::vector<std::int64_t>& ids) {
    if (model.config().aggregator != AggregatorKind::kMax) return true;
    const std::vector<bool> mask(ids.size(), true);
    auto h = model.encoder().encode(model.embedding().embed(ids), mask);
    const std::int64_t rows = h->dim(0), cols = h->dim(1);
    if (rows < 2) return true;
    for (std::int64_t j = 0; j < cols; ++j) {
        double best = -std::numeric_limits<double>::infinity(), second = best;
        for (std::int64_t i = 0; i < rows; ++i) {
            const double v = h->values[i * cols + j];
            if (v > best) {
                second = best;
                best = v;
            } else if (v > second) {
                second = v;
            }
        }
        if (best - second < kKinkMargin) return false;
    }
    return true;
}

void clear_rectifier_kinks(const Model& model, const std::vector<std::int64_t>& ids) {
    const std::vector<bool> mask(ids.size(), true);
    auto h = model.encoder().encode(model.embedding().embed(ids), mask);
    auto enc = model.word_aggregator().apply(h, mask).encoding;
    auto pre = ad::add_rowvec(ad::matmul(enc, model.head().w1), model.head().b1);
    for (std::size_t unit = 0; unit < pre->values.size(); ++unit) {
        const double v = pre->values[unit];
        if (std::abs(v) < kKinkMargin) {
            model.head().b1->values[unit] += v >= 0 ? 2 * kKinkMargin : -2 * kKinkMargin;
        }
    }
}

}  // namespace

std::vector<GradCheckLine> run_gradcheck(std::uint64_t seed) {
    const std::vector<std::string> aggregators = {"max", "avg", "attn", "dr-standard",
                                                  "dr-reversed"};
    std::vector<GradCheckLine> lines;
    lines.reserve(aggregators.size());
    for (std::size_t idx = 0; idx < aggregators.size(); ++idx) {
        ModelConfig mc;
        mc.vocab_size = 40;
        mc.classes = 3;
        mc.embedding_dim = 8;
        mc.hidden_units = 6;
        mc.capsules = 3;
        mc.capsule_dim = 5;
        mc.iterations = 3;
        mc.aggregator = aggregator_from_string(aggregators[idx]);

        std::mt19937_64 rng(mix_seed(seed, 100 + idx));
        Model model(mc, rng);
        std::uniform_int_distribution<std::int64_t> token(2, mc.vocab_size - 1);
        std::vector<std::int64_t> ids(7);
        for (int attempt = 0; attempt < 50; ++attempt) {
            for (auto& id : ids) id = token(rng);
            if (max_pool_margins_ok(model, ids)) break;
        }
        clear_rectifier_kinks(model, ids);
        const std::vector<std::vector<std::int64_t>> sentences{ids};
        const std::vector<std::vector<bool>> masks{std::vector<bool>(ids.size(), true)};
        const std::int64_t label = 1;

        auto params = model.params();
        std::vector<ad::TensorPtr> tensors;
        tensors.reserve(params.size());
        for (const auto& p : params) tensors.push_back(p.tensor);

        auto build = [&]() {
            auto fr = model.forward(sentences, masks, DropoutContext{});
            return loss({fr.probabilities}, {label}, params, 1e-4);
        };
        lines.push_back({aggregators[idx], ad::finite_diff_check(build, tensors)});
    }
    return lines;
}

std::string sweep_tsv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "T\tM\tseed\tdev_acc\ttest_acc\n";
    for (const auto& r : rows) {
        os << r.iterations << '\t' << r.capsules << '\t' << r.seed << '\t'
           << format_double(r.dev_accuracy) << '\t' << format_double(r.test_accuracy) << '\n';
    }
    return os.str();
}

}  // namespace drtext
