// Command-line driver: train / eval / sweep / gradcheck / visualize.
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "drtext/harness.hpp"
#include "drtext/visualize.hpp"

namespace fs = std::filesystem;
using namespace drtext;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << content;
}

void write_manifest(const std::string& out_dir, const std::string& command, KvMap kv) {
    kv["command"] = command;
    kv["version"] = kVersion;
    write_text_file((fs::path(out_dir) / "manifest.conf").string(), kv_to_text(kv));
}

// defaults, overridden by the config file, overridden by flags the user
// actually passed. Unknown config-file keys are rejected by from_kv.
TrainConfig resolve_config(CLI::App* cmd, const TrainConfig& flag_bound,
                           const std::string& config_path) {
    KvMap kv = TrainConfig{}.to_kv();
    if (!config_path.empty()) {
        for (const auto& [k, v] : read_kv_file(config_path)) kv[k] = v;
    }
    const KvMap flags_kv = flag_bound.to_kv();
    for (const auto* opt : cmd->get_options()) {
        if (opt->count() == 0) continue;
        const std::string key = opt->get_single_name();
        auto it = flags_kv.find(key);
        if (it != flags_kv.end()) kv[key] = it->second;
    }
    return TrainConfig::from_kv(kv);
}

void add_model_options(CLI::App* cmd, TrainConfig& cfg) {
    cmd->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    cmd->add_option("--embedding-size", cfg.embedding_size, "word embedding dimension");
    cmd->add_option("--hidden-units", cfg.hidden_units, "LSTM hidden units per direction");
    cmd->add_option("--capsule-dim", cfg.capsule_dim, "capsule dimension");
    cmd->add_option("--capsules", cfg.capsules, "number of output capsules");
    cmd->add_option("--capsule-iters", cfg.capsule_iters, "routing iterations");
    cmd->add_option("--l2", cfg.l2, "L2 regularization rate");
    cmd->add_option("--lr", cfg.lr, "initial learning rate");
    cmd->add_option("--lr-decay", cfg.lr_decay, "learning rate decay factor");
    cmd->add_option("--lr-decay-steps", cfg.lr_decay_steps, "steps per decay factor");
    cmd->add_option("--batch-size", cfg.batch_size, "initial batch size");
    cmd->add_option("--batch-low-bound", cfg.batch_low_bound, "batch size low bound");
    cmd->add_option("--dropout", cfg.dropout, "dropout rate");
    cmd->add_option("--aggregator", cfg.aggregator,
                    "max|avg|attn|dr-standard|dr-reversed");
    cmd->add_flag("--hierarchical,!--no-hierarchical", cfg.hierarchical,
                  "two-level word/sentence aggregation");
    cmd->add_option("--sentence-aggregator", cfg.sentence_aggregator,
                    "sentence-level aggregator for hierarchical models (default: same)");
    cmd->add_option("--seed", cfg.seed, "run seed");
    cmd->add_option("--max-epochs", cfg.max_epochs, "epoch cap");
    cmd->add_option("--patience", cfg.patience, "early-stop patience in epochs");
    cmd->add_option("--bucket-window", cfg.bucket_window,
                    "initial sliding-bucket size (0 = 4 x batch)");
    cmd->add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
    cmd->add_option("--min-freq", cfg.min_freq, "vocabulary frequency cutoff");
    cmd->add_flag("--lowercase,!--no-lowercase", cfg.lowercase, "lowercase tokens");
    cmd->add_option("--sentence-separator", cfg.sentence_separator,
                    "sentence boundary token in document files");
    cmd->add_option("--format", cfg.format, "sentence|document");
    cmd->add_option("--mlp-hidden", cfg.mlp_hidden, "classifier hidden width (0 = encoder dim)");
    cmd->add_option("--clip-norm", cfg.clip_norm, "global gradient norm clip (0 = off)");
    cmd->add_flag("--stop-on-loss", cfg.stop_on_loss, "early-stop on dev loss instead of accuracy");
    cmd->add_flag("--reg-embeddings", cfg.reg_embeddings, "include embeddings in the L2 term");
    cmd->add_option("--train", cfg.train_path, "training TSV");
    cmd->add_option("--dev", cfg.dev_path, "development TSV");
    cmd->add_option("--test", cfg.test_path, "test TSV");
    cmd->add_option("--embeddings", cfg.embeddings_path, "pretrained embedding text file");
    cmd->add_option("--out", cfg.out_dir, "output directory");
}

struct LoadedData {
    Vocabulary vocab;
    LabelMap labels;
    std::vector<Example> train, dev, test;
    ad::TensorPtr pretrained;  // null unless an embedding file was given
};

LoadedData load_data(const TrainConfig& cfg, bool need_dev, bool need_test) {
    if (cfg.train_path.empty()) throw ConfigError("missing --train dataset path");
    if (need_dev && cfg.dev_path.empty()) throw ConfigError("missing --dev dataset path");
    if (need_test && cfg.test_path.empty()) throw ConfigError("missing --test dataset path");

    const ParseOptions opts = cfg.parse_options();
    LoadedData data;
    const RawDataset raw_train = read_raw(cfg.train_path, opts);
    if (raw_train.examples.empty()) throw ContractError("training file has no usable examples");
    std::vector<std::vector<std::string>> corpus;
    for (const auto& ex : raw_train.examples)
        for (const auto& s : ex.sentences) corpus.push_back(s);
    data.vocab = Vocabulary::build(corpus, cfg.min_freq);

    auto train_parsed = parse_dataset(cfg.train_path, opts, data.vocab);
    data.labels = train_parsed.labels;
    data.train = std::move(train_parsed.examples);
    if (!cfg.dev_path.empty())
        data.dev = parse_dataset(cfg.dev_path, opts, data.vocab, &data.labels).examples;
    if (!cfg.test_path.empty())
        data.test = parse_dataset(cfg.test_path, opts, data.vocab, &data.labels).examples;

    if (!cfg.embeddings_path.empty()) {
        auto loaded = load_pretrained(cfg.embeddings_path, data.vocab, cfg.embedding_size,
                                      cfg.seed ^ 0x9e3779b9ULL);
        std::fprintf(stderr, "embeddings: matched %lld rows (rate %.4f)\n",
                     static_cast<long long>(loaded.matched), loaded.match_rate);
        data.pretrained = loaded.table;
    }
    return data;
}

int cmd_train(TrainConfig& cfg) {
    cfg.validate();
    if (cfg.out_dir.empty()) throw ConfigError("missing --out directory");
    LoadedData data = load_data(cfg, /*need_dev=*/true, /*need_test=*/false);
    fs::create_directories(cfg.out_dir);
    write_manifest(cfg.out_dir, "train", cfg.to_kv());
    write_text_file((fs::path(cfg.out_dir) / "label_map.tsv").string(), data.labels.to_tsv());

    TrainResult result = train(cfg, data.train, data.dev, data.vocab, data.labels,
                               data.pretrained);
    write_text_file((fs::path(cfg.out_dir) / "train_log.tsv").string(), result.log_tsv());
    const std::string ckpt_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
    save_checkpoint(ckpt_path, result.best);

    std::printf("trained %lld epochs; best dev accuracy %s at epoch %lld\n",
                static_cast<long long>(result.epochs_run),
                format_double(result.best_dev_accuracy).c_str(),
                static_cast<long long>(result.best_epoch));
    if (!data.test.empty()) {
        const Metrics test = evaluate_checkpoint(result.best, data.test,
                                                 cfg.resolved_threads());
        write_text_file((fs::path(cfg.out_dir) / "test_metrics.tsv").string(), test.to_tsv());
        std::printf("test accuracy %s\n", format_double(test.accuracy).c_str());
    }
    std::printf("checkpoint: %s\n", ckpt_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& out_dir, std::int64_t threads) {
    if (ckpt_path.empty()) throw ConfigError("missing --checkpoint path");
    if (data_path.empty()) throw ConfigError("missing --data path");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const TrainConfig cfg = TrainConfig::from_kv(ckpt.config);
    const Vocabulary vocab = Vocabulary::from_tokens(ckpt.vocab_tokens);
    const auto parsed = parse_dataset(data_path, cfg.parse_options(), vocab, &ckpt.labels);
    const Metrics metrics =
        evaluate_checkpoint(ckpt, parsed.examples,
                            threads > 0 ? threads : cfg.resolved_threads());
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        KvMap kv = ckpt.config;
        kv["checkpoint"] = ckpt_path;
        kv["data"] = data_path;
        write_manifest(out_dir, "eval", kv);
        write_text_file((fs::path(out_dir) / "metrics.tsv").string(), metrics.to_tsv());
    }
    std::printf("accuracy %s over %lld examples (mean loss %s)\n",
                format_double(metrics.accuracy).c_str(), static_cast<long long>(metrics.count),
                format_double(metrics.mean_loss).c_str());
    return 0;
}

std::vector<std::int64_t> parse_int_list(const std::string& text, const char* what) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": bad integer '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
    return out;
}

int cmd_sweep(TrainConfig& cfg, const std::string& t_list, const std::string& m_list,
              const std::string& seed_list) {
    cfg.validate();
    if (cfg.out_dir.empty()) throw ConfigError("missing --out directory");
    const auto t_values = parse_int_list(t_list, "--t-values");
    const auto m_values = parse_int_list(m_list, "--m-values");
    std::vector<std::uint64_t> seeds;
    if (seed_list.empty()) {
        seeds.push_back(cfg.seed);
    } else {
        for (auto s : parse_int_list(seed_list, "--seeds"))
            seeds.push_back(static_cast<std::uint64_t>(s));
    }
    LoadedData data = load_data(cfg, /*need_dev=*/true, /*need_test=*/true);
    fs::create_directories(cfg.out_dir);
    KvMap kv = cfg.to_kv();
    kv["t-values"] = t_list;
    kv["m-values"] = m_list;
    kv["seeds"] = seed_list;
    write_manifest(cfg.out_dir, "sweep", kv);

    const auto rows = iteration_sweep(cfg, t_values, m_values, seeds, data.train, data.dev,
                                      data.test, data.vocab, data.labels);
    const std::string tsv = sweep_tsv(rows);
    write_text_file((fs::path(cfg.out_dir) / "sweep.tsv").string(), tsv);
    std::fputs(tsv.c_str(), stdout);

    // reported, not asserted: where test accuracy peaks per capsule count
    for (auto m : m_values) {
        double best_acc = -1.0;
        std::int64_t best_t = 0;
        for (const auto& r : rows) {
            if (r.capsules == m && r.test_accuracy > best_acc) {
                best_acc = r.test_accuracy;
                best_t = r.iterations;
            }
        }
        std::printf("# M=%lld: test accuracy peaks at T=%lld (%s)\n",
                    static_cast<long long>(m), static_cast<long long>(best_t),
                    format_double(best_acc).c_str());
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    const auto lines = run_gradcheck(seed);
    bool all_ok = true;
    for (const auto& line : lines) {
        const bool ok = line.max_rel_error < kGradCheckTolerance;
        all_ok = all_ok && ok;
        std::printf("%-12s max_rel_err %.3e  %s\n", line.aggregator.c_str(),
                    line.max_rel_error, ok ? "PASS" : "FAIL");
    }
    return all_ok ? 0 : 2;
}

int cmd_visualize(const std::string& ckpt_path, const std::string& input_path,
                  const std::string& out_dir, std::int64_t iteration) {
    if (ckpt_path.empty()) throw ConfigError("missing --checkpoint path");
    if (input_path.empty()) throw ConfigError("missing --input path");
    if (out_dir.empty()) throw ConfigError("missing --out directory");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const TrainConfig cfg = TrainConfig::from_kv(ckpt.config);
    const bool word_routes = is_routing(cfg.aggregator_kind());
    const bool sentence_routes =
        cfg.hierarchical &&
        is_routing(aggregator_from_string(cfg.sentence_aggregator.empty()
                                              ? cfg.aggregator
                                              : cfg.sentence_aggregator));
    if (!word_routes && !sentence_routes) {
        std::fprintf(stderr, "no routing state to visualize (checkpoint aggregator is %s)\n",
                     cfg.aggregator.c_str());
        return 1;
    }
    const Model model = restore_model(ckpt);
    const Vocabulary vocab = Vocabulary::from_tokens(ckpt.vocab_tokens);

    std::ifstream in(input_path);
    if (!in) throw Error("cannot open input file: " + input_path);
    fs::create_directories(out_dir);

    std::vector<LineVisualization> lines;
    std::string line;
    std::size_t k = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto viz = visualize_line(model, vocab, cfg.parse_options(), line);
        select_iteration(viz, iteration);
        write_text_file(
            (fs::path(out_dir) / ("routing_line" + std::to_string(k) + ".tsv")).string(),
            line_tsv(viz));
        lines.push_back(std::move(viz));
        ++k;
    }
    if (lines.empty()) throw ContractError("visualize: input file has no non-empty lines");
    write_text_file((fs::path(out_dir) / "routing.html").string(),
                    render_html(lines, "routing couplings"));
    KvMap kv = ckpt.config;
    kv["checkpoint"] = ckpt_path;
    kv["input"] = input_path;
    kv["routing-iteration"] = std::to_string(iteration);
    write_manifest(out_dir, "visualize", kv);
    std::printf("wrote %zu line visualizations to %s\n", lines.size(), out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"text-sequence encoding and classification with dynamic-routing aggregation"};
    app.require_subcommand(1);

    TrainConfig train_cfg;
    std::string train_config_path;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_model_options(train_cmd, train_cfg);
    train_cmd->add_option("--config", train_config_path, "flat key = value config file");

    TrainConfig sweep_cfg;
    std::string sweep_config_path;
    std::string t_list = "1,2,3,4,5";
    std::string m_list = "1,2,3,4";
    std::string seed_list;
    auto* sweep_cmd = app.add_subcommand("sweep", "grid over routing iterations x capsules");
    add_model_options(sweep_cmd, sweep_cfg);
    sweep_cmd->add_option("--config", sweep_config_path, "flat key = value config file");
    sweep_cmd->add_option("--t-values", t_list, "comma list of iteration counts");
    sweep_cmd->add_option("--m-values", m_list, "comma list of capsule counts");
    sweep_cmd->add_option("--seeds", seed_list, "comma list of seeds (default: --seed)");

    std::string eval_ckpt, eval_data, eval_out;
    std::int64_t eval_threads = 0;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file");
    eval_cmd->add_option("--data", eval_data, "dataset TSV");
    eval_cmd->add_option("--out", eval_out, "output directory (optional)");
    eval_cmd->add_option("--threads", eval_threads, "worker threads (0 = checkpoint config)");

    std::uint64_t gradcheck_seed = 42;
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of every aggregator");
    gradcheck_cmd->add_option("--seed", gradcheck_seed, "seed for the synthetic model");

    std::string viz_ckpt, viz_input, viz_out;
    std::int64_t viz_iteration = 0;
    auto* viz_cmd = app.add_subcommand("visualize", "routing-coupling heatmaps for input text");
    viz_cmd->add_option("--checkpoint", viz_ckpt, "checkpoint file (routing aggregator)");
    viz_cmd->add_option("--input", viz_input, "text file, one example per line");
    viz_cmd->add_option("--out", viz_out, "output directory");
    viz_cmd->add_option("--routing-iteration", viz_iteration,
                        "1-based iteration to display (0 = final)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*train_cmd) {
            TrainConfig resolved = resolve_config(train_cmd, train_cfg, train_config_path);
            return cmd_train(resolved);
        }
        if (*sweep_cmd) {
            TrainConfig resolved = resolve_config(sweep_cmd, sweep_cfg, sweep_config_path);
            return cmd_sweep(resolved, t_list, m_list, seed_list);
        }
        if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_out, eval_threads);
        if (*gradcheck_cmd) return cmd_gradcheck(gradcheck_seed);
        if (*viz_cmd) return cmd_visualize(viz_ckpt, viz_input, viz_out, viz_iteration);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
