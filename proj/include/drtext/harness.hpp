#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drtext/checkpoint.hpp"
#include "drtext/data.hpp"
#include "drtext/model.hpp"
#include "drtext/objective.hpp"

namespace drtext {

/// Every Table-2 hyperparameter plus the toolkit's own knobs. Keys in the
/// flat config format match the CLI flag names.
struct TrainConfig {
    std::int64_t embedding_size{300};
    std::int64_t hidden_units{200};
    std::int64_t capsule_dim{200};
    std::int64_t capsules{5};
    std::int64_t capsule_iters{3};
    double l2{1e-5};
    double lr{1e-4};
    double lr_decay{0.9};
    std::int64_t lr_decay_steps{1000};
    std::int64_t batch_size{64};
    std::int64_t batch_low_bound{16};
    double dropout{0.2};

    std::string aggregator{"dr-standard"};
    std::string sentence_aggregator;  // hierarchical sentence level; empty = same
    bool hierarchical{false};
    std::uint64_t seed{42};
    std::int64_t max_epochs{100};
    std::int64_t patience{7};
    std::int64_t bucket_window{0};  // 0 = 4 x batch size
    std::int64_t threads{0};        // 0 = hardware concurrency
    std::int64_t min_freq{1};
    bool lowercase{true};
    std::string sentence_separator{"<sssss>"};
    std::string format{"sentence"};
    std::int64_t mlp_hidden{0};
    double clip_norm{0.0};       // 0 = off
    bool stop_on_loss{false};    // early-stop signal from dev loss instead of accuracy
    bool reg_embeddings{false};  // include the embedding table in the L2 term

    std::string train_path;
    std::string dev_path;
    std::string test_path;
    std::string embeddings_path;
    std::string out_dir;

    void validate() const;
    KvMap to_kv() const;
    static TrainConfig from_kv(const KvMap& kv);  // unknown key -> ConfigError naming it

    ParseOptions parse_options() const;
    AggregatorKind aggregator_kind() const { return aggregator_from_string(aggregator); }
    ModelConfig model_config(std::int64_t vocab_size, std::int64_t classes) const;
    LrSchedule lr_schedule() const { return {lr, lr_decay, lr_decay_steps}; }
    std::int64_t resolved_threads() const;
};

struct Metrics {
    double accuracy{0.0};
    double mean_loss{0.0};
    std::int64_t count{0};
    std::int64_t classes{0};
    std::vector<std::int64_t> confusion;  // classes x classes, row = true label

    std::string to_tsv() const;
};

struct EpochLog {
    std::int64_t epoch{0};
    double train_loss{0.0};
    double dev_accuracy{0.0};
    double learning_rate{0.0};
    std::int64_t batch_size{0};
    std::int64_t window_size{0};
};

struct TrainResult {
    std::vector<EpochLog> log;
    double best_dev_accuracy{0.0};
    std::int64_t best_epoch{-1};
    std::int64_t epochs_run{0};
    Checkpoint best;  // snapshot at the best dev epoch

    std::string log_tsv() const;
};

/// Epochs of sliding-bucket batches -> forward (dropout on) -> loss ->
/// backward -> Adam with the decayed rate. Dev accuracy drives the best
/// checkpoint (strict improvement; ties keep the earlier epoch), the early
/// stop counter and the sampler's window/batch feedback. Aborts with a
/// diagnostic naming the step when the loss goes non-finite.
TrainResult train(const TrainConfig& config, const std::vector<Example>& train_set,
                  const std::vector<Example>& dev_set, const Vocabulary& vocab,
                  const LabelMap& labels, ad::TensorPtr pretrained_embeddings = nullptr);

/// Deterministic, dropout off; examples may be scored on several threads over
/// the read-only weights.
Metrics evaluate_model(const Model& model, const std::vector<Example>& dataset,
                       std::int64_t threads);

/// Restores the checkpoint and scores the dataset; labels must fit the
/// checkpoint's class count.
Metrics evaluate_checkpoint(const Checkpoint& ckpt, const std::vector<Example>& dataset,
                            std::int64_t threads);

// ---------------------------------------------------------------------------
// iteration sweep (one model per (T, M, seed))
// ---------------------------------------------------------------------------

struct SweepRow {
    std::int64_t iterations{0};
    std::int64_t capsules{0};
    std::uint64_t seed{0};
    double dev_accuracy{0.0};
    double test_accuracy{0.0};
};

std::vector<SweepRow> iteration_sweep(const TrainConfig& base,
                                      const std::vector<std::int64_t>& t_values,
                                      const std::vector<std::int64_t>& m_values,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::vector<Example>& train_set,
                                      const std::vector<Example>& dev_set,
                                      const std::vector<Example>& test_set,
                                      const Vocabulary& vocab, const LabelMap& labels);

std::string sweep_tsv(const std::vector<SweepRow>& rows);

std::string format_double(double v);  // shortest exact round-trip formatting

// ---------------------------------------------------------------------------
// gradient check over a tiny randomly-initialized full model per aggregator
// ---------------------------------------------------------------------------

struct GradCheckLine {
    std::string aggregator;
    double max_rel_error{0.0};
};

/// Full-model finite-difference check (d=8, u=6, M=3, d_c=5, L=7, T=3) for
/// every aggregator; sampled coordinates keep it fast.
std::vector<GradCheckLine> run_gradcheck(std::uint64_t seed);
constexpr double kGradCheckTolerance = 1e-4;

}  // namespace drtext
