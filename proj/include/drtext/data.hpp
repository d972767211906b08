#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "drtext/tensor.hpp"

namespace drtext {

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

/// Token ids with reserved 0 = pad, 1 = unk. Construction is deterministic:
/// tokens with frequency >= min_freq, ordered by (frequency desc, token asc).
class Vocabulary {
  public:
    static constexpr std::int64_t kPadId = 0;
    static constexpr std::int64_t kUnkId = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kUnkToken = "<unk>";

    Vocabulary();

    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus_sentences,
                            std::int64_t min_freq);

    std::int64_t id_of(const std::string& token) const;  // kUnkId when absent
    const std::string& token_of(std::int64_t id) const;
    std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }

    /// Restores a vocabulary from its id-ordered token list (checkpoints).
    static Vocabulary from_tokens(std::vector<std::string> tokens);
    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int64_t> ids_;
};

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

enum class DataFormat { kSentence, kDocument };

struct ParseOptions {
    DataFormat format{DataFormat::kSentence};
    std::string sentence_separator{"<sssss>"};
    bool lowercase{true};
};

struct RawExample {
    std::string label;
    std::vector<std::vector<std::string>> sentences;  // non-empty sentences only
};

/// Tokenized file contents before vocabulary lookup; `dropped_empty` counts
/// lines whose text produced no tokens at all.
struct RawDataset {
    std::vector<RawExample> examples;
    std::int64_t dropped_empty{0};
};

/// Reads the TSV (`<label>\t<tokenized text>`); document format splits the
/// text on the separator token. Throws ParseError (with line number) on a
/// missing tab or a non-integer label.
RawDataset read_raw(const std::string& path, const ParseOptions& options);

/// Raw label values in first-seen order mapped to contiguous 0-based ids.
class LabelMap {
  public:
    std::int64_t id_of(const std::string& raw) const;   // throws ContractError when absent
    std::int64_t intern(const std::string& raw);        // adds when absent
    std::int64_t size() const { return static_cast<std::int64_t>(raw_labels_.size()); }
    const std::vector<std::string>& raw_labels() const { return raw_labels_; }

    std::string to_tsv() const;  // raw_label \t class_id per line
    static LabelMap from_tsv(const std::string& text);

  private:
    std::vector<std::string> raw_labels_;
    std::unordered_map<std::string, std::int64_t> ids_;
};

struct Example {
    std::int64_t label{0};
    std::vector<std::vector<std::int64_t>> sentences;

    std::int64_t total_tokens() const;
    std::vector<std::int64_t> flat_tokens() const;
};

struct ParsedDataset {
    std::vector<Example> examples;
    LabelMap labels;
    std::int64_t dropped_empty{0};
};

/// read_raw + label interning + vocabulary lookup. When `existing_labels` is
/// given (dev/test sets) its mapping is reused and unseen raw labels are an
/// error; otherwise the map is built in first-seen order.
ParsedDataset parse_dataset(const std::string& path, const ParseOptions& options,
                            const Vocabulary& vocab, const LabelMap* existing_labels = nullptr);

// ---------------------------------------------------------------------------
// pretrained embeddings
// ---------------------------------------------------------------------------

struct PretrainedLoad {
    ad::TensorPtr table;  // vocab x dim, requires_grad, pad row zero
    double match_rate{0.0};
    std::int64_t matched{0};
};

/// Whitespace text format, one `token v1 ... v_d` per line. Vocabulary rows
/// found in the file are copied bit-exactly; missing rows are N(0, 0.1)
/// draws from `seed`; the pad row is zero. Wrong value count on a line is a
/// ParseError naming the line.
PretrainedLoad load_pretrained(const std::string& path, const Vocabulary& vocab,
                               std::int64_t dim, std::uint64_t seed);

// ---------------------------------------------------------------------------
// batches
// ---------------------------------------------------------------------------

/// Examples padded to a common flat length. The mask is true exactly at real
/// tokens; sentence structure is kept alongside so documents can be rebuilt.
struct Batch {
    std::vector<std::int64_t> example_indices;
    std::vector<std::int64_t> labels;

    std::int64_t rows{0};
    std::int64_t cols{0};
    std::vector<std::int64_t> padded;  // rows x cols, pad id 0
    std::vector<bool> mask;            // rows x cols
    std::vector<std::int64_t> lengths;
    std::vector<std::vector<std::int64_t>> sentence_lengths;

    std::vector<std::int64_t> padded_row(std::int64_t b) const;
    std::vector<bool> mask_row(std::int64_t b) const;
    /// Reconstructs example b's sentences exactly (padding round trip).
    std::vector<std::vector<std::int64_t>> unpad_row(std::int64_t b) const;
};

Batch make_batch(const std::vector<Example>& dataset,
                 const std::vector<std::int64_t>& indices);

// ---------------------------------------------------------------------------
// sliding-bucket sampler
// ---------------------------------------------------------------------------

struct SamplerConfig {
    std::int64_t batch_size{64};
    std::int64_t batch_low_bound{16};
    std::int64_t window_size{0};  // 0 = 4 * batch_size
    std::uint64_t seed{0};
};

/// Length-sorted window sampling. Every epoch yields each example exactly
/// once; on a no-improvement signal the window doubles (capped at the
/// dataset size) and the batch size halves (floored at the low bound).
class BucketSampler {
  public:
    BucketSampler(std::vector<std::int64_t> example_lengths, SamplerConfig config);

    std::vector<std::vector<std::int64_t>> epoch_batches();
    void on_no_improvement();

    std::int64_t batch_size() const { return batch_size_; }
    std::int64_t window_size() const { return window_size_; }

  private:
    std::vector<std::int64_t> sorted_indices_;  // by (length, index)
    std::int64_t batch_size_{0};
    std::int64_t low_bound_{0};
    std::int64_t window_size_{0};
    std::int64_t dataset_size_{0};
    std::mt19937_64 rng_;
};

// tokenization helper shared by parsing and the visualizer
std::vector<std::string> tokenize(const std::string& text, bool lowercase);

}  // namespace drtext
