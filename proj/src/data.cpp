#include "drtext/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace drtext {

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text, bool lowercase) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        if (lowercase) {
            for (auto& ch : tok)
                ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        }
        tokens.push_back(tok);
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
    tokens_ = {kPadToken, kUnkToken};
    ids_ = {{kPadToken, kPadId}, {kUnkToken, kUnkId}};
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus_sentences,
                             std::int64_t min_freq) {
    if (corpus_sentences.empty()) throw ContractError("build_vocab: empty corpus");
    std::unordered_map<std::string, std::int64_t> freq;
    for (const auto& sent : corpus_sentences)
        for (const auto& tok : sent) ++freq[tok];

    std::vector<std::pair<std::string, std::int64_t>> kept;
    kept.reserve(freq.size());
    for (auto& [tok, n] : freq)
        if (n >= min_freq) kept.emplace_back(tok, n);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.tokens_.reserve(kept.size() + 2);
    for (auto& [tok, n] : kept) {
        vocab.ids_[tok] = static_cast<std::int64_t>(vocab.tokens_.size());
        vocab.tokens_.push_back(tok);
    }
    return vocab;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
        throw ContractError("vocabulary token list must start with the pad and unk tokens");
    }
    Vocabulary vocab;
    vocab.tokens_ = std::move(tokens);
    vocab.ids_.clear();
    for (std::size_t i = 0; i < vocab.tokens_.size(); ++i)
        vocab.ids_[vocab.tokens_[i]] = static_cast<std::int64_t>(i);
    return vocab;
}

std::int64_t Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(std::int64_t id) const {
    if (id < 0 || id >= size()) {
        throw LookupError("token_of: id " + std::to_string(id) + " outside vocabulary");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

namespace {

bool is_integer_field(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

}  // namespace

RawDataset read_raw(const std::string& path, const ParseOptions& options) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);
    RawDataset out;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": missing tab separator");
        }
        RawExample ex;
        ex.label = line.substr(0, tab);
        if (!is_integer_field(ex.label)) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": non-integer label '" +
                             ex.label + "'");
        }
        const std::string text = line.substr(tab + 1);
        auto tokens = tokenize(text, options.lowercase);

        std::vector<std::string> current;
        for (auto& tok : tokens) {
            if (options.format == DataFormat::kDocument &&
                tok == options.sentence_separator) {
                if (!current.empty()) ex.sentences.push_back(std::move(current));
                current.clear();
            } else {
                current.push_back(std::move(tok));
            }
        }
        if (!current.empty()) ex.sentences.push_back(std::move(current));
        if (ex.sentences.empty()) {
            ++out.dropped_empty;
            continue;
        }
        out.examples.push_back(std::move(ex));
    }
    return out;
}

std::int64_t LabelMap::id_of(const std::string& raw) const {
    auto it = ids_.find(raw);
    if (it == ids_.end()) {
        throw ContractError("label '" + raw + "' not present in the training label map");
    }
    return it->second;
}

std::int64_t LabelMap::intern(const std::string& raw) {
    auto it = ids_.find(raw);
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<std::int64_t>(raw_labels_.size());
    ids_[raw] = id;
    raw_labels_.push_back(raw);
    return id;
}

std::string LabelMap::to_tsv() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < raw_labels_.size(); ++i)
        os << raw_labels_[i] << '\t' << i << '\n';
    return os.str();
}

LabelMap LabelMap::from_tsv(const std::string& text) {
    LabelMap map;
    std::istringstream in(text);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("label map line " + std::to_string(line_no) + ": missing tab");
        }
        const std::string raw = line.substr(0, tab);
        const std::int64_t id = map.intern(raw);
        if (std::to_string(id) != line.substr(tab + 1)) {
            throw ParseError("label map line " + std::to_string(line_no) +
                             ": ids must be contiguous in order");
        }
    }
    return map;
}

std::int64_t Example::total_tokens() const {
    std::int64_t n = 0;
    for (const auto& s : sentences) n += static_cast<std::int64_t>(s.size());
    return n;
}

std::vector<std::int64_t> Example::flat_tokens() const {
    std::vector<std::int64_t> flat;
    flat.reserve(static_cast<std::size_t>(total_tokens()));
    for (const auto& s : sentences) flat.insert(flat.end(), s.begin(), s.end());
    return flat;
}

ParsedDataset parse_dataset(const std::string& path, const ParseOptions& options,
                            const Vocabulary& vocab, const LabelMap* existing_labels) {
    RawDataset raw = read_raw(path, options);
    ParsedDataset out;
    out.dropped_empty = raw.dropped_empty;
    if (existing_labels != nullptr) out.labels = *existing_labels;
    out.examples.reserve(raw.examples.size());
    for (auto& rex : raw.examples) {
        Example ex;
        ex.label = existing_labels != nullptr ? out.labels.id_of(rex.label)
                                              : out.labels.intern(rex.label);
        ex.sentences.reserve(rex.sentences.size());
        for (auto& sent : rex.sentences) {
            std::vector<std::int64_t> ids;
            ids.reserve(sent.size());
            for (auto& tok : sent) ids.push_back(vocab.id_of(tok));
            ex.sentences.push_back(std::move(ids));
        }
        out.examples.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// pretrained embeddings
// ---------------------------------------------------------------------------

PretrainedLoad load_pretrained(const std::string& path, const Vocabulary& vocab,
                               std::int64_t dim, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open embedding file: " + path);

    // Random rows first; file rows overwrite the matched ones.
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.1);
    const auto vocab_size = vocab.size();
    std::vector<double> table(static_cast<std::size_t>(vocab_size * dim));
    for (auto& x : table) x = dist(rng);
    for (std::int64_t j = 0; j < dim; ++j) table[Vocabulary::kPadId * dim + j] = 0.0;

    std::string line;
    std::int64_t line_no = 0;
    std::int64_t matched = 0;
    std::vector<bool> seen(static_cast<std::size_t>(vocab_size), false);
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        std::vector<double> row;
        row.reserve(static_cast<std::size_t>(dim));
        double v;
        while (ls >> v) row.push_back(v);
        if (!ls.eof()) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": malformed value");
        }
        if (static_cast<std::int64_t>(row.size()) != dim) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(dim) + " values, got " +
                             std::to_string(row.size()));
        }
        const auto id = vocab.id_of(token);
        if (id == Vocabulary::kUnkId && token != Vocabulary::kUnkToken) continue;
        if (id == Vocabulary::kPadId) continue;  // pad stays zero
        if (seen[static_cast<std::size_t>(id)]) continue;  // first occurrence wins
        seen[static_cast<std::size_t>(id)] = true;
        ++matched;
        std::copy(row.begin(), row.end(), table.begin() + id * dim);
    }

    PretrainedLoad out;
    out.matched = matched;
    const auto real_tokens = std::max<std::int64_t>(1, vocab_size - 2);
    out.match_rate = static_cast<double>(matched) / static_cast<double>(real_tokens);
    out.table = ad::leaf({vocab_size, dim}, std::move(table), /*requires_grad=*/true);
    return out;
}

// ---------------------------------------------------------------------------
// batches
// ---------------------------------------------------------------------------

Batch make_batch(const std::vector<Example>& dataset,
                 const std::vector<std::int64_t>& indices) {
    if (indices.empty()) throw ContractError("make_batch: empty index list");
    Batch batch;
    batch.example_indices = indices;
    batch.rows = static_cast<std::int64_t>(indices.size());
    for (auto idx : indices) {
        const auto& ex = dataset.at(static_cast<std::size_t>(idx));
        batch.labels.push_back(ex.label);
        batch.lengths.push_back(ex.total_tokens());
        std::vector<std::int64_t> sl;
        sl.reserve(ex.sentences.size());
        for (const auto& s : ex.sentences) sl.push_back(static_cast<std::int64_t>(s.size()));
        batch.sentence_lengths.push_back(std::move(sl));
        batch.cols = std::max(batch.cols, ex.total_tokens());
    }
    batch.padded.assign(static_cast<std::size_t>(batch.rows * batch.cols), Vocabulary::kPadId);
    batch.mask.assign(static_cast<std::size_t>(batch.rows * batch.cols), false);
    for (std::int64_t b = 0; b < batch.rows; ++b) {
        const auto flat = dataset[static_cast<std::size_t>(indices[b])].flat_tokens();
        for (std::size_t t = 0; t < flat.size(); ++t) {
            batch.padded[b * batch.cols + static_cast<std::int64_t>(t)] = flat[t];
            batch.mask[b * batch.cols + static_cast<std::int64_t>(t)] = true;
        }
    }
    return batch;
}

std::vector<std::int64_t> Batch::padded_row(std::int64_t b) const {
    return {padded.begin() + b * cols, padded.begin() + (b + 1) * cols};
}

std::vector<bool> Batch::mask_row(std::int64_t b) const {
    return {mask.begin() + b * cols, mask.begin() + (b + 1) * cols};
}

std::vector<std::vector<std::int64_t>> Batch::unpad_row(std::int64_t b) const {
    std::vector<std::vector<std::int64_t>> sentences;
    std::int64_t offset = b * cols;
    for (auto len : sentence_lengths[static_cast<std::size_t>(b)]) {
        sentences.emplace_back(padded.begin() + offset, padded.begin() + offset + len);
        offset += len;
    }
    return sentences;
}

// ---------------------------------------------------------------------------
// BucketSampler
// ---------------------------------------------------------------------------

BucketSampler::BucketSampler(std::vector<std::int64_t> example_lengths, SamplerConfig config)
    : batch_size_(config.batch_size),
      low_bound_(config.batch_low_bound),
      dataset_size_(static_cast<std::int64_t>(example_lengths.size())),
      rng_(config.seed) {
    if (dataset_size_ == 0) throw ContractError("sampler: dataset is empty");
    if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
    if (low_bound_ < 1) throw ConfigError("batch size low bound must be >= 1");
    window_size_ = config.window_size > 0 ? config.window_size : 4 * batch_size_;
    window_size_ = std::min(window_size_, dataset_size_);

    sorted_indices_.resize(static_cast<std::size_t>(dataset_size_));
    for (std::int64_t i = 0; i < dataset_size_; ++i) sorted_indices_[i] = i;
    std::stable_sort(sorted_indices_.begin(), sorted_indices_.end(),
                     [&](std::int64_t a, std::int64_t b) {
                         return example_lengths[static_cast<std::size_t>(a)] <
                                example_lengths[static_cast<std::size_t>(b)];
                     });
}

std::vector<std::vector<std::int64_t>> BucketSampler::epoch_batches() {
    // The bucket always covers the first `window` unconsumed items of the
    // length-sorted order; chosen items are removed, so the window slides
    // forward as the epoch progresses.
    std::vector<std::int64_t> remaining = sorted_indices_;
    std::vector<std::vector<std::int64_t>> batches;
    while (!remaining.empty()) {
        const auto left = static_cast<std::int64_t>(remaining.size());
        const auto window = std::min(window_size_, left);
        const auto take = std::min(batch_size_, window);

        // sample `take` distinct offsets within the window (partial shuffle)
        std::vector<std::int64_t> offsets(static_cast<std::size_t>(window));
        for (std::int64_t i = 0; i < window; ++i) offsets[static_cast<std::size_t>(i)] = i;
        for (std::int64_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<std::int64_t> pickd(i, window - 1);
            std::swap(offsets[static_cast<std::size_t>(i)],
                      offsets[static_cast<std::size_t>(pickd(rng_))]);
        }
        offsets.resize(static_cast<std::size_t>(take));
        std::sort(offsets.begin(), offsets.end());

        std::vector<std::int64_t> batch;
        batch.reserve(static_cast<std::size_t>(take));
        for (auto off : offsets) batch.push_back(remaining[static_cast<std::size_t>(off)]);

        // remove chosen items, preserving sorted order of the rest
        std::vector<std::int64_t> rest;
        rest.reserve(remaining.size() - static_cast<std::size_t>(take));
        std::size_t oi = 0;
        for (std::int64_t i = 0; i < left; ++i) {
            if (oi < offsets.size() && offsets[oi] == i) {
                ++oi;
            } else {
                rest.push_back(remaining[static_cast<std::size_t>(i)]);
            }
        }
        remaining = std::move(rest);
        batches.push_back(std::move(batch));
    }
    return batches;
}

void BucketSampler::on_no_improvement() {
    window_size_ = std::min(window_size_ * 2, dataset_size_);
    batch_size_ = std::max(batch_size_ / 2, low_bound_);
}

}  // namespace drtext
