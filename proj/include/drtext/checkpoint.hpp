#pragma once

#include <map>
#include <string>
#include <vector>

#include "drtext/data.hpp"
#include "drtext/model.hpp"

namespace drtext {

using KvMap = std::map<std::string, std::string>;

/// `key = value` lines with # comments; whitespace around keys/values trimmed.
KvMap parse_kv_text(const std::string& text);
KvMap read_kv_file(const std::string& path);
std::string kv_to_text(const KvMap& kv);

/// Single-file container: versioned header, config echo, label map,
/// vocabulary, and named parameter tensors as 64-bit little-endian floats
/// with shape prefixes.
struct Checkpoint {
    KvMap config;
    LabelMap labels;
    std::vector<std::string> vocab_tokens;
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> tensor_shapes;
    std::vector<std::vector<double>> tensor_values;

    void add_tensor(const std::string& name, const ad::TensorPtr& t);
    const std::vector<double>* find_tensor(const std::string& name,
                                           const std::vector<std::int64_t>& expect_shape) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Captures the model weights plus everything needed to rebuild and run it.
Checkpoint snapshot_model(const Model& model, const KvMap& config_echo, const LabelMap& labels,
                          const Vocabulary& vocab);

/// Rebuilds the model from a checkpoint; weights are restored by name and a
/// missing or mis-shaped tensor is an error.
Model restore_model(const Checkpoint& ckpt);

ModelConfig model_config_from_kv(const KvMap& kv, std::int64_t vocab_size,
                                 std::int64_t classes);

}  // namespace drtext
