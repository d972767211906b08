#include "drtext/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace drtext {

// ---------------------------------------------------------------------------
// key = value text
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(line_no) +
                             ": expected key = value, got '" + stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ParseError("config line " + std::to_string(line_no) + ": empty key");
        }
        kv[key] = value;
    }
    return kv;
}

KvMap read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
}

std::string kv_to_text(const KvMap& kv) {
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// binary io (explicit little-endian)
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'R', 'T', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t v{};
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}

void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    const std::uint64_t v = get_u64(is);
    double d{};
    std::memcpy(&d, &v, 8);
    return d;
}

std::string get_str(std::istream& is) {
    const auto n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

}  // namespace

void Checkpoint::add_tensor(const std::string& name, const ad::TensorPtr& t) {
    tensor_shapes.emplace_back(name, t->shape);
    tensor_values.push_back(t->values);
}

const std::vector<double>* Checkpoint::find_tensor(
    const std::string& name, const std::vector<std::int64_t>& expect_shape) const {
    for (std::size_t i = 0; i < tensor_shapes.size(); ++i) {
        if (tensor_shapes[i].first != name) continue;
        if (tensor_shapes[i].second != expect_shape) {
            throw DimensionError("checkpoint tensor " + name + " has shape " +
                                 ad::shape_str(tensor_shapes[i].second) + ", expected " +
                                 ad::shape_str(expect_shape));
        }
        return &tensor_values[i];
    }
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write checkpoint: " + path);
    os.write(kMagic, 8);
    put_u32(os, 1);  // version
    put_str(os, kv_to_text(ckpt.config));
    put_str(os, ckpt.labels.to_tsv());
    std::ostringstream vocab_text;
    for (const auto& tok : ckpt.vocab_tokens) vocab_text << tok << '\n';
    put_str(os, vocab_text.str());
    put_u32(os, static_cast<std::uint32_t>(ckpt.tensor_shapes.size()));
    for (std::size_t i = 0; i < ckpt.tensor_shapes.size(); ++i) {
        const auto& [name, shape] = ckpt.tensor_shapes[i];
        put_str(os, name);
        put_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) put_u64(os, static_cast<std::uint64_t>(d));
        for (double v : ckpt.tensor_values[i]) put_f64(os, v);
    }
    if (!os) throw Error("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw ParseError("not a drtext checkpoint: " + path);
    }
    const auto version = get_u32(is);
    if (version != 1) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config = parse_kv_text(get_str(is));
    ckpt.labels = LabelMap::from_tsv(get_str(is));
    {
        std::istringstream vt(get_str(is));
        std::string tok;
        while (std::getline(vt, tok)) ckpt.vocab_tokens.push_back(tok);
    }
    const auto n_tensors = get_u32(is);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::string name = get_str(is);
        const auto ndim = get_u32(is);
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::int64_t>(get_u64(is));
        std::vector<double> values(static_cast<std::size_t>(ad::shape_numel(shape)));
        for (auto& v : values) v = get_f64(is);
        if (!is) throw ParseError("truncated checkpoint: " + path);
        ckpt.tensor_shapes.emplace_back(name, std::move(shape));
        ckpt.tensor_values.push_back(std::move(values));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// model <-> checkpoint
// ---------------------------------------------------------------------------

namespace {

std::string require_key(const KvMap& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("checkpoint config missing key '" + key + "'");
    return it->second;
}

std::int64_t to_i64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const auto v = std::stoll(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected integer, got '" + value + "'");
    }
}

}  // namespace

ModelConfig model_config_from_kv(const KvMap& kv, std::int64_t vocab_size,
                                 std::int64_t classes) {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.classes = classes;
    mc.embedding_dim = to_i64("embedding-size", require_key(kv, "embedding-size"));
    mc.hidden_units = to_i64("hidden-units", require_key(kv, "hidden-units"));
    mc.capsules = to_i64("capsules", require_key(kv, "capsules"));
    mc.capsule_dim = to_i64("capsule-dim", require_key(kv, "capsule-dim"));
    mc.iterations = to_i64("capsule-iters", require_key(kv, "capsule-iters"));
    mc.aggregator = aggregator_from_string(require_key(kv, "aggregator"));
    if (auto it = kv.find("sentence-aggregator"); it != kv.end() && !it->second.empty())
        mc.sentence_aggregator = aggregator_from_string(it->second);
    mc.hierarchical = require_key(kv, "hierarchical") == "true";
    mc.mlp_hidden = to_i64("mlp-hidden", require_key(kv, "mlp-hidden"));
    return mc;
}

Checkpoint snapshot_model(const Model& model, const KvMap& config_echo, const LabelMap& labels,
                          const Vocabulary& vocab) {
    Checkpoint ckpt;
    ckpt.config = config_echo;
    ckpt.labels = labels;
    ckpt.vocab_tokens = vocab.tokens();
    for (const auto& p : model.params()) ckpt.add_tensor(p.name, p.tensor);
    return ckpt;
}

Model restore_model(const Checkpoint& ckpt) {
    const auto vocab_size = static_cast<std::int64_t>(ckpt.vocab_tokens.size());
    const auto classes = ckpt.labels.size();
    const ModelConfig mc = model_config_from_kv(ckpt.config, vocab_size, classes);
    std::mt19937_64 rng(0);  // values are overwritten below
    Model model(mc, rng);
    for (const auto& p : model.params()) {
        const auto* values = ckpt.find_tensor(p.name, p.tensor->shape);
        if (values == nullptr) {
            throw ParseError("checkpoint is missing tensor '" + p.name + "'");
        }
        p.tensor->values = *values;
    }
    return model;
}

}  // namespace drtext
