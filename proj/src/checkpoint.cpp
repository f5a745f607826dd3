#include "units/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace units::checkpoint {

namespace {

constexpr char kMagic[4] = {'U', 'N', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv_bytes(const std::string& buf) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : buf) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Integers are serialized little-endian byte by byte so the file format does
// not depend on host endianness.
template <typename T>
void put_int(std::string& buf, T value) {
  auto u = static_cast<std::make_unsigned_t<T>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  put_int(buf, bits);
}

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}

  template <typename T>
  T get_int() {
    if (pos_ + sizeof(T) > buf_.size()) throw DataError("truncated checkpoint");
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  double get_f64() {
    const std::uint64_t bits = get_int<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string get_bytes(std::size_t n) {
    if (pos_ + n > buf_.size()) throw DataError("truncated checkpoint");
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

void put_config(std::string& buf, const ModelConfig& cfg) {
  put_int<std::int64_t>(buf, cfg.n_blocks);
  put_int<std::int64_t>(buf, cfg.d);
  put_int<std::int64_t>(buf, cfg.k);
  put_int<std::int64_t>(buf, cfg.heads);
  put_int<std::int64_t>(buf, cfg.p);
  put_int<std::int64_t>(buf, cfg.dylinear_base);
  put_int<std::int64_t>(buf, cfg.max_positions);
}

ModelConfig get_config(Reader& r) {
  ModelConfig cfg;
  cfg.n_blocks = r.get_int<std::int64_t>();
  cfg.d = r.get_int<std::int64_t>();
  cfg.k = r.get_int<std::int64_t>();
  cfg.heads = r.get_int<std::int64_t>();
  cfg.p = r.get_int<std::int64_t>();
  cfg.dylinear_base = r.get_int<std::int64_t>();
  cfg.max_positions = r.get_int<std::int64_t>();
  return cfg;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

}  // namespace

void save(const std::string& path, const UnitsModel& model) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_int(buf, kVersion);
  put_config(buf, model.config());
  put_int(buf, model.seed());
  const auto& items = model.registry().items();
  put_int(buf, static_cast<std::uint64_t>(items.size()));
  for (const auto& [name, t] : items) {
    put_int(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    buf.push_back(0);  // dtype tag: float64
    put_int(buf, static_cast<std::uint32_t>(t->shape.size()));
    for (Index dim : t->shape) put_int(buf, static_cast<std::uint64_t>(dim));
    for (Index i = 0; i < t->numel(); ++i) put_f64(buf, t->value[i]);
  }
  put_int(buf, fnv_bytes(buf));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

UnitsModel load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + sizeof(std::uint64_t)) throw DataError("truncated checkpoint");
  const std::string body = buf.substr(0, buf.size() - sizeof(std::uint64_t));
  Reader tail(buf.substr(buf.size() - sizeof(std::uint64_t)));
  if (tail.get_int<std::uint64_t>() != fnv_bytes(body)) {
    throw DataError("checkpoint checksum mismatch: " + path);
  }

  Reader r(body);
  if (r.get_bytes(4) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError("not a model checkpoint: " + path);
  }
  const auto version = r.get_int<std::uint32_t>();
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const ModelConfig cfg = get_config(r);
  const auto seed = r.get_int<std::uint64_t>();
  const auto n_entries = r.get_int<std::uint64_t>();

  struct Entry {
    std::string name;
    Shape shape;
    Eigen::VectorXd values;
  };
  std::vector<Entry> entries;
  entries.reserve(n_entries);
  for (std::uint64_t e = 0; e < n_entries; ++e) {
    Entry ent;
    const auto name_len = r.get_int<std::uint32_t>();
    ent.name = r.get_bytes(name_len);
    const auto dtype = r.get_bytes(1);
    if (dtype[0] != 0) throw DataError("unknown dtype tag in checkpoint entry " + ent.name);
    const auto rank = r.get_int<std::uint32_t>();
    Index numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      ent.shape.push_back(static_cast<Index>(r.get_int<std::uint64_t>()));
      numel *= ent.shape.back();
    }
    ent.values.resize(numel);
    for (Index i = 0; i < numel; ++i) ent.values[i] = r.get_f64();
    entries.push_back(std::move(ent));
  }

  UnitsModel model(cfg, seed);
  // The base model lacks per-source and per-task structures; rebuild them
  // from entry names before copying values in.
  for (const auto& ent : entries) {
    if (starts_with(ent.name, "tokens.") && ent.name.size() > 4 &&
        ent.name.compare(ent.name.size() - 4, 4, ".gen") == 0) {
      const std::string key = ent.name.substr(7, ent.name.size() - 7 - 4);
      if (!model.has_token_set(key)) {
        if (ent.shape.size() != 3) throw DataError("malformed token entry: " + ent.name);
        model.add_token_set(key, ent.shape[1]);
      }
    } else if (starts_with(ent.name, "class_embeddings.")) {
      const std::string task = ent.name.substr(17);
      if (!model.has_class_embeddings(task)) {
        if (ent.shape.size() != 3) throw DataError("malformed class-embedding entry: " + ent.name);
        model.add_class_embeddings(task, ent.shape[0], ent.shape[1]);
      }
    } else if (starts_with(ent.name, "towers.gen_pretrain.")) {
      if (!model.has_pretrain_tower()) model.add_pretrain_tower();
    }
  }

  auto& reg = model.registry();
  if (entries.size() != reg.size()) {
    throw DataError("checkpoint entry count does not match the model layout");
  }
  for (const auto& ent : entries) {
    auto t = reg.get(ent.name);
    if (t->shape != ent.shape || t->numel() != ent.values.size()) {
      throw DataError("shape mismatch for checkpoint entry " + ent.name);
    }
    t->value = ent.values;
  }
  return model;
}

UnitsModel load_expect(const std::string& path, const ModelConfig& expected) {
  UnitsModel model = load(path);
  if (!(model.config() == expected)) {
    throw ConfigError("checkpoint model config does not match the run config");
  }
  return model;
}

}  // namespace units::checkpoint
