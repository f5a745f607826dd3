#include "units/model.hpp"

namespace units {

UnitsModel::UnitsModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), init_rng_(Rng(seed).fork(0x6d6f64656cULL)) {
  if (cfg_.d % 2 != 0) throw ConfigError("embedding dim must be even");
  if (cfg_.d % cfg_.heads != 0) throw ConfigError("embedding dim not divisible by head count");
  emb_ = PatchEmbedding::create(reg_, "embedding", cfg_.k, cfg_.d, cfg_.max_positions, init_rng_);
  backbone_ = Backbone::create(reg_, cfg_.n_blocks, cfg_.d, cfg_.heads, cfg_.dylinear_base,
                               init_rng_);
  gen_tower_ = GenTower::create(reg_, "towers.gen", cfg_.d, cfg_.dylinear_base, init_rng_);
  cls_tower_ = ClsTower::create(reg_, "towers.cls", cfg_.d, cfg_.heads, init_rng_);
}

TokenSet& UnitsModel::add_token_set(const std::string& key, Index v) {
  if (token_sets_.count(key)) throw ConfigError("token set already exists: " + key);
  Rng rng = init_rng_.fork(fnv1a64(key));
  token_sets_.emplace(key, TokenSet::create(reg_, key, cfg_.p, v, cfg_.d, rng));
  return token_sets_.at(key);
}

const TokenSet& UnitsModel::token_set(const std::string& key) const {
  auto it = token_sets_.find(key);
  if (it == token_sets_.end()) throw ConfigError("unknown data source: " + key);
  return it->second;
}

ClassEmbeddings& UnitsModel::add_class_embeddings(const std::string& task, Index n_classes,
                                                  Index v) {
  if (class_embs_.count(task)) throw ConfigError("class embeddings already exist: " + task);
  if (n_classes < 2) throw ConfigError("classification needs at least 2 classes");
  Rng rng = init_rng_.fork(fnv1a64("cls:" + task));
  ClassEmbeddings ce;
  ce.z_e = reg_.add("class_embeddings." + task, randn_tensor(rng, {n_classes, v, cfg_.d}, 0.02));
  ce.mode = ClassEmbeddingMode::kTrained;
  class_embs_.emplace(task, ce);
  return class_embs_.at(task);
}

void UnitsModel::set_class_embeddings(const std::string& task, ClassEmbeddings emb) {
  class_embs_[task] = std::move(emb);
}

const ClassEmbeddings& UnitsModel::class_embeddings(const std::string& task) const {
  auto it = class_embs_.find(task);
  if (it == class_embs_.end()) throw ConfigError("no class embeddings for task: " + task);
  return it->second;
}

void UnitsModel::add_pretrain_tower() {
  if (pretrain_tower_) return;
  Rng rng = init_rng_.fork(0x70726574ULL);
  pretrain_tower_ = GenTower::create(reg_, "towers.gen_pretrain", cfg_.d, cfg_.dylinear_base, rng);
}

void UnitsModel::remove_pretrain_tower() {
  if (!pretrain_tower_) return;
  reg_.remove_prefix("towers.gen_pretrain");
  pretrain_tower_.reset();
}

const GenTower& UnitsModel::pretrain_tower() const {
  if (!pretrain_tower_) throw StateError("pretrain tower is absent");
  return *pretrain_tower_;
}

SegmentedTokens UnitsModel::encode(const SegmentedTokens& assembled) const {
  return backbone_forward(add_positions(assembled, emb_), backbone_);
}

}  // namespace units
