#pragma once

#include <map>
#include <optional>
#include <string>

#include "units/towers.hpp"

namespace units {

struct ModelConfig {
  Index n_blocks = 3;
  Index d = 64;
  Index k = 16;
  Index heads = 4;
  Index p = 10;  // prompt tokens per source
  Index dylinear_base = 32;
  Index max_positions = 64;

  bool operator==(const ModelConfig&) const = default;
};

/// One shared backbone, one GEN tower, one CLS tower, per-source token sets,
/// per-task class embeddings. The pretraining twin GEN tower exists only
/// while pretraining.
class UnitsModel {
 public:
  UnitsModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  ParameterRegistry& registry() { return reg_; }
  const ParameterRegistry& registry() const { return reg_; }
  const PatchEmbedding& embedding() const { return emb_; }
  const Backbone& backbone() const { return backbone_; }
  const GenTower& gen_tower() const { return gen_tower_; }
  const ClsTower& cls_tower() const { return cls_tower_; }

  TokenSet& add_token_set(const std::string& key, Index v);
  bool has_token_set(const std::string& key) const { return token_sets_.count(key) != 0; }
  const TokenSet& token_set(const std::string& key) const;
  const std::map<std::string, TokenSet>& token_sets() const { return token_sets_; }

  ClassEmbeddings& add_class_embeddings(const std::string& task, Index n_classes, Index v);
  void set_class_embeddings(const std::string& task, ClassEmbeddings emb);
  bool has_class_embeddings(const std::string& task) const { return class_embs_.count(task) != 0; }
  const ClassEmbeddings& class_embeddings(const std::string& task) const;
  const std::map<std::string, ClassEmbeddings>& all_class_embeddings() const { return class_embs_; }

  void add_pretrain_tower();
  void remove_pretrain_tower();
  bool has_pretrain_tower() const { return pretrain_tower_.has_value(); }
  const GenTower& pretrain_tower() const;

  /// Positional embeddings + N backbone blocks.
  SegmentedTokens encode(const SegmentedTokens& assembled) const;

 private:
  ModelConfig cfg_;
  std::uint64_t seed_;
  Rng init_rng_;
  ParameterRegistry reg_;
  PatchEmbedding emb_;
  Backbone backbone_;
  GenTower gen_tower_;
  ClsTower cls_tower_;
  std::optional<GenTower> pretrain_tower_;
  std::map<std::string, TokenSet> token_sets_;
  std::map<std::string, ClassEmbeddings> class_embs_;
};

}  // namespace units
