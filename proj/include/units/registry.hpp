#pragma once

#include <map>
#include <set>
#include <string>

#include "units/tensor.hpp"

namespace units {

/// Named registry of trainable tensors. Iteration order is lexicographic
/// (std::map), which pins optimizer and checkpoint ordering.
class ParameterRegistry {
 public:
  TensorPtr add(const std::string& name, TensorPtr t) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    t->requires_grad = true;
    params_[name] = t;
    return t;
  }

  TensorPtr get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void set_frozen(const std::string& name, bool frozen) {
    if (!params_.count(name)) throw ConfigError("freeze of unknown parameter: " + name);
    if (frozen) {
      frozen_.insert(name);
    } else {
      frozen_.erase(name);
    }
  }

  /// Freeze/unfreeze every parameter whose name starts with prefix.
  void set_frozen_prefix(const std::string& prefix, bool frozen) {
    for (const auto& [name, t] : params_) {
      if (name.rfind(prefix, 0) == 0) set_frozen(name, frozen);
    }
  }

  void freeze_all() {
    for (const auto& [name, t] : params_) frozen_.insert(name);
  }

  bool is_frozen(const std::string& name) const { return frozen_.count(name) != 0; }

  /// Removes every parameter whose name starts with prefix.
  void remove_prefix(const std::string& prefix) {
    for (auto it = params_.begin(); it != params_.end();) {
      if (it->first.rfind(prefix, 0) == 0) {
        frozen_.erase(it->first);
        it = params_.erase(it);
      } else {
        ++it;
      }
    }
  }

  const std::map<std::string, TensorPtr>& items() const { return params_; }

  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, TensorPtr> params_;
  std::set<std::string> frozen_;
};

}  // namespace units
