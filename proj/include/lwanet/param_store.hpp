#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lwanet/autodiff.hpp"
#include "lwanet/graph.hpp"

namespace lwanet {

/// Ordered name -> tensor map holding trainable parameters and batchnorm
/// running statistics. Names are dotted paths such as
/// `encoder.block3.expand.weight`.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    TensorDecl decl;
    std::shared_ptr<Tensor<T>> value;
  };

  void add(const TensorDecl& decl, Tensor<T> value);
  /// Declares every tensor and draws its initial value.
  void initialize(const std::vector<TensorDecl>& decls, std::mt19937_64& rng);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  const Entry& entry(const std::string& name) const;
  std::shared_ptr<Tensor<T>> shared(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::string> names() const;
  int64_t element_count(bool trainable_only) const;

  ParamStore clone() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Draws one tensor's initial value: fan-out scaled Gaussian for conv weights,
/// zeros for biases, identity statistics for batchnorm.
template <typename T>
Tensor<T> initial_value(const TensorDecl& decl, std::mt19937_64& rng);

/// Resolves parameter names to vars, recorded on the tape when one is given.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(ParamStore<T>& store, Tape<T>* tape) : store_(store), tape_(tape) {}

  Var<T> operator()(const std::string& name) const;
  BatchNormRef<T> bn(const std::string& prefix) const;
  const Shape& shape(const std::string& name) const { return store_.at(name).shape(); }
  bool has(const std::string& name) const { return store_.contains(name); }

 private:
  ParamStore<T>& store_;
  Tape<T>* tape_;
};

}  // namespace lwanet
