#include "lwanet/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace lwanet {

template <typename T>
void ParamStore<T>::add(const TensorDecl& decl, Tensor<T> value) {
  if (contains(decl.name)) throw std::invalid_argument("duplicate parameter " + decl.name);
  if (!(value.shape() == decl.shape)) {
    throw ShapeError("parameter " + decl.name + ": value " + value.shape().str() +
                     " vs declared " + decl.shape.str());
  }
  index_.emplace(decl.name, entries_.size());
  entries_.push_back({decl, std::make_shared<Tensor<T>>(std::move(value))});
}

template <typename T>
void ParamStore<T>::initialize(const std::vector<TensorDecl>& decls, std::mt19937_64& rng) {
  for (const auto& d : decls) add(d, initial_value<T>(d, rng));
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return *entries_[it->second].value;
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  return *entry(name).value;
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return entries_[it->second];
}

template <typename T>
std::shared_ptr<Tensor<T>> ParamStore<T>::shared(const std::string& name) const {
  return entry(name).value;
}

template <typename T>
std::vector<std::string> ParamStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.decl.name);
  return out;
}

template <typename T>
int64_t ParamStore<T>::element_count(bool trainable_only) const {
  int64_t total = 0;
  for (const auto& e : entries_) {
    if (!trainable_only || e.decl.trainable()) total += e.value->numel();
  }
  return total;
}

template <typename T>
ParamStore<T> ParamStore<T>::clone() const {
  ParamStore<T> out;
  for (const auto& e : entries_) out.add(e.decl, *e.value);
  return out;
}

template <typename T>
Tensor<T> initial_value(const TensorDecl& decl, std::mt19937_64& rng) {
  switch (decl.kind) {
    case ParamKind::kConvWeight:
      return Tensor<T>::randn(decl.shape, rng,
                              static_cast<T>(std::sqrt(2.0 / static_cast<double>(decl.fan_out))));
    case ParamKind::kBnGamma:
    case ParamKind::kRunningVar:
      return Tensor<T>(decl.shape, T(1));
    case ParamKind::kBias:
    case ParamKind::kBnBeta:
    case ParamKind::kRunningMean:
      break;
  }
  return Tensor<T>(decl.shape, T(0));
}

template <typename T>
Var<T> ParamBinder<T>::operator()(const std::string& name) const {
  auto value = store_.shared(name);
  if (tape_ != nullptr) return tape_->parameter(name, value);
  return Var<T>::constant(std::shared_ptr<const Tensor<T>>(value));
}

template <typename T>
BatchNormRef<T> ParamBinder<T>::bn(const std::string& prefix) const {
  return {(*this)(prefix + ".weight"), (*this)(prefix + ".bias"), &store_.at(prefix + ".running_mean"),
          &store_.at(prefix + ".running_var")};
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamBinder<float>;
template class ParamBinder<double>;
template Tensor<float> initial_value<float>(const TensorDecl&, std::mt19937_64&);
template Tensor<double> initial_value<double>(const TensorDecl&, std::mt19937_64&);

}  // namespace lwanet
