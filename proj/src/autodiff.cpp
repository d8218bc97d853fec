#include "lwanet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace lwanet {

template <typename T>
Tensor<T> Gradients<T>::of(const Var<T>& v) const {
  if (!v.tracked()) throw std::invalid_argument("gradient requested for an untracked value");
  const Tensor<T>& g = by_node.at(v.node());
  if (g.empty() && v.value().numel() > 0) return Tensor<T>(v.shape());
  return g;
}

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (v == nullptr || !v->tracked()) continue;
    if (tape != nullptr && tape != v->tape()) {
      throw std::invalid_argument("op mixes values recorded on different tapes");
    }
    tape = v->tape();
  }
  return tape;
}

template <typename T>
Var<T> Tape<T>::parameter(const std::string& name, std::shared_ptr<const Tensor<T>> value) {
  Var<T> v;
  v.value_ = value;
  v.tape_ = this;
  v.node_ = nodes_.size();
  nodes_.push_back({"parameter", {}, {}, std::move(value), true, name});
  return v;
}

template <typename T>
Var<T> Tape<T>::input(Tensor<T> value, bool requires_grad) {
  Var<T> v;
  v.value_ = std::make_shared<const Tensor<T>>(std::move(value));
  v.tape_ = this;
  v.node_ = nodes_.size();
  nodes_.push_back({"input", {}, {}, v.value_, requires_grad, {}});
  return v;
}

template <typename T>
Var<T> Tape<T>::record(std::string op, Tensor<T> out, std::vector<Var<T>> inputs,
                       BackwardFn<T> backward) {
  bool needs_grad = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tracked()) {
      if (in.tape() != this) throw std::invalid_argument(op + ": input recorded on another tape");
      needs_grad = needs_grad || nodes_[in.node()].requires_grad;
      ids.push_back(in.node());
    } else {
      ids.push_back(static_cast<std::size_t>(-1));
    }
  }
  if (!needs_grad) return Var<T>::constant(std::move(out));
  Var<T> v;
  v.value_ = std::make_shared<const Tensor<T>>(std::move(out));
  v.tape_ = this;
  v.node_ = nodes_.size();
  nodes_.push_back({std::move(op), std::move(ids), std::move(backward), v.value_, true, {}});
  return v;
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) const {
  if (!loss.tracked() || loss.tape() != this) {
    throw std::invalid_argument("backward: loss was not recorded on this tape");
  }
  if (loss.value().numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  Gradients<T> out;
  out.by_node.resize(nodes_.size());
  out.by_node[loss.node()] = Tensor<T>(loss.shape(), T(1));

  for (std::size_t i = loss.node() + 1; i-- > 0;) {
    const TapeNode<T>& node = nodes_[i];
    Tensor<T>& grad = out.by_node[i];
    if (grad.empty() || !node.backward) continue;
    std::vector<bool> needs(node.inputs.size());
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const std::size_t id = node.inputs[j];
      needs[j] = id != static_cast<std::size_t>(-1) && nodes_[id].requires_grad;
    }
    std::vector<Tensor<T>> in_grads = node.backward(grad, needs);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      if (!needs[j] || j >= in_grads.size() || in_grads[j].empty()) continue;
      Tensor<T>& dst = out.by_node[node.inputs[j]];
      Tensor<T>& src = in_grads[j];
      const Shape& want = nodes_[node.inputs[j]].value->shape();
      if (src.numel() != want.numel()) {
        throw ShapeError(node.op + " backward produced gradient " + src.shape().str() +
                         " for input " + want.str());
      }
      src.reshape(want);
      if (dst.empty()) {
        dst = std::move(src);
      } else {
        for (int64_t k = 0; k < dst.numel(); ++k) dst[k] += src[k];
      }
    }
    // intermediate gradients are not needed once propagated
    grad = Tensor<T>();
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const TapeNode<T>& node = nodes_[i];
    if (node.param_name.empty()) continue;
    const Tensor<T>& g = out.by_node[i];
    auto it = out.named.find(node.param_name);
    if (it == out.named.end()) {
      out.named.emplace(node.param_name, g.empty() ? Tensor<T>(node.value->shape()) : g);
    } else if (!g.empty()) {
      for (int64_t k = 0; k < g.numel(); ++k) it->second[k] += g[k];
    }
  }
  return out;
}

namespace op {

namespace {

template <typename T>
std::vector<Tensor<T>> grads_for(const std::vector<bool>& needs) {
  return std::vector<Tensor<T>>(needs.size());
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias, const ConvSpec& spec) {
  Tensor<T> out = kernels::conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  Tape<T>* tape = common_tape<T>({&x, &weight, bias});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  std::vector<Var<T>> ins{x, weight};
  if (bias) ins.push_back(*bias);
  return tape->record(
      "conv2d", std::move(out), std::move(ins),
      [xs = x.shared(), ws = weight.shared(), spec](const Tensor<T>& g, const std::vector<bool>& needs) {
        auto r = grads_for<T>(needs);
        if (needs[0]) r[0] = kernels::conv2d_backward_input(g, *ws, spec, xs->shape());
        if (needs[1]) r[1] = kernels::conv2d_backward_weight(*xs, g, spec);
        if (needs.size() > 2 && needs[2]) r[2] = kernels::channel_sum(g);
        return r;
      });
}

template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias,
                        const ConvSpec& spec) {
  Tensor<T> out =
      kernels::depthwise_conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  Tape<T>* tape = common_tape<T>({&x, &weight, bias});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  std::vector<Var<T>> ins{x, weight};
  if (bias) ins.push_back(*bias);
  return tape->record(
      "depthwise_conv2d", std::move(out), std::move(ins),
      [xs = x.shared(), ws = weight.shared(), spec](const Tensor<T>& g, const std::vector<bool>& needs) {
        auto r = grads_for<T>(needs);
        if (needs[0]) r[0] = kernels::depthwise_backward_input(g, *ws, spec, xs->shape());
        if (needs[1]) r[1] = kernels::depthwise_backward_weight(*xs, g, spec);
        if (needs.size() > 2 && needs[2]) r[2] = kernels::channel_sum(g);
        return r;
      });
}

template <typename T>
Var<T> transposed_conv2d(const Var<T>& x, const Var<T>& weight, const std::type_identity_t<Var<T>>* bias,
                         const ConvSpec& spec) {
  Tensor<T> out =
      kernels::transposed_conv2d(x.value(), weight.value(), bias ? &bias->value() : nullptr, spec);
  Tape<T>* tape = common_tape<T>({&x, &weight, bias});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  std::vector<Var<T>> ins{x, weight};
  if (bias) ins.push_back(*bias);
  return tape->record(
      "transposed_conv2d", std::move(out), std::move(ins),
      [xs = x.shared(), ws = weight.shared(), spec](const Tensor<T>& g, const std::vector<bool>& needs) {
        auto r = grads_for<T>(needs);
        const ConvSpec adj = kernels::adjoint_conv_spec(spec);
        // The input gradient of a transposed conv is the forward conv of the
        // output gradient with the same weights.
        if (needs[0]) r[0] = kernels::conv2d(g, *ws, nullptr, adj);
        if (needs[1]) r[1] = kernels::conv2d_backward_weight(g, *xs, adj);
        if (needs.size() > 2 && needs[2]) r[2] = kernels::channel_sum(g);
        return r;
      });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  Tensor<T> out = kernels::global_avg_pool(x.value());
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record("global_avg_pool", std::move(out), {x},
                      [in = x.shape()](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (needs[0]) r[0] = kernels::global_avg_pool_backward(g, in);
                        return r;
                      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = kernels::relu(x.value());
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  if (tape->tracks_kinks()) {
    for (T v : x.value().data()) tape->note_kink_distance(std::abs(v));
  }
  return tape->record("relu", std::move(out), {x},
                      [xs = x.shared()](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (!needs[0]) return r;
                        r[0] = Tensor<T>(g.shape());
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          r[0][i] = (*xs)[i] > T(0) ? g[i] : T(0);
                        }
                        return r;
                      });
}

template <typename T>
Var<T> relu6(const Var<T>& x) {
  Tensor<T> out = kernels::relu6(x.value());
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  if (tape->tracks_kinks()) {
    for (T v : x.value().data()) {
      tape->note_kink_distance(std::min(std::abs(v), std::abs(v - T(6))));
    }
  }
  return tape->record("relu6", std::move(out), {x},
                      [xs = x.shared()](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (!needs[0]) return r;
                        r[0] = Tensor<T>(g.shape());
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          const T v = (*xs)[i];
                          r[0][i] = (v > T(0) && v < T(6)) ? g[i] : T(0);
                        }
                        return r;
                      });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  auto out = std::make_shared<const Tensor<T>>(kernels::sigmoid(x.value()));
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(out);
  return tape->record("sigmoid", Tensor<T>(*out), {x},
                      [ys = out](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (!needs[0]) return r;
                        r[0] = Tensor<T>(g.shape());
                        for (int64_t i = 0; i < g.numel(); ++i) {
                          const T y = (*ys)[i];
                          r[0][i] = g[i] * y * (T(1) - y);
                        }
                        return r;
                      });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  auto out = std::make_shared<const Tensor<T>>(kernels::softmax_channels(x.value()));
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(out);
  return tape->record("softmax_channels", Tensor<T>(*out), {x},
                      [ys = out](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (!needs[0]) return r;
                        const Shape s = g.shape();
                        r[0] = Tensor<T>(s);
                        for (int64_t n = 0; n < s.n; ++n) {
                          for (int64_t i = 0; i < s.plane(); ++i) {
                            T inner = 0;
                            for (int64_t c = 0; c < s.c; ++c) {
                              inner += g.plane(n, c)[i] * ys->plane(n, c)[i];
                            }
                            for (int64_t c = 0; c < s.c; ++c) {
                              r[0].plane(n, c)[i] = ys->plane(n, c)[i] * (g.plane(n, c)[i] - inner);
                            }
                          }
                        }
                        return r;
                      });
}

template <typename T>
Var<T> batchnorm(const Var<T>& x, const BatchNormRef<T>& bn, const BnOptions<T>& opts) {
  if (bn.running_mean == nullptr || bn.running_var == nullptr) {
    throw std::invalid_argument("batchnorm: running statistics not bound");
  }
  auto saved = std::make_shared<kernels::BatchNormSaved<T>>();
  const bool train = opts.mode == BnMode::kTrain;
  Tensor<T> out =
      train ? kernels::batchnorm_train(x.value(), bn.gamma.value(), bn.beta.value(), *bn.running_mean,
                                       *bn.running_var, opts.momentum, opts.eps, saved.get())
            : kernels::batchnorm_eval(x.value(), bn.gamma.value(), bn.beta.value(), *bn.running_mean,
                                      *bn.running_var, opts.eps, saved.get());
  Tape<T>* tape = common_tape<T>({&x, &bn.gamma, &bn.beta});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record(
      "batchnorm", std::move(out), {x, bn.gamma, bn.beta},
      [xs = x.shared(), gs = bn.gamma.shared(), saved, train](const Tensor<T>& g,
                                                              const std::vector<bool>& needs) {
        auto r = grads_for<T>(needs);
        auto bg = kernels::batchnorm_backward(g, *xs, *gs, *saved, train);
        if (needs[0]) r[0] = std::move(bg.input);
        if (needs[1]) r[1] = std::move(bg.gamma);
        if (needs[2]) r[2] = std::move(bg.beta);
        return r;
      });
}

template <typename T>
Var<T> add(const Var<T>& x, const Var<T>& y) {
  Tensor<T> out = kernels::add(x.value(), y.value());
  Tape<T>* tape = common_tape<T>({&x, &y});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record("add", std::move(out), {x, y},
                      [](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (needs[0]) r[0] = g;
                        if (needs[1]) r[1] = g;
                        return r;
                      });
}

template <typename T>
Var<T> broadcast_mul_channels(const Var<T>& x, const Var<T>& a) {
  Tensor<T> out = kernels::broadcast_mul_channels(x.value(), a.value());
  Tape<T>* tape = common_tape<T>({&x, &a});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record(
      "broadcast_mul_channels", std::move(out), {x, a},
      [xs = x.shared(), as = a.shared()](const Tensor<T>& g, const std::vector<bool>& needs) {
        auto r = grads_for<T>(needs);
        if (needs[0]) r[0] = kernels::broadcast_mul_channels(g, *as);
        if (needs[1]) {
          const Shape s = xs->shape();
          r[1] = Tensor<T>({s.n, s.c, 1, 1});
          for (int64_t n = 0; n < s.n; ++n) {
            for (int64_t c = 0; c < s.c; ++c) {
              const T* gp = g.plane(n, c);
              const T* xp = xs->plane(n, c);
              T acc = 0;
              for (int64_t i = 0; i < s.plane(); ++i) acc += gp[i] * xp[i];
              r[1].at(n, c, 0, 0) = acc;
            }
          }
        }
        return r;
      });
}

template <typename T>
Var<T> bilinear_upsample(const Var<T>& x, int64_t factor) {
  Tensor<T> out = kernels::bilinear_upsample(x.value(), factor);
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record("bilinear_upsample", std::move(out), {x},
                      [in = x.shape(), factor](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (needs[0]) r[0] = kernels::bilinear_upsample_backward(g, in, factor);
                        return r;
                      });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * factor;
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record("scale", std::move(out), {x},
                      [factor](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (!needs[0]) return r;
                        r[0] = Tensor<T>(g.shape());
                        for (int64_t i = 0; i < g.numel(); ++i) r[0][i] = g[i] * factor;
                        return r;
                      });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  Tensor<T> out({1, 1, 1, 1}, acc);
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record("sum", std::move(out), {x},
                      [in = x.shape()](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (needs[0]) r[0] = Tensor<T>(in, g[0]);
                        return r;
                      });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  Tensor<T> out({1, 1, 1, 1}, dot(x.value(), weights));
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Var<T>::constant(std::move(out));
  return tape->record("weighted_sum", std::move(out), {x},
                      [weights](const Tensor<T>& g, const std::vector<bool>& needs) {
                        auto r = grads_for<T>(needs);
                        if (!needs[0]) return r;
                        r[0] = Tensor<T>(weights.shape());
                        for (int64_t i = 0; i < weights.numel(); ++i) r[0][i] = g[0] * weights[i];
                        return r;
                      });
}

#define LWANET_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>*, const ConvSpec&);        \
  template Var<T> depthwise_conv2d(const Var<T>&, const Var<T>&, const Var<T>*,                \
                                   const ConvSpec&);                                           \
  template Var<T> transposed_conv2d(const Var<T>&, const Var<T>&, const Var<T>*,               \
                                    const ConvSpec&);                                          \
  template Var<T> global_avg_pool(const Var<T>&);                                              \
  template Var<T> relu(const Var<T>&);                                                         \
  template Var<T> relu6(const Var<T>&);                                                        \
  template Var<T> sigmoid(const Var<T>&);                                                      \
  template Var<T> softmax_channels(const Var<T>&);                                             \
  template Var<T> batchnorm(const Var<T>&, const BatchNormRef<T>&, const BnOptions<T>&);       \
  template Var<T> add(const Var<T>&, const Var<T>&);                                           \
  template Var<T> broadcast_mul_channels(const Var<T>&, const Var<T>&);                        \
  template Var<T> bilinear_upsample(const Var<T>&, int64_t);                                   \
  template Var<T> scale(const Var<T>&, T);                                                     \
  template Var<T> sum(const Var<T>&);                                                          \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);

LWANET_INSTANTIATE_OPS(float)
LWANET_INSTANTIATE_OPS(double)

}  // namespace op

GradCheckResult grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                           const GradCheckOptions& opts, const ResampleFn& resample) {
  GradCheckResult result;
  for (;;) {
    Tape<double> tape;
    tape.set_track_kinks(true);
    std::vector<Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.input(t, true));
    Var<double> out = fn(vars);
    if (tape.kink_margin() < opts.kink_guard) {
      if (!resample || result.resamples >= opts.max_resamples) {
        throw std::runtime_error("grad_check: evaluation point within " +
                                 std::to_string(tape.kink_margin()) + " of an activation kink");
      }
      resample(inputs);
      ++result.resamples;
      continue;
    }

    std::mt19937_64 rng(opts.projection_seed);
    const Tensor<double> projection = Tensor<double>::randn(out.shape(), rng);
    const Var<double> loss = op::weighted_sum(out, projection);
    const Gradients<double> grads = tape.backward(loss);

    auto evaluate = [&](const std::vector<Tensor<double>>& at) {
      std::vector<Var<double>> cvars;
      cvars.reserve(at.size());
      for (const auto& t : at) cvars.push_back(Var<double>::constant(t));
      return dot(fn(cvars).value(), projection);
    };

    std::vector<Tensor<double>> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor<double> analytic = grads.of(vars[i]);
      for (int64_t j = 0; j < inputs[i].numel(); ++j) {
        const double orig = inputs[i][j];
        probe[i][j] = orig + opts.step;
        const double fp = evaluate(probe);
        probe[i][j] = orig - opts.step;
        const double fm = evaluate(probe);
        probe[i][j] = orig;
        const double numeric = (fp - fm) / (2.0 * opts.step);
        const double a = analytic[j];
        const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
        ++result.coordinates;
      }
    }
    return result;
  }
}

template struct Gradients<float>;
template struct Gradients<double>;
template class Tape<float>;
template class Tape<double>;
template Tape<float>* common_tape(std::initializer_list<const Var<float>*>);
template Tape<double>* common_tape(std::initializer_list<const Var<double>*>);

}  // namespace lwanet
