#include "lwanet/grad_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <memory>
#include <random>

#include "lwanet/autodiff.hpp"
#include "lwanet/blocks.hpp"
#include "lwanet/loss_metrics.hpp"

namespace lwanet {

namespace {

using Tensors = std::vector<Tensor<double>>;
using Vars = std::span<const Var<double>>;

struct Case {
  GradCheckFn fn;
  std::function<Tensors()> draw;
};

ConvSpec make_spec(int64_t d1, int64_t d2, int64_t k, int64_t s, int64_t p, int64_t g, bool bias) {
  ConvSpec c;
  c.name = "grad_suite";
  c.in_channels = d1;
  c.out_channels = d2;
  c.kernel = k;
  c.stride = s;
  c.padding = p;
  c.groups = g;
  c.has_bias = bias;
  return c;
}

// Running statistics for batchnorm cases; train mode never reads them.
struct BnStats {
  std::vector<std::unique_ptr<Tensor<double>>> tensors;
  Tensor<double>* make(int64_t c, double fill) {
    tensors.push_back(std::make_unique<Tensor<double>>(Shape{1, c, 1, 1}, fill));
    return tensors.back().get();
  }
};

BatchNormRef<double> bn_ref(const Var<double>& g, const Var<double>& b, BnStats& stats) {
  const int64_t c = g.shape().c;
  return {g, b, stats.make(c, 0.0), stats.make(c, 1.0)};
}

class Suite {
 public:
  explicit Suite(uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }
  int64_t pick(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng_); }
  bool coin() { return pick(0, 1) == 1; }

  Tensor<double> randn(const Shape& s, double sd = 1.0) { return Tensor<double>::randn(s, rng_, sd); }
  Tensor<double> uniform(const Shape& s, double lo, double hi) {
    return Tensor<double>::uniform(s, rng_, lo, hi);
  }
  Tensor<double> vec(int64_t c, double lo, double hi) { return uniform(Shape{1, c, 1, 1}, lo, hi); }

 private:
  std::mt19937_64 rng_;
};

using CaseFactory = std::function<Case(Suite&)>;

std::vector<std::pair<std::string, CaseFactory>> factories() {
  std::vector<std::pair<std::string, CaseFactory>> f;

  f.emplace_back("conv2d", [](Suite& s) {
    const int64_t k = s.pick(1, 3), st = s.pick(1, 2), p = s.pick(0, k - 1);
    const int64_t n = s.pick(1, 2), d1 = s.pick(1, 3), d2 = s.pick(1, 3);
    const int64_t h = s.pick(k, 6), w = s.pick(k, 6);
    const bool bias = s.coin();
    const ConvSpec spec = make_spec(d1, d2, k, st, p, 1, bias);
    Case c;
    c.fn = [spec, bias](Vars v) { return op::conv2d(v[0], v[1], bias ? &v[2] : nullptr, spec); };
    c.draw = [&s, spec, n, h, w, bias] {
      Tensors t{s.randn({n, spec.in_channels, h, w}), s.randn(spec.weight_shape())};
      if (bias) t.push_back(s.randn({1, spec.out_channels, 1, 1}));
      return t;
    };
    return c;
  });

  f.emplace_back("depthwise_conv2d", [](Suite& s) {
    const int64_t k = s.coin() ? 3 : 1, st = s.pick(1, 2), p = k / 2;
    const int64_t n = s.pick(1, 2), ch = s.pick(1, 4), h = s.pick(k, 6), w = s.pick(k, 6);
    const bool bias = s.coin();
    const ConvSpec spec = make_spec(ch, ch, k, st, p, ch, bias);
    Case c;
    c.fn = [spec, bias](Vars v) { return op::depthwise_conv2d(v[0], v[1], bias ? &v[2] : nullptr, spec); };
    c.draw = [&s, spec, n, h, w, bias] {
      Tensors t{s.randn({n, spec.in_channels, h, w}), s.randn(spec.weight_shape())};
      if (bias) t.push_back(s.randn({1, spec.out_channels, 1, 1}));
      return t;
    };
    return c;
  });

  f.emplace_back("transposed_conv2d", [](Suite& s) {
    // padding above (k-1)/2 can crop a small input to nothing
    const int64_t k = s.pick(1, 3), st = s.pick(1, 2), p = s.pick(0, (k - 1) / 2);
    const int64_t n = s.pick(1, 2), d1 = s.pick(1, 3), d2 = s.pick(1, 3);
    const int64_t h = s.pick(2, 4), w = s.pick(2, 4);
    const bool bias = s.coin();
    const ConvSpec spec = make_spec(d1, d2, k, st, p, 1, bias);
    Case c;
    c.fn = [spec, bias](Vars v) { return op::transposed_conv2d(v[0], v[1], bias ? &v[2] : nullptr, spec); };
    c.draw = [&s, spec, n, h, w, bias] {
      Tensors t{s.randn({n, spec.in_channels, h, w}), s.randn(spec.transposed_weight_shape())};
      if (bias) t.push_back(s.randn({1, spec.out_channels, 1, 1}));
      return t;
    };
    return c;
  });

  auto unary = [&f](const std::string& name, std::function<Var<double>(const Var<double>&)> op, double lo,
                    double hi) {
    f.emplace_back(name, [op, lo, hi](Suite& s) {
      const Shape sh{s.pick(1, 2), s.pick(1, 4), s.pick(1, 4), s.pick(1, 4)};
      Case c;
      c.fn = [op](Vars v) { return op(v[0]); };
      c.draw = [&s, sh, lo, hi] { return Tensors{s.uniform(sh, lo, hi)}; };
      return c;
    });
  };
  unary("global_avg_pool", [](const Var<double>& x) { return op::global_avg_pool(x); }, -2, 2);
  unary("relu", [](const Var<double>& x) { return op::relu(x); }, -2, 2);
  unary("relu6", [](const Var<double>& x) { return op::relu6(x); }, -2, 8);
  unary("sigmoid", [](const Var<double>& x) { return op::sigmoid(x); }, -4, 4);
  unary("softmax_channels", [](const Var<double>& x) { return op::softmax_channels(x); }, -3, 3);
  unary("scale", [](const Var<double>& x) { return op::scale(x, -1.75); }, -2, 2);
  unary("sum", [](const Var<double>& x) { return op::sum(x); }, -2, 2);

  f.emplace_back("bilinear_upsample", [](Suite& s) {
    const Shape sh{s.pick(1, 2), s.pick(1, 3), s.pick(1, 4), s.pick(1, 4)};
    const int64_t factor = s.pick(1, 4);
    Case c;
    c.fn = [factor](Vars v) { return op::bilinear_upsample(v[0], factor); };
    c.draw = [&s, sh] { return Tensors{s.randn(sh)}; };
    return c;
  });

  f.emplace_back("add", [](Suite& s) {
    const Shape sh{s.pick(1, 2), s.pick(1, 3), s.pick(1, 4), s.pick(1, 4)};
    Case c;
    c.fn = [](Vars v) { return op::add(v[0], v[1]); };
    c.draw = [&s, sh] { return Tensors{s.randn(sh), s.randn(sh)}; };
    return c;
  });

  f.emplace_back("broadcast_mul_channels", [](Suite& s) {
    const Shape sh{s.pick(1, 2), s.pick(1, 4), s.pick(1, 4), s.pick(1, 4)};
    Case c;
    c.fn = [](Vars v) { return op::broadcast_mul_channels(v[0], v[1]); };
    c.draw = [&s, sh] { return Tensors{s.randn(sh), s.randn({sh.n, sh.c, 1, 1})}; };
    return c;
  });

  for (BnMode mode : {BnMode::kTrain, BnMode::kEval}) {
    const std::string name = mode == BnMode::kTrain ? "batchnorm_train" : "batchnorm_eval";
    f.emplace_back(name, [mode](Suite& s) {
      const Shape sh{s.pick(2, 3), s.pick(1, 3), s.pick(1, 3), s.pick(1, 3)};
      auto stats = std::make_shared<BnStats>();
      Tensor<double>* rm = stats->make(sh.c, 0.0);
      Tensor<double>* rv = stats->make(sh.c, 1.0);
      *rm = s.vec(sh.c, -0.5, 0.5);
      *rv = s.vec(sh.c, 0.5, 2.0);
      Case c;
      c.fn = [mode, stats, rm, rv](Vars v) {
        BnOptions<double> o;
        o.mode = mode;
        // eval mode must see fixed statistics, so keep copies
        Tensor<double> m = *rm, var = *rv;
        BatchNormRef<double> ref{v[1], v[2], &m, &var};
        return op::batchnorm(v[0], ref, o);
      };
      c.draw = [&s, sh] { return Tensors{s.randn(sh, 2.0), s.vec(sh.c, 0.5, 1.5), s.vec(sh.c, -0.5, 0.5)}; };
      return c;
    });
  }

  f.emplace_back("conv_bn", [](Suite& s) {
    const int64_t k = s.coin() ? 3 : 1, st = s.pick(1, 2);
    const Shape sh{2, s.pick(1, 3), s.pick(2, 5), s.pick(2, 5)};
    const int64_t out = s.pick(1, 3);
    Case c;
    c.fn = [st](Vars v) {
      BnStats stats;
      blocks::ConvBnParams<double> p{"conv_bn", v[1], bn_ref(v[2], v[3], stats), st, true};
      BnOptions<double> o;
      o.mode = BnMode::kTrain;
      return blocks::conv_bn(v[0], p, o);
    };
    c.draw = [&s, sh, out, k] {
      return Tensors{s.randn(sh), s.randn({out, sh.c, k, k}), s.vec(out, 0.5, 1.5), s.vec(out, -0.5, 0.5)};
    };
    return c;
  });

  f.emplace_back("ds_conv", [](Suite& s) {
    const int64_t st = s.pick(1, 2);
    const Shape sh{2, s.pick(1, 3), s.pick(2, 5), s.pick(2, 5)};
    const int64_t out = s.pick(1, 3);
    Case c;
    c.fn = [st](Vars v) {
      BnStats stats;
      blocks::DSConvParams<double> p{"ds", v[1], bn_ref(v[2], v[3], stats), v[4], bn_ref(v[5], v[6], stats)};
      BnOptions<double> o;
      o.mode = BnMode::kTrain;
      return blocks::ds_conv(v[0], p, st, o);
    };
    c.draw = [&s, sh, out] {
      return Tensors{s.randn(sh),           s.randn({sh.c, 1, 3, 3}), s.vec(sh.c, 0.5, 1.5),
                     s.vec(sh.c, -0.5, 0.5), s.randn({out, sh.c, 1, 1}), s.vec(out, 0.5, 1.5),
                     s.vec(out, -0.5, 0.5)};
    };
    return c;
  });

  f.emplace_back("inverted_residual", [](Suite& s) {
    const int64_t t = s.coin() ? 1 : s.pick(2, 3);
    const int64_t st = s.pick(1, 2);
    const int64_t cin = s.pick(1, 3);
    const int64_t cout = s.coin() ? cin : s.pick(1, 3);
    const int64_t hidden = cin * t;
    const Shape sh{2, cin, s.pick(2, 4), s.pick(2, 4)};
    const bool expand = t != 1;
    Case c;
    c.fn = [st, expand](Vars v) {
      BnStats stats;
      blocks::InvertedResidualParams<double> p;
      p.name = "ir";
      std::size_t i = 1;
      if (expand) {
        p.expand = v[i];
        p.expand_bn = bn_ref(v[i + 1], v[i + 2], stats);
        i += 3;
      }
      p.depthwise = v[i];
      p.depthwise_bn = bn_ref(v[i + 1], v[i + 2], stats);
      p.project = v[i + 3];
      p.project_bn = bn_ref(v[i + 4], v[i + 5], stats);
      p.stride = st;
      p.residual = st == 1 && v[0].shape().c == p.project.shape().n;
      BnOptions<double> o;
      o.mode = BnMode::kTrain;
      return blocks::inverted_residual(v[0], p, o);
    };
    c.draw = [&s, sh, expand, hidden, cout] {
      Tensors in{s.randn(sh)};
      if (expand) {
        in.push_back(s.randn({hidden, sh.c, 1, 1}));
        in.push_back(s.vec(hidden, 0.5, 1.5));
        in.push_back(s.vec(hidden, -0.5, 0.5));
      }
      in.push_back(s.randn({hidden, 1, 3, 3}));
      in.push_back(s.vec(hidden, 0.5, 1.5));
      in.push_back(s.vec(hidden, -0.5, 0.5));
      in.push_back(s.randn({cout, hidden, 1, 1}));
      in.push_back(s.vec(cout, 0.5, 1.5));
      in.push_back(s.vec(cout, -0.5, 0.5));
      return in;
    };
    return c;
  });

  f.emplace_back("afb", [](Suite& s) {
    const int64_t r = s.pick(1, 2);
    const int64_t ch = r * s.pick(1, 3);
    const int64_t hid = ch / r;
    const Shape sh{s.pick(1, 2), ch, s.pick(1, 3), s.pick(1, 3)};
    Case c;
    c.fn = [](Vars v) {
      blocks::AFBParams<double> p{"afb", {v[2], v[3], v[4], v[5]}, {v[6], v[7], v[8], v[9]}};
      return blocks::afb(v[0], v[1], p);
    };
    c.draw = [&s, sh, ch, hid] {
      Tensors in{s.randn(sh), s.randn(sh)};
      for (int b = 0; b < 2; ++b) {
        in.push_back(s.randn({hid, ch, 1, 1}));
        in.push_back(s.randn({1, hid, 1, 1}));
        in.push_back(s.randn({ch, hid, 1, 1}));
        in.push_back(s.randn({1, ch, 1, 1}));
      }
      return in;
    };
    return c;
  });

  f.emplace_back("upsample_block", [](Suite& s) {
    const Shape sh{2, s.pick(1, 3), s.pick(1, 3), s.pick(1, 3)};
    const int64_t out = s.pick(1, 3);
    Case c;
    c.fn = [](Vars v) {
      BnStats stats;
      blocks::UpsampleParams<double> p{"up", v[1], bn_ref(v[2], v[3], stats), 2};
      BnOptions<double> o;
      o.mode = BnMode::kTrain;
      return blocks::upsample_block(v[0], p, o);
    };
    c.draw = [&s, sh, out] {
      return Tensors{s.randn(sh), s.randn({sh.c, out, 2, 2}), s.vec(out, 0.5, 1.5), s.vec(out, -0.5, 0.5)};
    };
    return c;
  });

  for (double gamma : {0.0, 2.0, 6.0}) {
    const std::string name = "focal_loss_gamma" + std::to_string(static_cast<int>(gamma));
    f.emplace_back(name, [gamma](Suite& s) {
      const Shape sh{s.pick(1, 2), s.pick(2, 4), s.pick(1, 4), s.pick(1, 4)};
      LabelMap target(sh.n, sh.h, sh.w);
      for (auto& t : target.data) t = static_cast<int32_t>(s.pick(0, sh.c - 1));
      FocalConfig cfg;
      cfg.gamma = gamma;
      if (s.coin()) {
        cfg.ignore_index = 255;
        target.data[0] = 255;
      }
      Case c;
      c.fn = [target, cfg](Vars v) { return focal_loss(v[0], target, cfg); };
      c.draw = [&s, sh] { return Tensors{s.randn(sh, 2.0)}; };
      return c;
    });
  }
  return f;
}

}  // namespace

std::vector<GradSuiteEntry> run_grad_suite(int cases_per_op, uint64_t seed, const std::string& only) {
  std::vector<GradSuiteEntry> out;
  Suite suite(seed);
  for (const auto& [name, factory] : factories()) {
    if (!only.empty() && name.find(only) == std::string::npos) continue;
    GradSuiteEntry e;
    e.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < cases_per_op; ++i) {
      Case c = factory(suite);
      const ResampleFn resample = [&c](Tensors& in) { in = c.draw(); };
      const GradCheckResult r = grad_check(c.fn, c.draw(), {}, resample);
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
      e.resamples += r.resamples;
      e.coordinates += r.coordinates;
      ++e.cases;
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(e);
  }
  return out;
}

nlohmann::ordered_json grad_suite_json(const std::vector<GradSuiteEntry>& entries, double threshold) {
  nlohmann::ordered_json j;
  j["threshold"] = threshold;
  auto& rows = j["ops"] = nlohmann::ordered_json::array();
  bool pass = true;
  for (const auto& e : entries) {
    rows.push_back({{"name", e.name},
                    {"cases", e.cases},
                    {"max_rel_error", e.max_rel_error},
                    {"resamples", e.resamples},
                    {"coordinates", e.coordinates},
                    {"seconds", e.seconds},
                    {"pass", e.max_rel_error < threshold}});
    pass = pass && e.max_rel_error < threshold;
  }
  j["pass"] = pass;
  return j;
}

}  // namespace lwanet
