// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lwanet/analysis.hpp"
#include "lwanet/blocks.hpp"
#include "lwanet/grad_suite.hpp"
#include "lwanet/kernels.hpp"
#include "lwanet/training.hpp"
#include "lwanet/weights_io.hpp"

using namespace lwanet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects sub-checks of one criterion; the first failure is reported.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && pass_) {
      pass_ = false;
      failure_ = what;
    }
  }
  Outcome done(const std::string& summary) const {
    return {pass_, pass_ ? summary : "failed: " + failure_ + "; " + summary};
  }

 private:
  bool pass_ = true;
  std::string failure_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Var<double> cvar(Tensor<double> t) { return Var<double>::constant(std::move(t)); }

ConvSpec conv_spec(int64_t d1, int64_t d2, int64_t k, int64_t s, int64_t p) {
  ConvSpec c;
  c.in_channels = d1;
  c.out_channels = d2;
  c.kernel = k;
  c.stride = s;
  c.padding = p;
  return c;
}

// --- 1 ----------------------------------------------------------------------
Outcome ds_cost_identity() {
  Checks c;
  std::mt19937_64 rng(2024);
  auto pick = [&](int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); };
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int64_t k = 2 * pick(0, 3) + 1, d1 = pick(1, 1024), d2 = pick(1, 1024);
    const int64_t m = pick(k, 128), n = pick(k, 128);
    const Shape in{1, d1, m, n};
    const double ds = static_cast<double>(count_layer(DSConvDescriptor{d1, d2, k, 1}, in).macs);
    const double st = static_cast<double>(count_layer(conv_spec(d1, d2, k, 1, (k - 1) / 2), in).macs);
    const double expect = 1.0 / static_cast<double>(d2) + 1.0 / static_cast<double>(k * k);
    const double rel = std::abs(ds / st - expect) / expect;
    worst = std::max(worst, rel);
    c.expect(rel <= 4 * std::numeric_limits<double>::epsilon(), "ratio off at draw " + std::to_string(i));
    c.expect(ds_cost_identity_exact(k, d1, d2, m, n), "integer identity at draw " + std::to_string(i));
  }
  const double fold = 1.0 / ds_cost_ratio(3, 320, 1 << 20);
  c.expect(std::abs(fold - 9.0) < 0.01, "k=3 large-d2 reduction " + fmt("%.4f", fold));
  return c.done("50 draws, max rel error " + fmt("%.1e", worst) + ", k=3 limit " + fmt("%.4f", fold) + "x");
}

// --- 2 ----------------------------------------------------------------------
Outcome encoder_cost() {
  Checks c;
  const CostReport r = count_model(NetworkConfig{}, Shape{1, 3, 544, 960});
  const double enc = static_cast<double>(r.encoder.macs) / 1e9, dec = static_cast<double>(r.decoder.macs) / 1e9;
  c.expect(std::abs(enc - 3.11) <= 0.05 * 3.11, "encoder " + fmt("%.4f", enc) + " G outside 3.11 +-5%");
  c.expect(dec <= 0.30, "decoder " + fmt("%.4f", dec) + " G above 0.30");
  c.expect(r.encoder.mac_percent > 85.0, "encoder share " + fmt("%.2f", r.encoder.mac_percent));
  return c.done("encoder " + fmt("%.4f", enc) + " G, decoder " + fmt("%.4f", dec) + " G, encoder share " +
                fmt("%.2f", r.encoder.mac_percent) + "%");
}

// --- 3 ----------------------------------------------------------------------
Outcome area_scaling() {
  Checks c;
  const NetworkConfig cfg;
  const CostReport q = count_model(cfg, Shape{1, 3, 256, 320});
  const CostReport mid = count_model(cfg, Shape{1, 3, 512, 640});
  const CostReport big = count_model(cfg, Shape{1, 3, 544, 960});
  int64_t se = 0;  // squeeze-excitation convs act on 1x1 pooled vectors
  for (const auto& row : q.rows) {
    if (row.output.h == 1 && row.output.w == 1) se += row.macs;
  }
  c.expect(mid.total_macs - 4 * q.total_macs == -3 * se, "doubling both sides is not exactly 4x plus the SE term");
  const double ratio = static_cast<double>(mid.total_macs) / static_cast<double>(big.total_macs);
  const double area = (640.0 * 512.0) / (960.0 * 544.0);
  c.expect(std::abs(ratio / area - 1.0) <= 0.02, "MAC ratio " + fmt("%.6f", ratio) + " vs area " + fmt("%.6f", area));
  const double g640 = static_cast<double>(mid.total_macs) / 1e9, g960 = static_cast<double>(big.total_macs) / 1e9;
  c.expect(std::abs(g640 / 2.12 - 1.0) <= 0.15, "640x512 total " + fmt("%.3f", g640) + " G outside 2.12 +-15%");
  c.expect(std::abs(g960 / 3.39 - 1.0) <= 0.15, "960x544 total " + fmt("%.3f", g960) + " G outside 3.39 +-15%");
  return c.done("ratio " + fmt("%.6f", ratio) + " vs area " + fmt("%.6f", area) + ", totals " + fmt("%.3f", g640) +
                " / " + fmt("%.3f", g960) + " G, SE term " + std::to_string(se) + " MACs");
}

// --- 4 ----------------------------------------------------------------------
Outcome gradient_suite() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_grad_suite(20, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst = 0;
  std::string worst_name;
  std::set<std::string> names;
  for (const auto& e : entries) {
    names.insert(e.name);
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
    c.expect(e.max_rel_error < 1e-4, e.name + " error " + fmt("%.2e", e.max_rel_error));
  }
  for (const char* required : {"conv2d", "depthwise_conv2d", "transposed_conv2d", "afb", "inverted_residual",
                               "focal_loss_gamma0", "focal_loss_gamma2", "focal_loss_gamma6"}) {
    c.expect(names.count(required) == 1, std::string("missing ") + required);
  }
  c.expect(secs < 120.0, "took " + fmt("%.1f", secs) + " s");
  return c.done(std::to_string(entries.size()) + " ops x 20 cases, worst " + fmt("%.2e", worst) + " (" + worst_name +
                "), " + fmt("%.1f", secs) + " s");
}

// --- 5 ----------------------------------------------------------------------
double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Outcome afb_oracle() {
  Checks c;
  std::mt19937_64 rng(5);
  const Shape sh{1, 4, 2, 2};
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor<double> low = Tensor<double>::randn(sh, rng), high = Tensor<double>::randn(sh, rng);
    std::vector<Tensor<double>> p;
    for (int b = 0; b < 2; ++b) {
      p.push_back(Tensor<double>::randn(Shape{2, 4, 1, 1}, rng));
      p.push_back(Tensor<double>::randn(Shape{1, 2, 1, 1}, rng));
      p.push_back(Tensor<double>::randn(Shape{4, 2, 1, 1}, rng));
      p.push_back(Tensor<double>::randn(Shape{1, 4, 1, 1}, rng));
    }
    const blocks::AFBParams<double> params{"afb",
                                           {cvar(p[0]), cvar(p[1]), cvar(p[2]), cvar(p[3])},
                                           {cvar(p[4]), cvar(p[5]), cvar(p[6]), cvar(p[7])}};
    const Tensor<double> out = blocks::afb(cvar(low), cvar(high), params).value();
    // direct scalar evaluation
    auto gate = [&](const Tensor<double>& x, int o) {
      std::vector<double> z(4), h(2), a(4);
      for (int k = 0; k < 4; ++k) z[k] = (x.at(0, k, 0, 0) + x.at(0, k, 0, 1) + x.at(0, k, 1, 0) + x.at(0, k, 1, 1)) / 4;
      for (int j = 0; j < 2; ++j) {
        double s = p[o + 1][j];
        for (int k = 0; k < 4; ++k) s += p[o].at(j, k, 0, 0) * z[k];
        h[j] = s > 0 ? s : 0;
      }
      for (int k = 0; k < 4; ++k) {
        double s = p[o + 3][k];
        for (int j = 0; j < 2; ++j) s += p[o + 2].at(k, j, 0, 0) * h[j];
        a[k] = sigm(s);
      }
      return a;
    };
    const auto al = gate(low, 0), ah = gate(high, 4);
    for (int k = 0; k < 4; ++k)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
          const double expect = al[k] * low.at(0, k, y, x) + ah[k] * high.at(0, k, y, x);
          worst = std::max(worst, std::abs(out.at(0, k, y, x) - expect));
        }
  }
  c.expect(worst <= 1e-6, "max deviation " + fmt("%.2e", worst));

  const Tensor<double> low = Tensor<double>::randn(sh, rng), high = Tensor<double>::randn(sh, rng);
  auto z = [](Shape s) { return cvar(Tensor<double>(s, 0.0)); };
  const blocks::SEParams<double> zero{z({2, 4, 1, 1}), z({1, 2, 1, 1}), z({4, 2, 1, 1}), z({1, 4, 1, 1})};
  const Tensor<double> avg = blocks::afb(cvar(low), cvar(high), blocks::AFBParams<double>{"afb", zero, zero}).value();
  bool exact = true;
  for (int64_t i = 0; i < avg.numel(); ++i) exact = exact && avg[i] == 0.5 * (low[i] + high[i]);
  c.expect(exact, "zero-parameter AFB is not exactly 0.5*(low+high)");
  return c.done("20 random [1,4,2,2] r=2 draws, max deviation " + fmt("%.2e", worst) + ", zero case exact");
}

// --- 6 ----------------------------------------------------------------------
Outcome focal_values() {
  Checks c;
  std::mt19937_64 rng(6);
  const Tensor<double> logits = Tensor<double>::randn(Shape{2, 5, 4, 4}, rng, 2.0);
  LabelMap t(2, 4, 4);
  for (auto& v : t.data) v = static_cast<int32_t>(rng() % 5);
  const Tensor<double> p = kernels::softmax_channels(logits);
  double worst = 0, ce = 0;
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x) {
        const double pt = p.at(n, t.at(n, y, x), y, x);
        worst = std::max(worst, std::abs(focal_term(pt, 0.0) + std::log(pt)));
        ce -= std::log(pt);
      }
  FocalConfig g0;
  g0.gamma = 0.0;
  const double loss0 = focal_loss(cvar(logits), t, g0).value()[0];
  worst = std::max(worst, std::abs(loss0 - ce / 32.0));
  c.expect(worst <= 1e-7, "gamma=0 deviates from cross-entropy by " + fmt("%.2e", worst));

  FocalConfig g6;
  g6.gamma = 6.0;
  const double single = focal_loss(cvar(Tensor<double>(Shape{1, 2, 1, 1}, {1.25, 1.25})), LabelMap(1, 1, 1, 0), g6)
                            .value()[0];
  c.expect(std::abs(single - 0.01083042) <= 1e-8, "p_t=0.5 gamma=6 gives " + fmt("%.10f", single));

  bool monotone = true;
  for (int i = 1; i < 1000; ++i) {
    const double pt = i / 1000.0;
    for (double g = 0.0; g < 10.0; g += 0.25) monotone = monotone && focal_term(pt, g + 0.25) < focal_term(pt, g);
  }
  c.expect(monotone, "focal term not strictly decreasing in gamma");
  return c.done("CE deviation " + fmt("%.1e", worst) + ", single pixel " + fmt("%.10f", single) +
                ", monotone on 999 x 40 grid");
}

// --- 7 ----------------------------------------------------------------------
Outcome adjoint_pairing() {
  Checks c;
  std::mt19937_64 rng(7);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const int k = pick(1, 4), s = pick(1, 3), p = pick(0, (k - 1) / 2);
    const ConvSpec t = conv_spec(pick(1, 6), pick(1, 6), k, s, p);
    const Shape xin{pick(1, 2), t.in_channels, pick(1, 7), pick(1, 7)};
    const Tensor<double> w = Tensor<double>::randn(t.transposed_weight_shape(), rng);
    const Tensor<double> x = Tensor<double>::randn(xin, rng);
    const Tensor<double> u = Tensor<double>::randn(t.transposed_output_shape(xin), rng);
    const double lhs = dot(kernels::conv2d(u, w, nullptr, kernels::adjoint_conv_spec(t)), x);
    const double rhs = dot(u, kernels::transposed_conv2d(x, w, nullptr, t));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max({1.0, std::abs(lhs), std::abs(rhs)}));
  }
  c.expect(worst < 1e-10, "relative error " + fmt("%.2e", worst));
  return c.done("20 draws, max relative error " + fmt("%.2e", worst));
}

// --- 8 ----------------------------------------------------------------------
struct OverfitRun {
  double mdice = 0;
  std::vector<double> losses;
  std::vector<std::vector<float>> params;
  double seconds = 0;
};

OverfitRun overfit_once() {
  NetworkConfig nc;
  nc.num_classes = 3;
  nc.height = 64;
  nc.width = 64;
  Model<float> model(nc, 1);
  const auto samples = synth_shapes(8, 64, 64, 3, 7);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  tc.decay_period = 1000;
  tc.gamma = 6.0;
  tc.augment = false;
  tc.epochs = 300;
  tc.max_steps = 300;
  OverfitRun run;
  TrainHooks hooks;
  hooks.on_step = [&run](int64_t, double loss, double) { run.losses.push_back(loss); };
  const auto t0 = std::chrono::steady_clock::now();
  train(model, samples, {}, tc, {}, hooks);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.mdice = mean_dice(evaluate(model, samples), MetricOptions{});
  for (const auto& e : model.params().entries()) run.params.push_back(e.value->vec());
  return run;
}

Outcome overfit_sanity() {
  Checks c;
  const OverfitRun a = overfit_once();
  const OverfitRun b = overfit_once();
  c.expect(a.mdice >= 0.95, "train mDice " + fmt("%.4f", a.mdice));
  c.expect(a.losses.size() <= 300, "more than 300 steps");
  c.expect(a.seconds < 600.0, "run took " + fmt("%.0f", a.seconds) + " s");
  c.expect(a.params == b.params && a.losses == b.losses && a.mdice == b.mdice, "same-seed runs differ");
  // smoothed loss: 10-step trailing mean, compared across every 50-step window after step 50
  std::vector<double> smooth;
  for (size_t i = 9; i < a.losses.size(); ++i) {
    double s = 0;
    for (size_t j = i - 9; j <= i; ++j) s += a.losses[j];
    smooth.push_back(s / 10.0);
  }
  bool monotone = true;
  for (size_t i = 50 - 9; i + 50 < smooth.size(); ++i) monotone = monotone && smooth[i + 50] <= smooth[i];
  c.expect(monotone, "smoothed loss rose over a 50-step window");
  return c.done("train mDice " + fmt("%.4f", a.mdice) + " after " + std::to_string(a.losses.size()) +
                " steps, final loss " + fmt("%.2e", a.losses.back()) + ", " + fmt("%.0f", a.seconds) +
                " s per run, two runs bit-identical");
}

// --- 9 ----------------------------------------------------------------------
Outcome ablation_plumbing() {
  Checks c;
  NetworkConfig on;
  on.num_classes = 3;
  on.height = 64;
  on.width = 64;
  NetworkConfig off = on;
  off.afb_enabled = false;
  Model<float> m_on(on, 2), m_off(off, 2);
  std::set<std::string> on_names, off_names;
  for (const auto& n : m_on.params().names()) on_names.insert(n);
  for (const auto& n : m_off.params().names()) off_names.insert(n);
  int64_t extra = 0;
  for (const auto& n : off_names) c.expect(on_names.count(n) == 1, "AFB-off tensor " + n + " missing with AFB on");
  for (const auto& n : on_names) {
    if (off_names.count(n)) continue;
    c.expect(n.find(".afb.") != std::string::npos, "non-AFB tensor " + n + " differs");
    extra += m_on.params().at(n).numel();
  }
  int64_t expect_extra = 0;
  for (int64_t w : on.decoder_widths) expect_extra += blocks::afb_param_count(w, on.se_ratio);
  c.expect(extra == expect_extra, "AFB adds " + std::to_string(extra) + " vs " + std::to_string(expect_extra));
  c.expect(m_on.params().element_count(true) > m_off.params().element_count(true), "AFB does not add parameters");

  const auto samples = synth_shapes(8, 64, 64, 3, 11);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 3e-3;
  tc.epochs = 5;
  tc.seed = 3;
  const TrainResult r_on = train(m_on, samples, {}, tc);
  const TrainResult r_off = train(m_off, samples, {}, tc);
  c.expect(r_on.state.history.size() == 5 && r_off.state.history.size() == 5, "toy runs incomplete");
  const double d_on = r_on.state.history.back().val_mdice, d_off = r_off.state.history.back().val_mdice;
  return c.done("AFB adds " + std::to_string(extra) + " parameters; toy mDice on " + fmt("%.4f", d_on) +
                " / off " + fmt("%.4f", d_off) + " (delta " + fmt("%+.4f", d_on - d_off) + ", not asserted)");
}

// --- 10 ---------------------------------------------------------------------
std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Outcome serialization() {
  Checks c;
  const fs::path dir = fs::temp_directory_path() / "lwanet_acceptance_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  NetworkConfig nc;
  nc.num_classes = 4;
  nc.height = 32;
  nc.width = 32;
  Model<float> m(nc, 8);
  save_weights((dir / "a.lwaw").string(), m);
  Model<float> other(nc, 9);
  load_weights((dir / "a.lwaw").string(), other, true);
  save_weights((dir / "b.lwaw").string(), other);
  const auto bytes_a = slurp(dir / "a.lwaw");
  c.expect(!bytes_a.empty() && bytes_a == slurp(dir / "b.lwaw"), "save->load->save not byte-identical");

  const auto samples = synth_shapes(4, 32, 32, 4, 5);
  auto cfg = [&](int64_t epochs, const fs::path& out) {
    TrainConfig t;
    t.batch_size = 2;
    t.lr = 1e-3;
    t.epochs = epochs;
    t.seed = 4;
    t.out_dir = out.string();
    return t;
  };
  Model<float> whole(nc, 1);
  const TrainResult full = train(whole, samples, {}, cfg(4, dir / "whole"));
  Model<float> part(nc, 1);
  train(part, samples, {}, cfg(2, dir / "part"));
  Model<float> resumed(nc, 123);
  const TrainState st = load_checkpoint((dir / "part" / "checkpoint.lwaw").string(), resumed);
  const TrainResult tail = train(resumed, samples, {}, cfg(4, dir / "part"), st);
  bool same = true;
  for (const auto& e : whole.params().entries()) same = same && e.value->vec() == resumed.params().at(e.decl.name).vec();
  c.expect(same, "resumed parameters differ from the uninterrupted run");
  c.expect(tail.state.step == full.state.step && tail.state.history.size() == full.state.history.size(),
           "resumed counters differ");
  if (tail.state.history.size() == full.state.history.size()) {
    for (size_t i = 0; i < full.state.history.size(); ++i) {
      c.expect(tail.state.history[i].train_loss == full.state.history[i].train_loss, "history loss differs");
    }
  }
  c.expect(slurp(dir / "whole" / "model.lwaw") == slurp(dir / "part" / "model.lwaw"),
           "final weight files differ");
  return c.done(std::to_string(bytes_a.size()) + "-byte file round-trips; resume at epoch 2 of 4 is bit-exact");
}

// --- 11 ---------------------------------------------------------------------
Outcome benchmark_ordering() {
  Checks c;
  NetworkConfig nc;
  Model<float> model(nc, 0);
  std::vector<double> means;
  std::ostringstream o;
  for (const auto& [w, h] : std::vector<std::pair<int64_t, int64_t>>{{320, 256}, {640, 512}, {960, 544}}) {
    const LatencyStats s = benchmark_latency(model, Shape{1, 3, h, w}, 1, 3);
    means.push_back(s.mean_ms);
    o << (means.size() > 1 ? ", " : "") << w << "x" << h << " " << fmt("%.1f", s.mean_ms) << " ms";
  }
  c.expect(means[0] < means[1] && means[1] < means[2], "latency not strictly increasing");
  return c.done(o.str());
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"depthwise separable cost identity", ds_cost_identity},
      {"encoder and decoder cost at 960x544", encoder_cost},
      {"area scaling of total cost", area_scaling},
      {"gradient suite", gradient_suite},
      {"attention fusion block oracle", afb_oracle},
      {"focal loss values", focal_values},
      {"conv / transposed conv adjoint pairing", adjoint_pairing},
      {"overfit sanity", overfit_sanity},
      {"attention ablation plumbing", ablation_plumbing},
      {"serialization and resume", serialization},
      {"benchmark ordering", benchmark_ordering},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += r.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s [%.2fs]\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                r.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
