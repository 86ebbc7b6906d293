// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails. Training criteria take about an hour on one core.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "ssdesc.hpp"
#include "ssdesc/nn/grad_check.hpp"
#include "net_grad_check.hpp"
#include "test_support.hpp"

using namespace ssdesc;
using nn::Tensor;
namespace fs = std::filesystem;
using testing_support::patch_batch;
using testing_support::random_tensor;
using testing_support::random_unit_rows;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(const char* id, const char* title, const Outcome& o) {
  std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

template <typename T>
double weighted_sum(const Tensor<T>& y, const Tensor<T>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += double(y[i]) * w[i];
  return s;
}

// ---------------------------------------------------------------- AC1

constexpr double kGradTol = 1e-5;
constexpr double kStep = 1e-6;

double conv_worst(std::uint64_t seed) {
  Rng rng(100 + seed);
  const auto x = random_tensor<double>({2, 2, 6, 6}, rng);
  auto c = nn::ConvLayer<double>::he_uniform(2, 3, 3, 2, 1, rng);
  for (double& b : c.bias.values()) b = normal01(rng);
  const auto w = random_tensor<double>(c.forward(x).shape(), rng);
  const auto dx = c.backward(x, w);
  const std::vector<double> dw(c.weight.grad().begin(), c.weight.grad().end());
  const std::vector<double> db(c.bias.grad().begin(), c.bias.grad().end());
  auto probe = c;
  double worst = nn::grad_check<double>([&](const Tensor<double>& xi) { return weighted_sum(c.forward(xi), w); }, x,
                                        dx.values(), kStep);
  worst = std::max(worst, nn::grad_check<double>(
                              [&](const Tensor<double>& wi) {
                                probe.weight = wi;
                                return weighted_sum(probe.forward(x), w);
                              },
                              c.weight, dw, kStep));
  probe = c;
  worst = std::max(worst, nn::grad_check<double>(
                              [&](const Tensor<double>& bi) {
                                probe.bias = bi;
                                return weighted_sum(probe.forward(x), w);
                              },
                              c.bias, db, kStep));
  return worst;
}

double batchnorm_worst(std::uint64_t seed, bool fuse_relu) {
  Rng rng(200 + seed);
  const auto x = random_tensor<double>({3, 2, 3, 3}, rng);
  auto bn = nn::BatchNormLayer<double>::make(2);
  for (double& g : bn.gamma.values()) g = uniform(rng, 0.5, 1.5);
  for (double& b : bn.beta.values()) b = uniform(rng, -0.5, 0.5);
  const auto w = random_tensor<double>(x.shape(), rng);
  nn::BatchNormLayer<double>::Cache cache;
  const auto y = bn.forward(x, Mode::kTrain, &cache, true, fuse_relu);
  const auto dx = bn.backward(cache, w, fuse_relu ? &y : nullptr);
  const std::vector<double> dg(bn.gamma.grad().begin(), bn.gamma.grad().end());
  const std::vector<double> dbeta(bn.beta.grad().begin(), bn.beta.grad().end());
  auto probe = bn;
  auto f = [&](nn::BatchNormLayer<double>& layer, const Tensor<double>& xi) {
    return weighted_sum(layer.forward(xi, Mode::kTrain, nullptr, false, fuse_relu), w);
  };
  double worst = nn::grad_check<double>([&](const Tensor<double>& xi) { return f(bn, xi); }, x, dx.values(), kStep);
  worst = std::max(worst, nn::grad_check<double>(
                              [&](const Tensor<double>& g) {
                                probe.gamma = g;
                                return f(probe, x);
                              },
                              bn.gamma, dg, kStep));
  probe = bn;
  worst = std::max(worst, nn::grad_check<double>(
                              [&](const Tensor<double>& b) {
                                probe.beta = b;
                                return f(probe, x);
                              },
                              bn.beta, dbeta, kStep));
  return worst;
}

double relu_worst(std::uint64_t seed) {
  Rng rng(300 + seed);
  const auto x = random_tensor<double>({64}, rng);
  const auto w = random_tensor<double>({64}, rng);
  const auto dx = nn::relu_backward(nn::relu(x), w);
  std::vector<std::size_t> coords;  // away from the kink, where the derivative exists
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) > 1e-3) coords.push_back(i);
  }
  return nn::grad_check<double>([&](const Tensor<double>& xi) { return weighted_sum(nn::relu(xi), w); }, x,
                                dx.values(), kStep, coords);
}

double l2_worst(std::uint64_t seed) {
  Rng rng(400 + seed);
  const auto v = random_tensor<double>({3, 8}, rng);
  const auto w = random_tensor<double>({3, 8}, rng);
  const auto dv = nn::l2_normalize_backward(v, w);
  return nn::grad_check<double>([&](const Tensor<double>& vi) { return weighted_sum(nn::l2_normalize(vi), w); }, v,
                                dv.values(), kStep);
}

// Correlated unit rows so that most hinge terms are active.
std::pair<Tensor<double>, Tensor<double>> loss_batch(Rng& rng, double noise_scale) {
  auto a = random_unit_rows<double>(6, 16, rng);
  auto noise = random_unit_rows<double>(6, 16, rng);
  Tensor<double> p(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) p[i] = a[i] + noise_scale * noise[i];
  return {a, nn::l2_normalize(p)};
}

// `loss(a, p, rng)` is checked with respect to both raw inputs through l2_normalize;
// every evaluation replays the same generator state so sampled negatives stay fixed.
template <typename Loss>
double loss_worst(const Tensor<double>& a, const Tensor<double>& p, const Rng& rng0, Loss loss) {
  Rng r = rng0;
  const auto res = loss(a, p, r);
  const auto ga = nn::l2_normalize_backward(a, res.grads.anchors);
  const auto gp = nn::l2_normalize_backward(p, res.grads.positives);
  double worst = nn::grad_check<double>(
      [&](const Tensor<double>& x) {
        Rng rr = rng0;
        return loss(nn::l2_normalize(x), p, rr).value;
      },
      a, ga.values(), kStep);
  worst = std::max(worst, nn::grad_check<double>(
                              [&](const Tensor<double>& x) {
                                Rng rr = rng0;
                                return loss(a, nn::l2_normalize(x), rr).value;
                              },
                              p, gp.values(), kStep));
  return worst;
}

Outcome ac1() {
  const auto t0 = Clock::now();
  std::map<std::string, double> worst;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto note = [&](const std::string& k, double v) { worst[k] = std::max(worst[k], v); };
    note("conv", conv_worst(seed));
    note("batchnorm", std::max(batchnorm_worst(seed, false), batchnorm_worst(seed, true)));
    note("relu", relu_worst(seed));
    note("l2_normalize", l2_worst(seed));
    Rng data(500 + seed);
    auto [a, p] = loss_batch(data, 0.6);
    note("hardnet", loss_worst(a, p, Rng(0), [](const auto& x, const auto& y, Rng&) { return hardnet_loss(x, y, 1.0); }));
    note("triplet", loss_worst(a, p, Rng(600 + seed),
                               [](const auto& x, const auto& y, Rng& r) { return triplet_loss(x, y, 1.0, r); }));
    // Margins frozen at their values on the unperturbed batch, as in backward.
    Rng r0(700 + seed);
    std::vector<double> margins;
    {
      Rng r = r0;
      adaptive_margin_triplet_loss(a, p, r, [&](double dp, double dn) {
        margins.push_back(default_adaptive_margin(dp, dn));
        return margins.back();
      });
    }
    note("adaptive", loss_worst(a, p, r0, [&](const auto& x, const auto& y, Rng& r) {
           std::size_t k = 0;
           return adaptive_margin_triplet_loss(x, y, r, [&](double, double) { return margins[k++ % margins.size()]; });
         }));
  }
  const auto net = testing_support::network_hardnet_grad_check(6, 3, kStep);
  worst["network+hardnet"] = net.worst;
  const double elapsed = seconds_since(t0);
  Outcome o;
  double overall = 0.0;
  for (const auto& [name, v] : worst) {
    overall = std::max(overall, v);
    o.pass = o.pass && v <= kGradTol;
    o.detail += name + " " + fmt("%.2e", v) + ", ";
  }
  o.pass = o.pass && elapsed < 120.0;
  o.pass = o.pass && net.checked == 3 * 3 * kNumLayers;
  o.detail += std::to_string(net.checked) + " network probes (" + std::to_string(net.redrawn) +
              " redrawn across a ReLU switch), max " + fmt("%.2e", overall) + " (<= 1e-5), " + fmt("%.1f", elapsed) + " s (< 120 s)";
  return o;
}

// ---------------------------------------------------------------- AC2

template <typename T>
std::vector<double> naive_conv(const Tensor<T>& x, const nn::ConvLayer<T>& c) {
  const long n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const long cout = c.weight.dim(0), k = c.weight.dim(2), s = c.stride, p = c.padding;
  const long oh = (h + 2 * p - k) / s + 1, ow = (w + 2 * p - k) / s + 1;
  std::vector<double> y(n * cout * oh * ow);
  for (long b = 0; b < n; ++b)
    for (long o = 0; o < cout; ++o)
      for (long oy = 0; oy < oh; ++oy)
        for (long ox = 0; ox < ow; ++ox) {
          double acc = c.bias[o];
          for (long i = 0; i < cin; ++i)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                const long iy = oy * s - p + ky, ix = ox * s - p + kx;
                if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                acc += double(c.weight[((o * cin + i) * k + ky) * k + kx]) * x[((b * cin + i) * h + iy) * w + ix];
              }
          y[((b * cout + o) * oh + oy) * ow + ox] = acc;
        }
  return y;
}

double hardnet_oracle(const Tensor<double>& a, const Tensor<double>& p, double m) {
  const std::size_t n = a.dim(0), dim = a.dim(1);
  auto dist = [&](const Tensor<double>& u, std::size_t i, const Tensor<double>& v, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < dim; ++k) s += std::pow(u[i * dim + k] - v[j * dim + k], 2);
    return std::sqrt(s);
  };
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double neg = INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) neg = std::min({neg, dist(a, i, p, j), dist(a, j, p, i)});
    }
    total += std::max(0.0, m + dist(a, i, p, i) - neg);
  }
  return total / n;
}

Outcome ac2() {
  Outcome o;
  // conv2d: every layer geometry of the network plus a float case.
  double conv_err = 0.0;
  Rng rng(11);
  std::size_t spatial = kPatchSize;
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    const std::size_t cin = l == 0 ? 1 : kFilters[l - 1];
    auto c = nn::ConvLayer<double>::he_uniform(cin, kFilters[l], kKernels[l], kStrides[l], kPaddings[l], rng);
    for (double& b : c.bias.values()) b = normal01(rng);
    const auto x = random_tensor<double>({2, cin, spatial, spatial}, rng);
    const auto y = c.forward(x);
    const auto ref = naive_conv(x, c);
    for (std::size_t i = 0; i < ref.size(); ++i) conv_err = std::max(conv_err, std::abs(y[i] - ref[i]));
    spatial = y.dim(2);
  }
  {
    auto c = nn::ConvLayer<float>::he_uniform(3, 5, 3, 2, 1, rng);
    const auto x = random_tensor<float>({2, 3, 17, 17}, rng);
    const auto y = c.forward(x);
    const auto ref = naive_conv(x, c);
    for (std::size_t i = 0; i < ref.size(); ++i) conv_err = std::max(conv_err, std::abs(y[i] - ref[i]));
  }
  const bool conv_ok = conv_err <= 1e-5;

  // mine_hard against an exhaustive scan, ties included.
  std::size_t mine_mismatch = 0;
  Rng mr(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 32;
    DistanceMatrix<double> d{n, std::vector<double>(n * n), {}};
    for (double& v : d.d) v = std::round(uniform(mr, 0, 2) * 20) / 20;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t bj = n, bk = n;
      double vj = INFINITY, vk = INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        if (d(i, j) < vj) vj = d(i, j), bj = j;
        if (d(j, i) < vk) vk = d(j, i), bk = j;
      }
      const auto h = mine_hard(d, i);
      mine_mismatch += (h.j_min != bj || h.k_min != bk) ? 1 : 0;
    }
  }

  // match_nn against a brute-force scan.
  std::size_t match_mismatch = 0;
  Rng nr(13);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + uniform_index(nr, 128), m = 1 + uniform_index(nr, 128);
    const auto s = random_unit_rows<float>(n, 128, nr);
    const auto t = random_unit_rows<float>(m, 128, nr);
    const auto got = match_nn(s, t);
    if (got.size() != n) {
      ++match_mismatch;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = INFINITY;
      for (std::size_t j = 0; j < m; ++j) {
        double dd = 0;
        for (std::size_t k = 0; k < 128; ++k) dd += std::pow(double(s[i * 128 + k]) - t[j * 128 + k], 2);
        dd = std::sqrt(dd);
        if (dd < bd) bd = dd, best = j;
      }
      match_mismatch += (got[i].i != i || got[i].j != best || got[i].distance != bd) ? 1 : 0;
    }
  }

  // hardnet_loss against the double-loop recomputation.
  double loss_err = 0.0;
  for (std::size_t n : {2, 4, 8, 32}) {
    Rng lr(20 + n);
    const auto a = random_unit_rows<double>(n, 128, lr);
    const auto p = random_unit_rows<double>(n, 128, lr);
    loss_err = std::max(loss_err, std::abs(hardnet_loss(a, p, 1.0).value - hardnet_oracle(a, p, 1.0)));
  }

  o.pass = conv_ok && mine_mismatch == 0 && match_mismatch == 0 && loss_err <= 1e-6;
  o.detail = "conv2d max |diff| " + fmt("%.2e", conv_err) + " (<= 1e-5), mine_hard mismatches " +
             std::to_string(mine_mismatch) + "/3200, match_nn mismatches " + std::to_string(match_mismatch) +
             ", hardnet |diff| " + fmt("%.2e", loss_err) + " (<= 1e-6)";
  return o;
}

// ---------------------------------------------------------------- AC3

Outcome ac3() {
  Outcome o;
  auto net = DescriptorNet<float>::initialize(3);
  const auto x = patch_batch(6, 30);
  DescriptorNet<float>::Trace trace;
  net.forward(x, Mode::kTrain, &trace);
  const std::size_t expected[] = {128, 64, 64, 32, 32, 16, 8};
  bool chain = true;
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    chain = chain && trace.inputs[l].dim(2) == expected[l] && trace.inputs[l].dim(3) == expected[l];
  }
  chain = chain && trace.pre_norm.shape() == nn::Shape{6, kDescriptorDim};

  const auto d = net.infer(x);
  double norm_err = 0.0;
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t i = 0; i < kDescriptorDim; ++i) s += double(d[r * kDescriptorDim + i]) * d[r * kDescriptorDim + i];
    norm_err = std::max(norm_err, std::abs(std::sqrt(s) - 1.0));
  }
  const bool shape_ok = d.shape() == nn::Shape{6, 128};

  const auto bytes = serialize_checkpoint(net);
  const auto back = deserialize_checkpoint(bytes);
  const auto d2 = back.infer(x);
  const bool round_trip = serialize_checkpoint(back) == bytes &&
                          std::equal(d.values().begin(), d.values().end(), d2.values().begin(), d2.values().end());

  std::size_t closed_form = 0;
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    const std::size_t cin = l == 0 ? 1 : kFilters[l - 1], cout = kFilters[l], k = kKernels[l];
    closed_form += cout * cin * k * k + cout + 4 * cout;  // weights, bias, gamma, beta, running mean and variance
  }
  const bool count_ok = net.parameter_count() == closed_form;

  o.pass = chain && shape_ok && norm_err <= 1e-5 && round_trip && count_ok;
  o.detail = std::string("output 6x128 ") + (shape_ok ? "ok" : "WRONG") + ", max |norm-1| " + fmt("%.2e", norm_err) +
             " (<= 1e-5), shape chain " + (chain ? "ok" : "WRONG") + ", checkpoint round trip " +
             (round_trip ? "bit-exact" : "DIFFERS") + ", parameters " + std::to_string(net.parameter_count()) +
             " vs closed form " + std::to_string(closed_form);
  return o;
}

// ---------------------------------------------------------------- AC4-AC6

constexpr std::uint64_t kFrameSeed = 2024;
constexpr std::uint64_t kHeldOutSeed = 4048;
constexpr std::uint64_t kPairSeed = 7;
constexpr int kTrainFrames = 20;
constexpr int kHeldOutFrames = 2;  // the training validation fraction of 20 frames
constexpr int kKeypointsPerFrame = 52;

GenerationConfig generation_config() {
  GenerationConfig g;
  g.max_keypoints = kKeypointsPerFrame;
  g.seed = kPairSeed;
  return g;
}

struct TrainedModel {
  LossKind loss;
  DescriptorNet<float> net;
  double seconds = 0.0;
  bool finite = true;
  EvalReport heldout;
};

TrainedModel train_model(const PairDataset& ds, const PairDataset& heldout, LossKind loss) {
  TrainConfig cfg;
  cfg.loss = loss;
  cfg.epochs = 50;
  cfg.seed = 1;
  TrainedModel m{loss, {}, 0.0, true, {}};
  const auto t0 = Clock::now();
  auto result = train(ds, cfg);
  m.seconds = seconds_since(t0);
  for (const auto& r : result.log) m.finite = m.finite && std::isfinite(r.loss);
  m.net = std::move(result.net);
  m.heldout = validate(m.net, std::span<const PatchPair>(heldout.pairs), kDefaultProjectionError);
  std::cout << "  trained " << to_string(loss) << ": " << fmt("%.0f", m.seconds) << " s, held-out precision "
            << fmt("%.4f", m.heldout.precision) << ", matching score " << fmt("%.4f", m.heldout.matching_score)
            << std::endl;
  return m;
}

Outcome ac4(const PairDataset& ds, const PairDataset& heldout, const TrainedModel& m) {
  Outcome o;
  o.pass = ds.pairs.size() >= 2000 && m.seconds <= 1800.0 && m.heldout.precision >= 0.90 &&
           m.heldout.matching_score >= 0.60;
  o.detail = std::to_string(ds.pairs.size()) + " pairs (>= 2000) from " + std::to_string(kTrainFrames) +
             " frames 720x576; 50 epochs in " + fmt("%.0f", m.seconds) + " s (<= 1800); held-out " +
             std::to_string(heldout.pairs.size()) + " pairs: precision " + fmt("%.4f", m.heldout.precision) +
             " (>= 0.90), matching score " + fmt("%.4f", m.heldout.matching_score) + " (>= 0.60) at PE=5";
  return o;
}

Outcome ac5(const TrainedModel& hardnet, const TrainedModel& triplet, const TrainedModel& adaptive) {
  Outcome o;
  o.pass = hardnet.heldout.precision >= triplet.heldout.precision - 0.01 && adaptive.finite &&
           std::isfinite(adaptive.heldout.precision);
  o.detail = "held-out precision hardnet " + fmt("%.4f", hardnet.heldout.precision) + " vs triplet " +
             fmt("%.4f", triplet.heldout.precision) + " (need >= triplet - 0.01); adaptive ran 50 epochs with " +
             (adaptive.finite ? "finite" : "NON-FINITE") + " loss, precision " + fmt("%.4f", adaptive.heldout.precision);
  return o;
}

std::size_t csv_data_rows(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n ? n - 1 : 0;
}

double mean_precision(const std::vector<SweepRow>& rows, double condition) {
  double s = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.condition == condition) s += r.precision, ++n;
  }
  return n ? s / n : NAN;
}

Outcome ac6(const std::vector<GrayImage>& frames, const DescriptorNet<float>& net, const fs::path& dir) {
  Outcome o;
  SweepConfig cfg;
  bool rows_ok = true;
  std::string counts;
  std::vector<SweepRow> scale, blur;
  for (SweepMode mode : {SweepMode::kViewpoint, SweepMode::kScale, SweepMode::kBlur}) {
    const auto rows = robustness_sweep(frames, net, mode, cfg);
    const std::string path = (dir / ("sweep_" + to_string(mode) + ".csv")).string();
    write_sweep_csv(path, rows);
    const std::size_t want = frames.size() * sweep_conditions(mode, cfg).size();
    const std::size_t got = csv_data_rows(path);
    rows_ok = rows_ok && got == want;
    counts += to_string(mode) + " " + std::to_string(got) + "/" + std::to_string(want) + " ";
    if (mode == SweepMode::kScale) scale = rows;
    if (mode == SweepMode::kBlur) blur = rows;
  }
  const double p_unit = mean_precision(scale, 1.0);
  const double p3 = mean_precision(blur, 3), p15 = mean_precision(blur, 15);
  o.pass = rows_ok && p_unit >= 0.99 && p3 - p15 >= 0.05;
  o.detail = "scale 1.0 precision " + fmt("%.4f", p_unit) + " (>= 0.99); blur k=3 " + fmt("%.4f", p3) + " vs k=15 " +
             fmt("%.4f", p15) + " (gap >= 0.05); CSV rows " + counts + "(frames x conditions)";
  return o;
}

// ---------------------------------------------------------------- AC7

Homography random_projective(Rng& rng) {
  Eigen::Matrix3d m;
  m << uniform(rng, 0.8, 1.2), uniform(rng, -0.2, 0.2), uniform(rng, -20, 20), uniform(rng, -0.2, 0.2),
      uniform(rng, 0.8, 1.2), uniform(rng, -20, 20), uniform(rng, -1e-4, 1e-4), uniform(rng, -1e-4, 1e-4), 1.0;
  return Homography(m);
}

double mean_corner_error(const Homography& a, const Homography& b, double w, double h) {
  double sum = 0;
  for (Point2 c : {Point2{0, 0}, Point2{w, 0}, Point2{0, h}, Point2{w, h}}) {
    const Point2 p = apply_homography(a, c), q = apply_homography(b, c);
    sum += std::hypot(p.x - q.x, p.y - q.y);
  }
  return sum / 4.0;
}

Outcome ac7() {
  Outcome o;
  constexpr int kTrials = 200;
  constexpr double w = 640, h = 480;
  int good = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    Rng rng(derive_rng(77, static_cast<std::uint64_t>(trial)));
    const Homography truth = random_projective(rng);
    std::vector<Correspondence> c;
    for (int i = 0; i < 70; ++i) {
      const Point2 p{uniform(rng, 0, w), uniform(rng, 0, h)};
      c.push_back({p, apply_homography(truth, p)});
    }
    for (int i = 0; i < 30; ++i) {
      c.push_back({{uniform(rng, 0, w), uniform(rng, 0, h)}, {uniform(rng, 0, w), uniform(rng, 0, h)}});
    }
    try {
      const auto r = ransac_homography(c, {.seed = static_cast<std::uint64_t>(trial) + 1});
      good += mean_corner_error(r.h, truth, w, h) < 1.0 ? 1 : 0;
    } catch (const std::exception&) {
    }
  }

  Rng rng(78);
  const Homography truth = random_projective(rng);
  std::vector<Correspondence> clean;
  for (int i = 0; i < 100; ++i) {
    const Point2 p{uniform(rng, 0, w), uniform(rng, 0, h)};
    clean.push_back({p, apply_homography(truth, p)});
  }
  const auto r = ransac_homography(clean, {.seed = 5});
  const bool exact = r.inlier_count == clean.size() && r.h.row_major() == estimate_homography_dlt(clean).row_major();

  const double rate = static_cast<double>(good) / kTrials;
  o.pass = rate >= 0.95 && exact;
  o.detail = std::to_string(good) + "/" + std::to_string(kTrials) + " trials with mean corner error < 1 px (" +
             fmt("%.1f", 100 * rate) + "% >= 95%); zero-outlier input " +
             (exact ? "returns the all-inlier DLT fit exactly" : "DIFFERS from the all-inlier DLT fit");
  return o;
}

// ---------------------------------------------------------------- AC8

Outcome ac8() {
  Outcome o;
  Rng rng(12);
  const GrayImage big = testing_support::smooth_texture(600, 400, rng);
  std::vector<GrayImage> frames;
  std::vector<Homography> to_big;  // frame k -> texture coordinates
  for (int k = 0; k < 10; ++k) {
    const Homography h = Homography::translation(40.0 + 25.0 * k, 60.0 + 6.0 * std::sin(k)) *
                         Homography::rotation(0.02 * (k % 3), {100, 80});
    to_big.push_back(h);
    frames.push_back(warp(big, h.inverse(), 200, 160).image);
  }
  std::vector<Homography> pairwise;
  for (int k = 0; k + 1 < 10; ++k) pairwise.push_back(to_big[k + 1].inverse() * to_big[k]);
  constexpr std::size_t kRef = 4;
  const auto pano = compose_panorama(frames, pairwise, kRef, BlendMode::kFeather);
  const double diff = overlap_difference(frames, pano);

  // Composed directly: frame k -> frame ref is the product of the pairwise maps in between.
  double worst = 0.0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    if (k < kRef) {
      for (std::size_t j = k; j < kRef; ++j) m = pairwise[j].matrix() * m;
    } else {
      for (std::size_t j = kRef; j < k; ++j) m = m * pairwise[j].matrix().inverse();
    }
    m /= m(2, 2);
    worst = std::max(worst, (pano.global[k].matrix() - m).cwiseAbs().maxCoeff());
  }
  o.pass = diff <= 2.0 / 255.0 && worst <= 1e-6;
  o.detail = "10 frames, canvas " + std::to_string(pano.canvas.width()) + "x" + std::to_string(pano.canvas.height()) +
             ", overlap mean |diff| " + fmt("%.5f", diff) + " (<= " + fmt("%.5f", 2.0 / 255.0) +
             "), global vs composed pairwise max |diff| " + fmt("%.2e", worst) + " (<= 1e-6)";
  return o;
}

// ---------------------------------------------------------------- AC9

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SSDESC_CLI_PATH) + " --deterministic " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every regular file under a, compared with its counterpart under b.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
    ++files;
  }
  return files > 0;
}

Outcome ac9(const fs::path& root, const fs::path& model) {
  Outcome o;
  // Mosaic frames: overlapping crops of one synthetic frame.
  const GrayImage base = synth_frames(1, SynthParams{}, 99)[0];
  fs::create_directories(root / "chain");
  for (int k = 0; k < 4; ++k) {
    save_png(warp(base, Homography::translation(-60.0 * k, -20.0 * k), 360, 300).image,
             (root / "chain" / ("frame_" + std::to_string(k) + ".png")).string());
  }
  {
    std::ofstream cfg(root / "train.cfg");
    cfg << "epochs = 2\nbatch_size = 32\n";
  }
  const std::string chain = (root / "chain").string(), cfg = (root / "train.cfg").string();
  std::map<std::string, bool> same;
  std::map<std::string, int> codes;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    const std::string s = d.string();
    codes["synth-data"] |= run_cli("--seed 5 synth-data --frames 3 --size 320x256 --out " + s + "/synth-data");
    codes["gen-pairs"] |= run_cli("--seed 5 gen-pairs --frames " + s + "/synth-data --max-kp 40 --out " + s +
                                  "/gen-pairs/pairs.bin");
    codes["train"] |= run_cli("--seed 5 train --pairs " + s + "/gen-pairs/pairs.bin --config " + cfg + " --out " + s +
                              "/train/model.ckpt");
    codes["sweep"] |= run_cli("--seed 5 sweep --frames " + s + "/synth-data --model " + model.string() +
                              " --mode viewpoint --out " + s + "/sweep/sweep.csv");
    codes["mosaic"] |= run_cli("--seed 5 mosaic --frames " + chain + " --model " + model.string() + " --out " + s +
                               "/mosaic/pano.png");
  }
  for (const auto& [stage, code] : codes) {
    std::size_t files = 0;
    const bool identical = code == 0 && same_tree(root / "a" / stage, root / "b" / stage, files);
    o.pass = o.pass && identical;
    o.detail += stage + (identical ? " identical (" + std::to_string(files) + " files)"
                                   : code ? " FAILED (exit " + std::to_string(code) + ")" : " DIFFERS") +
                ", ";
  }
  o.detail.resize(o.detail.size() - 2);
  return o;
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "ssdesc_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  std::cout << std::unitbuf;

  report("AC1", "gradient correctness", ac1());
  report("AC2", "oracle equivalence", ac2());
  report("AC3", "architecture contract", ac3());

  std::cout << "  generating training and held-out pairs" << std::endl;
  const auto train_frames = synth_frames(kTrainFrames, SynthParams{}, kFrameSeed);
  const auto heldout_frames = synth_frames(kHeldOutFrames, SynthParams{}, kHeldOutSeed);
  const PairDataset ds = generate_pairs(train_frames, generation_config());
  const PairDataset heldout = generate_pairs(heldout_frames, generation_config());
  const TrainedModel hardnet = train_model(ds, heldout, LossKind::kHardNet);
  report("AC4", "end-to-end synthetic training", ac4(ds, heldout, hardnet));
  const TrainedModel triplet = train_model(ds, heldout, LossKind::kTriplet);
  const TrainedModel adaptive = train_model(ds, heldout, LossKind::kAdaptive);
  report("AC5", "loss ordering", ac5(hardnet, triplet, adaptive));
  report("AC6", "robustness sweep", ac6(heldout_frames, hardnet.net, root));

  report("AC7", "RANSAC", ac7());
  report("AC8", "mosaic", ac8());
  const fs::path model = root / "hardnet.ckpt";
  save_checkpoint(hardnet.net, model.string());
  report("AC9", "determinism", ac9(root / "determinism", model));

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
