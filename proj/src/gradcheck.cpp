#include "crossview/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <vector>

#include "crossview/losses.hpp"
#include "crossview/nn/layers.hpp"
#include "crossview/rng.hpp"

namespace crossview {

namespace {

using DTape = nn::Tape<double>;
using DTensor = nn::Tensor<double>;
using DValue = DTape::Value;

constexpr double kTol = 1e-4;
constexpr double kH = 1e-5;

double fd_max_rel_error(const std::function<DValue(DTape&, DValue)>& f,
                        const std::vector<double>& x0) {
  const int n = static_cast<int>(x0.size());
  DTape tape(true);
  auto x = tape.leaf(DTensor::row(x0));
  auto loss = f(tape, x);
  tape.backward(loss);
  DTensor analytic = tape.grad(x);
  if (analytic.empty()) analytic = DTensor({1, n});

  auto eval = [&](const std::vector<double>& xv) {
    DTape t2(false);
    return t2.val(f(t2, t2.leaf(DTensor::row(xv))))[0];
  };
  double worst = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> xp = x0, xm = x0;
    xp[static_cast<size_t>(i)] += kH;
    xm[static_cast<size_t>(i)] -= kH;
    double fd = (eval(xp) - eval(xm)) / (2 * kH);
    double g = analytic[i];
    worst = std::max(worst, std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)}));
  }
  return worst;
}

std::vector<double> rand_vec(Rng& rng, int n, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

std::vector<double> rand_vec_nonzero(Rng& rng, int n) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) {
    double m = rng.uniform(0.05, 1.0);
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return v;
}

DValue readout(DTape& t, DValue y) {
  auto flat = t.flatten(y);
  int n = t.val(flat).cols();
  DTensor w({1, n});
  for (int i = 0; i < n; ++i) w[i] = 0.25 + 0.1 * (i % 5);
  return t.sum(t.mul(flat, t.constant(w)));
}

struct Check {
  const char* name;
  std::function<double(uint64_t)> run;  // seed -> max rel error
};

bool run_checks(const std::vector<Check>& checks, int instances, std::ostream& out) {
  bool ok = true;
  for (const auto& c : checks) {
    double worst = 0;
    for (int k = 0; k < instances; ++k)
      worst = std::max(worst, c.run(derive_seed(0xC0FFEEu, static_cast<uint64_t>(k))));
    bool pass = worst <= kTol;
    ok = ok && pass;
    out << "gradcheck " << c.name << ": max_rel_err=" << worst << (pass ? " PASS" : " FAIL")
        << "\n";
  }
  return ok;
}

double check_rl_loss(uint64_t seed) {
  // rl_loss stops gradients through the importance ratio and the advantage;
  // the FD oracle freezes both at the base point.
  Rng rng(seed);
  const int T = 4, feat = 3;
  std::vector<DTensor> states;
  Trajectory traj;
  traj.region = "r";
  for (int t = 0; t < T; ++t) {
    states.push_back(DTensor::row(rand_vec(rng, feat, -1, 1)));
    TrajStep s;
    s.action = static_cast<int>(rng.uniform_int(kNumActions));
    s.reward = rng.uniform(0, 1);
    for (int i = 0; i < kNumActions; ++i)
      s.behavior_logits[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(-1, 1));
    traj.steps.push_back(s);
  }
  LossWeights w;
  w.value_coef = 0.5;
  w.entropy_coef = 0.01;
  w.is_clip = 1.5;
  auto returns = trajectory_returns<double>(traj, 0.9, 0.3);
  const int n_params = feat * kNumActions + feat;
  auto x0 = rand_vec(rng, n_params, -1, 1);

  auto heads = [&](DTape& t, DValue x, std::vector<DValue>& lg, std::vector<DValue>& vv) {
    auto wp = t.reshape(t.slice_cols(x, 0, feat * kNumActions), {feat, kNumActions});
    auto wv = t.reshape(t.slice_cols(x, feat * kNumActions, n_params), {feat, 1});
    for (int s = 0; s < T; ++s) {
      auto st = t.constant(states[static_cast<size_t>(s)]);
      lg.push_back(t.matmul(st, wp));
      vv.push_back(t.matmul(st, wv));
    }
  };

  DTape tape(true);
  auto x = tape.leaf(DTensor::row(x0));
  std::vector<DValue> lg, vv;
  heads(tape, x, lg, vv);
  auto res = rl_loss<double>(tape, lg, vv, traj, returns, w);
  tape.backward(res.loss);
  DTensor analytic = tape.grad(x);

  std::vector<double> rho(static_cast<size_t>(T)), adv(static_cast<size_t>(T));
  for (int s = 0; s < T; ++s) {
    const auto& step = traj.steps[static_cast<size_t>(s)];
    const auto& l = tape.val(lg[static_cast<size_t>(s)]);
    double mx = l[0];
    for (int i = 1; i < kNumActions; ++i) mx = std::max(mx, l[i]);
    double z = 0;
    for (int i = 0; i < kNumActions; ++i) z += std::exp(l[i] - mx);
    double p_cur = std::exp(l[step.action] - mx) / z;
    double bmx = step.behavior_logits[0];
    for (float b : step.behavior_logits) bmx = std::max(bmx, static_cast<double>(b));
    double bz = 0;
    for (float b : step.behavior_logits) bz += std::exp(static_cast<double>(b) - bmx);
    double p_beh =
        std::exp(static_cast<double>(step.behavior_logits[static_cast<size_t>(step.action)]) -
                 bmx) / bz;
    rho[static_cast<size_t>(s)] = std::min(w.is_clip, p_cur / p_beh);
    adv[static_cast<size_t>(s)] =
        returns[static_cast<size_t>(s)] - tape.val(vv[static_cast<size_t>(s)])[0];
  }

  auto frozen_eval = [&](const std::vector<double>& xv) {
    DTape t2(false);
    auto x2 = t2.leaf(DTensor::row(xv));
    std::vector<DValue> lg2, vv2;
    heads(t2, x2, lg2, vv2);
    double total = 0;
    for (int s = 0; s < T; ++s) {
      const auto& step = traj.steps[static_cast<size_t>(s)];
      auto lp = t2.log_softmax(lg2[static_cast<size_t>(s)]);
      double logp = t2.val(lp)[step.action];
      double diff = t2.val(vv2[static_cast<size_t>(s)])[0] - returns[static_cast<size_t>(s)];
      double ent = 0;
      for (int i = 0; i < kNumActions; ++i)
        ent -= std::exp(t2.val(lp)[i]) * t2.val(lp)[i];
      total += -rho[static_cast<size_t>(s)] * adv[static_cast<size_t>(s)] * logp +
               w.value_coef * diff * diff - w.entropy_coef * ent;
    }
    return total / T;
  };

  double worst = 0;
  for (int i = 0; i < n_params; ++i) {
    std::vector<double> xp = x0, xm = x0;
    xp[static_cast<size_t>(i)] += kH;
    xm[static_cast<size_t>(i)] -= kH;
    double fd = (frozen_eval(xp) - frozen_eval(xm)) / (2 * kH);
    double g = analytic.empty() ? 0.0 : analytic[i];
    worst = std::max(worst, std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)}));
  }
  return worst;
}

}  // namespace

bool run_gradcheck_suite(int instances, std::ostream& out) {
  std::vector<Check> checks;

  auto unary = [&](const char* name, auto opfn, bool nonzero) {
    checks.push_back(Check{name, [opfn, nonzero](uint64_t seed) {
      Rng rng(seed);
      auto x0 = nonzero ? rand_vec_nonzero(rng, 8) : rand_vec(rng, 8, -1, 1);
      return fd_max_rel_error(
          [&opfn](DTape& t, DValue x) { return opfn(t, x); }, x0);
    }});
  };
  unary("tanh", [](DTape& t, DValue x) { return readout(t, t.tanh_op(x)); }, false);
  unary("sigmoid", [](DTape& t, DValue x) { return readout(t, t.sigmoid_op(x)); }, false);
  unary("relu", [](DTape& t, DValue x) { return readout(t, t.relu_op(x)); }, true);
  unary("softmax", [](DTape& t, DValue x) { return readout(t, t.softmax(x)); }, false);
  unary("log_softmax", [](DTape& t, DValue x) { return readout(t, t.log_softmax(x)); }, false);
  unary("l2_norm", [](DTape& t, DValue x) { return t.l2_norm(x); }, true);
  unary("sum", [](DTape& t, DValue x) { return t.sum(t.mul(x, x)); }, false);
  unary("mean", [](DTape& t, DValue x) { return t.mean(t.mul(x, x)); }, false);
  unary("affine", [](DTape& t, DValue x) { return readout(t, t.affine(x, 1.3, 0.4)); }, false);
  unary("pick", [](DTape& t, DValue x) { return t.pick(t.tanh_op(x), 0, 3); }, false);
  unary("reshape",
        [](DTape& t, DValue x) { return readout(t, t.tanh_op(t.reshape(x, {2, 4}))); }, false);
  unary("slice",
        [](DTape& t, DValue x) { return readout(t, t.slice_cols(t.tanh_op(x), 1, 6)); }, false);

  auto binary = [&](const char* name, auto opfn) {
    checks.push_back(Check{name, [opfn](uint64_t seed) {
      Rng rng(seed);
      auto x0 = rand_vec(rng, 12, -1, 1);
      return fd_max_rel_error(
          [&opfn](DTape& t, DValue x) {
            return opfn(t, t.slice_cols(x, 0, 6), t.slice_cols(x, 6, 12));
          },
          x0);
    }});
  };
  binary("add", [](DTape& t, DValue a, DValue b) { return readout(t, t.add(a, b)); });
  binary("sub", [](DTape& t, DValue a, DValue b) { return readout(t, t.sub(a, b)); });
  binary("mul", [](DTape& t, DValue a, DValue b) { return readout(t, t.mul(a, b)); });
  binary("concat",
         [](DTape& t, DValue a, DValue b) { return readout(t, t.concat_cols({a, b})); });

  checks.push_back(Check{"add_broadcast", [](uint64_t seed) {
    Rng rng(seed);
    auto x0 = rand_vec(rng, 9, -1, 1);
    return fd_max_rel_error(
        [](DTape& t, DValue x) {
          auto m = t.reshape(t.slice_cols(x, 0, 6), {2, 3});
          auto b = t.slice_cols(x, 6, 9);
          return readout(t, t.tanh_op(t.add(m, b)));
        },
        x0);
  }});

  checks.push_back(Check{"matmul", [](uint64_t seed) {
    Rng rng(seed);
    auto x0 = rand_vec(rng, 18, -1, 1);
    return fd_max_rel_error(
        [](DTape& t, DValue x) {
          auto a = t.reshape(t.slice_cols(x, 0, 6), {2, 3});
          auto b = t.reshape(t.slice_cols(x, 6, 18), {3, 4});
          return readout(t, t.matmul(a, b));
        },
        x0);
  }});

  checks.push_back(Check{"conv2d", [](uint64_t seed) {
    Rng rng(seed);
    const int H = 5, C = 2, K = 3, Co = 2;
    const int nx = H * H * C, nw = K * K * C * Co;
    auto x0 = rand_vec(rng, nx + nw + Co, -1, 1);
    return fd_max_rel_error(
        [&](DTape& t, DValue x) {
          auto img = t.reshape(t.slice_cols(x, 0, nx), {H, H, C});
          auto w = t.reshape(t.slice_cols(x, nx, nx + nw), {K, K, C, Co});
          auto b = t.slice_cols(x, nx + nw, nx + nw + Co);
          return readout(t, t.tanh_op(t.flatten(t.conv2d(img, w, b, 1))));
        },
        x0);
  }});

  checks.push_back(Check{"lstm_unroll3", [](uint64_t seed) {
    Rng rng(seed);
    const int in = 3, hid = 4;
    const int n_wx = in * 4 * hid, n_wh = hid * 4 * hid, n_b = 4 * hid;
    auto x0 = rand_vec(rng, n_wx + n_wh + n_b, -0.4, 0.4);
    std::vector<DTensor> inputs;
    for (int s = 0; s < 3; ++s) inputs.push_back(DTensor::row(rand_vec(rng, in, -1, 1)));
    return fd_max_rel_error(
        [&](DTape& t, DValue x) {
          auto wx = t.reshape(t.slice_cols(x, 0, n_wx), {in, 4 * hid});
          auto wh = t.reshape(t.slice_cols(x, n_wx, n_wx + n_wh), {hid, 4 * hid});
          auto b = t.slice_cols(x, n_wx + n_wh, n_wx + n_wh + n_b);
          nn::LSTMStateV<double> st{t.constant(DTensor({1, hid})),
                                    t.constant(DTensor({1, hid}))};
          DValue acc{};
          for (int s = 0; s < 3; ++s) {
            st = nn::lstm_step(t, wx, wh, b, t.constant(inputs[static_cast<size_t>(s)]), st);
            acc = s == 0 ? readout(t, st.h) : t.add(acc, readout(t, st.h));
          }
          return acc;
        },
        x0);
  }});

  checks.push_back(Check{"embed_loss", [](uint64_t seed) {
    Rng rng(seed);
    auto x0 = rand_vec(rng, 16, -1, 1);
    return fd_max_rel_error(
        [](DTape& t, DValue x) {
          return embed_loss(t, t.slice_cols(x, 0, 8), t.slice_cols(x, 8, 16));
        },
        x0);
  }});
  checks.push_back(Check{"kl_policy_loss", [](uint64_t seed) {
    Rng rng(seed);
    auto x0 = rand_vec(rng, 10, -2, 2);
    return fd_max_rel_error(
        [](DTape& t, DValue x) {
          return kl_policy_loss(t, t.slice_cols(x, 0, 5), t.slice_cols(x, 5, 10));
        },
        x0);
  }});
  checks.push_back(Check{"heading_loss", [](uint64_t seed) {
    Rng rng(seed);
    auto x0 = rand_vec(rng, 2, -1, 1);
    double ang = rng.uniform(0, 2 * M_PI);
    DTensor target = DTensor::row({std::sin(ang), std::cos(ang)});
    return fd_max_rel_error(
        [&](DTape& t, DValue x) { return heading_loss(t, x, t.constant(target)); }, x0);
  }});

  checks.push_back(Check{"rl_loss", check_rl_loss});

  checks.push_back(Check{"total_loss", [](uint64_t seed) {
    Rng rng(seed);
    LossWeights w;
    w.lambda_embed = 0.7;
    w.gamma_distill = 1.3;
    w.heading_coef = 0.4;
    DTensor target = DTensor::row({std::sin(0.9), std::cos(0.9)});
    auto x0 = rand_vec(rng, 8 + 8 + 8 + 5 + 5 + 2, -1, 1);
    return fd_max_rel_error(
        [&](DTape& t, DValue x) {
          LossParts<double> parts;
          parts.rl = t.mean(t.mul(t.slice_cols(x, 0, 8), t.slice_cols(x, 0, 8)));
          parts.embed = embed_loss(t, t.slice_cols(x, 8, 16), t.slice_cols(x, 16, 24));
          parts.distill = kl_policy_loss(t, t.slice_cols(x, 24, 29), t.slice_cols(x, 29, 34));
          parts.heading = heading_loss(t, t.slice_cols(x, 34, 36), t.constant(target));
          return total_loss(t, parts, w, ViewMode::BOTH);
        },
        x0);
  }});

  return run_checks(checks, instances, out);
}

}  // namespace crossview
