#include <doctest.h>

#include "crossview/losses.hpp"
#include "crossview/nn/layers.hpp"
#include "fd_check.hpp"

using namespace crossview;
using cvtest::DTape;
using cvtest::DTensor;
using cvtest::DValue;
using cvtest::fd_max_rel_error;

namespace {
constexpr double kTol = 1e-4;
constexpr int kInstances = 20;

// A scalar readout that mixes all coordinates with fixed weights, so every
// output element influences the loss.
DValue readout(DTape& t, DValue y) {
  auto flat = t.flatten(y);
  int n = t.val(flat).cols();
  DTensor w({1, n});
  for (int i = 0; i < n; ++i) w[i] = 0.3 + 0.1 * (i % 7);
  return t.sum(t.mul(flat, t.constant(w)));
}
}  // namespace

TEST_CASE("gradcheck: elementwise and reduction ops") {
  struct Case {
    const char* name;
    std::function<DValue(DTape&, DValue)> f;
    bool away_from_zero;
  };
  std::vector<Case> cases = {
      {"tanh", [](DTape& t, DValue x) { return readout(t, t.tanh_op(x)); }, false},
      {"sigmoid", [](DTape& t, DValue x) { return readout(t, t.sigmoid_op(x)); }, false},
      {"relu", [](DTape& t, DValue x) { return readout(t, t.relu_op(x)); }, true},
      {"softmax", [](DTape& t, DValue x) { return readout(t, t.softmax(x)); }, false},
      {"log_softmax", [](DTape& t, DValue x) { return readout(t, t.log_softmax(x)); }, false},
      {"l2_norm", [](DTape& t, DValue x) { return t.l2_norm(x); }, true},
      {"sum", [](DTape& t, DValue x) { return t.sum(t.mul(x, x)); }, false},
      {"mean", [](DTape& t, DValue x) { return t.mean(t.mul(x, x)); }, false},
      {"affine", [](DTape& t, DValue x) { return readout(t, t.affine(x, 1.7, -0.3)); }, false},
      {"pick", [](DTape& t, DValue x) { return t.pick(t.tanh_op(x), 0, 2); }, false},
      {"reshape",
       [](DTape& t, DValue x) { return readout(t, t.tanh_op(t.reshape(x, {2, 4}))); }, false},
      {"slice",
       [](DTape& t, DValue x) { return readout(t, t.slice_cols(t.tanh_op(x), 2, 6)); }, false},
  };
  for (const auto& c : cases) {
    double worst = 0;
    for (int k = 0; k < kInstances; ++k) {
      Rng rng(derive_seed(101, static_cast<uint64_t>(k)));
      auto x0 = c.away_from_zero ? cvtest::random_vec_away_from_zero(rng, 8)
                                 : cvtest::random_vec(rng, 8);
      worst = std::max(worst, fd_max_rel_error(c.f, x0));
    }
    INFO("op: " << c.name);
    CHECK(worst <= kTol);
  }
}

TEST_CASE("gradcheck: binary ops") {
  struct Case {
    const char* name;
    std::function<DValue(DTape&, DValue, DValue)> f;
  };
  std::vector<Case> cases = {
      {"add", [](DTape& t, DValue a, DValue b) { return readout(t, t.add(a, b)); }},
      {"sub", [](DTape& t, DValue a, DValue b) { return readout(t, t.sub(a, b)); }},
      {"mul", [](DTape& t, DValue a, DValue b) { return readout(t, t.mul(a, b)); }},
      {"concat",
       [](DTape& t, DValue a, DValue b) { return readout(t, t.concat_cols({a, b})); }},
  };
  for (const auto& c : cases) {
    double worst = 0;
    for (int k = 0; k < kInstances; ++k) {
      Rng rng(derive_seed(202, static_cast<uint64_t>(k)));
      auto x0 = cvtest::random_vec(rng, 12);
      auto f = [&](DTape& t, DValue x) {
        auto a = t.slice_cols(x, 0, 6);
        auto b = t.slice_cols(x, 6, 12);
        return c.f(t, a, b);
      };
      worst = std::max(worst, fd_max_rel_error(f, x0));
    }
    INFO("op: " << c.name);
    CHECK(worst <= kTol);
  }
}

TEST_CASE("gradcheck: add with row broadcast") {
  double worst = 0;
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(derive_seed(203, static_cast<uint64_t>(k)));
    auto x0 = cvtest::random_vec(rng, 9);
    auto f = [](DTape& t, DValue x) {
      auto m = t.reshape(t.slice_cols(x, 0, 6), {2, 3});
      auto b = t.slice_cols(x, 6, 9);
      return readout(t, t.tanh_op(t.add(m, b)));
    };
    worst = std::max(worst, fd_max_rel_error(f, x0));
  }
  CHECK(worst <= kTol);
}

TEST_CASE("gradcheck: matmul") {
  double worst = 0;
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(derive_seed(303, static_cast<uint64_t>(k)));
    auto x0 = cvtest::random_vec(rng, 2 * 3 + 3 * 4);
    auto f = [](DTape& t, DValue x) {
      auto a = t.reshape(t.slice_cols(x, 0, 6), {2, 3});
      auto b = t.reshape(t.slice_cols(x, 6, 18), {3, 4});
      return readout(t, t.matmul(a, b));
    };
    worst = std::max(worst, fd_max_rel_error(f, x0));
  }
  CHECK(worst <= kTol);
}

TEST_CASE("gradcheck: conv2d") {
  double worst = 0;
  const int H = 5, C = 2, K = 3, Co = 2, stride = 1;
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(derive_seed(404, static_cast<uint64_t>(k)));
    int nx = H * H * C, nw = K * K * C * Co;
    auto x0 = cvtest::random_vec(rng, nx + nw + Co);
    auto f = [&](DTape& t, DValue x) {
      auto img = t.reshape(t.slice_cols(x, 0, nx), {H, H, C});
      auto w = t.reshape(t.slice_cols(x, nx, nx + nw), {K, K, C, Co});
      auto b = t.slice_cols(x, nx + nw, nx + nw + Co);
      return readout(t, t.tanh_op(t.flatten(t.conv2d(img, w, b, stride))));
    };
    worst = std::max(worst, fd_max_rel_error(f, x0));
  }
  CHECK(worst <= kTol);
}

TEST_CASE("gradcheck: LSTM 3-step unroll") {
  const int in = 3, hid = 4;
  const int n_wx = in * 4 * hid, n_wh = hid * 4 * hid, n_b = 4 * hid;
  double worst = 0;
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(derive_seed(505, static_cast<uint64_t>(k)));
    auto x0 = cvtest::random_vec(rng, n_wx + n_wh + n_b, -0.4, 0.4);
    std::vector<DTensor> inputs;
    for (int s = 0; s < 3; ++s)
      inputs.push_back(DTensor::row(cvtest::random_vec(rng, in)));
    auto f = [&](DTape& t, DValue x) {
      auto wx = t.reshape(t.slice_cols(x, 0, n_wx), {in, 4 * hid});
      auto wh = t.reshape(t.slice_cols(x, n_wx, n_wx + n_wh), {hid, 4 * hid});
      auto b = t.slice_cols(x, n_wx + n_wh, n_wx + n_wh + n_b);
      nn::LSTMStateV<double> st{t.constant(DTensor({1, hid})), t.constant(DTensor({1, hid}))};
      DValue acc{};
      for (int s = 0; s < 3; ++s) {
        st = nn::lstm_step(t, wx, wh, b, t.constant(inputs[static_cast<size_t>(s)]), st);
        acc = s == 0 ? readout(t, st.h) : t.add(acc, readout(t, st.h));
      }
      return acc;
    };
    worst = std::max(worst, fd_max_rel_error(f, x0));
  }
  CHECK(worst <= kTol);
}

TEST_CASE("gradcheck: embed, kl, heading losses") {
  double worst_embed = 0, worst_embed_sq = 0, worst_kl = 0, worst_heading = 0;
  for (int k = 0; k < kInstances; ++k) {
    Rng rng(derive_seed(606, static_cast<uint64_t>(k)));
    auto x0 = cvtest::random_vec(rng, 16);
    worst_embed = std::max(worst_embed, fd_max_rel_error(
        [](DTape& t, DValue x) {
          return embed_loss(t, t.slice_cols(x, 0, 8), t.slice_cols(x, 8, 16));
        }, x0));
    worst_embed_sq = std::max(worst_embed_sq, fd_max_rel_error(
        [](DTape& t, DValue x) {
          return embed_loss(t, t.slice_cols(x, 0, 8), t.slice_cols(x, 8, 16), true);
        }, x0));

    auto l0 = cvtest::random_vec(rng, 10, -2, 2);
    worst_kl = std::max(worst_kl, fd_max_rel_error(
        [](DTape& t, DValue x) {
          return kl_policy_loss(t, t.slice_cols(x, 0, 5), t.slice_cols(x, 5, 10));
        }, l0));

    auto h0 = cvtest::random_vec(rng, 2);
    double ang = rng.uniform(0, 2 * M_PI);
    DTensor target = DTensor::row({std::sin(ang), std::cos(ang)});
    worst_heading = std::max(worst_heading, fd_max_rel_error(
        [&](DTape& t, DValue x) { return heading_loss(t, x, t.constant(target)); }, h0));
  }
  CHECK(worst_embed <= kTol);
  CHECK(worst_embed_sq <= kTol);
  CHECK(worst_kl <= kTol);
  CHECK(worst_heading <= kTol);
}

TEST_CASE("gradcheck: kl with stop_ground_grad only flows into the aerial side") {
  Rng rng(707);
  auto l0 = cvtest::random_vec(rng, 10, -2, 2);
  DTape t;
  auto x = t.leaf(DTensor::row(l0));
  auto g = t.slice_cols(x, 0, 5);
  auto a = t.slice_cols(x, 5, 10);
  t.backward(kl_policy_loss(t, g, a, true));
  auto grad = t.grad(x);
  REQUIRE(!grad.empty());
  for (int i = 0; i < 5; ++i) CHECK(grad[i] == 0.0);
  double a_side = 0;
  for (int i = 5; i < 10; ++i) a_side += std::abs(grad[i]);
  CHECK(a_side > 0);

  // FD on the flowing side only (ground logits frozen inside the function).
  std::vector<double> a0(l0.begin() + 5, l0.end());
  DTensor fixed_g = DTensor::row({l0[0], l0[1], l0[2], l0[3], l0[4]});
  double err = fd_max_rel_error(
      [&](DTape& t2, DValue xa) {
        return kl_policy_loss(t2, t2.constant(fixed_g), xa, true);
      },
      a0);
  CHECK(err <= kTol);
}

namespace {

// Fixture for the rl_loss check: a tiny linear policy/value net over fixed
// per-step features, with a synthetic trajectory.
struct RlFixture {
  int T = 4, feat = 3;
  std::vector<DTensor> states;
  Trajectory traj;
  std::vector<double> returns;
  LossWeights w;

  explicit RlFixture(uint64_t seed) {
    Rng rng(seed);
    w.value_coef = 0.5;
    w.entropy_coef = 0.01;
    w.is_clip = 1.5;
    for (int t = 0; t < T; ++t) {
      states.push_back(DTensor::row(cvtest::random_vec(rng, feat)));
      TrajStep s;
      s.action = static_cast<int>(rng.uniform_int(kNumActions));
      s.reward = rng.uniform(0, 1);
      for (int i = 0; i < kNumActions; ++i)
        s.behavior_logits[static_cast<size_t>(i)] = static_cast<float>(rng.uniform(-1, 1));
      traj.steps.push_back(s);
    }
    traj.region = "r";
    returns = trajectory_returns<double>(traj, 0.9, 0.25);
  }

  // params: W_pi [feat x 5] then W_v [feat x 1]
  int param_count() const { return feat * kNumActions + feat; }

  void heads(DTape& t, DValue x, std::vector<DValue>& logits, std::vector<DValue>& values) const {
    auto wp = t.reshape(t.slice_cols(x, 0, feat * kNumActions), {feat, kNumActions});
    auto wv = t.reshape(t.slice_cols(x, feat * kNumActions, param_count()), {feat, 1});
    for (int s = 0; s < T; ++s) {
      auto st = t.constant(states[static_cast<size_t>(s)]);
      logits.push_back(t.matmul(st, wp));
      values.push_back(t.matmul(st, wv));
    }
  }
};

}  // namespace

TEST_CASE("gradcheck: rl_loss (frozen-coefficient oracle)") {
  // rl_loss deliberately stops gradients through rho and the advantage. The
  // oracle therefore evaluates the same expression with rho and A frozen at
  // their base-point values, and the tape gradient must match its FD.
  double worst = 0;
  for (int k = 0; k < kInstances; ++k) {
    RlFixture fx(derive_seed(808, static_cast<uint64_t>(k)));
    Rng rng(derive_seed(809, static_cast<uint64_t>(k)));
    auto x0 = cvtest::random_vec(rng, fx.param_count());

    // analytic gradient from rl_loss itself
    DTape tape;
    auto x = tape.leaf(DTensor::row(x0));
    std::vector<DValue> logits, values;
    fx.heads(tape, x, logits, values);
    auto res = rl_loss<double>(tape, logits, values, fx.traj, fx.returns, fx.w);
    tape.backward(res.loss);
    DTensor analytic = tape.grad(x);

    // freeze rho and advantage at the base point
    std::vector<double> rho(static_cast<size_t>(fx.T)), adv(static_cast<size_t>(fx.T));
    for (int s = 0; s < fx.T; ++s) {
      const auto& step = fx.traj.steps[static_cast<size_t>(s)];
      const auto& lg = tape.val(logits[static_cast<size_t>(s)]);
      double mx = lg[0];
      for (int i = 1; i < kNumActions; ++i) mx = std::max(mx, lg[i]);
      double z = 0;
      for (int i = 0; i < kNumActions; ++i) z += std::exp(lg[i] - mx);
      double p_cur = std::exp(lg[step.action] - mx) / z;
      double bmx = step.behavior_logits[0];
      for (float l : step.behavior_logits) bmx = std::max(bmx, static_cast<double>(l));
      double bz = 0;
      for (float l : step.behavior_logits) bz += std::exp(static_cast<double>(l) - bmx);
      double p_beh =
          std::exp(static_cast<double>(step.behavior_logits[static_cast<size_t>(step.action)]) - bmx) / bz;
      rho[static_cast<size_t>(s)] = std::min(fx.w.is_clip, p_cur / p_beh);
      adv[static_cast<size_t>(s)] =
          fx.returns[static_cast<size_t>(s)] - tape.val(values[static_cast<size_t>(s)])[0];
    }

    auto frozen_eval = [&](const std::vector<double>& xv) {
      DTape t2(false);
      auto x2 = t2.leaf(DTensor::row(xv));
      std::vector<DValue> lg, vv;
      fx.heads(t2, x2, lg, vv);
      double total = 0;
      for (int s = 0; s < fx.T; ++s) {
        const auto& step = fx.traj.steps[static_cast<size_t>(s)];
        auto lp = t2.log_softmax(lg[static_cast<size_t>(s)]);
        double logp = t2.val(lp)[step.action];
        double v = t2.val(vv[static_cast<size_t>(s)])[0];
        double diff = v - fx.returns[static_cast<size_t>(s)];
        double ent = 0;
        for (int i = 0; i < kNumActions; ++i)
          ent -= std::exp(t2.val(lp)[i]) * t2.val(lp)[i];
        total += -rho[static_cast<size_t>(s)] * adv[static_cast<size_t>(s)] * logp +
                 fx.w.value_coef * diff * diff - fx.w.entropy_coef * ent;
      }
      return total / fx.T;
    };

    const double h = 1e-5;
    for (int i = 0; i < fx.param_count(); ++i) {
      std::vector<double> xp = x0, xm = x0;
      xp[static_cast<size_t>(i)] += h;
      xm[static_cast<size_t>(i)] -= h;
      double fd = (frozen_eval(xp) - frozen_eval(xm)) / (2 * h);
      double g = analytic.empty() ? 0.0 : analytic[i];
      worst = std::max(worst, std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)}));
    }
  }
  CHECK(worst <= kTol);
}

TEST_CASE("gradcheck: total_loss composition") {
  double worst = 0;
  for (int k = 0; k < kInstances; ++k) {
    RlFixture fx(derive_seed(909, static_cast<uint64_t>(k)));
    fx.w.lambda_embed = 0.7;
    fx.w.gamma_distill = 1.3;
    fx.w.heading_coef = 0.4;
    Rng rng(derive_seed(910, static_cast<uint64_t>(k)));
    int extra = 8 + 8 + 10 + 2;  // e_g, e_a, logit pair, heading pred
    auto x0 = cvtest::random_vec(rng, fx.param_count() + extra);
    DTensor target = DTensor::row({std::sin(1.1), std::cos(1.1)});

    // Freeze the RL stop-gradient coefficients exactly as in the rl_loss test.
    DTape base;
    auto xb = base.leaf(DTensor::row(x0));
    std::vector<DValue> lgb, vvb;
    {
      auto xr = base.slice_cols(xb, 0, fx.param_count());
      auto wp = base.reshape(base.slice_cols(xr, 0, fx.feat * kNumActions), {fx.feat, kNumActions});
      auto wv = base.reshape(
          base.slice_cols(xr, fx.feat * kNumActions, fx.param_count()), {fx.feat, 1});
      for (int s = 0; s < fx.T; ++s) {
        auto st = base.constant(fx.states[static_cast<size_t>(s)]);
        lgb.push_back(base.matmul(st, wp));
        vvb.push_back(base.matmul(st, wv));
      }
    }
    std::vector<double> rho(static_cast<size_t>(fx.T)), adv(static_cast<size_t>(fx.T));
    for (int s = 0; s < fx.T; ++s) {
      const auto& step = fx.traj.steps[static_cast<size_t>(s)];
      const auto& lg = base.val(lgb[static_cast<size_t>(s)]);
      double mx = lg[0];
      for (int i = 1; i < kNumActions; ++i) mx = std::max(mx, lg[i]);
      double z = 0;
      for (int i = 0; i < kNumActions; ++i) z += std::exp(lg[i] - mx);
      double p_cur = std::exp(lg[step.action] - mx) / z;
      double bmx = step.behavior_logits[0];
      for (float l : step.behavior_logits) bmx = std::max(bmx, static_cast<double>(l));
      double bz = 0;
      for (float l : step.behavior_logits) bz += std::exp(static_cast<double>(l) - bmx);
      double p_beh =
          std::exp(static_cast<double>(step.behavior_logits[static_cast<size_t>(step.action)]) - bmx) / bz;
      rho[static_cast<size_t>(s)] = std::min(fx.w.is_clip, p_cur / p_beh);
      adv[static_cast<size_t>(s)] =
          fx.returns[static_cast<size_t>(s)] - base.val(vvb[static_cast<size_t>(s)])[0];
    }

    // build with frozen rho/adv injected through a hand-built rl term
    auto build = [&](DTape& t, DValue x) {
      int off = fx.param_count();
      auto xr = t.slice_cols(x, 0, off);
      auto wp = t.reshape(t.slice_cols(xr, 0, fx.feat * kNumActions), {fx.feat, kNumActions});
      auto wv = t.reshape(t.slice_cols(xr, fx.feat * kNumActions, off), {fx.feat, 1});
      DValue rl{};
      for (int s = 0; s < fx.T; ++s) {
        const auto& step = fx.traj.steps[static_cast<size_t>(s)];
        auto st = t.constant(fx.states[static_cast<size_t>(s)]);
        auto lg = t.matmul(st, wp);
        auto vv = t.matmul(st, wv);
        auto lp = t.log_softmax(lg);
        auto logp = t.pick(lp, 0, step.action);
        auto pol = t.affine(logp, -rho[static_cast<size_t>(s)] * adv[static_cast<size_t>(s)], 0.0);
        auto d = t.affine(vv, 1.0, -fx.returns[static_cast<size_t>(s)]);
        auto val = t.affine(t.sum(t.mul(d, d)), fx.w.value_coef, 0.0);
        auto ent = t.affine(t.sum(t.mul(t.softmax(lg), lp)), fx.w.entropy_coef, 0.0);
        auto term = t.add(t.add(pol, val), ent);
        rl = s == 0 ? term : t.add(rl, term);
      }
      rl = t.affine(rl, 1.0 / fx.T, 0.0);
      auto e_g = t.slice_cols(x, off, off + 8);
      auto e_a = t.slice_cols(x, off + 8, off + 16);
      auto lg_g = t.slice_cols(x, off + 16, off + 21);
      auto lg_a = t.slice_cols(x, off + 21, off + 26);
      auto hp = t.slice_cols(x, off + 26, off + 28);
      LossParts<double> parts;
      parts.rl = rl;
      parts.embed = embed_loss(t, e_g, e_a);
      parts.distill = kl_policy_loss(t, lg_g, lg_a);
      parts.heading = heading_loss(t, hp, t.constant(target));
      return total_loss(t, parts, fx.w, ViewMode::BOTH);
    };
    worst = std::max(worst, fd_max_rel_error(build, x0));
  }
  CHECK(worst <= kTol);
}
