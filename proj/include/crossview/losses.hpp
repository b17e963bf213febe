#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "crossview/agent.hpp"
#include "crossview/nn/tape.hpp"

namespace crossview {

struct LossWeights {
  double lambda_embed = 1.0;    // embedding-loss coefficient (lambda)
  double gamma_distill = 1.0;   // distillation coefficient (distinct from the discount)
  double discount = 0.99;       // return discount
  double value_coef = 0.5;
  double entropy_coef = 0.001;
  double heading_coef = 0.0;
  double is_clip = 1.0;         // importance-ratio cap
  bool squared_embed = false;
  bool stop_ground_grad = false;  // treat the ground policy as the teacher in the KL

  void validate() const {
    CV_REQUIRE(lambda_embed >= 0 && gamma_distill >= 0 && value_coef >= 0 &&
                   entropy_coef >= 0 && heading_coef >= 0,
               "loss weights must be non-negative");
    CV_REQUIRE(discount > 0 && discount <= 1, "discount must be in (0, 1]");
    CV_REQUIRE(is_clip >= 1, "is_clip must be at least 1");
  }
};

// One fixed-length rollout segment recorded by an actor.
struct TrajStep {
  Observation obs;
  int action = 0;
  double reward = 0;
  std::array<float, kNumActions> behavior_logits{};  // logits of the view that acted
  View acted_view = View::ground;
  double behavior_value = 0;
  bool episode_boundary_after = false;  // the episode ended on this step
};

struct Trajectory {
  std::string region;
  ViewMode mode = ViewMode::BOTH;
  AgentState start_state;       // recurrent state at segment start
  int start_prev_action = -1;   // for agents fed the previous action/reward
  double start_prev_reward = 0;
  std::vector<TrajStep> steps;
  Observation final_obs;        // state after the last step, for bootstrapping
  double behavior_bootstrap = 0;  // value of final_obs under the behavior snapshot

  int length() const { return static_cast<int>(steps.size()); }
};

// Backward recursion R_t = r_t + discount * R_{t+1}, seeded by `bootstrap`
// and restarted across episode boundaries.
inline std::vector<double> discounted_returns(std::span<const double> rewards, double discount,
                                              double bootstrap,
                                              std::span<const uint8_t> boundary_after) {
  CV_REQUIRE(rewards.size() == boundary_after.size(),
             "discounted_returns: length mismatch");
  std::vector<double> out(rewards.size());
  double carry = bootstrap;
  for (size_t i = rewards.size(); i-- > 0;) {
    if (boundary_after[i]) carry = 0;
    carry = rewards[i] + discount * carry;
    out[i] = carry;
  }
  return out;
}

template <class T>
std::vector<double> trajectory_returns(const Trajectory& traj, double discount,
                                       double bootstrap) {
  std::vector<double> rewards(traj.steps.size());
  std::vector<uint8_t> bounds(traj.steps.size());
  for (size_t i = 0; i < traj.steps.size(); ++i) {
    rewards[i] = traj.steps[i].reward;
    bounds[i] = traj.steps[i].episode_boundary_after ? 1 : 0;
  }
  return discounted_returns(rewards, discount, bootstrap, bounds);
}

// ||e_g - e_a||_2, unsquared as written; squared variant behind the flag.
template <class T>
typename nn::Tape<T>::Value embed_loss(nn::Tape<T>& tape, typename nn::Tape<T>::Value e_g,
                                       typename nn::Tape<T>::Value e_a,
                                       bool squared = false) {
  auto d = tape.sub(e_g, e_a);
  if (squared) return tape.sum(tape.mul(d, d));
  return tape.l2_norm(d);
}

// KL(p_g || p_a) over action distributions, via log-softmax for stability.
// Gradient flows into both logit sets unless stop_ground is set.
template <class T>
typename nn::Tape<T>::Value kl_policy_loss(nn::Tape<T>& tape,
                                           typename nn::Tape<T>::Value logits_g,
                                           typename nn::Tape<T>::Value logits_a,
                                           bool stop_ground = false) {
  auto g = stop_ground ? tape.detach(logits_g) : logits_g;
  auto p_g = tape.softmax(g);
  auto lp_g = tape.log_softmax(g);
  auto lp_a = tape.log_softmax(logits_a);
  return tape.sum(tape.mul(p_g, tape.sub(lp_g, lp_a)));
}

// Squared L2 between predicted and true (sin, cos) heading.
template <class T>
typename nn::Tape<T>::Value heading_loss(nn::Tape<T>& tape, typename nn::Tape<T>::Value pred,
                                         typename nn::Tape<T>::Value target) {
  auto d = tape.sub(pred, target);
  return tape.sum(tape.mul(d, d));
}

template <class T>
struct RlLossResult {
  typename nn::Tape<T>::Value loss{};
  double mean_ratio = 0;
  double mean_entropy = 0;
};

// Importance-weighted advantage actor-critic over one segment. Advantages and
// ratios are constants; gradient flows through log pi and V only.
//
// acted_logits[t] / values[t] must come from replaying the trajectory through
// the current parameters with the recorded view choices.
template <class T>
RlLossResult<T> rl_loss(nn::Tape<T>& tape,
                        std::span<const typename nn::Tape<T>::Value> acted_logits,
                        std::span<const typename nn::Tape<T>::Value> values,
                        const Trajectory& traj, std::span<const double> returns,
                        const LossWeights& w) {
  const int T_seg = traj.length();
  CV_REQUIRE(T_seg > 0, "rl_loss: empty trajectory");
  CV_REQUIRE(static_cast<int>(acted_logits.size()) == T_seg &&
                 static_cast<int>(values.size()) == T_seg &&
                 static_cast<int>(returns.size()) == T_seg,
             "rl_loss: sequence length mismatch");

  RlLossResult<T> out;
  typename nn::Tape<T>::Value total{};
  for (int t = 0; t < T_seg; ++t) {
    const TrajStep& step = traj.steps[static_cast<size_t>(t)];
    auto lp = tape.log_softmax(acted_logits[static_cast<size_t>(t)]);
    auto logp_a = tape.pick(lp, 0, step.action);

    // behavior probability of the taken action
    double bmax = step.behavior_logits[0];
    for (float l : step.behavior_logits) bmax = std::max(bmax, static_cast<double>(l));
    double bz = 0;
    for (float l : step.behavior_logits) bz += std::exp(static_cast<double>(l) - bmax);
    double p_beh =
        std::exp(static_cast<double>(step.behavior_logits[static_cast<size_t>(step.action)]) -
                 bmax) / bz;
    CV_REQUIRE(p_beh > 0, "rl_loss: taken action has zero behavior probability");

    double p_cur = std::exp(static_cast<double>(tape.val(logp_a)[0]));
    double rho = std::min(w.is_clip, p_cur / p_beh);
    double advantage = returns[static_cast<size_t>(t)] -
                       static_cast<double>(tape.val(values[static_cast<size_t>(t)])[0]);

    // -rho * A * log pi
    auto policy_term = tape.affine(logp_a, static_cast<T>(-rho * advantage), T(0));

    // value_coef * (R - V)^2
    auto diff = tape.affine(values[static_cast<size_t>(t)], T(1),
                            static_cast<T>(-returns[static_cast<size_t>(t)]));
    auto value_term = tape.affine(tape.sum(tape.mul(diff, diff)),
                                  static_cast<T>(w.value_coef), T(0));

    // -entropy_coef * H(pi)
    auto p = tape.softmax(acted_logits[static_cast<size_t>(t)]);
    auto neg_entropy = tape.sum(tape.mul(p, lp));
    auto entropy_term = tape.affine(neg_entropy, static_cast<T>(w.entropy_coef), T(0));

    auto step_loss = tape.add(tape.add(policy_term, value_term), entropy_term);
    total = t == 0 ? step_loss : tape.add(total, step_loss);

    out.mean_ratio += rho;
    out.mean_entropy += -static_cast<double>(tape.val(neg_entropy)[0]);
  }
  out.mean_ratio /= T_seg;
  out.mean_entropy /= T_seg;
  out.loss = tape.affine(total, static_cast<T>(1.0 / T_seg), T(0));
  return out;
}

template <class T>
struct LossParts {
  typename nn::Tape<T>::Value rl{};
  typename nn::Tape<T>::Value embed{};    // invalid unless BOTH
  typename nn::Tape<T>::Value distill{};  // invalid unless BOTH
  typename nn::Tape<T>::Value heading{};  // invalid if heading_coef == 0
};

// l_total = l_RL + lambda*l_embed + gamma_distill*l_policy + heading_coef*l_heading.
// Under single-view modes the embed and distill terms are defined as zero.
template <class T>
typename nn::Tape<T>::Value total_loss(nn::Tape<T>& tape, const LossParts<T>& parts,
                                       const LossWeights& w, ViewMode mode) {
  CV_REQUIRE(parts.rl.valid(), "total_loss: missing RL term");
  auto total = parts.rl;
  if (mode == ViewMode::BOTH) {
    if (w.lambda_embed > 0) {
      CV_REQUIRE(parts.embed.valid(), "total_loss: missing embed term");
      total = tape.add(total, tape.affine(parts.embed, static_cast<T>(w.lambda_embed), T(0)));
    }
    if (w.gamma_distill > 0) {
      CV_REQUIRE(parts.distill.valid(), "total_loss: missing distill term");
      total =
          tape.add(total, tape.affine(parts.distill, static_cast<T>(w.gamma_distill), T(0)));
    }
  }
  if (w.heading_coef > 0) {
    CV_REQUIRE(parts.heading.valid(), "total_loss: missing heading term");
    total = tape.add(total, tape.affine(parts.heading, static_cast<T>(w.heading_coef), T(0)));
  }
  return total;
}

}  // namespace crossview
