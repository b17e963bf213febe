#pragma once

#include <cmath>
#include <string>

#include "crossview/nn/param_store.hpp"
#include "crossview/nn/tape.hpp"
#include "crossview/rng.hpp"

namespace crossview::nn {

template <class T>
Tensor<T> glorot_uniform(Rng& rng, int fan_in, int fan_out, std::vector<int> shape) {
  Tensor<T> t(std::move(shape));
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (int i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

// Dense layer tensors: "<prefix>.w" [in x out], "<prefix>.b" [1 x out].
template <class T>
void add_dense(ParamStore<T>& store, Rng& rng, const std::string& partition,
               const std::string& prefix, int in, int out) {
  store.add(partition, prefix + ".w", glorot_uniform<T>(rng, in, out, {in, out}));
  store.add(partition, prefix + ".b", Tensor<T>({1, out}));
}

template <class T>
typename Tape<T>::Value dense(Tape<T>& tape, ParamBinder<T>& bind,
                              const ParamStore<T>& store, const std::string& partition,
                              const std::string& prefix, typename Tape<T>::Value x) {
  auto w = bind(store, partition, prefix + ".w");
  auto b = bind(store, partition, prefix + ".b");
  return tape.add(tape.matmul(x, w), b);
}

// LSTM tensors: "<prefix>.wx" [in x 4h], "<prefix>.wh" [h x 4h], "<prefix>.b"
// [1 x 4h]. Gate order i, f, g, o; the forget slice of the bias starts at +1.
template <class T>
void add_lstm(ParamStore<T>& store, Rng& rng, const std::string& partition,
              const std::string& prefix, int in, int hidden) {
  store.add(partition, prefix + ".wx", glorot_uniform<T>(rng, in, 4 * hidden, {in, 4 * hidden}));
  store.add(partition, prefix + ".wh",
            glorot_uniform<T>(rng, hidden, 4 * hidden, {hidden, 4 * hidden}));
  Tensor<T> b({1, 4 * hidden});
  for (int j = hidden; j < 2 * hidden; ++j) b[j] = T(1);
  store.add(partition, prefix + ".b", std::move(b));
}

template <class T>
struct LSTMStateV {
  typename Tape<T>::Value h;
  typename Tape<T>::Value c;
};

template <class T>
LSTMStateV<T> lstm_step(Tape<T>& tape, typename Tape<T>::Value wx,
                        typename Tape<T>::Value wh, typename Tape<T>::Value b,
                        typename Tape<T>::Value x, LSTMStateV<T> state) {
  int hidden = tape.val(state.h).cols();
  CV_REQUIRE(tape.val(b).cols() == 4 * hidden, "lstm_step: state/bias size mismatch");
  auto gates = tape.add(tape.add(tape.matmul(x, wx), tape.matmul(state.h, wh)), b);
  auto i = tape.sigmoid_op(tape.slice_cols(gates, 0, hidden));
  auto f = tape.sigmoid_op(tape.slice_cols(gates, hidden, 2 * hidden));
  auto g = tape.tanh_op(tape.slice_cols(gates, 2 * hidden, 3 * hidden));
  auto o = tape.sigmoid_op(tape.slice_cols(gates, 3 * hidden, 4 * hidden));
  auto c = tape.add(tape.mul(f, state.c), tape.mul(i, g));
  auto h = tape.mul(o, tape.tanh_op(c));
  return LSTMStateV<T>{h, c};
}

}  // namespace crossview::nn
