#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossview/nn/tape.hpp"
#include "crossview/nn/tensor.hpp"
#include "crossview/rng.hpp"

namespace crossview::nn {

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

// Parameters grouped into named partitions. Partitions are the unit of
// freezing: the optimizer only touches partitions listed in `trainable`.
template <class T>
struct ParamStore {
  std::map<std::string, std::vector<NamedTensor<T>>> partitions;
  std::set<std::string> trainable;

  bool has_partition(const std::string& p) const { return partitions.count(p) > 0; }

  std::vector<NamedTensor<T>>& partition(const std::string& p) {
    auto it = partitions.find(p);
    CV_REQUIRE(it != partitions.end(), "unknown partition '" + p + "'");
    return it->second;
  }
  const std::vector<NamedTensor<T>>& partition(const std::string& p) const {
    auto it = partitions.find(p);
    CV_REQUIRE(it != partitions.end(), "unknown partition '" + p + "'");
    return it->second;
  }

  Tensor<T>& tensor(const std::string& p, const std::string& name) {
    for (auto& nt : partition(p))
      if (nt.name == name) return nt.value;
    throw contract_error("no tensor '" + name + "' in partition '" + p + "'");
  }
  const Tensor<T>& tensor(const std::string& p, const std::string& name) const {
    for (const auto& nt : partition(p))
      if (nt.name == name) return nt.value;
    throw contract_error("no tensor '" + name + "' in partition '" + p + "'");
  }

  void add(const std::string& p, const std::string& name, Tensor<T> t) {
    partitions[p].push_back(NamedTensor<T>{name, std::move(t)});
  }

  void set_all_trainable() {
    trainable.clear();
    for (const auto& [name, _] : partitions) trainable.insert(name);
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [_, ts] : partitions)
      for (const auto& nt : ts) n += nt.value.numel();
    return n;
  }
};

// Gradient (or optimizer-state) buffers aligned index-for-index with a store.
template <class T>
struct GradBuffer {
  std::map<std::string, std::vector<Tensor<T>>> parts;

  static GradBuffer zeros_like(const ParamStore<T>& store) {
    GradBuffer g;
    for (const auto& [name, ts] : store.partitions) {
      auto& v = g.parts[name];
      v.reserve(ts.size());
      for (const auto& nt : ts) v.emplace_back(nt.value.shape());
    }
    return g;
  }

  void zero() {
    for (auto& [_, ts] : parts)
      for (auto& t : ts) t.zero();
  }

  void add_scaled(const GradBuffer& o, T scale) {
    for (auto& [name, ts] : parts) {
      auto it = o.parts.find(name);
      if (it == o.parts.end()) continue;
      for (size_t i = 0; i < ts.size(); ++i) {
        const Tensor<T>& src = it->second[i];
        for (int k = 0; k < src.numel(); ++k) ts[i][k] += scale * src[k];
      }
    }
  }

  double squared_norm(const std::set<std::string>& only) const {
    double acc = 0;
    for (const auto& [name, ts] : parts) {
      if (!only.empty() && !only.count(name)) continue;
      for (const auto& t : ts)
        for (int k = 0; k < t.numel(); ++k)
          acc += static_cast<double>(t[k]) * static_cast<double>(t[k]);
    }
    return acc;
  }

  void scale_partitions(const std::set<std::string>& only, T s) {
    for (auto& [name, ts] : parts) {
      if (!only.empty() && !only.count(name)) continue;
      for (auto& t : ts)
        for (int k = 0; k < t.numel(); ++k) t[k] *= s;
    }
  }
};

// Binds store tensors onto a tape, one leaf per distinct tensor, so that
// weights shared between pathways accumulate their gradients in one place.
template <class T>
class ParamBinder {
 public:
  explicit ParamBinder(Tape<T>& tape) : tape_(tape) {}

  // With a filter set, tensors of other partitions bind as constants: their
  // gradients are neither computed nor exported.
  void set_trainable_filter(std::set<std::string> filter) { filter_ = std::move(filter); }

  typename Tape<T>::Value operator()(const ParamStore<T>& store, const std::string& p,
                                     const std::string& name) {
    const auto& ts = store.partition(p);
    int idx = -1;
    for (size_t i = 0; i < ts.size(); ++i)
      if (ts[i].name == name) {
        idx = static_cast<int>(i);
        break;
      }
    CV_REQUIRE(idx >= 0, "no tensor '" + name + "' in partition '" + p + "'");
    const Tensor<T>* t = &ts[static_cast<size_t>(idx)].value;
    auto it = cache_.find(t);
    if (it != cache_.end()) return it->second;
    typename Tape<T>::Value v;
    if (!filter_.empty() && !filter_.count(p)) {
      v = tape_.param_frozen(t);
    } else {
      v = tape_.param(t);
      bound_.push_back(Bound{p, idx, v});
    }
    cache_.emplace(t, v);
    return v;
  }

  // Adds this tape's parameter gradients into `out` (scaled).
  void export_grads(GradBuffer<T>& out, T scale) const {
    for (const auto& b : bound_) {
      const Tensor<T>& g = tape_.grad(b.v);
      if (g.empty()) continue;
      auto pit = out.parts.find(b.partition);
      if (pit == out.parts.end()) continue;
      Tensor<T>& dst = pit->second[static_cast<size_t>(b.index)];
      for (int i = 0; i < g.numel(); ++i) dst[i] += scale * g[i];
    }
  }

 private:
  struct Bound {
    std::string partition;
    int index;
    typename Tape<T>::Value v;
  };
  Tape<T>& tape_;
  std::set<std::string> filter_;
  std::unordered_map<const Tensor<T>*, typename Tape<T>::Value> cache_;
  std::vector<Bound> bound_;
};

// FNV-1a over the raw tensor bytes; used by freeze-invariant checks.
template <class T>
uint64_t tensor_hash(const Tensor<T>& t) {
  uint64_t h = 1469598103934665603ULL;
  const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
  size_t n = static_cast<size_t>(t.numel()) * sizeof(T);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <class T>
std::map<std::string, std::vector<uint64_t>> store_hashes(const ParamStore<T>& store) {
  std::map<std::string, std::vector<uint64_t>> out;
  for (const auto& [name, ts] : store.partitions) {
    auto& v = out[name];
    for (const auto& nt : ts) v.push_back(tensor_hash(nt.value));
  }
  return out;
}

}  // namespace crossview::nn
