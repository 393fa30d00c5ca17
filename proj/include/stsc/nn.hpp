#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "stsc/autograd.hpp"
#include "stsc/tensor.hpp"

namespace stsc {

/// The single seedable generator used for every stochastic draw.
using Rng = std::mt19937_64;

class LoadError : public Error {
 public:
  using Error::Error;
};

/// Named parameter collection. Iteration follows insertion order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  void add(std::string name, Tensor value, bool frozen = false);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  /// Stable address of the stored tensor; shared layers resolve to the same one.
  const Tensor* find(const std::string& name) const;

  void freeze(const std::string& name);
  bool is_frozen(const std::string& name) const { return frozen_.count(name) != 0; }
  const std::set<std::string>& frozen() const { return frozen_; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t total_elements() const;
  std::int64_t trainable_elements() const;

  void set_precision(Precision p);
  /// Copies every entry of `other` with the given prefix into this store.
  void merge(const ParamStore& other, const std::string& prefix = "", bool frozen = false);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::set<std::string> frozen_;
};

struct ConvSpec {
  std::string name;  // prefix; tensors are "<name>.weight" and "<name>.bias"
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  Activation activation = Activation::none;

  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }
  std::int64_t parameter_count() const {
    return out_channels * in_channels * kernel * kernel + out_channels;
  }
};

/// Stride-1 layers use same padding (k-1)/2.
ConvSpec make_conv(std::string name, std::int64_t ci, std::int64_t co, int k, int stride,
                   Activation act);

struct ConvLayer {
  ConvSpec spec;
  Tensor weight;  // [co, ci, k, k]
  Tensor bias;    // [co, 1, 1, 1]
};

/// Uniform(-b, b) weights with b = sqrt(6 / (ci k^2)), drawn in row-major
/// [co, ci, kh, kw] order; zero bias (no draws).
ConvLayer init_conv(std::int64_t ci, std::int64_t co, int k, int stride, Activation act, Rng& rng,
                    Precision precision = Precision::f64);
ConvLayer init_conv(const ConvSpec& spec, Rng& rng, Precision precision = Precision::f64);

double init_bound(std::int64_t ci, int k);

/// Resolves parameter names to Vars. With a tape, trainable parameters become
/// memoized leaves; frozen parameters (and everything without a tape) are
/// untracked constants.
class ParamBinder {
 public:
  ParamBinder(const ParamStore& store, Tape* tape) : store_(store), tape_(tape) {}

  Var get(const std::string& name);
  Tape* tape() const { return tape_; }
  const ParamStore& store() const { return store_; }

 private:
  const ParamStore& store_;
  Tape* tape_;
  std::unordered_map<std::string, Var> cache_;
};

Var apply(const ConvSpec& spec, const Var& input, ParamBinder& params);
/// Standalone layer application; records on `tape` when given.
Var apply(const ConvLayer& layer, const Var& input, Tape* tape);

/// Strict replacement of every value in `target` by the same-named entry of
/// `source`. Missing, extra, or mismatched names raise a LoadError listing them.
void load_params(ParamStore& target, const ParamStore& source);

}  // namespace stsc
