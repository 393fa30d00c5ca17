#include "stsc/nn.hpp"

#include <cmath>

#include <fmt/core.h>

namespace stsc {

void ParamStore::add(std::string name, Tensor value, bool frozen) {
  if (contains(name)) throw LoadError("ParamStore: duplicate parameter name " + name);
  index_.emplace(name, entries_.size());
  if (frozen) frozen_.insert(name);
  entries_.push_back({std::move(name), std::move(value)});
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LoadError("ParamStore: no parameter named " + name);
  return entries_[it->second].value;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw LoadError("ParamStore: no parameter named " + name);
  return entries_[it->second].value;
}

const Tensor* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second].value;
}

void ParamStore::freeze(const std::string& name) {
  if (!contains(name)) throw LoadError("ParamStore: cannot freeze unknown parameter " + name);
  frozen_.insert(name);
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

std::int64_t ParamStore::trainable_elements() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) {
    if (!is_frozen(e.name)) n += e.value.numel();
  }
  return n;
}

void ParamStore::set_precision(Precision p) {
  for (auto& e : entries_) e.value = e.value.to(p);
}

void ParamStore::merge(const ParamStore& other, const std::string& prefix, bool frozen) {
  for (const auto& e : other.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    add(e.name, e.value, frozen || other.is_frozen(e.name));
  }
}

ConvSpec make_conv(std::string name, std::int64_t ci, std::int64_t co, int k, int stride,
                   Activation act) {
  ConvSpec s;
  s.name = std::move(name);
  s.in_channels = ci;
  s.out_channels = co;
  s.kernel = k;
  s.stride = stride;
  s.padding = (k - 1) / 2;
  s.activation = act;
  return s;
}

double init_bound(std::int64_t ci, int k) {
  return std::sqrt(6.0 / static_cast<double>(ci * k * k));
}

ConvLayer init_conv(const ConvSpec& spec, Rng& rng, Precision precision) {
  if (spec.in_channels < 1 || spec.out_channels < 1 || spec.kernel < 1) {
    throw ConfigError(fmt::format("init_conv: invalid layer {} ({}->{}, k={})", spec.name,
                                  spec.in_channels, spec.out_channels, spec.kernel));
  }
  const double bound = init_bound(spec.in_channels, spec.kernel);
  std::uniform_real_distribution<double> dist(-bound, bound);
  ConvLayer layer;
  layer.spec = spec;
  const Shape ws{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  std::vector<double> values(static_cast<std::size_t>(ws.numel()));
  for (double& v : values) v = dist(rng);
  layer.weight = Tensor(ws, std::move(values), precision);
  layer.bias = Tensor({spec.out_channels, 1, 1, 1}, precision);
  return layer;
}

ConvLayer init_conv(std::int64_t ci, std::int64_t co, int k, int stride, Activation act, Rng& rng,
                    Precision precision) {
  return init_conv(make_conv("conv", ci, co, k, stride, act), rng, precision);
}

Var ParamBinder::get(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  const Tensor& value = store_.at(name);
  Var v = (tape_ != nullptr && !store_.is_frozen(name)) ? tape_->param(name, value) : Var(value);
  cache_.emplace(name, v);
  return v;
}

Var apply(const ConvSpec& spec, const Var& input, ParamBinder& params) {
  if (input.shape().c != spec.in_channels) {
    throw DimensionError(fmt::format("{}: expected {} input channels, got {}", spec.name,
                                     spec.in_channels, input.shape().c));
  }
  Var w = params.get(spec.weight_name());
  Var b = params.get(spec.bias_name());
  return activation(conv2d(input, w, b, spec.stride, spec.padding), spec.activation);
}

Var apply(const ConvLayer& layer, const Var& input, Tape* tape) {
  ParamStore store;
  store.add(layer.spec.weight_name(), layer.weight);
  store.add(layer.spec.bias_name(), layer.bias);
  ParamBinder binder(store, tape);
  return apply(layer.spec, input, binder);
}

void load_params(ParamStore& target, const ParamStore& source) {
  std::vector<std::string> missing;
  std::vector<std::string> mismatched;
  std::vector<std::string> extra;
  for (const auto& e : target.entries()) {
    const Tensor* src = source.find(e.name);
    if (src == nullptr) {
      missing.push_back(e.name);
    } else if (!(src->shape() == e.value.shape())) {
      mismatched.push_back(fmt::format("{} (expected {}, got {})", e.name, e.value.shape().str(),
                                       src->shape().str()));
    }
  }
  for (const auto& e : source.entries()) {
    if (!target.contains(e.name)) extra.push_back(e.name);
  }
  if (!missing.empty() || !mismatched.empty() || !extra.empty()) {
    std::string msg = "strict parameter load failed;";
    auto list = [&msg](const char* label, const std::vector<std::string>& names) {
      if (names.empty()) return;
      msg += fmt::format(" {}:", label);
      for (const auto& n : names) msg += " " + n;
      msg += ";";
    };
    list("missing", missing);
    list("unexpected", extra);
    list("shape mismatch", mismatched);
    throw LoadError(msg);
  }
  for (const auto& e : source.entries()) {
    Tensor& dst = target.at(e.name);
    dst = e.value.to(dst.precision());
  }
}

}  // namespace stsc
