#include "stsc/autograd.hpp"

#include <optional>

#include <fmt/core.h>

namespace stsc {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::avg_pool_k2: return "avg_pool_k2";
    case OpKind::max_pool_k2: return "max_pool_k2";
    case OpKind::nearest_up_x2: return "nearest_up_x2";
    case OpKind::space_to_depth_x2: return "space_to_depth_x2";
    case OpKind::depth_to_space_x2: return "depth_to_space_x2";
    case OpKind::avg_pool_to: return "avg_pool_to";
    case OpKind::nearest_to: return "nearest_to";
    case OpKind::adaptive_avg_pool: return "adaptive_avg_pool";
    case OpKind::nearest_resize: return "nearest_resize";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::mul: return "mul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::div: return "div";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::abs: return "abs";
    case OpKind::square: return "square";
    case OpKind::pow_scalar: return "pow_scalar";
    case OpKind::clamp_min: return "clamp_min";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::gaussian_blur: return "gaussian_blur";
    case OpKind::sum_all: return "sum_all";
    case OpKind::mean_all: return "mean_all";
  }
  return "unknown";
}

Var::Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}

void GradMap::insert(std::string name, Tensor grad) {
  if (contains(name)) throw Error("GradMap: duplicate entry " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(grad));
}

const Tensor& GradMap::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("GradMap: no gradient for " + name);
  return entries_[it->second].second;
}

Var Tape::push(Node node, std::shared_ptr<const Tensor> value) {
  nodes_.push_back(std::move(node));
  Var v;
  v.value_ = std::move(value);
  v.tape_ = this;
  v.node_ = static_cast<NodeId>(nodes_.size() - 1);
  return v;
}

Var Tape::input(std::string id, Tensor value) {
  if (params_.count(id) != 0) throw Error("Tape: leaf id registered twice: " + id);
  Node node;
  node.kind = OpKind::leaf;
  node.shape = value.shape();
  node.precision = value.precision();
  node.leaf_id = id;
  Var v = push(std::move(node), std::make_shared<const Tensor>(std::move(value)));
  leaves_.push_back(v.node_);
  params_.emplace(std::move(id), v);
  return v;
}

Var Tape::param(const std::string& id, const Tensor& value) {
  auto it = params_.find(id);
  if (it != params_.end()) return it->second;
  return input(id, value);
}

Var Tape::record(OpKind kind, std::initializer_list<const Var*> parents, Tensor value,
                 GradFn fn) {
  return record(kind, std::vector<const Var*>(parents), std::move(value), std::move(fn));
}

Var Tape::record(OpKind kind, const std::vector<const Var*>& parents, Tensor value, GradFn fn) {
  Tape* tape = nullptr;
  for (const Var* p : parents) {
    if (p->precision() != value.precision()) {
      throw PrecisionError(fmt::format("{}: mixed precision inputs", to_string(kind)));
    }
    if (!p->tracked()) continue;
    if (tape != nullptr && tape != p->tape()) {
      throw DetachedNodeError(fmt::format("{}: inputs recorded on different tapes", to_string(kind)));
    }
    tape = p->tape();
  }
  if (tape == nullptr) return Var(std::move(value));
  Node node;
  node.kind = kind;
  node.shape = value.shape();
  node.precision = value.precision();
  node.fn = std::move(fn);
  node.parents.reserve(parents.size());
  for (const Var* p : parents) node.parents.push_back(p->tracked() ? p->node() : -1);
  return tape->push(std::move(node), std::make_shared<const Tensor>(std::move(value)));
}

GradMap Tape::backward(const Var& loss) const {
  if (!loss.tracked() || loss.tape() != this) {
    throw DetachedNodeError("backward: loss is not recorded on this tape");
  }
  if (!(loss.shape() == Shape{1, 1, 1, 1})) {
    throw RankError("backward: loss must be a scalar [1,1,1,1], got " + loss.shape().str());
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.node())] = Tensor::scalar(1.0, loss.precision());
  last_visits_ = 0;

  std::vector<Tensor*> slots;
  for (NodeId id = loss.node(); id >= 0; --id) {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (!g) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    ++last_visits_;
    if (node.kind == OpKind::leaf) continue;
    slots.assign(node.parents.size(), nullptr);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const NodeId p = node.parents[k];
      if (p < 0) continue;
      auto& pg = grads[static_cast<std::size_t>(p)];
      if (!pg) {
        const Node& pn = nodes_[static_cast<std::size_t>(p)];
        pg = Tensor(pn.shape, pn.precision);
      }
      slots[k] = &*pg;
    }
    node.fn(*g, slots);
    for (Tensor* s : slots) {
      if (s != nullptr) s->round_to_precision();
    }
    g.reset();
  }

  GradMap out;
  for (NodeId leaf : leaves_) {
    const Node& node = nodes_[static_cast<std::size_t>(leaf)];
    auto& g = grads[static_cast<std::size_t>(leaf)];
    if (leaf > loss.node() || !g) {
      out.insert(node.leaf_id, Tensor(node.shape, node.precision));
    } else {
      out.insert(node.leaf_id, std::move(*g));
    }
  }
  return out;
}

GradMap backward(const Tape& tape, const Var& loss) { return tape.backward(loss); }

double numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        std::int64_t coordinate, double eps) {
  if (coordinate < 0 || coordinate >= at.numel()) {
    throw IndexError(fmt::format("numeric_gradient: coordinate {} outside [0, {})", coordinate,
                                 at.numel()));
  }
  if (!(eps > 0.0)) throw Error("numeric_gradient: eps must be positive");
  Tensor probe = at;
  const double x0 = at[coordinate];
  probe[coordinate] = x0 + eps;
  const double up = f(probe);
  probe[coordinate] = x0 - eps;
  const double down = f(probe);
  return (up - down) / (2.0 * eps);
}

}  // namespace stsc
