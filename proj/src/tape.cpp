#include "celltopo/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace celltopo {

const Grid& Var::value() const { return tape->value(*this); }

Var Tape::input(Grid value, bool requires_grad) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Grid& value) {
  Node node;
  node.external = &value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(const Grid& value) {
  Node node;
  node.external = &value;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Grid& Tape::value_of(int id) const {
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  return node.external ? *node.external : node.owned;
}

const Grid& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument("variable does not belong to this tape");
  }
  return value_of(v.id);
}

Grid& Tape::grad_buffer(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.empty()) node.grad = Grid::zeros_like(value_of(id));
  return node.grad;
}

const Grid& Tape::grad(Var v) const {
  if (v.tape != this) throw std::invalid_argument("variable does not belong to this tape");
  // Lazily materialised: an untouched gradient is exactly zero.
  return const_cast<Tape*>(this)->grad_buffer(v.id);
}

Var Tape::record(Grid value, std::vector<int> inputs, BackwardFn backward) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](int i) { return nodes_[static_cast<std::size_t>(i)].requires_grad; });
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("loss does not belong to this tape");
  const Grid& loss_value = value_of(loss.id);
  if (loss_value.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_string(loss_value.shape()));
  }
  if (backward_done_) throw std::logic_error("backward already run on this tape");
  backward_done_ = true;
  if (!nodes_[static_cast<std::size_t>(loss.id)].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, i);
  }
}

namespace {

Tape& common_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw std::invalid_argument("operation on an unbound variable");
    if (tape && v.tape != tape) throw std::invalid_argument("operands recorded on different tapes");
    tape = v.tape;
  }
  return *tape;
}

template <typename F>
Var unary(Var x, Grid out, F&& local_grad) {
  Tape& t = common_tape({x});
  return t.record(std::move(out), {x.id}, [x_id = x.id, local_grad](Tape& tape, int self) {
    if (!tape.needs_grad(x_id)) return;
    const Grid& g = tape.grad_of(self);
    const Grid& xv = tape.value_of(x_id);
    const Grid& yv = tape.value_of(self);
    Grid& gx = tape.grad_buffer(x_id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * local_grad(xv[i], yv[i]);
  });
}

void require_same_shape(const Grid& a, const Grid& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

}  // namespace

Var conv2d(Var input, Var kernels, Var bias, ConvGeometry geom) {
  Tape& t = common_tape({input, kernels, bias});
  detail::check_conv_shapes(input.value(), kernels.value(), &bias.value(), geom);
  Grid out = detail::conv2d_forward(input.value(), kernels.value(), &bias.value(), geom);
  return t.record(std::move(out), {input.id, kernels.id, bias.id},
                  [in = input.id, k = kernels.id, b = bias.id, geom](Tape& tape, int self) {
                    detail::conv2d_backward(
                        tape.value_of(in), tape.value_of(k), tape.grad_of(self), geom,
                        tape.needs_grad(in) ? &tape.grad_buffer(in) : nullptr,
                        tape.needs_grad(k) ? &tape.grad_buffer(k) : nullptr,
                        tape.needs_grad(b) ? &tape.grad_buffer(b) : nullptr);
                  });
}

Var conv2d_transpose(Var input, Var kernels, Var bias, ConvGeometry geom) {
  Tape& t = common_tape({input, kernels, bias});
  const Grid& x = input.value();
  const Grid& k = kernels.value();
  if (x.rank() != 3 || k.rank() != 4 || k.dim(0) != x.dim(0) || k.dim(2) != k.dim(3)) {
    throw std::invalid_argument("conv2d_transpose channel mismatch: input " +
                                shape_string(x.shape()) + " vs kernels " + shape_string(k.shape()));
  }
  if (bias.value().size() != static_cast<std::size_t>(k.dim(1))) {
    throw std::invalid_argument("conv2d_transpose bias must have one entry per output channel");
  }
  Grid out = detail::conv_transpose_forward(x, k, &bias.value(), geom);
  return t.record(std::move(out), {input.id, kernels.id, bias.id},
                  [in = input.id, kid = kernels.id, b = bias.id, geom](Tape& tape, int self) {
                    detail::conv_transpose_backward(
                        tape.value_of(in), tape.value_of(kid), tape.grad_of(self), geom,
                        tape.needs_grad(in) ? &tape.grad_buffer(in) : nullptr,
                        tape.needs_grad(kid) ? &tape.grad_buffer(kid) : nullptr,
                        tape.needs_grad(b) ? &tape.grad_buffer(b) : nullptr);
                  });
}

Var relu(Var x) {
  Grid out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return unary(x, std::move(out), [](double xi, double) { return xi > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  Grid out = x.value();
  for (double& v : out.values()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return unary(x, std::move(out), [](double, double y) { return y * (1.0 - y); });
}

Var abs(Var x) {
  Grid out = x.value();
  for (double& v : out.values()) v = std::fabs(v);
  return unary(x, std::move(out), [](double xi, double) {
    return xi > 0.0 ? 1.0 : (xi < 0.0 ? -1.0 : 0.0);
  });
}

Var log(Var x, double floor) {
  Grid out = x.value();
  for (double& v : out.values()) v = std::log(std::max(v, floor));
  return unary(x, std::move(out), [floor](double xi, double) { return xi > floor ? 1.0 / xi : 0.0; });
}

Var scale(Var x, double factor) {
  Grid out = x.value();
  for (double& v : out.values()) v *= factor;
  return unary(x, std::move(out), [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  Grid out = x.value();
  for (double& v : out.values()) v += offset;
  return unary(x, std::move(out), [](double, double) { return 1.0; });
}

Var concat_channels(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Grid& av = a.value();
  const Grid& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2)) {
    throw std::invalid_argument("concat_channels spatial mismatch " + shape_string(av.shape()) +
                                " vs " + shape_string(bv.shape()));
  }
  Grid out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::copy(av.values().begin(), av.values().end(), out.values().begin());
  std::copy(bv.values().begin(), bv.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(av.size()));
  return t.record(std::move(out), {a.id, b.id}, [a_id = a.id, b_id = b.id](Tape& tape, int self) {
    const Grid& g = tape.grad_of(self);
    const std::size_t split = tape.value_of(a_id).size();
    if (tape.needs_grad(a_id)) {
      Grid& ga = tape.grad_buffer(a_id);
      for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
    }
    if (tape.needs_grad(b_id)) {
      Grid& gb = tape.grad_buffer(b_id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[split + i];
    }
  });
}

namespace {

enum class Binary { kAdd, kSub, kMul };

Var binary(Var a, Var b, Binary op, const char* name) {
  Tape& t = common_tape({a, b});
  require_same_shape(a.value(), b.value(), name);
  Grid out = a.value();
  const Grid& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (op) {
      case Binary::kAdd: out[i] += bv[i]; break;
      case Binary::kSub: out[i] -= bv[i]; break;
      case Binary::kMul: out[i] *= bv[i]; break;
    }
  }
  return t.record(std::move(out), {a.id, b.id}, [a_id = a.id, b_id = b.id, op](Tape& tape, int self) {
    const Grid& g = tape.grad_of(self);
    if (tape.needs_grad(a_id)) {
      Grid& ga = tape.grad_buffer(a_id);
      const Grid& bv = tape.value_of(b_id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += op == Binary::kMul ? g[i] * bv[i] : g[i];
    }
    if (tape.needs_grad(b_id)) {
      Grid& gb = tape.grad_buffer(b_id);
      const Grid& av = tape.value_of(a_id);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gb[i] += op == Binary::kMul ? g[i] * av[i] : (op == Binary::kSub ? -g[i] : g[i]);
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, Binary::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, Binary::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, Binary::kMul, "mul"); }

Var sum(Var x) {
  Tape& t = common_tape({x});
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return t.record(Grid::scalar(s), {x.id}, [x_id = x.id](Tape& tape, int self) {
    if (!tape.needs_grad(x_id)) return;
    const double g = tape.grad_of(self)[0];
    for (double& v : tape.grad_buffer(x_id).values()) v += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  Tape& t = common_tape({x});
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return t.record(Grid::scalar(s / n), {x.id}, [x_id = x.id, n](Tape& tape, int self) {
    if (!tape.needs_grad(x_id)) return;
    const double g = tape.grad_of(self)[0] / n;
    for (double& v : tape.grad_buffer(x_id).values()) v += g;
  });
}

Var global_avg_pool(Var x) {
  Tape& t = common_tape({x});
  const Grid& xv = x.value();
  if (xv.rank() != 3) throw std::invalid_argument("global_avg_pool expects C x H x W");
  const int channels = xv.dim(0);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Grid out({channels});
  for (int c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xv[c * plane + i];
    out[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  return t.record(std::move(out), {x.id}, [x_id = x.id, channels, plane](Tape& tape, int self) {
    if (!tape.needs_grad(x_id)) return;
    const Grid& g = tape.grad_of(self);
    Grid& gx = tape.grad_buffer(x_id);
    for (int c = 0; c < channels; ++c) {
      const double share = g[static_cast<std::size_t>(c)] / static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += share;
    }
  });
}

Var linear(Var x, Var weights, Var bias) {
  Tape& t = common_tape({x, weights, bias});
  const Grid& xv = x.value();
  const Grid& w = weights.value();
  const Grid& b = bias.value();
  if (w.rank() != 2 || static_cast<std::size_t>(w.dim(1)) != xv.size() ||
      b.size() != static_cast<std::size_t>(w.dim(0))) {
    throw std::invalid_argument("linear: weights " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(xv.shape()) + " and bias " + shape_string(b.shape()));
  }
  const int rows = w.dim(0), cols = w.dim(1);
  Grid out({rows});
  for (int r = 0; r < rows; ++r) {
    double s = b[static_cast<std::size_t>(r)];
    for (int c = 0; c < cols; ++c) s += w[static_cast<std::size_t>(r) * cols + c] * xv[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = s;
  }
  return t.record(std::move(out), {x.id, weights.id, bias.id},
                  [x_id = x.id, w_id = weights.id, b_id = bias.id, rows, cols](Tape& tape, int self) {
                    const Grid& g = tape.grad_of(self);
                    const Grid& xv = tape.value_of(x_id);
                    const Grid& wv = tape.value_of(w_id);
                    if (tape.needs_grad(x_id)) {
                      Grid& gx = tape.grad_buffer(x_id);
                      for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c)
                          gx[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(r)] * wv[static_cast<std::size_t>(r) * cols + c];
                    }
                    if (tape.needs_grad(w_id)) {
                      Grid& gw = tape.grad_buffer(w_id);
                      for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c)
                          gw[static_cast<std::size_t>(r) * cols + c] += g[static_cast<std::size_t>(r)] * xv[static_cast<std::size_t>(c)];
                    }
                    if (tape.needs_grad(b_id)) {
                      Grid& gb = tape.grad_buffer(b_id);
                      for (int r = 0; r < rows; ++r) gb[static_cast<std::size_t>(r)] += g[static_cast<std::size_t>(r)];
                    }
                  });
}

}  // namespace celltopo
