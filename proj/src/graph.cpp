#include "margin_audit/graph.hpp"

#include <algorithm>
#include <cmath>

namespace margin_audit {

namespace {

void accumulate(Tensor& into, const Tensor& g) {
  if (into.data.empty() && into.shape.empty()) {
    into = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) into.data[i] += g.data[i];
}

// Row-wise log-softmax with max shift.
void log_softmax_rows(const Tensor& z, Tensor& out) {
  out = Tensor(z.shape, std::vector<double>(z.size()));
  const auto cols = z.cols();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto in = z.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(in[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Affine: return "affine";
    case Op::Conv2d: return "conv2d";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Relu: return "relu";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::LogSoftmax: return "log_softmax";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::Mse: return "mse";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::MeanRowSum: return "mean_row_sum";
  }
  return "unknown";
}

NodeId Graph::push(Node node) {
  for (std::size_t i = 0; i < node.arity; ++i) check_id(node.inputs[i]);
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Graph::check_id(NodeId id) const {
  if (id >= nodes_.size()) throw NumericsError("unknown node id " + std::to_string(id));
}

std::string Graph::describe(NodeId id) const {
  const auto& n = nodes_.at(id);
  std::string s = "node " + std::to_string(id) + " (" + std::string(op_name(n.op));
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + ")";
}

void Graph::fail(NodeId id, const std::string& what) const {
  throw NumericsError(describe(id) + ": " + what);
}

NodeId Graph::leaf(std::string name) {
  if (leaves_.count(name)) throw NumericsError("duplicate leaf name '" + name + "'");
  Node n;
  n.op = Op::Leaf;
  n.name = name;
  const auto id = push(std::move(n));
  leaves_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::unary(Op op, NodeId a) {
  Node n;
  n.op = op;
  n.inputs = {a, 0, 0};
  n.arity = 1;
  return push(std::move(n));
}

NodeId Graph::binary(Op op, NodeId a, NodeId b) {
  Node n;
  n.op = op;
  n.inputs = {a, b, 0};
  n.arity = 2;
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  Node n;
  n.op = Op::Affine;
  n.inputs = {x, w, b};
  n.arity = 3;
  return push(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId kernel, NodeId bias, const Conv2dGeometry& geometry) {
  if (geometry.kernel == 0 || geometry.stride == 0 || geometry.kernel > geometry.height ||
      geometry.kernel > geometry.width) {
    throw NumericsError("invalid conv2d geometry");
  }
  Node n;
  n.op = Op::Conv2d;
  n.inputs = {x, kernel, bias};
  n.arity = 3;
  n.geometry = geometry;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Graph::scale(NodeId a, double factor) {
  const auto id = unary(Op::Scale, a);
  nodes_[id].factor = factor;
  return id;
}
NodeId Graph::relu(NodeId a) { return unary(Op::Relu, a); }
NodeId Graph::tanh(NodeId a) { return unary(Op::Tanh, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }
NodeId Graph::exp(NodeId a) { return unary(Op::Exp, a); }
NodeId Graph::log_softmax(NodeId a) { return unary(Op::LogSoftmax, a); }
NodeId Graph::softmax_cross_entropy(NodeId logits, NodeId target) {
  return binary(Op::SoftmaxCrossEntropy, logits, target);
}
NodeId Graph::mse(NodeId pred, NodeId target) { return binary(Op::Mse, pred, target); }
NodeId Graph::sum(NodeId a) { return unary(Op::Sum, a); }
NodeId Graph::mean(NodeId a) { return unary(Op::Mean, a); }
NodeId Graph::mean_row_sum(NodeId a) { return unary(Op::MeanRowSum, a); }

void Graph::bind(std::string_view name, Tensor value) {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw NumericsError("no leaf named '" + std::string(name) + "'");
  auto& n = nodes_[it->second];
  n.value = std::move(value);
  n.bound = true;
}

void Graph::bind_all(const Bindings& bindings) {
  for (const auto& [name, t] : bindings) bind(name, t);
}

bool Graph::is_bound(std::string_view name) const {
  auto it = leaves_.find(name);
  return it != leaves_.end() && nodes_[it->second].bound;
}

std::vector<bool> Graph::ancestors(NodeId output) const {
  check_id(output);
  std::vector<bool> needed(output + 1, false);
  needed[output] = true;
  for (NodeId id = output + 1; id-- > 0;) {
    if (!needed[id]) continue;
    const auto& n = nodes_[id];
    for (std::size_t i = 0; i < n.arity; ++i) needed[n.inputs[i]] = true;
  }
  return needed;
}

const Tensor& Graph::forward(NodeId output, const Bindings& bindings) {
  bind_all(bindings);
  return forward(output);
}

const Tensor& Graph::forward(NodeId output) {
  const auto needed = ancestors(output);
  ++evaluation_;
  for (NodeId id = 0; id <= output; ++id) {
    if (needed[id]) evaluate(id);
  }
  return nodes_[output].value;
}

void Graph::evaluate(NodeId id) {
  auto& n = nodes_[id];
  const auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
  Tensor out;

  switch (n.op) {
    case Op::Leaf:
      if (!n.bound) fail(id, "leaf is not bound");
      if (!n.value.all_finite()) fail(id, "bound value is not finite");
      n.evaluation = evaluation_;
      return;

    case Op::Affine: {
      const auto& x = in(0);
      const auto& w = in(1);
      const auto& b = in(2);
      if (w.rank() != 2 || b.rank() != 1 || b.shape[0] != w.shape[0] ||
          (x.rank() != 1 && x.rank() != 2) || x.cols() != w.shape[1]) {
        fail(id, "shape mismatch: x " + shape_string(x.shape) + ", w " + shape_string(w.shape) +
                     ", b " + shape_string(b.shape));
      }
      const auto m = w.shape[0];
      const auto k = w.shape[1];
      const auto rows = x.rows();
      out = x.rank() == 1 ? Tensor::zeros({m}) : Tensor::zeros({rows, m});
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * k;
        double* o = out.data.data() + r * m;
        for (std::size_t j = 0; j < m; ++j) {
          const double* wr = w.data.data() + j * k;
          double s = b.data[j];
          for (std::size_t c = 0; c < k; ++c) s += wr[c] * xr[c];
          o[j] = s;
        }
      }
      break;
    }

    case Op::Conv2d: {
      const auto& x = in(0);
      const auto& kern = in(1);
      const auto& bias = in(2);
      const auto& g = n.geometry;
      const auto ksz = g.channels * g.kernel * g.kernel;
      if ((x.rank() != 1 && x.rank() != 2) || x.cols() != g.input_size() || kern.rank() != 2 ||
          kern.shape[0] != g.out_channels || kern.shape[1] != ksz || bias.rank() != 1 ||
          bias.shape[0] != g.out_channels) {
        fail(id, "shape mismatch: x " + shape_string(x.shape) + ", kernel " +
                     shape_string(kern.shape) + ", bias " + shape_string(bias.shape));
      }
      const auto oh = g.out_height();
      const auto ow = g.out_width();
      const auto osz = g.output_size();
      const auto rows = x.rows();
      out = x.rank() == 1 ? Tensor::zeros({osz}) : Tensor::zeros({rows, osz});
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * g.input_size();
        double* o = out.data.data() + r * osz;
        for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
          const double* kr = kern.data.data() + oc * ksz;
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              double s = bias.data[oc];
              for (std::size_t c = 0; c < g.channels; ++c) {
                for (std::size_t u = 0; u < g.kernel; ++u) {
                  const double* xrow = xr + c * g.height * g.width + (i * g.stride + u) * g.width +
                                       j * g.stride;
                  const double* krow = kr + (c * g.kernel + u) * g.kernel;
                  for (std::size_t v = 0; v < g.kernel; ++v) s += krow[v] * xrow[v];
                }
              }
              o[(oc * oh + i) * ow + j] = s;
            }
          }
        }
      }
      break;
    }

    case Op::Add:
    case Op::Sub:
    case Op::Mul: {
      const auto& a = in(0);
      const auto& b = in(1);
      if (a.shape != b.shape) {
        fail(id, "shape mismatch: " + shape_string(a.shape) + " vs " + shape_string(b.shape));
      }
      out = a;
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (n.op == Op::Add) out.data[i] += b.data[i];
        else if (n.op == Op::Sub) out.data[i] -= b.data[i];
        else out.data[i] *= b.data[i];
      }
      break;
    }

    case Op::Scale:
      out = in(0);
      for (auto& v : out.data) v *= n.factor;
      break;

    case Op::Relu:
      out = in(0);
      for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
      break;

    case Op::Tanh:
      out = in(0);
      for (auto& v : out.data) v = std::tanh(v);
      break;

    case Op::Sigmoid:
      out = in(0);
      for (auto& v : out.data) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      break;

    case Op::Exp:
      out = in(0);
      for (auto& v : out.data) v = std::exp(v);
      break;

    case Op::LogSoftmax:
      if (in(0).rank() == 0) fail(id, "log_softmax needs rank >= 1");
      log_softmax_rows(in(0), out);
      break;

    case Op::SoftmaxCrossEntropy: {
      const auto& z = in(0);
      const auto& t = in(1);
      if (z.shape != t.shape || z.rank() == 0) {
        fail(id, "shape mismatch: logits " + shape_string(z.shape) + ", target " +
                     shape_string(t.shape));
      }
      Tensor lp;
      log_softmax_rows(z, lp);
      double s = 0.0;
      for (std::size_t i = 0; i < lp.size(); ++i) s -= t.data[i] * lp.data[i];
      out = Tensor::scalar(s / static_cast<double>(z.rows()));
      break;
    }

    case Op::Mse: {
      const auto& p = in(0);
      const auto& t = in(1);
      if (p.shape != t.shape || p.size() == 0) {
        fail(id, "shape mismatch: " + shape_string(p.shape) + " vs " + shape_string(t.shape));
      }
      double s = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p.data[i] - t.data[i];
        s += d * d;
      }
      out = Tensor::scalar(s / static_cast<double>(p.size()));
      break;
    }

    case Op::Sum:
    case Op::Mean:
    case Op::MeanRowSum: {
      const auto& a = in(0);
      double s = 0.0;
      for (double v : a.data) s += v;
      if (n.op == Op::Mean) s /= static_cast<double>(std::max<std::size_t>(a.size(), 1));
      if (n.op == Op::MeanRowSum) s /= static_cast<double>(a.rows());
      out = Tensor::scalar(s);
      break;
    }
  }

  if (!out.all_finite()) fail(id, "produced a non-finite value");
  n.value = std::move(out);
  n.evaluation = evaluation_;
}

const Tensor& Graph::value(NodeId id) const {
  check_id(id);
  if (nodes_[id].evaluation == 0) fail(id, "value requested before forward");
  return nodes_[id].value;
}

Gradients Graph::backward(NodeId output) const {
  check_id(output);
  if (!nodes_[output].value.shape.empty() && nodes_[output].evaluation != 0) {
    fail(output, "implicit seed requires a scalar output");
  }
  return backward(output, Tensor::scalar(1.0));
}

Gradients Graph::backward(NodeId output, const Tensor& seed) const {
  return backward(output, seed, {});
}

Gradients Graph::backward(NodeId output, const Tensor& seed,
                          const std::vector<std::string>& wrt) const {
  check_id(output);
  if (nodes_[output].evaluation == 0) fail(output, "backward called before forward");
  const auto needed = ancestors(output);
  for (NodeId id = 0; id <= output; ++id) {
    if (needed[id] && nodes_[id].evaluation == 0) fail(id, "backward called before forward");
  }
  if (seed.shape != nodes_[output].value.shape) {
    fail(output, "seed shape " + shape_string(seed.shape) + " does not match output " +
                     shape_string(nodes_[output].value.shape));
  }

  // flows[id]: a requested leaf is reachable backwards from id.
  std::vector<bool> flows(output + 1, false);
  for (NodeId id = 0; id <= output; ++id) {
    if (!needed[id]) continue;
    const auto& n = nodes_[id];
    if (n.op == Op::Leaf) {
      flows[id] = wrt.empty() || std::find(wrt.begin(), wrt.end(), n.name) != wrt.end();
    } else {
      for (std::size_t i = 0; i < n.arity; ++i) flows[id] = flows[id] || flows[n.inputs[i]];
    }
  }

  std::vector<Tensor> grads(output + 1);
  grads[output] = seed;
  const auto send = [&](NodeId to, const Tensor& g) {
    if (flows[to]) accumulate(grads[to], g);
  };

  for (NodeId id = output + 1; id-- > 0;) {
    if (!needed[id]) continue;
    const auto& n = nodes_[id];
    if (n.op == Op::Leaf || !flows[id]) continue;
    const Tensor& gy = grads[id];
    if (gy.data.empty()) continue;  // no path from output
    const auto val = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
    const auto& y = n.value;

    switch (n.op) {
      case Op::Leaf:
        break;

      case Op::Affine: {
        const auto& x = val(0);
        const auto& w = val(1);
        const auto m = w.shape[0];
        const auto k = w.shape[1];
        const auto rows = x.rows();
        const bool want_x = flows[n.inputs[0]];
        const bool want_w = flows[n.inputs[1]];
        Tensor gx = want_x ? Tensor::zeros(x.shape) : Tensor{};
        Tensor gw = want_w ? Tensor::zeros(w.shape) : Tensor{};
        Tensor gb = Tensor::zeros({m});
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = x.data.data() + r * k;
          const double* g = gy.data.data() + r * m;
          for (std::size_t j = 0; j < m; ++j) {
            const double gj = g[j];
            if (gj == 0.0) continue;
            const double* wr = w.data.data() + j * k;
            if (want_x) {
              double* gxr = gx.data.data() + r * k;
              for (std::size_t c = 0; c < k; ++c) gxr[c] += gj * wr[c];
            }
            if (want_w) {
              double* gwr = gw.data.data() + j * k;
              for (std::size_t c = 0; c < k; ++c) gwr[c] += gj * xr[c];
            }
            gb.data[j] += gj;
          }
        }
        send(n.inputs[0], gx);
        send(n.inputs[1], gw);
        send(n.inputs[2], gb);
        break;
      }

      case Op::Conv2d: {
        const auto& x = val(0);
        const auto& kern = val(1);
        const auto& g = n.geometry;
        const auto ksz = g.channels * g.kernel * g.kernel;
        const auto oh = g.out_height();
        const auto ow = g.out_width();
        const auto osz = g.output_size();
        Tensor gx = Tensor::zeros(x.shape);
        Tensor gk = Tensor::zeros(kern.shape);
        Tensor gb = Tensor::zeros({g.out_channels});
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double* xr = x.data.data() + r * g.input_size();
          double* gxr = gx.data.data() + r * g.input_size();
          const double* go = gy.data.data() + r * osz;
          for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
            const double* kr = kern.data.data() + oc * ksz;
            double* gkr = gk.data.data() + oc * ksz;
            for (std::size_t i = 0; i < oh; ++i) {
              for (std::size_t j = 0; j < ow; ++j) {
                const double gv = go[(oc * oh + i) * ow + j];
                if (gv == 0.0) continue;
                gb.data[oc] += gv;
                for (std::size_t c = 0; c < g.channels; ++c) {
                  for (std::size_t u = 0; u < g.kernel; ++u) {
                    const auto off = c * g.height * g.width + (i * g.stride + u) * g.width +
                                     j * g.stride;
                    const auto koff = (c * g.kernel + u) * g.kernel;
                    for (std::size_t v = 0; v < g.kernel; ++v) {
                      gxr[off + v] += gv * kr[koff + v];
                      gkr[koff + v] += gv * xr[off + v];
                    }
                  }
                }
              }
            }
          }
        }
        send(n.inputs[0], gx);
        send(n.inputs[1], gk);
        send(n.inputs[2], gb);
        break;
      }

      case Op::Add:
        send(n.inputs[0], gy);
        send(n.inputs[1], gy);
        break;

      case Op::Sub: {
        send(n.inputs[0], gy);
        Tensor neg = gy;
        for (auto& v : neg.data) v = -v;
        send(n.inputs[1], neg);
        break;
      }

      case Op::Mul: {
        Tensor ga = gy;
        Tensor gb = gy;
        const auto& a = val(0);
        const auto& b = val(1);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          ga.data[i] *= b.data[i];
          gb.data[i] *= a.data[i];
        }
        send(n.inputs[0], ga);
        send(n.inputs[1], gb);
        break;
      }

      case Op::Scale: {
        Tensor g = gy;
        for (auto& v : g.data) v *= n.factor;
        send(n.inputs[0], g);
        break;
      }

      case Op::Relu: {
        // Subgradient at exactly 0 is 0.
        Tensor g = gy;
        const auto& x = val(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (!(x.data[i] > 0.0)) g.data[i] = 0.0;
        }
        send(n.inputs[0], g);
        break;
      }

      case Op::Tanh: {
        Tensor g = gy;
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= 1.0 - y.data[i] * y.data[i];
        send(n.inputs[0], g);
        break;
      }

      case Op::Sigmoid: {
        Tensor g = gy;
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= y.data[i] * (1.0 - y.data[i]);
        send(n.inputs[0], g);
        break;
      }

      case Op::Exp: {
        Tensor g = gy;
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= y.data[i];
        send(n.inputs[0], g);
        break;
      }

      case Op::LogSoftmax: {
        Tensor g = gy;
        const auto cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          auto yr = y.row(r);
          auto gr = g.row(r);
          double s = 0.0;
          for (std::size_t c = 0; c < cols; ++c) s += gr[c];
          for (std::size_t c = 0; c < cols; ++c) gr[c] -= std::exp(yr[c]) * s;
        }
        send(n.inputs[0], g);
        break;
      }

      case Op::SoftmaxCrossEntropy: {
        const auto& z = val(0);
        const auto& t = val(1);
        Tensor lp;
        log_softmax_rows(z, lp);
        const double s = gy.data[0] / static_cast<double>(z.rows());
        Tensor gz = Tensor::zeros(z.shape);
        Tensor gt = Tensor::zeros(t.shape);
        const auto cols = z.cols();
        for (std::size_t r = 0; r < z.rows(); ++r) {
          double tsum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) tsum += t.data[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) {
            const auto i = r * cols + c;
            gz.data[i] = s * (std::exp(lp.data[i]) * tsum - t.data[i]);
            gt.data[i] = -s * lp.data[i];
          }
        }
        send(n.inputs[0], gz);
        send(n.inputs[1], gt);
        break;
      }

      case Op::Mse: {
        const auto& p = val(0);
        const auto& t = val(1);
        const double s = 2.0 * gy.data[0] / static_cast<double>(p.size());
        Tensor gp = Tensor::zeros(p.shape);
        Tensor gt = Tensor::zeros(t.shape);
        for (std::size_t i = 0; i < p.size(); ++i) {
          gp.data[i] = s * (p.data[i] - t.data[i]);
          gt.data[i] = -gp.data[i];
        }
        send(n.inputs[0], gp);
        send(n.inputs[1], gt);
        break;
      }

      case Op::Sum:
      case Op::Mean:
      case Op::MeanRowSum: {
        const auto& a = val(0);
        double s = gy.data[0];
        if (n.op == Op::Mean) s /= static_cast<double>(std::max<std::size_t>(a.size(), 1));
        if (n.op == Op::MeanRowSum) s /= static_cast<double>(a.rows());
        send(n.inputs[0], Tensor(a.shape, std::vector<double>(a.size(), s)));
        break;
      }
    }
  }

  Gradients out;
  for (const auto& [name, id] : leaves_) {
    if (!wrt.empty() && std::find(wrt.begin(), wrt.end(), name) == wrt.end()) continue;
    if (id <= output && needed[id] && !grads[id].data.empty()) {
      out.emplace(name, std::move(grads[id]));
    } else if (nodes_[id].bound) {
      out.emplace(name, Tensor::zeros(nodes_[id].value.shape));
    }
  }
  return out;
}

}  // namespace margin_audit
