#include "loraguard/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace loraguard {

namespace {

DMat to_dmat(const Tensor2D& t) {
  DMat m(t.rows, t.cols);
  for (size_t i = 0; i < t.data.size(); ++i) m.v[i] = static_cast<double>(t.data[i]);
  return m;
}

Tensor2D to_f32(const DMat& m) {
  Tensor2D t(m.rows, m.cols);
  for (size_t i = 0; i < m.v.size(); ++i) t.data[i] = static_cast<float>(m.v[i]);
  return t;
}

std::string shape_of(const DMat& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

}  // namespace

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
    throw std::invalid_argument("tape: unknown node id " + std::to_string(id));
  }
  return nodes_[id];
}

void Tape::require_live(const char* op) const {
  if (consumed_) {
    throw std::logic_error(std::string("tape: ") + op + " after backward() consumed the tape");
  }
}

Tape::NodeId Tape::constant(const Tensor2D& value) {
  require_live("constant");
  Node n;
  n.op = Op::constant;
  n.value = to_dmat(value);
  return push(std::move(n));
}

Tape::NodeId Tape::param(const Tensor2D& value) {
  require_live("param");
  Node n;
  n.op = Op::param;
  n.value = to_dmat(value);
  NodeId id = push(std::move(n));
  params_.push_back(id);
  return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  require_live("matmul");
  const DMat& va = node(a).value;
  const DMat& vb = node(b).value;
  if (va.cols != vb.rows) {
    throw std::invalid_argument("tape matmul: inner dimensions disagree: " + shape_of(va) +
                                " vs " + shape_of(vb));
  }
  Node n;
  n.op = Op::matmul;
  n.a = a;
  n.b = b;
  n.value = DMat(va.rows, vb.cols);
  // i-k-j order: the inner loop runs over contiguous rows of both the output
  // and the right operand, which the compiler vectorizes.
  for (int i = 0; i < va.rows; ++i) {
    double* out_row = &n.value.v[static_cast<size_t>(i) * vb.cols];
    for (int k = 0; k < va.cols; ++k) {
      const double aik = va.at(i, k);
      const double* b_row = &vb.v[static_cast<size_t>(k) * vb.cols];
      for (int j = 0; j < vb.cols; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  require_live("add");
  const DMat& va = node(a).value;
  const DMat& vb = node(b).value;
  if (va.rows != vb.rows || va.cols != vb.cols) {
    throw std::invalid_argument("tape add: shape mismatch: " + shape_of(va) + " vs " +
                                shape_of(vb));
  }
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  n.value = DMat(va.rows, va.cols);
  for (size_t i = 0; i < va.v.size(); ++i) n.value.v[i] = va.v[i] + vb.v[i];
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double factor) {
  require_live("scale");
  const DMat& va = node(a).value;
  Node n;
  n.op = Op::scale;
  n.a = a;
  n.factor = factor;
  n.value = DMat(va.rows, va.cols);
  for (size_t i = 0; i < va.v.size(); ++i) n.value.v[i] = va.v[i] * factor;
  return push(std::move(n));
}

Tape::NodeId Tape::tanh(NodeId a) {
  require_live("tanh");
  const DMat& va = node(a).value;
  Node n;
  n.op = Op::tanh;
  n.a = a;
  n.value = DMat(va.rows, va.cols);
  for (size_t i = 0; i < va.v.size(); ++i) n.value.v[i] = std::tanh(va.v[i]);
  return push(std::move(n));
}

Tape::NodeId Tape::mean_pool(NodeId a, int cols_per_group) {
  require_live("mean_pool");
  const DMat& va = node(a).value;
  if (cols_per_group <= 0 || va.cols % cols_per_group != 0) {
    throw std::invalid_argument("tape mean_pool: " + std::to_string(va.cols) +
                                " columns not divisible into groups of " +
                                std::to_string(cols_per_group));
  }
  const int groups = va.cols / cols_per_group;
  Node n;
  n.op = Op::mean_pool;
  n.a = a;
  n.group = cols_per_group;
  n.value = DMat(va.rows, groups);
  for (int i = 0; i < va.rows; ++i) {
    for (int g = 0; g < groups; ++g) {
      double acc = 0.0;
      for (int c = 0; c < cols_per_group; ++c) acc += va.at(i, g * cols_per_group + c);
      n.value.at(i, g) = acc / cols_per_group;
    }
  }
  return push(std::move(n));
}

Tape::NodeId Tape::softmax_cross_entropy(NodeId logits, const std::vector<int>& labels) {
  require_live("softmax_cross_entropy");
  const DMat& va = node(logits).value;
  if (static_cast<int>(labels.size()) != va.cols) {
    throw std::invalid_argument("tape softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(va.cols) + " logit columns");
  }
  Node n;
  n.op = Op::softmax_xent;
  n.a = logits;
  n.labels = labels;
  n.probs = DMat(va.rows, va.cols);
  double total = 0.0;
  for (int j = 0; j < va.cols; ++j) {
    const int label = labels[j];
    if (label < 0 || label >= va.rows) {
      throw std::invalid_argument("tape softmax_cross_entropy: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(va.rows) + " classes");
    }
    double mx = va.at(0, j);
    for (int i = 1; i < va.rows; ++i) mx = std::max(mx, va.at(i, j));
    double z = 0.0;
    for (int i = 0; i < va.rows; ++i) z += std::exp(va.at(i, j) - mx);
    for (int i = 0; i < va.rows; ++i) n.probs.at(i, j) = std::exp(va.at(i, j) - mx) / z;
    total += -(va.at(label, j) - mx - std::log(z));
  }
  n.value = DMat(1, 1);
  n.value.at(0, 0) = total / va.cols;
  return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId a) {
  require_live("sum");
  const DMat& va = node(a).value;
  Node n;
  n.op = Op::sum;
  n.a = a;
  n.value = DMat(1, 1);
  double acc = 0.0;
  for (double x : va.v) acc += x;
  n.value.at(0, 0) = acc;
  return push(std::move(n));
}

const DMat& Tape::value(NodeId id) const { return node(id).value; }

double Tape::scalar(NodeId id) const {
  const DMat& v = node(id).value;
  if (v.rows != 1 || v.cols != 1) {
    throw std::invalid_argument("tape scalar: node is " + shape_of(v) + ", not 1x1");
  }
  return v.at(0, 0);
}

Tensor2D Tape::value_f32(NodeId id) const { return to_f32(node(id).value); }

std::vector<Tensor2D> Tape::backward(NodeId loss) {
  require_live("backward");
  const DMat& lv = node(loss).value;
  if (lv.rows != 1 || lv.cols != 1) {
    throw std::invalid_argument("tape backward: loss node is " + shape_of(lv) + ", not scalar");
  }
  consumed_ = true;

  std::vector<DMat> adjoint(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    adjoint[i] = DMat(nodes_[i].value.rows, nodes_[i].value.cols);
  }
  adjoint[loss].at(0, 0) = 1.0;

  for (int id = loss; id >= 0; --id) {
    const Node& n = nodes_[id];
    const DMat& g = adjoint[id];
    switch (n.op) {
      case Op::constant:
      case Op::param:
        break;
      case Op::matmul: {
        const DMat& va = nodes_[n.a].value;
        const DMat& vb = nodes_[n.b].value;
        DMat& ga = adjoint[n.a];
        DMat& gb = adjoint[n.b];
        // dA += G * B^T: each entry is a dot of two contiguous rows.
        for (int i = 0; i < va.rows; ++i) {
          const double* g_row = &g.v[static_cast<size_t>(i) * vb.cols];
          for (int k = 0; k < va.cols; ++k) {
            const double* b_row = &vb.v[static_cast<size_t>(k) * vb.cols];
            double acc = 0.0;
            for (int j = 0; j < vb.cols; ++j) acc += g_row[j] * b_row[j];
            ga.at(i, k) += acc;
          }
        }
        // dB += A^T * G: axpy of G rows into B-gradient rows.
        for (int i = 0; i < va.rows; ++i) {
          const double* g_row = &g.v[static_cast<size_t>(i) * vb.cols];
          for (int k = 0; k < va.cols; ++k) {
            const double aik = va.at(i, k);
            double* gb_row = &gb.v[static_cast<size_t>(k) * vb.cols];
            for (int j = 0; j < vb.cols; ++j) gb_row[j] += aik * g_row[j];
          }
        }
        break;
      }
      case Op::add: {
        DMat& ga = adjoint[n.a];
        DMat& gb = adjoint[n.b];
        for (size_t i = 0; i < g.v.size(); ++i) {
          ga.v[i] += g.v[i];
          gb.v[i] += g.v[i];
        }
        break;
      }
      case Op::scale: {
        DMat& ga = adjoint[n.a];
        for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * n.factor;
        break;
      }
      case Op::tanh: {
        DMat& ga = adjoint[n.a];
        for (size_t i = 0; i < g.v.size(); ++i) {
          const double t = n.value.v[i];
          ga.v[i] += g.v[i] * (1.0 - t * t);
        }
        break;
      }
      case Op::mean_pool: {
        DMat& ga = adjoint[n.a];
        const double inv = 1.0 / n.group;
        for (int i = 0; i < n.value.rows; ++i)
          for (int grp = 0; grp < n.value.cols; ++grp)
            for (int c = 0; c < n.group; ++c)
              ga.at(i, grp * n.group + c) += g.at(i, grp) * inv;
        break;
      }
      case Op::softmax_xent: {
        DMat& ga = adjoint[n.a];
        const double upstream = g.at(0, 0) / n.probs.cols;
        for (int j = 0; j < n.probs.cols; ++j) {
          for (int i = 0; i < n.probs.rows; ++i) {
            const double onehot = (i == n.labels[j]) ? 1.0 : 0.0;
            ga.at(i, j) += upstream * (n.probs.at(i, j) - onehot);
          }
        }
        break;
      }
      case Op::sum: {
        DMat& ga = adjoint[n.a];
        for (double& x : ga.v) x += g.at(0, 0);
        break;
      }
    }
  }

  std::vector<Tensor2D> grads;
  grads.reserve(params_.size());
  for (NodeId p : params_) grads.push_back(to_f32(adjoint[p]));
  return grads;
}

}  // namespace loraguard
