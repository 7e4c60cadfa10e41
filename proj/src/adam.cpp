#include "loraguard/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace loraguard {

AdamState::AdamState(const std::vector<Tensor2D>& params, AdamConfig cfg) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor2D& p : params) {
    m_.emplace_back(p.rows, p.cols);
    v_.emplace_back(p.rows, p.cols);
  }
}

bool AdamState::step(std::vector<Tensor2D>& params, const std::vector<Tensor2D>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("adam step: expected " + std::to_string(m_.size()) +
                                " tensors, got " + std::to_string(params.size()) + " params / " +
                                std::to_string(grads.size()) + " grads");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(m_[i]) || !grads[i].same_shape(m_[i])) {
      throw std::invalid_argument("adam step: tensor " + std::to_string(i) +
                                  " shape mismatch: param " + params[i].shape_str() + ", grad " +
                                  grads[i].shape_str() + ", state " + m_[i].shape_str());
    }
    if (!all_finite(grads[i])) {
      ++rejected_;
      return false;
    }
  }

  ++t_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    for (size_t j = 0; j < params[i].size(); ++j) {
      if (cfg_.weight_decay > 0.0f) {
        params[i].data[j] = static_cast<float>(
            params[i].data[j] * (1.0 - static_cast<double>(cfg_.learning_rate) * cfg_.weight_decay));
      }
      const double g = grads[i].data[j];
      const double m = b1 * m_[i].data[j] + (1.0 - b1) * g;
      const double v = b2 * v_[i].data[j] + (1.0 - b2) * g * g;
      m_[i].data[j] = static_cast<float>(m);
      v_[i].data[j] = static_cast<float>(v);
      const double m_hat = m / bias1;
      const double v_hat = v / bias2;
      params[i].data[j] = static_cast<float>(
          params[i].data[j] - cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.epsilon));
    }
  }
  return true;
}

}  // namespace loraguard
