#include "margin_audit/tensor.hpp"

#include <cmath>
#include <numeric>

namespace margin_audit {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_product(shape) != data.size()) {
    throw NumericsError("tensor shape " + shape_string(shape) + " does not match " +
                        std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> s) {
  const auto n = shape_product(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw NumericsError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return matrix(rows.size(), cols, std::move(values));
}

std::size_t Tensor::rows() const { return shape.size() == 2 ? shape[0] : 1; }

std::size_t Tensor::cols() const { return shape.empty() ? 1 : shape.back(); }

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace margin_audit
