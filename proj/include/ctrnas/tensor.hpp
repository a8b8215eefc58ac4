#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace ctrnas {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major array of rank 1..3. 2D tensors are [B x S], 3D are [B x N x D].
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rank() const { return shape.size(); }
  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return data[(i * shape[1] + j) * shape[2] + k]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return data[(i * shape[1] + j) * shape[2] + k]; }

  bool all_finite() const;
  bool operator==(const Tensor& o) const = default;
};

}  // namespace ctrnas
