#ifndef CDST_TENSOR_H_
#define CDST_TENSOR_H_

#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cdst {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// A trainable tensor and its accumulated gradient. Biases and norm gains
// are stored as 1 x n matrices.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, int rows, int cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  void fill_normal(std::mt19937_64& rng, double stddev);
};

// Binary parameter file: "CDSTPRM1", u64 count, then per tensor u32 name
// length, name, u64 rows, u64 cols and rows*cols little-endian doubles in
// row-major order.
void save_parameters(const std::string& path, std::span<const Parameter* const> params);
// Loads by name; every parameter must be present with a matching shape.
void load_parameters(const std::string& path, std::span<Parameter* const> params);

}  // namespace cdst

#endif  // CDST_TENSOR_H_
