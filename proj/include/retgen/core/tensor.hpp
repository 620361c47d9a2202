#pragma once

#include <Eigen/Core>

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace retgen {

/// Dense f64 tensor. Everything in the library is rank <= 2; scalars are 1x1
/// and vectors are 1xn rows. Storage is row-major, so `data()` walks the
/// values in the same order as the shape.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;
using Shape = std::array<Index, 2>;

inline Shape shape_of(const Tensor& t) { return {t.rows(), t.cols()}; }

inline std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

inline bool all_finite(const Tensor& t) { return t.allFinite(); }

/// Base error for everything the library rejects.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A named trainable tensor. Models hold these by value; pointers to them are
/// only valid for the lifetime of the owning model.
struct Parameter {
  std::string id;
  Tensor value;
  bool requires_grad = true;
};

/// Stable view over a model's parameters, in declaration order. Ordering
/// matters: reductions and checkpoints iterate in this order.
using ParameterList = std::vector<Parameter*>;
using ConstParameterList = std::vector<const Parameter*>;

}  // namespace retgen
