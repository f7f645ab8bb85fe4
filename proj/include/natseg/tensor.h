#ifndef NATSEG_TENSOR_H_
#define NATSEG_TENSOR_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "natseg/common.h"

namespace natseg {

// (n, c, h, w), row-major.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  std::int64_t plane() const { return static_cast<std::int64_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace fill {
struct Zeros {};
struct Ones {};
struct Constant {
  Real value;
};
struct Uniform {
  std::uint64_t seed;
  double lo;
  double hi;
};
struct HeNormal {
  std::uint64_t seed;
  double fan_in;
};
// Normal clipped at two standard deviations, scaled by stddev.
struct TruncatedNormal {
  std::uint64_t seed;
  double stddev;
};
}  // namespace fill

using FillPolicy = std::variant<fill::Zeros, fill::Ones, fill::Constant,
                                fill::Uniform, fill::HeNormal,
                                fill::TruncatedNormal>;

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  bool requires_grad = false;
  std::vector<Real> grad;  // empty until first accumulation

  std::span<Real> ensure_grad();
};

// Shared handle to a dense 4-D buffer. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor create(Shape shape, const FillPolicy& policy = fill::Zeros{},
                       bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> values,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->shape.numel(); }

  std::span<const Real> data() const { return impl_->data; }
  // Writable view. Only for construction and optimizer updates.
  std::span<Real> mutable_data() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Real> grad() const { return impl_->grad; }
  std::span<Real> mutable_grad() const { return impl_->ensure_grad(); }
  void zero_grad() const;

  Real item() const;
  Real at(int n, int c, int h, int w) const;
  std::int64_t offset(int n, int c, int h, int w) const {
    const Shape& s = impl_->shape;
    return ((static_cast<std::int64_t>(n) * s.c + c) * s.h + h) * s.w + w;
  }

  // Deep copy of values; the copy is a fresh leaf without grad.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Throws ShapeError unless every component is >= 1.
void validate_shape(const Shape& shape);

// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace natseg

#endif  // NATSEG_TENSOR_H_
