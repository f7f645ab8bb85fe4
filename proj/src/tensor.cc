#include "natseg/tensor.h"

#include <cmath>
#include <sstream>

#include "natseg/rng.h"

namespace natseg {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

std::span<Real> TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), Real{0});
  return grad;
}

void validate_shape(const Shape& shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw ShapeError("invalid shape " + shape.str() +
                     ": every dimension must be >= 1");
  }
}

namespace {

struct Filler {
  std::vector<Real>& out;

  void operator()(const fill::Zeros&) const {
    std::fill(out.begin(), out.end(), Real{0});
  }
  void operator()(const fill::Ones&) const {
    std::fill(out.begin(), out.end(), Real{1});
  }
  void operator()(const fill::Constant& c) const {
    std::fill(out.begin(), out.end(), c.value);
  }
  void operator()(const fill::Uniform& u) const {
    Rng rng(u.seed);
    for (auto& v : out) v = static_cast<Real>(rng.uniform(u.lo, u.hi));
  }
  void operator()(const fill::HeNormal& h) const {
    if (h.fan_in <= 0) throw ConfigError("he_normal fan_in must be > 0");
    Rng rng(h.seed);
    const double stddev = std::sqrt(2.0 / h.fan_in);
    for (auto& v : out) v = static_cast<Real>(stddev * rng.normal());
  }
  void operator()(const fill::TruncatedNormal& t) const {
    Rng rng(t.seed);
    for (auto& v : out) v = static_cast<Real>(t.stddev * rng.truncated_normal());
  }
};

}  // namespace

Tensor Tensor::create(Shape shape, const FillPolicy& policy,
                      bool requires_grad) {
  validate_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.resize(static_cast<std::size_t>(shape.numel()));
  std::visit(Filler{impl->data}, policy);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> values,
                         bool requires_grad) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("from_data: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape.str());
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

void Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
}

void Tensor::zero_grad() const {
  if (impl_->requires_grad) {
    impl_->grad.assign(impl_->data.size(), Real{0});
  } else {
    impl_->grad.clear();
  }
}

Real Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape().str());
  }
  return impl_->data[0];
}

Real Tensor::at(int n, int c, int h, int w) const {
  return impl_->data[static_cast<std::size_t>(offset(n, c, h, w))];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

void check_finite(const Tensor& t, const std::string& what) {
  for (Real v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + what);
    }
  }
}

}  // namespace natseg
