#include "natseg/ops.h"

#include <numeric>

#include "natseg/autograd.h"

namespace natseg {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

void accumulate(const Tensor& target, std::span<const Real> g) {
  if (!target.requires_grad()) return;
  auto dst = target.mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool rec = should_record({&a, &b});
  Tensor out = make_output(a.shape(), rec);
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  const std::int64_t n = out.numel();
#pragma omp parallel for schedule(static) if (n > 65536)
  for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
  if (rec) {
    Tape::active()->record({a, b}, out, [a, b, out]() mutable {
      accumulate(a, out.grad());
      accumulate(b, out.grad());
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool rec = should_record({&a, &b});
  Tensor out = make_output(a.shape(), rec);
  auto o = out.mutable_data();
  for (std::int64_t i = 0; i < out.numel(); ++i) o[i] = a.data()[i] * b.data()[i];
  if (rec) {
    Tape::active()->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto da = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto db = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, Real factor) {
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), rec);
  auto o = out.mutable_data();
  for (std::int64_t i = 0; i < out.numel(); ++i) o[i] = x.data()[i] * factor;
  if (rec) {
    Tape::active()->record({x}, out, [x, out, factor]() mutable {
      auto g = out.grad();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const bool rec = should_record({&x});
  Tensor out = make_output(Shape{}, rec);
  double s = 0.0;
  for (Real v : x.data()) s += v;
  out.mutable_data()[0] = static_cast<Real>(s);
  if (rec) {
    Tape::active()->record({x}, out, [x, out]() mutable {
      const Real g = out.grad()[0];
      for (auto& d : x.mutable_grad()) d += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), static_cast<Real>(1.0 / static_cast<double>(x.numel())));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  return concat_channels(std::vector<Tensor>{a, b});
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts.front().shape();
  int channels = 0;
  bool rec = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: spatial/batch mismatch " + s0.str() +
                       " vs " + s.str());
    }
    channels += s.c;
    rec = rec || should_record({&p});
  }
  const Shape os{s0.n, channels, s0.h, s0.w};
  Tensor out = make_output(os, rec);
  const std::int64_t plane = os.plane();
  auto o = out.mutable_data();
  for (int n = 0; n < os.n; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const std::int64_t len = p.shape().c * plane;
      auto src = p.data().subspan(static_cast<std::size_t>(n * len), static_cast<std::size_t>(len));
      std::copy(src.begin(), src.end(),
                o.begin() + static_cast<std::ptrdiff_t>((static_cast<std::int64_t>(n) * channels + c0) * plane));
      c0 += p.shape().c;
    }
  }
  if (rec) {
    std::vector<Tensor> inputs = parts;
    Tape::active()->record(inputs, out, [inputs, out, channels, plane]() mutable {
      auto g = out.grad();
      const int batch = out.shape().n;
      int c0 = 0;
      for (auto& p : inputs) {
        const std::int64_t len = p.shape().c * plane;
        if (p.requires_grad()) {
          auto dst = p.mutable_grad();
          for (int n = 0; n < batch; ++n) {
            const std::int64_t from = (static_cast<std::int64_t>(n) * channels + c0) * plane;
            for (std::int64_t i = 0; i < len; ++i) dst[n * len + i] += g[from + i];
          }
        }
        c0 += p.shape().c;
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int begin, int count) {
  const Shape& s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + s.str());
  }
  const bool rec = should_record({&x});
  const Shape os{s.n, count, s.h, s.w};
  Tensor out = make_output(os, rec);
  const std::int64_t plane = s.plane();
  auto o = out.mutable_data();
  for (int n = 0; n < s.n; ++n) {
    const std::int64_t from = (static_cast<std::int64_t>(n) * s.c + begin) * plane;
    const std::int64_t to = static_cast<std::int64_t>(n) * count * plane;
    std::copy_n(x.data().begin() + from, count * plane, o.begin() + to);
  }
  if (rec) {
    Tape::active()->record({x}, out, [x, out, begin, count, plane]() mutable {
      const Shape& s = x.shape();
      auto g = out.grad();
      auto dx = x.mutable_grad();
      for (int n = 0; n < s.n; ++n) {
        const std::int64_t from = (static_cast<std::int64_t>(n) * s.c + begin) * plane;
        const std::int64_t to = static_cast<std::int64_t>(n) * count * plane;
        for (std::int64_t i = 0; i < count * plane; ++i) dx[from + i] += g[to + i];
      }
    });
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& x, const std::vector<int>& sizes) {
  const int total = std::accumulate(sizes.begin(), sizes.end(), 0);
  if (total != x.shape().c) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) +
                     " but tensor has " + std::to_string(x.shape().c) + " channels");
  }
  std::vector<Tensor> parts;
  int begin = 0;
  for (int s : sizes) {
    parts.push_back(slice_channels(x, begin, s));
    begin += s;
  }
  return parts;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ShapeError("stack_batch: no inputs");
  const Shape s0 = items.front().shape();
  for (const auto& t : items) {
    if (t.shape() != s0 || s0.n != 1) {
      throw ShapeError("stack_batch: expected identical (1,c,h,w) items");
    }
  }
  std::vector<Real> values;
  values.reserve(static_cast<std::size_t>(s0.numel() * static_cast<std::int64_t>(items.size())));
  for (const auto& t : items) values.insert(values.end(), t.data().begin(), t.data().end());
  return Tensor::from_data(Shape{static_cast<int>(items.size()), s0.c, s0.h, s0.w},
                           std::move(values));
}

}  // namespace natseg
