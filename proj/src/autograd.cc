#include "natseg/autograd.h"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace natseg {
namespace {
thread_local Tape* g_active_tape = nullptr;
}  // namespace

void apply_thread_limit_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("NATSEG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  if (consumed_) throw StateError("tape already consumed by backward(); reset it first");
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& root) {
  if (consumed_) {
    throw StateError("backward() called twice on the same tape without reset()");
  }
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward() root must be scalar-shaped, got " +
                     (root.defined() ? root.shape().str() : std::string("undefined")));
  }
  if (!root.requires_grad()) {
    throw StateError("backward() root does not depend on any parameter");
  }
  root.impl()->ensure_grad()[0] += Real{1};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    // Skip nodes that no gradient reached.
    if (!it->output.has_grad()) continue;
    it->backward();
  }
  consumed_ = true;
  // Closures pin intermediate activations; drop them now.
  nodes_.clear();
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(const Shape& shape, bool record) {
  Tensor out = Tensor::create(shape);
  if (record) out.set_requires_grad(true);
  return out;
}

void backward(const Tensor& root, Tape& tape) { tape.backward(root); }

}  // namespace natseg
