#ifndef NATSEG_AUTOGRAD_H_
#define NATSEG_AUTOGRAD_H_

#include <functional>
#include <vector>

#include "natseg/tensor.h"

namespace natseg {

// Ordered record of differentiable operations. Ops append to the tape that is
// active on the calling thread (see TapeScope); with no active tape nothing
// is recorded and forward passes run graph-free.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

  // Seeds d(root)/d(root) = 1 and replays nodes in reverse order. The root
  // must hold exactly one value. A second call without reset() throws.
  void backward(const Tensor& root);

  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Makes `tape` the active tape of the current thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording for the scope lifetime (inference).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

// True when an active tape exists and any input requires grad.
bool should_record(std::initializer_list<const Tensor*> inputs);

// Allocates an output tensor and, when recording, marks it as requiring
// grad. Ops call this, fill the values, then register their backward rule.
Tensor make_output(const Shape& shape, bool record);

// Convenience: backward(root) with the active tape.
void backward(const Tensor& root, Tape& tape);

}  // namespace natseg

#endif  // NATSEG_AUTOGRAD_H_
