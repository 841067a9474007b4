#ifndef ATTNGAN_AUTOGRAD_HPP_
#define ATTNGAN_AUTOGRAD_HPP_

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "attngan/tensor.hpp"

namespace attngan {

/// One recorded operation. `backward` accumulates (+=) the input gradients;
/// entries of `grads` are null for inputs that need no gradient and may alias
/// when the same tensor appears twice among the inputs.
template <typename T>
struct Node {
  std::string op;
  std::vector<BasicTensor<T>> inputs;
  BasicTensor<T> output;
  std::function<void(std::span<const T> grad_out, std::span<std::vector<T>* const> grads)> backward;
};

/// Execution-ordered record of operations. A tape can be differentiated once.
template <typename T>
class Tape {
 public:
  void record(Node<T> node);

  const std::vector<Node<T>>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  /// Releases the recorded graph; further record/backward calls fail.
  void mark_consumed() {
    consumed_ = true;
    nodes_.clear();
  }

 private:
  std::vector<Node<T>> nodes_;
  bool consumed_ = false;
};

/// Tape that ops on this thread record into, or null when recording is off.
template <typename T>
Tape<T>* active_tape();

/// Installs a tape as the active one for the current thread; passing nullptr
/// disables recording inside the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <typename T>
class GradientMap {
 public:
  const BasicTensor<T>* find(const BasicTensor<T>& leaf) const {
    auto it = grads_.find(leaf.id());
    return it == grads_.end() ? nullptr : &it->second.second;
  }
  const BasicTensor<T>& at(const BasicTensor<T>& leaf) const {
    if (const auto* g = find(leaf)) {
      return *g;
    }
    throw LookupError("no gradient recorded for the requested tensor");
  }
  bool contains(const BasicTensor<T>& leaf) const { return grads_.count(leaf.id()) != 0; }
  std::size_t size() const { return grads_.size(); }

  void insert(const BasicTensor<T>& leaf, BasicTensor<T> grad) {
    grads_[leaf.id()] = {leaf, std::move(grad)};
  }

 private:
  // Keeps the leaf handle alive so its address cannot be reused as a key.
  std::unordered_map<const void*, std::pair<BasicTensor<T>, BasicTensor<T>>> grads_;
};

/// Reverse sweep over `tape` seeded with d(loss)/d(loss) = 1. Every leaf that
/// requires a gradient and feeds a recorded node receives an entry, zero when
/// no path reaches the loss. The tape is consumed afterwards.
template <typename T>
GradientMap<T> backward(Tape<T>& tape, const BasicTensor<T>& loss);

/// backward() on the currently active tape.
template <typename T>
GradientMap<T> backward(const BasicTensor<T>& loss) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) {
    throw StateError("backward: no active tape");
  }
  return backward(*tape, loss);
}

}  // namespace attngan

#endif  // ATTNGAN_AUTOGRAD_HPP_
