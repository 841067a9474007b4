#include "attngan/autograd.hpp"

#include <unordered_set>

namespace attngan {

template <typename T>
void Tape<T>::record(Node<T> node) {
  if (consumed_) {
    throw StateError("record on a consumed tape (op " + node.op + ")");
  }
  nodes_.push_back(std::move(node));
}

template <typename T>
Tape<T>*& active_tape_slot() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

template <typename T>
Tape<T>* active_tape() {
  return active_tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>* tape) : previous_(active_tape_slot<T>()) {
  active_tape_slot<T>() = tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_tape_slot<T>() = previous_;
}

template <typename T>
GradientMap<T> backward(Tape<T>& tape, const BasicTensor<T>& loss) {
  if (tape.consumed()) {
    throw StateError("backward called twice on the same tape");
  }
  if (loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  GradientMap<T> result;
  if (!loss.requires_grad()) {
    tape.mark_consumed();
    return result;
  }
  if (loss.is_leaf()) {
    result.insert(loss, BasicTensor<T>::full(loss.shape(), T(1)));
    tape.mark_consumed();
    return result;
  }

  const auto& nodes = tape.nodes();
  bool found = false;
  for (const auto& node : nodes) {
    if (node.output.id() == loss.id()) {
      found = true;
      break;
    }
  }
  if (!found) {
    throw ContractError("backward: loss was not produced on this tape");
  }

  std::unordered_map<const void*, std::vector<T>> grads;
  grads[loss.id()] = std::vector<T>(1, T(1));

  std::vector<BasicTensor<T>> leaves;
  std::unordered_set<const void*> seen_leaves;
  std::vector<std::vector<T>*> slots;

  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const auto& node = *it;
    for (const auto& in : node.inputs) {
      if (in.defined() && in.requires_grad() && in.is_leaf() && seen_leaves.insert(in.id()).second) {
        leaves.push_back(in);
      }
    }
    auto out_it = grads.find(node.output.id());
    if (out_it == grads.end()) {
      continue;
    }
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const auto& in = node.inputs[i];
      if (!in.defined() || !in.requires_grad()) {
        continue;
      }
      auto& buf = grads[in.id()];
      if (buf.empty()) {
        buf.assign(static_cast<std::size_t>(in.numel()), T(0));
      }
      slots[i] = &buf;
    }
    // Insertions above may rehash, which invalidates iterators but not references.
    out_it = grads.find(node.output.id());
    node.backward(std::span<const T>(out_it->second), std::span<std::vector<T>* const>(slots));
    grads.erase(node.output.id());
  }

  for (const auto& leaf : leaves) {
    auto git = grads.find(leaf.id());
    std::vector<T> values = git != grads.end() ? std::move(git->second)
                                               : std::vector<T>(static_cast<std::size_t>(leaf.numel()), T(0));
    result.insert(leaf, BasicTensor<T>(leaf.shape(), std::move(values)));
  }
  tape.mark_consumed();
  return result;
}

template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();
template GradientMap<float> backward(Tape<float>&, const BasicTensor<float>&);
template GradientMap<double> backward(Tape<double>&, const BasicTensor<double>&);

}  // namespace attngan
