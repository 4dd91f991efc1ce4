#pragma once

// Reverse-mode autodiff on an eager, single-pass tape. Operations append one
// node per primitive; backward() replays the record once in reverse order and
// then marks the tape consumed. No higher-order derivatives.

#include <functional>
#include <optional>

#include "tformer/tensor.hpp"

namespace tformer {

template <class T>
class Tape;

// Value plus optional tape handle. id < 0 means constant (no gradient).
template <class T>
struct Var {
    Tensor<T> value;
    Tape<T>* tape = nullptr;
    int id = -1;

    Var() = default;
    /* implicit */ Var(Tensor<T> v) : value(std::move(v)) {}
    Var(Tensor<T> v, Tape<T>* t, int i) : value(std::move(v)), tape(t), id(i) {}

    bool tracked() const { return tape != nullptr && id >= 0; }
    const Shape& shape() const { return value.shape(); }
};

template <class T>
class Tape {
  public:
    // fn(grad_of_this_node, tape): accumulate into parents via add_grad().
    using BackwardFn = std::function<void(const std::vector<T>&, Tape<T>&)>;

    Var<T> leaf(Tensor<T> value, bool is_param = false) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{value.shape(), nullptr, is_param});
        grads_.emplace_back();
        return Var<T>(std::move(value), this, id);
    }

    Var<T> param(Tensor<T> value) { return leaf(std::move(value), true); }

    Var<T> node(Tensor<T> value, BackwardFn fn) {
        int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{value.shape(), std::move(fn), false});
        grads_.emplace_back();
        return Var<T>(std::move(value), this, id);
    }

    // Gradient buffer for node `id`, zero-initialized on first touch.
    std::vector<T>& grad_buf(int id) {
        auto& g = grads_.at(static_cast<size_t>(id));
        if (!g) g.emplace(static_cast<size_t>(numel(nodes_[static_cast<size_t>(id)].shape)), T(0));
        return *g;
    }

    void add_grad(int id, const std::vector<T>& delta) {
        if (id < 0) return; // constant parent
        auto& g = grads_.at(static_cast<size_t>(id));
        const size_t want =
            static_cast<size_t>(numel(nodes_[static_cast<size_t>(id)].shape));
        check(delta.size() == want, "Tape::add_grad: gradient size mismatch");
        if (!g) {
            g.emplace(delta);
            return;
        }
        for (size_t i = 0; i < want; ++i) (*g)[i] += delta[i];
    }

    // First contribution to a node adopts the buffer outright; later ones sum.
    void add_grad(int id, std::vector<T>&& delta) {
        if (id < 0) return; // constant parent
        auto& g = grads_.at(static_cast<size_t>(id));
        const size_t want =
            static_cast<size_t>(numel(nodes_[static_cast<size_t>(id)].shape));
        check(delta.size() == want, "Tape::add_grad: gradient size mismatch");
        if (!g) {
            g.emplace(std::move(delta));
            return;
        }
        for (size_t i = 0; i < want; ++i) (*g)[i] += delta[i];
    }

    // Seeds d(loss)/d(loss) = 1 and replays the record. Consumes the tape:
    // a second backward() is a contract error.
    void backward(const Var<T>& loss) {
        check(!consumed_, "Tape::backward: tape already consumed");
        check(loss.tape == this, "Tape::backward: loss is not on this tape");
        check(numel(loss.shape()) == 1, "Tape::backward: loss must be scalar");
        consumed_ = true;
        grad_buf(loss.id)[0] = T(1);
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            auto& n = nodes_[static_cast<size_t>(id)];
            if (!n.backward) continue;
            auto& g = grads_[static_cast<size_t>(id)];
            if (!g) continue; // node does not influence the loss
            n.backward(*g, *this);
            if (id != loss.id) g->clear(), g->shrink_to_fit(), grads_[static_cast<size_t>(id)].reset();
        }
    }

    bool has_grad(const Var<T>& v) const {
        return v.id >= 0 && grads_.at(static_cast<size_t>(v.id)).has_value();
    }

    // Gradient of the loss w.r.t. `v` (zeros if the value never influenced it).
    Tensor<T> grad(const Var<T>& v) const {
        check(v.tape == this, "Tape::grad: var is not on this tape");
        check(consumed_, "Tape::grad: call backward() first");
        const auto& g = grads_.at(static_cast<size_t>(v.id));
        if (!g) return Tensor<T>::zeros(v.shape());
        return Tensor<T>(v.shape(), *g);
    }

    bool consumed() const { return consumed_; }
    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Shape shape;
        BackwardFn backward;
        bool is_param;
    };
    std::vector<Node> nodes_;
    std::vector<std::optional<std::vector<T>>> grads_;
    bool consumed_ = false;
};

} // namespace tformer
