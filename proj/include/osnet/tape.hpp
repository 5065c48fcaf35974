#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "osnet/tensor.hpp"

namespace osnet {

// Reverse-mode tape. Ops append backward closures in execution order, which
// is a valid topological order, so one reverse sweep propagates gradients.
// A tape is single-use per backward pass: gradients accumulate with +=.
template <typename T>
class TapeT {
public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

    size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    // Seeds d(loss)/d(loss)=1 and replays recorded ops in reverse. Every
    // requires_grad tensor reachable from the loss ends with its gradient
    // populated; unreachable ones stay zero.
    void backward(const TensorPtrT<T>& loss) {
        if (!loss) throw std::invalid_argument("backward: null loss tensor");
        if (loss->numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss->shape()));
        loss->grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<std::function<void()>> nodes_;
};

// Per-pass context threaded through ops. tape==nullptr disables recording
// (inference); training selects batch-statistics mode in the norm layers.
template <typename T>
struct CtxT {
    TapeT<T>* tape = nullptr;
    bool training = false;
};

}  // namespace osnet
