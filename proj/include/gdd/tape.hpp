#pragma once
// Reverse-mode tape. Ops append a backward closure per primitive while a tape
// is in scope; backward() replays them in reverse and accumulates adjoints
// into Tensor::grad. A tape is an RAII scope: constructing one makes it the
// active tape for the current thread, so disjoint tapes on different threads
// never interact.
#include <functional>
#include <stdexcept>
#include <vector>

#include "gdd/tensor.hpp"

namespace gdd {

class Tape {
public:
    Tape() : prev_(current_) { current_ = this; }
    ~Tape() { current_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return current_; }

    void record(std::function<void()> backward_rule) {
        if (consumed_)
            throw std::logic_error("tape already consumed by backward(); make a new tape");
        nodes_.push_back(std::move(backward_rule));
    }

    std::size_t node_count() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays every recorded rule in reverse
    // order. Single use: rerunning a consumed tape is an error, not a no-op.
    void backward(const TensorPtr& loss) {
        if (consumed_) throw std::logic_error("tape already consumed by backward()");
        if (loss->size() != 1)
            throw std::invalid_argument("backward: loss must be a scalar tensor");
        consumed_ = true;
        loss->ensure_grad();
        loss->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    static thread_local Tape* current_;
    Tape* prev_;
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

}  // namespace gdd
