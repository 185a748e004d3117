#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "cftamer/feedback.hpp"
#include "cftamer/rng.hpp"

namespace cftamer {

// Fixed-capacity FIFO of feedback events.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay buffer capacity must be positive");
    items_.reserve(capacity);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  void push(FeedbackEvent e) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(e));
    } else {
      items_[head_] = std::move(e);
      head_ = (head_ + 1) % capacity_;
    }
  }

  // i = 0 is the oldest retained event.
  const FeedbackEvent& operator[](std::size_t i) const {
    if (i >= items_.size()) throw std::out_of_range("replay buffer index");
    return items_[(head_ + i) % items_.size()];
  }

  // Uniform with replacement.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (empty()) throw std::logic_error("sampling from an empty replay buffer");
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(items_.size()));
    return idx;
  }

  std::vector<FeedbackEvent> ordered() const {
    std::vector<FeedbackEvent> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back((*this)[i]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<FeedbackEvent> items_;
  std::size_t head_ = 0;
};

}  // namespace cftamer
