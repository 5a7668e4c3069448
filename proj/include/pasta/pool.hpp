#pragma once

#include <vector>

#include "pasta/errors.hpp"
#include "pasta/tokenizer.hpp"

namespace pasta {

/// One entry of the interleaved KV-cache pool.
struct Slot {
    TokenId token = -1;
    int thread_id = 0;       // thread that decoded (or received) the token
    int owner = 0;           // current owner; fork slots transfer to main at release
    int position_id = 0;
    int logical_rank = -1;   // canonical-order rank, assigned at finalize
    bool inserted = false;   // interpreter-inserted (free) rather than decoded
};

/// Single pre-allocated pool shared by all decoding threads. Slots are
/// appended strictly in decode order; overflow is an error, never truncation.
class KvPool {
public:
    explicit KvPool(int capacity) : capacity_(capacity) {}

    int append(TokenId token, int thread_id, int position_id, bool inserted) {
        if (static_cast<int>(slots_.size()) >= capacity_)
            fail(Errc::PoolOverflow,
                 "KV pool exceeded max_sequence_length " + std::to_string(capacity_));
        slots_.push_back(Slot{token, thread_id, thread_id, position_id, -1, inserted});
        return static_cast<int>(slots_.size()) - 1;
    }

    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(slots_.size()); }
    const Slot& operator[](int i) const { return slots_[i]; }
    Slot& operator[](int i) { return slots_[i]; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    int capacity_;
    std::vector<Slot> slots_;
};

}  // namespace pasta
