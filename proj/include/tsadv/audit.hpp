#pragma once

// Read counters for information that black-box attacks must never touch:
// ground-truth labels and teacher probability distributions. Counting is
// active only while an audit::Scope is alive on the current thread.

#include <cstddef>

namespace tsadv::audit {

struct Counters {
  std::size_t label_reads = 0;
  std::size_t teacher_prob_reads = 0;
};

namespace detail {
inline thread_local Counters* active = nullptr;
}

class Scope {
public:
  Scope() : prev_(detail::active) { detail::active = &counters_; }
  ~Scope() { detail::active = prev_; }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

  const Counters& counters() const noexcept { return counters_; }

private:
  Counters counters_;
  Counters* prev_;
};

inline void note_label_read() noexcept {
  if (detail::active) ++detail::active->label_reads;
}

inline void note_teacher_prob_read() noexcept {
  if (detail::active) ++detail::active->teacher_prob_reads;
}

}  // namespace tsadv::audit
