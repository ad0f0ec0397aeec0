#pragma once

#include <chrono>
#include <type_traits>
#include <utility>

namespace hybrid {

template <class T>
struct Timed {
  T value;
  double seconds;
};

template <>
struct Timed<void> {
  double seconds;
};

/// Runs `action` and measures its wall-clock duration on the steady clock.
template <class F>
auto timed(F&& action) {
  using R = std::invoke_result_t<F>;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  if constexpr (std::is_void_v<R>) {
    std::forward<F>(action)();
    return Timed<void>{elapsed()};
  } else {
    R value = std::forward<F>(action)();
    const double s = elapsed();
    return Timed<R>{std::move(value), s};
  }
}

}  // namespace hybrid
