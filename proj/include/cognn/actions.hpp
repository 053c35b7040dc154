#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cognn/error.hpp"
#include "cognn/tensor.hpp"

namespace cognn {

/// Node actions. The integer value is the column in every per-node
/// 4-vector (probabilities, straight-through vectors, logits).
enum class Action : std::uint8_t { standard = 0, listen = 1, broadcast = 2, isolate = 3 };

inline constexpr std::size_t kNumActions = 4;
inline constexpr std::array<Action, kNumActions> kAllActions{Action::standard, Action::listen,
                                                             Action::broadcast, Action::isolate};

inline constexpr bool broadcasts(Action a) { return a == Action::standard || a == Action::broadcast; }
inline constexpr bool listens(Action a) { return a == Action::standard || a == Action::listen; }

inline char action_letter(Action a) { return "SLBI"[static_cast<int>(a)]; }

inline Action action_from_letter(char c) {
  switch (c) {
    case 'S': return Action::standard;
    case 'L': return Action::listen;
    case 'B': return Action::broadcast;
    case 'I': return Action::isolate;
    default: throw ValidationError(std::string("unknown action letter '") + c + "'");
  }
}

/// Per-node action state for one layer.
///
/// `vectors` is the straight-through tensor: its forward value is exactly
/// one-hot per row and argmax equals `actions[v]`; gradients reach the soft
/// Gumbel-softmax relaxation behind it. `probs` is p_v = softmax(logits).
struct ActionField {
  Tensor probs;
  Tensor vectors;
  std::vector<Action> actions;
  std::vector<double> temperature;  // per-node tau used for the relaxation; empty when forced

  std::size_t num_nodes() const noexcept { return actions.size(); }

  /// Hard, untracked field with one-hot probabilities.
  static ActionField fixed(std::vector<Action> acts) {
    const std::size_t n = acts.size();
    std::vector<double> onehot(n * kNumActions, 0.0);
    for (std::size_t v = 0; v < n; ++v) onehot[v * kNumActions + static_cast<std::size_t>(acts[v])] = 1.0;
    ActionField f;
    f.probs = Tensor::from({n, kNumActions}, onehot);
    f.vectors = Tensor::from({n, kNumActions}, std::move(onehot));
    f.actions = std::move(acts);
    return f;
  }

  static ActionField uniform(std::size_t n, Action a) { return fixed(std::vector<Action>(n, a)); }
};

}  // namespace cognn
