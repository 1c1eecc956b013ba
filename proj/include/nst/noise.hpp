#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "nst/common.hpp"
#include "nst/ontology.hpp"
#include "nst/text.hpp"

namespace nst {

struct NoiseConfig {
  double p = 0.3;               // noise threshold: per-active-slot replacement probability
  bool allow_none_noise = false;  // when true, "none" is a legal replacement value

  void validate() const;
};

struct NoisedState {
  DialogueState state;                 // B+_{t-1}
  std::set<std::string> replaced;      // exactly the slots whose value changed
};

/// For each active slot draws a ~ U[0,1); if a < p the value is replaced by a
/// uniform draw from the slot's candidates minus the current value (and minus
/// "none" unless allow_none_noise). Slots with no remaining candidates are
/// skipped. Inactive slots are never touched.
NoisedState noise_state(const DialogueState& state, const Ontology& ontology,
                        const NoiseConfig& config, rng::Engine& eng);

struct NoisedPair {
  ContextInput original;  // X_t
  ContextInput noised;    // X_t^+
  std::set<std::string> replaced;
};

/// Builds X_t and X_t^+ from the same turn fields; the two differ only inside
/// the replaced slots' value spans.
NoisedPair make_noised_pair(const TurnContextFields& fields, const Ontology& ontology,
                            const Vocabulary& vocab, int max_len, const NoiseConfig& config,
                            rng::Engine& eng);

}  // namespace nst
