#include "nst/noise.hpp"

#include "nst/common.hpp"

namespace nst {

void NoiseConfig::validate() const {
  if (p < 0.0 || p > 1.0) fail("noise config: threshold must be in [0,1]");
}

NoisedState noise_state(const DialogueState& state, const Ontology& ontology,
                        const NoiseConfig& config, rng::Engine& eng) {
  config.validate();
  NoisedState out;
  out.state = state;
  for (const auto& slot : active_slots(state)) {
    double a = eng.uniform();
    if (a >= config.p) continue;
    const std::string& current = state.value_of(slot);
    std::vector<std::string> candidates;
    for (const auto& v : ontology.candidates(slot)) {
      if (v == current) continue;
      if (!config.allow_none_noise && v == kNoneValue) continue;
      candidates.push_back(v);
    }
    if (candidates.empty()) continue;  // cannot be noised
    out.state.assignments[slot] = candidates[eng.index(candidates.size())];
    out.replaced.insert(slot);
  }
  return out;
}

NoisedPair make_noised_pair(const TurnContextFields& fields, const Ontology& ontology,
                            const Vocabulary& vocab, int max_len, const NoiseConfig& config,
                            rng::Engine& eng) {
  NoisedState ns = noise_state(fields.prev_state, ontology, config, eng);
  NoisedPair out;
  out.original = build_context_input(fields, vocab, max_len);
  TurnContextFields noised_fields = fields;
  noised_fields.prev_state = ns.state;
  out.noised = build_context_input(noised_fields, vocab, max_len);
  out.replaced = std::move(ns.replaced);
  return out;
}

}  // namespace nst
