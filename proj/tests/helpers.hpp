#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>

#include "nst/corpus.hpp"
#include "nst/ontology.hpp"
#include "nst/text.hpp"

namespace testutil {

/// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("nst-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str(const std::string& name = "") const {
    return name.empty() ? path.string() : (path / name).string();
  }
};

inline nst::Ontology tiny_ontology() {
  return nst::Ontology({
      {"hotel-area", {"north", "south", "east"}},
      {"train-day", {"monday", "sunday"}},
  });
}

inline nst::DialogueState make_state(const nst::Ontology& ontology,
                                     const std::map<std::string, std::string>& sparse) {
  return nst::state_from_sparse(sparse, ontology);
}

inline std::vector<nst::Dialogue> tiny_corpus(const nst::Ontology& ontology) {
  nst::Dialogue d1;
  d1.id = "d1";
  d1.turns.push_back({"how can i help you", "i want train day to be sunday",
                      make_state(ontology, {{"train-day", "sunday"}})});
  d1.turns.push_back({"anything else", "actually change train day to monday",
                      make_state(ontology, {{"train-day", "monday"}})});
  nst::Dialogue d2;
  d2.id = "d2";
  d2.turns.push_back({"what do you need", "i want hotel area to be north",
                      make_state(ontology, {{"hotel-area", "north"}})});
  d2.turns.push_back({"noted , anything else", "no that is all",
                      make_state(ontology, {{"hotel-area", "north"}})});
  return {d1, d2};
}

inline nst::Vocabulary tiny_vocab(const nst::Ontology& ontology,
                                  const std::vector<nst::Dialogue>& corpus) {
  return nst::build_vocab(corpus, ontology);
}

}  // namespace testutil
