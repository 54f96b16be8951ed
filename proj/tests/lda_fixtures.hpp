#pragma once

#include "crisis/lda.hpp"

namespace crisis::testing {

// Planted corpus: `topics` disjoint vocabulary blocks of `block` words each.
// Every document draws 90% of its tokens from one block and the rest from
// another, with uniform word choice inside a block.
struct PlantedCorpus {
  lda::BowCorpus corpus;
  std::vector<int> planted_topic;  // dominant block per document
  int block = 0;
};

inline PlantedCorpus make_planted_corpus(std::uint64_t seed, std::size_t docs, int topics = 2, int block = 20,
                                         int doc_len = 40) {
  PlantedCorpus out;
  out.block = block;
  for (int t = 0; t < topics; ++t)
    for (int w = 0; w < block; ++w) out.corpus.terms.push_back("t" + std::to_string(t) + "w" + std::to_string(w));
  auto rng = make_stream(seed, 0xC0FFEEu);
  for (std::size_t d = 0; d < docs; ++d) {
    const int main = static_cast<int>(uniform_index(rng, topics));
    int other = topics > 1 ? static_cast<int>(uniform_index(rng, topics - 1)) : main;
    if (topics > 1 && other >= main) ++other;
    std::vector<int> words;
    for (int i = 0; i < doc_len; ++i) {
      const int t = uniform01(rng) < 0.9 ? main : other;
      words.push_back(t * block + static_cast<int>(uniform_index(rng, block)));
    }
    char id[32];
    std::snprintf(id, sizeof id, "d%05zu", d);
    out.corpus.doc_ids.emplace_back(id);
    out.corpus.docs.push_back(std::move(words));
    out.planted_topic.push_back(main);
  }
  return out;
}

}  // namespace crisis::testing
