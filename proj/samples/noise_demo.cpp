// Prints noisy copies of a comment: noise_demo "<text>" [copies]
#include <iostream>

#include "aggro/augmentation.hpp"

using namespace aggro;

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: noise_demo \"<text>\" [copies]\n";
    return 2;
  }
  NoiseResources res;
  SynonymLexicon lex(Language::en);
  lex.add("good", {{"fine"}, {"nice"}});
  lex.add("bad", {{"awful"}, {"poor"}});
  lex.add("people", {{"folks"}});
  lex.add("stupid", {{"dumb"}, {"foolish"}});
  res.lexicons.emplace("default", lex);
  res.stopword_lists.emplace("default", std::vector<std::string>{"the", "a", "just", "really", "so"});

  NoiseConfig cfg;
  cfg.synonym_swap_prob = 0.4;
  cfg.stopword_insert_prob = 0.2;
  cfg.seed = 7;

  LabeledComment c;
  c.id = "demo";
  c.text = argv[1];
  c.label = Label::OAG;
  const std::size_t copies = argc > 2 ? std::stoul(argv[2]) : 5;
  std::cout << "original  " << c.text << '\n';
  for (std::size_t k = 0; k < copies; ++k) {
    const auto n = add_noise(c, cfg, res, k);
    std::cout << n.id << "  " << n.text << '\n';
  }
}
