// Trains the LSTM baseline on a TRAC-2 style split: train_lstm <train.csv> <test.csv> [epochs]
#include <iostream>

#include "aggro/evaluation.hpp"
#include "aggro/models.hpp"

using namespace aggro;

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: train_lstm <train.csv> <test.csv> [epochs]\n";
    return 2;
  }
  try {
    const Corpus all = load_corpus(argv[1], Language::en, Split::training, ColumnMap::trac2());
    const Corpus test = load_corpus(argv[2], Language::en, Split::testing, ColumnMap::trac2());
    std::cout << "training " << distribution(all) << "\ntesting  " << distribution(test) << '\n';

    ModelSpec spec = ModelSpec::make(ModelKind::lstm, Language::en);
    if (argc > 3) spec.hp.epochs = std::stoul(argv[3]);
    auto [train_split, validation] = split_train_validation(all, 0.1, 1);
    auto model = build_classifier(spec, 1);
    const auto run = train(*model, train_split, validation, spec, 1);
    for (std::size_t e = 0; e < run.epochs(); ++e)
      std::cout << "epoch " << e + 1 << "  loss " << run.train_loss[e] << "  val acc " << run.val_accuracy[e] << '\n';

    const auto r = evaluate(*model, test, all, DatasetVariant::raw);
    std::cout << "accuracy " << r.accuracy << "  precision " << r.precision << "  recall " << r.recall << "  f1 " << r.f1
              << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
