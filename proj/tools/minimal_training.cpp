// Smallest end-to-end use of the library: build the clean synthetic dataset,
// train the default model for a few epochs and report held-out accuracy.

#include <cstdlib>
#include <iostream>

#include "sfi/model.hpp"
#include "sfi/training.hpp"

int main(int argc, char** argv) {
  sfi::SyntheticConfig data_cfg;
  const auto data = sfi::make_synthetic(data_cfg);

  sfi::TrainConfig train_cfg;
  train_cfg.epochs = argc > 1 ? static_cast<std::size_t>(std::strtoul(argv[1], nullptr, 10)) : 5;

  sfi::ModelConfig model_cfg;
  model_cfg.num_classes = data_cfg.classes;
  sfi::Rng rng(train_cfg.seed);
  sfi::SfiNet model(model_cfg, rng);

  sfi::train(model, data, train_cfg, [](const sfi::EpochMetrics& m) {
    std::cout << "epoch " << m.epoch << ' ' << m.split << " loss " << m.loss << " acc " << m.accuracy << '\n';
  });
  const auto result = sfi::evaluate(model, data.test, train_cfg.xi);
  std::cout << "held-out accuracy " << result.accuracy << '\n';
}
