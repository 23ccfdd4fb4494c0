#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vot/dataset.hpp"
#include "vot/model.hpp"

namespace vot {

// Paper-scale defaults: 100 epochs, batch 4, Adam at 1e-4 for the MaxViT
// family and 1e-5 for SwinT. Desk runs override epochs/lr explicitly.
struct TrainOptions {
    VOTConfig model;
    int epochs = 100;
    int batch = 4;
    AdamConfig adam{1e-4, 0.9, 0.999, 1e-8};
    std::uint64_t seed = 0;
    int threads = 2;  // clips of a batch run on separate tapes
    std::function<void(int epoch, double loss)> on_epoch;
};

double default_lr(SpatialVariant v);

struct TrainResult {
    ParameterStore<float> params;
    std::vector<double> epoch_loss;
    double wall_seconds = 0;
};

// Seeded shuffling each epoch, incomplete final batch dropped, per-batch
// forward/backward/adam_step. Deterministic per (options, dataset).
TrainResult train(const TrainOptions& opt, const LoadedDataset& trainset,
                  const ParameterStore<float>* warm_start = nullptr);

// Mean prediction error over a split; parameters are read-only.
double evaluate(const VOTConfig& config, ParameterStore<float>& params,
                const LoadedDataset& evalset, int threads = 2);

}  // namespace vot
