#include "vot/trainer.hpp"

#include <chrono>
#include <thread>

#include "vot/metrics.hpp"

namespace vot {

double default_lr(SpatialVariant v) { return v == SpatialVariant::SwinT ? 1e-5 : 1e-4; }

namespace {

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = rng.uniform_int(0, i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
}

// Forward + backward for one clip on its own tape; returns the loss and the
// per-parameter gradients.
struct ClipGrad {
    double loss = 0;
    std::map<std::string, Tensor<float>> grads;
};

ClipGrad clip_backward(const VotModel& model, ParameterStore<float>& store,
                       const LoadedClip& clip) {
    Tape<float> tape;
    Binder<float> bind(tape, store, true);
    Var<float> input = tape.leaf(clip.input, false, "clip");
    Var<float> pred = model.forward(bind, input);
    Var<float> loss = mse_loss(pred, clip.target);
    tape.backward(loss);
    ClipGrad out;
    out.loss = static_cast<double>(loss.val()[0]);
    for (const auto& [name, var] : bind.bound()) out.grads.emplace(name, tape.grad(var));
    return out;
}

// Runs fn(i) for i in [0, n) across `threads` workers with a static
// partition, so results land in deterministic slots.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i = t; i < n; i += threads) fn(i);
            } catch (...) {
                errors[static_cast<size_t>(t)] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

TrainResult train(const TrainOptions& opt, const LoadedDataset& trainset,
                  const ParameterStore<float>* warm_start) {
    const auto t0 = std::chrono::steady_clock::now();
    if (trainset.clips.empty()) throw ConfigError("train: dataset is empty");
    if (opt.batch < 1) throw ConfigError("train: batch size must be >= 1");
    VotModel model(opt.model);

    TrainResult result;
    if (warm_start) {
        for (const auto& [name, entry] : *warm_start) result.params.add(name, entry.value);
        if (result.params.scalar_count() != model.param_count())
            throw ConfigError("train: warm start parameters do not match the model config");
    } else {
        model.init_params(result.params, opt.seed);
    }

    const int n = static_cast<int>(trainset.clips.size());
    const int batches = n / opt.batch;
    if (batches == 0)
        throw ConfigError("train: dataset smaller than one batch (" + std::to_string(n) + " < " +
                          std::to_string(opt.batch) + ")");

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        const std::vector<int> order =
            shuffled_indices(n, splitmix64(opt.seed ^ (0x5e5e0000ULL + static_cast<std::uint64_t>(epoch))));
        double epoch_loss = 0;
        for (int b = 0; b < batches; ++b) {
            std::vector<ClipGrad> parts(static_cast<size_t>(opt.batch));
            try {
                parallel_for(opt.batch, opt.threads, [&](int k) {
                    const LoadedClip& clip =
                        trainset.clips[static_cast<size_t>(order[static_cast<size_t>(b * opt.batch + k)])];
                    parts[static_cast<size_t>(k)] = clip_backward(model, result.params, clip);
                });
            } catch (const NumericsError& e) {
                throw NumericsError("train aborted at epoch " + std::to_string(epoch) +
                                    " batch " + std::to_string(b) + ": " + e.what());
            }
            // deterministic reduce in clip order
            std::map<std::string, Tensor<float>> grads = std::move(parts[0].grads);
            double batch_loss = parts[0].loss;
            for (int k = 1; k < opt.batch; ++k) {
                batch_loss += parts[static_cast<size_t>(k)].loss;
                for (auto& [name, g] : parts[static_cast<size_t>(k)].grads) {
                    Tensor<float>& acc = grads.at(name);
                    for (std::int64_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
                }
            }
            const float inv_batch = 1.0f / static_cast<float>(opt.batch);
            for (auto& [name, g] : grads)
                for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= inv_batch;
            batch_loss /= opt.batch;
            if (!std::isfinite(batch_loss))
                throw NumericsError("train aborted: non-finite loss at epoch " +
                                    std::to_string(epoch) + " batch " + std::to_string(b));
            adam_step(result.params, grads, opt.adam);
            epoch_loss += batch_loss;
        }
        epoch_loss /= batches;
        result.epoch_loss.push_back(epoch_loss);
        if (opt.on_epoch) opt.on_epoch(epoch, epoch_loss);
    }
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

double evaluate(const VOTConfig& config, ParameterStore<float>& params,
                const LoadedDataset& evalset, int threads) {
    if (evalset.clips.empty()) throw ConfigError("evaluate: dataset is empty");
    VotModel model(config);
    if (params.scalar_count() != model.param_count())
        throw ConfigError("evaluate: checkpoint parameters do not match the model config");
    const int n = static_cast<int>(evalset.clips.size());
    std::vector<double> pe(static_cast<size_t>(n));
    parallel_for(n, threads, [&](int i) {
        Tape<float> tape;
        Binder<float> bind(tape, params, false);
        Var<float> pred =
            model.forward(bind, tape.leaf(evalset.clips[static_cast<size_t>(i)].input, false, "clip"));
        pe[static_cast<size_t>(i)] = prediction_error(evalset.clips[static_cast<size_t>(i)].target,
                                                      pred.val());
    });
    double total = 0;
    for (double v : pe) total += v;
    return total / n;
}

}  // namespace vot
