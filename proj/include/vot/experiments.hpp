#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vot/checkpoint.hpp"
#include "vot/dataset.hpp"
#include "vot/trainer.hpp"

namespace vot {

struct ReportRow {
    std::string model;
    std::string train_set;
    std::string eval_set;
    double pe = 0;
    std::optional<double> gp;
    std::uint64_t seed = 0;
    std::string ckpt_hash;
};

// CSV with header model,train_set,eval_set,pe,gp,seed,ckpt_hash; numbers in
// 6 significant digits, gp blank when no scratch baseline exists.
void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path);
std::vector<ReportRow> read_report_csv(const std::string& path);

// Text table with one PE/GP cell per (trained model, eval set) pair.
std::string render_report_table(const std::vector<ReportRow>& rows);

std::string format_sig6(double v);

// Fisher-Yates with a seeded stream; used for epoch shuffles and nested
// fine-tuning subsets.
std::vector<int> seeded_shuffle(int n, std::uint64_t seed);

struct ZeroShotOptions {
    float fill = 255.0f;
    int threads = 2;
};

// PE and GP for every (checkpoint, eval set) pair. Every eval set must have
// a scratch baseline among the checkpoints (meta.dataset_id equal to the
// eval set id); the diagonal has GP exactly 0.
std::vector<ReportRow> zero_shot_matrix(const std::vector<Checkpoint>& checkpoints,
                                        const std::vector<std::string>& dataset_dirs,
                                        const ZeroShotOptions& opt = {});

struct FinetunePoint {
    int size = 0;
    double pe = 0;
};

struct FinetuneOptions {
    int epochs = 10;
    int batch = 4;
    AdamConfig adam{1e-4, 0.9, 0.999, 1e-8};
    std::uint64_t seed = 0;
    float fill = 255.0f;
    int threads = 2;
};

// Fine-tunes a fresh copy of the pretrained parameters on nested seeded
// subsets of the target train split and evaluates on its test split. A size
// of 0 reports the zero-shot PE unchanged.
std::vector<FinetunePoint> finetune_curve(const Checkpoint& pretrained,
                                          const std::string& dataset_dir,
                                          const std::vector<int>& sizes,
                                          const FinetuneOptions& opt);

}  // namespace vot
