#include "vot/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace vot {

std::string format_sig6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::vector<int> seeded_shuffle(int n, std::uint64_t seed) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = rng.uniform_int(0, i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write report: " + path);
    f << "model,train_set,eval_set,pe,gp,seed,ckpt_hash\n";
    for (const ReportRow& r : rows) {
        f << r.model << "," << r.train_set << "," << r.eval_set << "," << format_sig6(r.pe) << ",";
        if (r.gp) f << format_sig6(*r.gp);
        f << "," << r.seed << "," << r.ckpt_hash << "\n";
    }
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open report: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "model,train_set,eval_set,pe,gp,seed,ckpt_hash")
        throw FormatError("report missing header: " + path);
    std::vector<ReportRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream is(line);
        while (std::getline(is, field, ',')) fields.push_back(field);
        if (line.back() == ',') fields.push_back("");
        if (fields.size() != 7) throw FormatError("malformed report row '" + line + "'");
        ReportRow r;
        r.model = fields[0];
        r.train_set = fields[1];
        r.eval_set = fields[2];
        r.pe = std::stod(fields[3]);
        if (!fields[4].empty()) r.gp = std::stod(fields[4]);
        r.seed = std::stoull(fields[5]);
        r.ckpt_hash = fields[6];
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string render_report_table(const std::vector<ReportRow>& rows) {
    std::vector<std::string> evals;
    std::vector<std::string> models;
    for (const ReportRow& r : rows) {
        if (std::find(evals.begin(), evals.end(), r.eval_set) == evals.end())
            evals.push_back(r.eval_set);
        const std::string key = r.model + " @ " + r.train_set;
        if (std::find(models.begin(), models.end(), key) == models.end()) models.push_back(key);
    }
    std::map<std::pair<std::string, std::string>, std::string> cells;
    for (const ReportRow& r : rows) {
        std::string cell = format_sig6(r.pe) + "/" + (r.gp ? format_sig6(*r.gp) : "--");
        cells[{r.model + " @ " + r.train_set, r.eval_set}] = cell;
    }
    size_t label_w = 12;
    for (const auto& m : models) label_w = std::max(label_w, m.size());
    size_t cell_w = 8;
    for (const auto& [k, v] : cells) cell_w = std::max(cell_w, v.size());
    for (const auto& e : evals) cell_w = std::max(cell_w, e.size());

    std::ostringstream os;
    os << std::string(label_w, ' ');
    for (const auto& e : evals) os << "  " << std::setw(static_cast<int>(cell_w)) << e;
    os << "\n";
    for (const auto& m : models) {
        os << std::setw(static_cast<int>(label_w)) << m;
        for (const auto& e : evals) {
            auto it = cells.find({m, e});
            os << "  " << std::setw(static_cast<int>(cell_w)) << (it == cells.end() ? "--" : it->second);
        }
        os << "\n";
    }
    return os.str();
}

std::vector<ReportRow> zero_shot_matrix(const std::vector<Checkpoint>& checkpoints,
                                        const std::vector<std::string>& dataset_dirs,
                                        const ZeroShotOptions& opt) {
    if (checkpoints.empty()) throw ConfigError("zero_shot_matrix: no checkpoints");
    if (dataset_dirs.empty()) throw ConfigError("zero_shot_matrix: no datasets");

    // every checkpoint shares one input geometry in a matrix run
    const int t_in = checkpoints[0].config.input_frames;
    const int res = checkpoints[0].config.input_res;
    for (const Checkpoint& ck : checkpoints)
        if (ck.config.input_frames != t_in || ck.config.input_res != res)
            throw ConfigError("zero_shot_matrix: checkpoints disagree on input geometry");

    std::vector<LoadedDataset> evals;
    for (const std::string& dir : dataset_dirs)
        evals.push_back(load_dataset_split(dir, "test", t_in, res, opt.fill));

    // scratch baseline per eval set
    std::vector<int> baseline(evals.size(), -1);
    std::vector<std::string> missing;
    for (size_t d = 0; d < evals.size(); ++d) {
        for (size_t c = 0; c < checkpoints.size(); ++c)
            if (checkpoints[c].meta.dataset_id == evals[d].manifest.subdataset) {
                baseline[d] = static_cast<int>(c);
                break;
            }
        if (baseline[d] < 0) missing.push_back(evals[d].manifest.subdataset);
    }
    if (!missing.empty()) {
        std::string msg = "zero_shot_matrix: missing scratch baseline for eval set(s):";
        for (const auto& m : missing) msg += " " + m;
        throw ConfigError(msg);
    }

    std::vector<std::vector<double>> pe(checkpoints.size(),
                                        std::vector<double>(evals.size(), 0.0));
    for (size_t c = 0; c < checkpoints.size(); ++c) {
        ParameterStore<float> params;
        for (const auto& [name, entry] : checkpoints[c].params) params.add(name, entry.value);
        for (size_t d = 0; d < evals.size(); ++d)
            pe[c][d] = evaluate(checkpoints[c].config, params, evals[d], opt.threads);
    }

    std::vector<ReportRow> rows;
    for (size_t c = 0; c < checkpoints.size(); ++c)
        for (size_t d = 0; d < evals.size(); ++d) {
            ReportRow r;
            r.model = variant_name(checkpoints[c].config.variant);
            r.train_set = checkpoints[c].meta.dataset_id;
            r.eval_set = evals[d].manifest.subdataset;
            r.pe = pe[c][d];
            r.gp = pe[c][d] - pe[static_cast<size_t>(baseline[d])][d];
            r.seed = checkpoints[c].meta.seed;
            r.ckpt_hash = params_hash(checkpoints[c].params);
            rows.push_back(std::move(r));
        }
    return rows;
}

std::vector<FinetunePoint> finetune_curve(const Checkpoint& pretrained,
                                          const std::string& dataset_dir,
                                          const std::vector<int>& sizes,
                                          const FinetuneOptions& opt) {
    const int t_in = pretrained.config.input_frames;
    const int res = pretrained.config.input_res;
    LoadedDataset test = load_dataset_split(dataset_dir, "test", t_in, res, opt.fill);
    LoadedDataset train_full = load_dataset_split(dataset_dir, "train", t_in, res, opt.fill);
    const int n = static_cast<int>(train_full.clips.size());
    for (int s : sizes)
        if (s > n)
            throw ConfigError("finetune_curve: subset size " + std::to_string(s) +
                              " exceeds train split (" + std::to_string(n) + " clips)");

    ParameterStore<float> base;
    for (const auto& [name, entry] : pretrained.params) base.add(name, entry.value);
    const double zero_shot = evaluate(pretrained.config, base, test, opt.threads);

    const std::vector<int> order = seeded_shuffle(n, splitmix64(opt.seed ^ 0xf17e7a9eULL));
    std::vector<FinetunePoint> curve;
    for (int s : sizes) {
        if (s == 0) {
            curve.push_back({0, zero_shot});
            continue;
        }
        LoadedDataset subset;
        subset.dir = train_full.dir;
        subset.split = train_full.split;
        subset.manifest = train_full.manifest;
        for (int i = 0; i < s; ++i)
            subset.clips.push_back(train_full.clips[static_cast<size_t>(order[static_cast<size_t>(i)])]);
        TrainOptions topt;
        topt.model = pretrained.config;
        topt.epochs = opt.epochs;
        topt.batch = opt.batch;
        topt.adam = opt.adam;
        topt.seed = opt.seed;
        topt.threads = opt.threads;
        TrainResult r = train(topt, subset, &base);
        curve.push_back({s, evaluate(pretrained.config, r.params, test, opt.threads)});
    }
    return curve;
}

}  // namespace vot
