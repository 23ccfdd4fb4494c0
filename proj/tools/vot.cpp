// vot: dataset synthesis, tracking, training and evaluation workbench.
#include <CLI11.hpp>

#include <filesystem>
#include <fnmatch.h>
#include <fstream>
#include <iostream>

#include "vot/clipfile.hpp"
#include "vot/experiments.hpp"
#include "vot/gradcheck_suite.hpp"
#include "vot/tracker.hpp"

namespace fs = std::filesystem;
using namespace vot;

namespace {

std::string iso_timestamp() {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

nlohmann::json tool_versions() {
    return {{"clip_format", 1}, {"checkpoint_format", 1}, {"physics_preset", PhysicsPreset{}.version}};
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

Rgb parse_color(const std::string& spec) {
    int r, g, b;
    char c1, c2;
    std::istringstream is(spec);
    if (!(is >> r >> c1 >> g >> c2 >> b) || c1 != ',' || c2 != ',' || r < 0 || r > 255 || g < 0 ||
        g > 255 || b < 0 || b > 255)
        throw ConfigError("expected color as R,G,B with 0-255 components, got '" + spec + "'");
    return {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
            static_cast<std::uint8_t>(b)};
}

std::vector<std::string> expand_glob(const std::string& pattern) {
    const fs::path p(pattern);
    const fs::path dir = p.parent_path().empty() ? "." : p.parent_path();
    const std::string name = p.filename().string();
    std::vector<std::string> out;
    if (name.find('*') == std::string::npos && name.find('?') == std::string::npos) {
        out.push_back(pattern);
        return out;
    }
    if (fs::exists(dir))
        for (const auto& e : fs::directory_iterator(dir))
            if (fnmatch(name.c_str(), e.path().filename().string().c_str(), 0) == 0)
                out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

struct GenArgs {
    std::string catalog, out, preset_path;
    int n_train = 8, n_test = 2;
    std::uint64_t seed = 0;
    bool force = false, full_scale = false;
};

int run_gen(const GenArgs& a) {
    const CatalogEntry& entry = catalog_entry(a.catalog);
    PhysicsPreset preset = a.preset_path.empty() ? PhysicsPreset{} : PhysicsPreset::load(a.preset_path);
    CameraConfig camera = a.full_scale ? full_scale_camera() : CameraConfig{};
    generate_subdataset(entry, a.n_train, a.n_test, a.seed, a.out, a.force, preset, camera);
    std::cout << "wrote " << a.n_train << "+" << a.n_test << " clips to "
              << (fs::path(a.out) / entry.name).string() << "\n";
    return 0;
}

struct TrackArgs {
    std::string clip, color = "220,50,45";
    int tol = 40;
};

int run_track(const TrackArgs& a) {
    Tensor<std::uint8_t> video = read_clip(a.clip);
    TrajectoryLabel label = track_clip(video, ColorKey{parse_color(a.color), a.tol});
    std::cout << "i,x,y\n";
    for (const TrajPoint& p : label) std::cout << p.i << "," << p.x << "," << p.y << "\n";
    return 0;
}

struct TrainArgs {
    std::string dataset, model = "maxvit", out, config = "desk";
    int epochs = 100, batch = 4, ckpt_every = 0, threads = 2;
    double lr = 0;  // 0 = per-variant default
    std::uint64_t seed = 0;
    double fill = 255.0;
};

int run_train(const TrainArgs& a) {
    const SpatialVariant variant = variant_from_name(a.model);
    TrainOptions opt;
    opt.model = a.config == "full" ? VOTConfig::full_scale(variant) : VOTConfig::desk(variant);
    opt.epochs = a.epochs;
    opt.batch = a.batch;
    opt.adam.lr = a.lr > 0 ? a.lr : default_lr(variant);
    opt.seed = a.seed;
    opt.threads = a.threads;
    LoadedDataset ds = load_dataset_split(a.dataset, "train", opt.model.input_frames,
                                          opt.model.input_res, static_cast<float>(a.fill));
    RunMeta meta{a.seed, a.epochs, ds.manifest.subdataset};
    opt.on_epoch = [&](int epoch, double loss) {
        std::cout << "epoch " << epoch << " loss " << format_sig6(loss) << "\n";
        if (a.ckpt_every > 0 && (epoch + 1) % a.ckpt_every == 0 && epoch + 1 < a.epochs) {
            // periodic snapshots are written by the final save below once the
            // run completes; intermediate saves share the same manifest
        }
    };

    // periodic checkpointing needs the parameters mid-run; run epoch blocks
    TrainResult result;
    if (a.ckpt_every > 0 && a.ckpt_every < a.epochs) {
        TrainOptions block = opt;
        block.on_epoch = nullptr;
        const ParameterStore<float>* warm = nullptr;
        int done = 0;
        std::vector<double> losses;
        while (done < a.epochs) {
            block.epochs = std::min(a.ckpt_every, a.epochs - done);
            block.seed = splitmix64(opt.seed ^ static_cast<std::uint64_t>(done));
            TrainResult part = train(block, ds, warm);
            result.params = std::move(part.params);
            for (double l : part.epoch_loss) {
                losses.push_back(l);
                std::cout << "epoch " << done << " loss " << format_sig6(l) << "\n";
                ++done;
            }
            warm = &result.params;
            RunMeta snap{a.seed, done, ds.manifest.subdataset};
            save_checkpoint(a.out, opt.model, result.params, snap);
        }
        result.epoch_loss = std::move(losses);
    } else {
        result = train(opt, ds);
    }

    save_checkpoint(a.out, opt.model, result.params, meta);
    {
        std::ofstream curve(a.out + ".loss.csv", std::ios::trunc);
        curve << "epoch,loss\n";
        for (size_t e = 0; e < result.epoch_loss.size(); ++e)
            curve << e << "," << format_sig6(result.epoch_loss[e]) << "\n";
    }
    nlohmann::json manifest;
    manifest["command"] = "train";
    manifest["config"] = opt.model.to_json();
    manifest["dataset"] = {{"dir", a.dataset}, {"id", ds.manifest.subdataset}};
    manifest["protocol"] = {{"epochs", a.epochs}, {"batch", a.batch},         {"lr", opt.adam.lr},
                            {"beta1", opt.adam.beta1}, {"beta2", opt.adam.beta2}, {"adam_eps", opt.adam.eps},
                            {"fill_value", a.fill},    {"seed", a.seed},
                            {"last_batch", "dropped when incomplete"}};
    manifest["versions"] = tool_versions();
    manifest["wall_seconds"] = result.wall_seconds;
    manifest["written_at"] = iso_timestamp();
    manifest["ckpt_hash"] = params_hash(result.params);
    write_json(a.out + ".manifest.json", manifest);
    std::cout << "checkpoint " << a.out << " hash " << params_hash(result.params) << "\n";
    return 0;
}

struct EvalArgs {
    std::string ckpt, dataset, split = "test", out;
    double fill = 255.0;
    int threads = 2;
};

int run_eval(const EvalArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    LoadedDataset ds = load_dataset_split(a.dataset, a.split, ck.config.input_frames,
                                          ck.config.input_res, static_cast<float>(a.fill));
    ParameterStore<float> params;
    for (const auto& [name, entry] : ck.params) params.add(name, entry.value);
    const double pe = evaluate(ck.config, params, ds, a.threads);
    std::cout << "pe " << format_sig6(pe) << "\n";
    if (!a.out.empty()) {
        nlohmann::json j;
        j["command"] = "eval";
        j["pe"] = pe;
        j["ckpt"] = a.ckpt;
        j["ckpt_hash"] = params_hash(ck.params);
        j["dataset"] = {{"dir", a.dataset}, {"id", ds.manifest.subdataset}, {"split", a.split}};
        j["config"] = ck.config.to_json();
        j["versions"] = tool_versions();
        j["written_at"] = iso_timestamp();
        write_json(a.out, j);
    }
    return 0;
}

struct ZeroshotArgs {
    std::string ckpts, datasets, out;
    double fill = 255.0;
    int threads = 2;
};

int run_zeroshot(const ZeroshotArgs& a) {
    std::vector<std::string> paths = expand_glob(a.ckpts);
    if (paths.empty()) throw ConfigError("no checkpoints match '" + a.ckpts + "'");
    std::vector<Checkpoint> cks;
    for (const std::string& p : paths) cks.push_back(load_checkpoint(p));
    std::vector<std::string> dirs;
    {
        std::istringstream is(a.datasets);
        std::string d;
        while (std::getline(is, d, ','))
            if (!d.empty()) dirs.push_back(d);
    }
    ZeroShotOptions opt;
    opt.fill = static_cast<float>(a.fill);
    opt.threads = a.threads;
    std::vector<ReportRow> rows = zero_shot_matrix(cks, dirs, opt);
    fs::create_directories(a.out);
    write_report_csv(rows, (fs::path(a.out) / "rows.csv").string());
    const std::string table = render_report_table(rows);
    {
        std::ofstream f(fs::path(a.out) / "table.txt", std::ios::trunc);
        f << table;
    }
    nlohmann::json manifest;
    manifest["command"] = "zeroshot";
    manifest["checkpoints"] = paths;
    manifest["datasets"] = dirs;
    manifest["fill_value"] = a.fill;
    manifest["versions"] = tool_versions();
    manifest["written_at"] = iso_timestamp();
    manifest["note"] = "zero-shot PEs use the same test splits as scratch baselines";
    write_json((fs::path(a.out) / "manifest.json").string(), manifest);
    std::cout << table;
    return 0;
}

struct FinetuneArgs {
    std::string ckpt, dataset, sizes = "8,32,128", out;
    int epochs = 0;  // 0 = pretrain epochs / 9 (the 90:10 split)
    int batch = 4, threads = 2;
    double lr = 0;
    std::uint64_t seed = 0;
    double fill = 255.0;
};

int run_finetune(const FinetuneArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    FinetuneOptions opt;
    opt.epochs = a.epochs > 0 ? a.epochs : std::max(1, ck.meta.epochs / 9);
    opt.batch = a.batch;
    opt.adam.lr = a.lr > 0 ? a.lr : default_lr(ck.config.variant);
    opt.seed = a.seed;
    opt.fill = static_cast<float>(a.fill);
    opt.threads = a.threads;
    std::vector<int> sizes;
    {
        std::istringstream is(a.sizes);
        std::string s;
        while (std::getline(is, s, ','))
            if (!s.empty()) sizes.push_back(std::stoi(s));
    }
    auto curve = finetune_curve(ck, a.dataset, sizes, opt);
    const std::string out = a.out.empty() ? a.ckpt + ".finetune.csv" : a.out;
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) throw IoError("cannot write " + out);
        f << "size,pe\n";
        for (const auto& p : curve) f << p.size << "," << format_sig6(p.pe) << "\n";
    }
    for (const auto& p : curve) std::cout << "size " << p.size << " pe " << format_sig6(p.pe) << "\n";
    nlohmann::json manifest;
    manifest["command"] = "finetune";
    manifest["ckpt"] = a.ckpt;
    manifest["pretrain"] = {{"dataset_id", ck.meta.dataset_id}, {"epochs", ck.meta.epochs}};
    manifest["dataset"] = a.dataset;
    manifest["sizes"] = sizes;
    manifest["protocol"] = {{"epochs", opt.epochs},
                            {"batch", a.batch},
                            {"lr", opt.adam.lr},
                            {"seed", a.seed},
                            {"fill_value", a.fill}};
    manifest["versions"] = tool_versions();
    manifest["written_at"] = iso_timestamp();
    write_json(out + ".manifest.json", manifest);
    return 0;
}

struct ReportArgs {
    std::string in, format = "md";
};

int run_report(const ReportArgs& a) {
    std::vector<ReportRow> rows;
    std::vector<fs::path> files;
    if (fs::is_directory(a.in)) {
        for (const auto& e : fs::recursive_directory_iterator(a.in))
            if (e.path().filename() == "rows.csv") files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(a.in);
    }
    if (files.empty()) throw ConfigError("no rows.csv files under " + a.in);
    for (const auto& f : files)
        for (ReportRow& r : read_report_csv(f.string())) rows.push_back(std::move(r));
    if (a.format == "csv") {
        std::cout << "model,train_set,eval_set,pe,gp,seed,ckpt_hash\n";
        for (const ReportRow& r : rows) {
            std::cout << r.model << "," << r.train_set << "," << r.eval_set << ","
                      << format_sig6(r.pe) << ",";
            if (r.gp) std::cout << format_sig6(*r.gp);
            std::cout << "," << r.seed << "," << r.ckpt_hash << "\n";
        }
    } else {
        std::cout << render_report_table(rows);
    }
    return 0;
}

int run_validate(const std::string& root) {
    ValidationReport report = validate_dataset(root);
    for (const std::string& v : report.violations) std::cout << "violation: " << v << "\n";
    std::cout << report.datasets_checked << " dataset(s) checked, " << report.violations.size()
              << " violation(s)\n";
    return report.clean() ? 0 : 1;
}

int run_gradcheck(std::uint64_t seed, bool with_model) {
    bool all_ok = true;
    for (std::uint64_t s : {seed, seed + 1, seed + 2}) {
        for (const GradcheckEntry& e : op_gradcheck_suite(s)) {
            all_ok &= e.ok();
            std::cout << (e.ok() ? "ok   " : "FAIL ") << e.name << " seed=" << s
                      << " rel_err=" << format_sig6(e.err) << "\n";
        }
    }
    if (with_model) {
        for (auto v : {SpatialVariant::MaxViT, SpatialVariant::MaxViT2, SpatialVariant::SwinT}) {
            GradcheckEntry e = model_gradcheck(v, seed);
            all_ok &= e.ok();
            std::cout << (e.ok() ? "ok   " : "FAIL ") << e.name
                      << " rel_err=" << format_sig6(e.err) << "\n";
        }
    }
    std::cout << (all_ok ? "gradcheck passed" : "gradcheck FAILED") << "\n";
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"planar-pushing video workbench: synthesize dual-view datasets, track targets, "
                 "train and evaluate trajectory-grid predictors"};
    app.require_subcommand(0, 1);
    bool gradcheck_flag = false;
    app.add_flag("--gradcheck", gradcheck_flag, "run the 64-bit finite-difference suite and exit");

    GenArgs gen;
    auto* cgen = app.add_subcommand("gen", "synthesize one sub-dataset");
    cgen->add_option("--catalog", gen.catalog, "catalog entry, e.g. ball_single")->required();
    cgen->add_option("--train", gen.n_train, "training clips")->required();
    cgen->add_option("--test", gen.n_test, "test clips")->required();
    cgen->add_option("--seed", gen.seed, "base seed");
    cgen->add_option("--out", gen.out, "output root directory")->required();
    cgen->add_flag("--force", gen.force, "overwrite a non-empty directory");
    cgen->add_option("--preset", gen.preset_path, "physics preset file");
    cgen->add_flag("--full-scale", gen.full_scale, "1280x720 / 480x640 cameras");

    TrackArgs track;
    auto* ctrack = app.add_subcommand("track", "color-track a bottom-view clip, CSV to stdout");
    ctrack->add_option("--clip", track.clip, "clip file (.cgpv)")->required();
    ctrack->add_option("--color", track.color, "target color R,G,B");
    ctrack->add_option("--tol", track.tol, "per-channel tolerance");

    TrainArgs train_args;
    auto* ctrain = app.add_subcommand("train", "train a model from scratch");
    ctrain->add_option("--dataset", train_args.dataset, "dataset directory")->required();
    ctrain->add_option("--model", train_args.model, "maxvit|maxvit2|swint");
    ctrain->add_option("--epochs", train_args.epochs, "training epochs");
    ctrain->add_option("--batch", train_args.batch, "batch size");
    ctrain->add_option("--lr", train_args.lr, "learning rate (default per variant)");
    ctrain->add_option("--seed", train_args.seed, "seed");
    ctrain->add_option("--out", train_args.out, "checkpoint path")->required();
    ctrain->add_option("--config", train_args.config, "desk|full");
    ctrain->add_option("--ckpt-every", train_args.ckpt_every, "also checkpoint every k epochs");
    ctrain->add_option("--fill", train_args.fill, "ground-truth grid fill value");
    ctrain->add_option("--threads", train_args.threads, "worker threads per batch");

    EvalArgs eval_args;
    auto* ceval = app.add_subcommand("eval", "evaluate a checkpoint");
    ceval->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
    ceval->add_option("--dataset", eval_args.dataset, "dataset directory")->required();
    ceval->add_option("--split", eval_args.split, "train|test");
    ceval->add_option("--out", eval_args.out, "write a JSON result file");
    ceval->add_option("--fill", eval_args.fill, "ground-truth grid fill value");
    ceval->add_option("--threads", eval_args.threads, "worker threads");

    ZeroshotArgs zs;
    auto* czs = app.add_subcommand("zeroshot", "PE/GP matrix across checkpoints and datasets");
    czs->add_option("--ckpts", zs.ckpts, "checkpoint glob")->required();
    czs->add_option("--datasets", zs.datasets, "comma-separated dataset dirs")->required();
    czs->add_option("--out", zs.out, "report directory")->required();
    czs->add_option("--fill", zs.fill, "ground-truth grid fill value");
    czs->add_option("--threads", zs.threads, "worker threads");

    FinetuneArgs ft;
    auto* cft = app.add_subcommand("finetune", "fine-tuning curve over nested subset sizes");
    cft->add_option("--ckpt", ft.ckpt, "pretrained checkpoint")->required();
    cft->add_option("--dataset", ft.dataset, "target dataset directory")->required();
    cft->add_option("--sizes", ft.sizes, "comma-separated subset sizes");
    cft->add_option("--epochs", ft.epochs, "fine-tune epochs (default: pretrain/9)");
    cft->add_option("--batch", ft.batch, "batch size");
    cft->add_option("--lr", ft.lr, "learning rate (default per variant)");
    cft->add_option("--seed", ft.seed, "seed");
    cft->add_option("--out", ft.out, "curve CSV path");
    cft->add_option("--fill", ft.fill, "ground-truth grid fill value");
    cft->add_option("--threads", ft.threads, "worker threads");

    ReportArgs rep;
    auto* crep = app.add_subcommand("report", "merge and render report rows");
    crep->add_option("--in", rep.in, "report directory or rows.csv")->required();
    crep->add_option("--format", rep.format, "csv|md");

    std::string validate_root;
    auto* cval = app.add_subcommand("validate", "check a dataset tree");
    cval->add_option("root", validate_root, "dataset root")->required();

    std::uint64_t gc_seed = 0;
    bool gc_ops_only = false;
    auto* cgc = app.add_subcommand("gradcheck", "64-bit finite-difference suite");
    cgc->add_option("--seed", gc_seed, "seed");
    cgc->add_flag("--ops-only", gc_ops_only, "skip the full-model checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\nusage error; see --help\n";
        return 2;
    }

    try {
        if (gradcheck_flag && app.get_subcommands().empty()) return run_gradcheck(0, true);
        if (cgen->parsed()) return run_gen(gen);
        if (ctrack->parsed()) return run_track(track);
        if (ctrain->parsed()) return run_train(train_args);
        if (ceval->parsed()) return run_eval(eval_args);
        if (czs->parsed()) return run_zeroshot(zs);
        if (cft->parsed()) return run_finetune(ft);
        if (crep->parsed()) return run_report(rep);
        if (cval->parsed()) return run_validate(validate_root);
        if (cgc->parsed()) return run_gradcheck(gc_seed, !gc_ops_only);
        std::cerr << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
