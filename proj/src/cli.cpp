#include "serum/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "serum/config.hpp"
#include "serum/core.hpp"
#include "serum/detector.hpp"
#include "serum/errors.hpp"
#include "serum/io.hpp"
#include "serum/multiuser.hpp"
#include "serum/perturb.hpp"
#include "serum/toygen.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace serum::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Context {
    config::RunConfig cfg;
    std::string config_path;
    std::string out_dir;
    std::string format = "table";
    std::uint32_t threads = 1;
    bool override_hash_check = false;
    std::optional<std::uint64_t> seed_override;
    std::string command;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
    json manifest_extra = json::object();
    std::vector<std::pair<std::string, std::string>> artifacts;  // path, sha256

    std::string hash() const { return cfg.config_hash(); }

    std::string out_path(const std::string& name) const {
        fs::create_directories(out_dir);
        return (fs::path(out_dir) / name).string();
    }

    void note_artifact(const std::string& path) {
        artifacts.emplace_back(path, io::sha256_file(path));
    }

    void write_manifest() {
        json arts = json::array();
        for (const auto& [p, h] : artifacts) arts.push_back({{"path", p}, {"sha256", h}});
        json m{{"command", command},
               {"version", kToolVersion},
               {"generator", std::string(core::kGeneratorName)},
               {"config_hash", hash()},
               {"config_path", config_path},
               {"seconds",
                std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
                    .count()},
               {"artifacts", arts},
               {"details", manifest_extra}};
        io::atomic_write_file(out_path(command + ".manifest.json"), m.dump(2) + "\n");
    }
};

core::WatermarkPattern pattern_from_config(const config::RunConfig& cfg) {
    return core::make_pattern(cfg.pattern.seed, cfg.pipeline.channels,
                              cfg.pipeline.width, cfg.pipeline.height,
                              cfg.pattern.alpha, cfg.pattern.id);
}

toygen::ToyPipeline pipeline_from_config(const config::RunConfig& cfg) {
    return toygen::ToyPipeline(cfg.pipeline.seed, cfg.pipeline.channels,
                               cfg.pipeline.width, cfg.pipeline.height);
}

toygen::ToyPipeline pipeline_from_metadata(
    const std::map<std::string, std::string>& md, const config::RunConfig& cfg) {
    if (md.count("pipeline_seed") && md.count("pipeline_dims")) {
        std::uint32_t c, w, h;
        if (std::sscanf(md.at("pipeline_dims").c_str(), "%ux%ux%u", &c, &w, &h) == 3)
            return toygen::ToyPipeline(std::stoull(md.at("pipeline_seed")), c, w, h);
    }
    return pipeline_from_config(cfg);
}

std::string dims_string(const config::RunConfig& cfg) {
    return std::to_string(cfg.pipeline.channels) + "x" +
           std::to_string(cfg.pipeline.width) + "x" +
           std::to_string(cfg.pipeline.height);
}

void cmd_gen_pattern(Context& ctx) {
    auto cfg = ctx.cfg;
    if (ctx.seed_override) cfg.pattern.seed = *ctx.seed_override;
    const auto pattern = pattern_from_config(cfg);
    const auto path = ctx.out_path("pattern.srmp");
    io::write_pattern(pattern, path, {{"config_hash", ctx.hash()}});
    ctx.note_artifact(path);
    ctx.manifest_extra["pattern_id"] = pattern.id;
    ctx.manifest_extra["pattern_seed"] = pattern.seed;
    std::cout << json{{"pattern", path}, {"id", pattern.id}}.dump() << "\n";
}

void cmd_make_dataset(Context& ctx, const std::string& pattern_path,
                      const std::string& role) {
    auto cfg = ctx.cfg;
    const bool eval_role = role == "eval";
    std::uint64_t base_seed = eval_role ? cfg.evaluation.seed : cfg.dataset.seed;
    const std::uint32_t n =
        eval_role ? cfg.evaluation.n_per_class : cfg.dataset.n_per_class;
    if (ctx.seed_override) base_seed = *ctx.seed_override;

    const auto pattern = pattern_path.empty() ? pattern_from_config(cfg)
                                              : io::read_pattern(pattern_path);
    const auto pipeline = pipeline_from_config(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    auto ds = toygen::make_dataset(pipeline, n, pattern, cfg.pattern.alpha, base_seed);
    const double gen_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ds.metadata["config_hash"] = ctx.hash();
    ds.metadata["role"] = role;
    ds.metadata["pipeline_dims"] = dims_string(cfg);
    const auto path = ctx.out_path("dataset-" + role + ".srmd");
    toygen::export_dataset(ds, path);
    ctx.note_artifact(path);
    ctx.manifest_extra["entries"] = ds.entries.size();
    ctx.manifest_extra["seconds_per_image"] =
        gen_seconds / static_cast<double>(ds.entries.size());
    std::cout << json{{"dataset", path},
                      {"entries", ds.entries.size()},
                      {"seed_lo", ds.metadata["seed_lo"]},
                      {"seed_hi", ds.metadata["seed_hi"]}}
                     .dump()
              << "\n";
}

void cmd_precompute(Context& ctx, const std::string& dataset_path) {
    auto cfg = ctx.cfg;
    std::uint64_t seed = core::derive_seed(cfg.training.seed, "cli.precompute");
    if (ctx.seed_override) seed = *ctx.seed_override;
    const auto ds = toygen::import_latents(dataset_path);
    const auto pipeline = pipeline_from_metadata(ds.metadata, cfg);
    const auto aug = perturb::precompute(ds, cfg.perturbations,
                                         cfg.training.precompute_copies, pipeline, seed);
    const auto path = ctx.out_path("augmented.srmd");
    perturb::write_augmented(aug, path, {{"config_hash", ctx.hash()},
                                         {"source_dataset", dataset_path}});
    ctx.note_artifact(path);
    ctx.manifest_extra["rows"] = aug.rows.size();
    std::cout << json{{"augmented", path}, {"rows", aug.rows.size()}}.dump() << "\n";
}

void cmd_train(Context& ctx, const std::string& dataset_path,
               const std::string& augmented_path, const std::string& resume_path) {
    auto cfg = ctx.cfg;
    if (ctx.seed_override) cfg.training.seed = *ctx.seed_override;
    const auto ds = toygen::import_latents(dataset_path);
    const auto pipeline = pipeline_from_metadata(ds.metadata, cfg);

    perturb::AugmentedDataset aug;
    const perturb::AugmentedDataset* aug_ptr = nullptr;
    if (!augmented_path.empty()) {
        aug = perturb::read_augmented(augmented_path);
        aug_ptr = &aug;
    }

    auto tc = cfg.train_config();
    auto prio = sampler::PriorityState::init(
        std::max<std::size_t>(1, tc.augmentations.size()), cfg.training.sampler);

    detector::TrainResult resume_state;
    const detector::TrainResult* resume = nullptr;
    if (!resume_path.empty()) {
        auto ck = detector::read_checkpoint(resume_path);
        resume_state.model = std::move(ck.model);
        resume_state.optimizer = std::move(ck.optimizer);
        resume_state.scheduler = ck.scheduler;
        resume_state.history = std::move(ck.history);
        prio = std::move(ck.priorities);
        tc.start_epoch = ck.next_epoch;
        resume = &resume_state;
    }

    const auto clean = ds.with_label(toygen::Label::clean);
    const auto marked = ds.with_label(toygen::Label::watermarked);
    auto result = detector::train(tc, clean, marked, aug_ptr, aug_ptr, prio, pipeline,
                                  resume);

    detector::Checkpoint ck;
    ck.config = tc;
    ck.model = std::move(result.model);
    ck.optimizer = std::move(result.optimizer);
    ck.scheduler = result.scheduler;
    ck.priorities = prio;
    ck.history = std::move(result.history);
    ck.next_epoch = tc.start_epoch + tc.epochs;
    ck.metadata["config_hash"] = ctx.hash();
    ck.metadata["pipeline_seed"] = std::to_string(pipeline.seed());
    ck.metadata["pipeline_dims"] = dims_string(cfg);
    if (ds.metadata.count("seed_lo")) ck.metadata["train_seed_lo"] = ds.metadata.at("seed_lo");
    if (ds.metadata.count("seed_hi")) ck.metadata["train_seed_hi"] = ds.metadata.at("seed_hi");
    if (ds.metadata.count("pattern_ids")) ck.metadata["pattern_ids"] = ds.metadata.at("pattern_ids");
    const auto path = ctx.out_path("checkpoint.srmc");
    detector::write_checkpoint(ck, path);
    ctx.note_artifact(path);
    ctx.manifest_extra["epochs"] = ck.next_epoch;
    ctx.manifest_extra["train_wall_seconds"] = ck.history.wall_seconds;
    ctx.manifest_extra["param_count"] = ck.model.params.size();
    std::cout << json{{"checkpoint", path},
                      {"epochs", ck.next_epoch},
                      {"final_val_loss", ck.history.epochs.empty()
                                             ? 0.0
                                             : ck.history.epochs.back().val_loss}}
                     .dump()
              << "\n";
}

void cmd_detect(Context& ctx, const std::string& checkpoint_path,
                const std::string& input_path, double threshold) {
    const auto ck = detector::read_checkpoint(checkpoint_path);
    const auto pipeline = pipeline_from_metadata(ck.metadata, ctx.cfg);
    double score;
    const auto t0 = std::chrono::steady_clock::now();
    if (input_path.size() > 5 &&
        input_path.substr(input_path.size() - 5) == ".srmd") {
        throw core::InvalidArgumentError("detect: expects a tensor file, not a dataset");
    }
    auto bytes = io::read_file(input_path);
    io::ByteReader probe(bytes.data(), bytes.size(), input_path);
    probe.expect_magic("SRMT");
    probe.u16("version");
    probe.u64("seed");
    const std::uint32_t c = probe.u32("dims");
    if (c == 3 && ck.model.spec.in_channels != 3) {
        score = detector::detect(ck.model, pipeline, io::read_image(input_path));
    } else {
        score = ck.model.forward(io::read_tensor(input_path));
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ctx.manifest_extra["detect_seconds"] = seconds;
    std::cout << json{{"score", score},
                      {"threshold", threshold},
                      {"watermarked", score > threshold}}
                     .dump()
              << "\n";
}

void cmd_eval(Context& ctx, const std::string& checkpoint_path,
              const std::string& dataset_path) {
    const auto ck = detector::read_checkpoint(checkpoint_path);
    const auto ds = toygen::import_latents(dataset_path);

    const auto ck_hash = ck.metadata.count("config_hash") ? ck.metadata.at("config_hash")
                                                          : std::string();
    const auto ds_hash = ds.metadata.count("config_hash") ? ds.metadata.at("config_hash")
                                                          : std::string();
    if (!ctx.override_hash_check && (ck_hash.empty() || ck_hash != ds_hash))
        throw Error(
            "eval: checkpoint and dataset carry different config hashes ('" + ck_hash +
            "' vs '" + ds_hash + "'); pass --override-hash-check to proceed");

    const auto pipeline = pipeline_from_metadata(ck.metadata, ctx.cfg);
    std::optional<std::pair<std::uint64_t, std::uint64_t>> train_range;
    if (ck.metadata.count("train_seed_lo") && ck.metadata.count("train_seed_hi"))
        train_range = {{std::stoull(ck.metadata.at("train_seed_lo")),
                        std::stoull(ck.metadata.at("train_seed_hi"))}};

    auto report = eval::evaluate_suite(
        ck.model, pipeline, ds, ctx.cfg.perturbations, ctx.cfg.evaluation.fpr_target,
        core::derive_seed(ctx.cfg.evaluation.seed, "cli.eval"), train_range,
        ctx.threads);
    report.config_echo["config_hash"] = ctx.hash();
    report.config_echo["checkpoint"] = checkpoint_path;
    report.config_echo["dataset"] = dataset_path;

    const auto path = ctx.out_path("report.json");
    io::atomic_write_file(path, eval::report_to_json(report));
    ctx.note_artifact(path);
    std::size_t scored = 0;
    for (const auto& c : report.conditions) scored += c.n_pos + c.n_neg;
    ctx.manifest_extra["detect_seconds_per_image"] =
        scored == 0 ? 0.0 : report.total_seconds / static_cast<double>(scored);
    std::cout << report_render(report, ctx.format);
}

void cmd_multiuser_assign(Context& ctx) {
    auto cfg = ctx.cfg;
    if (ctx.seed_override) cfg.multiuser.seed = *ctx.seed_override;
    auto reg = multiuser::assign_users(cfg.multiuser.m, cfg.multiuser.k,
                                       cfg.multiuser.n, cfg.multiuser.seed);
    reg.alpha_per_pattern = cfg.multiuser.alpha_per_pattern;
    reg.alpha_total = cfg.multiuser.alpha_total;
    for (std::uint32_t i = 0; i < cfg.multiuser.m; ++i)
        reg.patterns.push_back(core::make_pattern(
            core::derive_seed(cfg.multiuser.seed, "mu.pattern", i),
            cfg.pipeline.channels, cfg.pipeline.width, cfg.pipeline.height,
            cfg.multiuser.alpha_per_pattern));
    const auto dir = ctx.out_path("registry");
    multiuser::write_registry(reg, dir);
    ctx.note_artifact((fs::path(dir) / "manifest.json").string());
    ctx.manifest_extra["capacity"] = reg.capacity();
    std::cout << json{{"registry", dir},
                      {"m", reg.pattern_count()},
                      {"k", reg.subset_size},
                      {"n", reg.user_count()},
                      {"capacity", reg.capacity()}}
                     .dump()
              << "\n";
}

void cmd_multiuser_train(Context& ctx, const std::string& registry_dir) {
    auto cfg = ctx.cfg;
    auto reg = multiuser::read_registry(registry_dir);
    const auto pipeline = pipeline_from_config(cfg);

    auto tc = cfg.train_config();
    tc.epochs = cfg.multiuser.train_epochs;
    tc.alpha = cfg.multiuser.alpha_per_pattern;

    reg.detectors.clear();
    for (std::uint32_t i = 0; i < reg.patterns.size(); ++i) {
        const std::uint64_t ds_seed =
            core::derive_seed(cfg.multiuser.seed, "mu.dataset", i);
        auto ds = toygen::make_dataset(pipeline, cfg.multiuser.train_n_per_class,
                                       reg.patterns[i], cfg.multiuser.alpha_per_pattern,
                                       ds_seed);
        auto tci = tc;
        tci.seed = core::derive_seed(cfg.multiuser.seed, "mu.train", i);
        auto prio = sampler::PriorityState::init(
            std::max<std::size_t>(1, tci.augmentations.size()), cfg.training.sampler);
        perturb::AugmentedDataset aug;
        const perturb::AugmentedDataset* aug_ptr = nullptr;
        if (!tci.augmentations.empty()) {
            aug = perturb::precompute(ds, tci.augmentations, tci.precompute_copies,
                                      pipeline,
                                      core::derive_seed(tci.seed, "mu.precompute", i));
            aug_ptr = &aug;
        }
        auto res = detector::train(tci, ds.with_label(toygen::Label::clean),
                                   ds.with_label(toygen::Label::watermarked), aug_ptr,
                                   aug_ptr, prio, pipeline);
        reg.detectors.push_back(std::move(res.model));
    }

    // calibrate the detection threshold on fresh clean negatives
    const std::uint64_t neg_seed = core::derive_seed(cfg.multiuser.seed, "mu.negatives");
    std::vector<double> max_scores;
    for (std::uint32_t i = 0; i < cfg.evaluation.n_per_class; ++i) {
        const auto eta = core::sample_noise(core::derive_seed(neg_seed, "eta", i),
                                            cfg.pipeline.channels, cfg.pipeline.width,
                                            cfg.pipeline.height);
        const auto latent = pipeline.encode(pipeline.generate(eta));
        max_scores.push_back(multiuser::watermark_score(multiuser::score_all(reg, latent)));
    }
    reg.threshold =
        multiuser::calibrate_threshold(max_scores, cfg.evaluation.fpr_target);

    multiuser::write_registry(reg, registry_dir);
    ctx.note_artifact((fs::path(registry_dir) / "manifest.json").string());
    ctx.manifest_extra["threshold"] = reg.threshold;
    std::cout << json{{"registry", registry_dir},
                      {"detectors", reg.detectors.size()},
                      {"threshold", reg.threshold}}
                     .dump()
              << "\n";
}

void cmd_multiuser_identify(Context& ctx, const std::string& registry_dir,
                            const std::string& input_path) {
    const auto reg = multiuser::read_registry(registry_dir);
    const auto pipeline = pipeline_from_config(ctx.cfg);
    core::LatentTensor latent;
    {
        auto bytes = io::read_file(input_path);
        io::ByteReader probe(bytes.data(), bytes.size(), input_path);
        probe.expect_magic("SRMT");
        probe.u16("version");
        probe.u64("seed");
        const std::uint32_t c = probe.u32("dims");
        latent = (c == 3 && !reg.detectors.empty() &&
                  reg.detectors.front().spec.in_channels != 3)
                     ? pipeline.encode(io::read_image(input_path))
                     : io::read_tensor(input_path);
    }
    const auto scores = multiuser::score_all(reg, latent);
    const auto result = multiuser::identify(reg, scores);
    json out{{"watermarked", result.watermarked},
             {"watermark_score", multiuser::watermark_score(scores)},
             {"threshold", reg.threshold}};
    if (result.watermarked) {
        out["user_id"] = result.user_id;
        out["subset"] = reg.users[result.user_id];
        out["log_score"] = result.log_score;
    }
    std::cout << out.dump() << "\n";
}

void cmd_kl(Context& ctx, double alpha, std::uint64_t d) {
    const double ours = core::kl_serum(alpha, d);
    const double baseline = core::kl_gaussmarker(d);
    ctx.manifest_extra["kl_serum"] = ours;
    ctx.manifest_extra["kl_gaussmarker"] = baseline;
    std::cout << json{{"alpha", alpha},
                      {"d", d},
                      {"kl_serum", ours},
                      {"kl_gaussmarker", baseline}}
                     .dump()
              << "\n";
}

void cmd_import(Context& /*ctx*/, const std::string& input_path) {
    auto bytes = io::read_file(input_path);
    if (bytes.size() < 4) throw ParseError(input_path + ": too short", 0);
    const std::string magic(bytes.begin(), bytes.begin() + 4);
    json out{{"file", input_path}, {"magic", magic}, {"bytes", bytes.size()}};
    if (magic == "SRMD") {
        const auto ds = toygen::import_latents(input_path);
        out["entries"] = ds.entries.size();
        out["metadata"] = ds.metadata;
    } else if (magic == "SRMP") {
        const auto p = io::read_pattern(input_path);
        out["id"] = p.id;
        out["seed"] = p.seed;
        out["dims"] = {p.raw.channels, p.raw.width, p.raw.height};
    } else if (magic == "SRMT") {
        const auto t = io::read_tensor(input_path);
        out["dims"] = {t.channels, t.width, t.height};
    } else if (magic == "SRMC") {
        const auto ck = detector::read_checkpoint(input_path);
        out["param_count"] = ck.model.params.size();
        out["epochs"] = ck.next_epoch;
        out["metadata"] = ck.metadata;
    } else if (magic[0] == '{') {
        const auto s = eval::import_scores(input_path);
        out["label"] = s.label;
        out["positives"] = s.positives.size();
        out["negatives"] = s.negatives.size();
    } else {
        throw ParseError(input_path + ": unrecognized container '" + magic + "'", 0);
    }
    out["sha256"] = io::sha256_hex(bytes.data(), bytes.size());
    std::cout << out.dump(2) << "\n";
}

void cmd_export(Context& ctx, const std::string& dataset_path,
                const std::string& out_file, bool strip_images) {
    const auto ds = toygen::import_latents(dataset_path);
    toygen::export_dataset(ds, out_file, !strip_images);
    ctx.note_artifact(out_file);
    std::cout << json{{"exported", out_file}, {"entries", ds.entries.size()}}.dump()
              << "\n";
}

}  // namespace

std::string report_render(const eval::EvalReport& report, const std::string& format) {
    if (format == "data") return eval::report_to_json(report);
    if (format != "table")
        throw core::InvalidArgumentError("report_render: unknown format '" + format +
                                         "' (expected table or data)");
    auto rows = report.conditions;
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        const int ra = eval::canonical_condition_rank(a.label);
        const int rb = eval::canonical_condition_rank(b.label);
        return ra != rb ? ra < rb : a.label < b.label;
    });
    char buf[64];
    std::string out;
    auto cell = [&](const std::string& s) {
        out += "| ";
        out += s;
        if (s.size() < 12) out.append(12 - s.size(), ' ');
        out += ' ';
    };
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.6f", v);
        cell(buf);
    };
    std::snprintf(buf, sizeof buf, "TPR @ %g%% FPR\n", 100.0 * report.fpr_target);
    out += buf;
    cell("condition");
    cell("average");
    for (const auto& r : rows) cell(r.label);
    out += "|\n";
    cell("tpr");
    num(report.average_tpr);
    for (const auto& r : rows) num(r.tpr);
    out += "|\n";
    cell("threshold");
    cell("-");
    for (const auto& r : rows) num(r.threshold);
    out += "|\n";
    cell("roc_auc");
    cell("-");
    for (const auto& r : rows) num(r.auc);
    out += "|\n";
    for (const auto& w : report.warnings) out += "note: " + w + "\n";
    return out;
}

int run(int argc, const char* const* argv) {
    CLI::App app{"watermark-noise toolkit"};
    app.require_subcommand(1);

    Context ctx;
    std::string config_path, pattern_path, dataset_path, augmented_path, resume_path;
    std::string checkpoint_path, input_path, registry_dir, out_file, role = "train";
    bool strip_images = false;
    double detect_threshold = 0.5;
    double kl_alpha = 0.5;
    std::uint64_t kl_d = 16384;

    if (const char* env = std::getenv("SERUM_OUT_DIR")) ctx.out_dir = env;
    if (ctx.out_dir.empty()) ctx.out_dir = "out";
    if (const char* env = std::getenv("SERUM_THREADS"))
        ctx.threads = static_cast<std::uint32_t>(std::strtoul(env, nullptr, 10));
    if (ctx.threads == 0) ctx.threads = 1;

    app.add_option("--config", config_path, "run configuration file (JSON)");
    std::uint64_t seed_flag = 0;
    auto* seed_opt = app.add_option("--seed", seed_flag, "override the command's primary seed");
    app.add_option("--out", ctx.out_dir, "output directory");
    app.add_option("--format", ctx.format, "report format: table or data")
        ->check(CLI::IsMember({"table", "data"}));
    app.add_option("--threads", ctx.threads, "worker threads for evaluation");
    app.add_flag("--override-hash-check", ctx.override_hash_check,
                 "allow eval inputs with mismatched config hashes");

    auto* c_gen = app.add_subcommand("gen-pattern", "generate a watermark pattern");
    auto* c_mkds = app.add_subcommand("make-dataset", "generate a toy dataset");
    c_mkds->add_option("--pattern", pattern_path, "pattern file (.srmp)");
    c_mkds->add_option("--role", role, "train or eval seed range")
        ->check(CLI::IsMember({"train", "eval"}));
    auto* c_pre = app.add_subcommand("precompute", "precompute perturbed variants");
    c_pre->add_option("--dataset", dataset_path, "source dataset")->required();
    auto* c_train = app.add_subcommand("train", "train the watermark detector");
    c_train->add_option("--dataset", dataset_path, "training dataset")->required();
    c_train->add_option("--augmented", augmented_path, "precomputed perturbations");
    c_train->add_option("--resume", resume_path, "checkpoint to resume from");
    auto* c_detect = app.add_subcommand("detect", "score a single tensor or image");
    c_detect->add_option("--checkpoint", checkpoint_path, "detector checkpoint")->required();
    c_detect->add_option("--input", input_path, "tensor file (.srmt)")->required();
    c_detect->add_option("--threshold", detect_threshold, "decision threshold");
    auto* c_eval = app.add_subcommand("eval", "run the evaluation suite");
    c_eval->add_option("--checkpoint", checkpoint_path, "detector checkpoint")->required();
    c_eval->add_option("--dataset", dataset_path, "held-out dataset")->required();
    auto* c_mua = app.add_subcommand("multiuser-assign", "create a user registry");
    auto* c_mut = app.add_subcommand("multiuser-train", "train per-pattern detectors");
    c_mut->add_option("--registry", registry_dir, "registry directory")->required();
    auto* c_mui = app.add_subcommand("multiuser-identify", "detect and identify a user");
    c_mui->add_option("--registry", registry_dir, "registry directory")->required();
    c_mui->add_option("--input", input_path, "tensor file (.srmt)")->required();
    auto* c_kl = app.add_subcommand("kl", "closed-form divergence values");
    c_kl->add_option("--alpha", kl_alpha, "watermark strength");
    c_kl->add_option("--d", kl_d, "latent dimensionality");
    auto* c_import = app.add_subcommand("import", "validate and summarize an artifact");
    c_import->add_option("--input", input_path, "artifact file")->required();
    auto* c_export = app.add_subcommand("export", "rewrite a dataset container");
    c_export->add_option("--dataset", dataset_path, "source dataset")->required();
    c_export->add_option("--out-file", out_file, "destination file")->required();
    c_export->add_flag("--strip-images", strip_images, "drop image payloads");

    // global flags remain usable after the subcommand name
    for (auto* sub : {c_gen, c_mkds, c_pre, c_train, c_detect, c_eval, c_mua, c_mut,
                      c_mui, c_kl, c_import, c_export})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (c_gen->parsed()) ctx.command = "gen-pattern";
        else if (c_mkds->parsed()) ctx.command = "make-dataset";
        else if (c_pre->parsed()) ctx.command = "precompute";
        else if (c_train->parsed()) ctx.command = "train";
        else if (c_detect->parsed()) ctx.command = "detect";
        else if (c_eval->parsed()) ctx.command = "eval";
        else if (c_mua->parsed()) ctx.command = "multiuser-assign";
        else if (c_mut->parsed()) ctx.command = "multiuser-train";
        else if (c_mui->parsed()) ctx.command = "multiuser-identify";
        else if (c_kl->parsed()) ctx.command = "kl";
        else if (c_import->parsed()) ctx.command = "import";
        else if (c_export->parsed()) ctx.command = "export";

        std::string config_text;
        if (!config_path.empty()) {
            const auto bytes = io::read_file(config_path);
            config_text.assign(bytes.begin(), bytes.end());
        }
        ctx.cfg = config::validate_config(config_text);
        ctx.config_path = config_path;
        if (!app.count("--out") && !std::getenv("SERUM_OUT_DIR"))
            ctx.out_dir = ctx.cfg.paths.out_dir;
        if (seed_opt->count()) ctx.seed_override = seed_flag;
        if (ctx.threads == 0) ctx.threads = 1;

        if (c_gen->parsed()) cmd_gen_pattern(ctx);
        else if (c_mkds->parsed()) cmd_make_dataset(ctx, pattern_path, role);
        else if (c_pre->parsed()) cmd_precompute(ctx, dataset_path);
        else if (c_train->parsed()) cmd_train(ctx, dataset_path, augmented_path, resume_path);
        else if (c_detect->parsed()) cmd_detect(ctx, checkpoint_path, input_path, detect_threshold);
        else if (c_eval->parsed()) cmd_eval(ctx, checkpoint_path, dataset_path);
        else if (c_mua->parsed()) cmd_multiuser_assign(ctx);
        else if (c_mut->parsed()) cmd_multiuser_train(ctx, registry_dir);
        else if (c_mui->parsed()) cmd_multiuser_identify(ctx, registry_dir, input_path);
        else if (c_kl->parsed()) cmd_kl(ctx, kl_alpha, kl_d);
        else if (c_import->parsed()) cmd_import(ctx, input_path);
        else if (c_export->parsed()) cmd_export(ctx, dataset_path, out_file, strip_images);

        ctx.write_manifest();
        std::error_code ec;
        fs::remove(fs::path(ctx.out_dir) / "FAILED.json", ec);
        return 0;
    } catch (const std::exception& e) {
        const json err{{"error", ctx.command.empty() ? "usage" : ctx.command},
                       {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        try {
            if (!ctx.out_dir.empty()) {
                fs::create_directories(ctx.out_dir);
                io::atomic_write_file((fs::path(ctx.out_dir) / "FAILED.json").string(),
                                      err.dump(2) + "\n");
            }
        } catch (...) {
        }
        return 1;
    }
}

}  // namespace serum::cli
