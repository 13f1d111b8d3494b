#include "serum/config.hpp"

#include <cmath>
#include <set>

#include "serum/errors.hpp"
#include "serum/io.hpp"

#include <nlohmann/json.hpp>

namespace serum::config {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& path,
                    const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError(path + "." + k, "unknown key");
}

template <typename T>
T get_num(const json& j, const std::string& path, const char* key, T fallback,
          double lo, double hi) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number())
        throw ConfigError(path + "." + key, "expected a number");
    const double x = v.get<double>();
    if (!(x >= lo && x <= hi))
        throw ConfigError(path + "." + key,
                          "value " + std::to_string(x) + " outside [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
    if constexpr (std::is_integral_v<T>) {
        if (x != std::floor(x))
            throw ConfigError(path + "." + key, "expected an integer");
    }
    return static_cast<T>(x);
}

std::uint64_t get_seed(const json& j, const std::string& path, const char* key,
                       std::uint64_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_unsigned() && !v.is_number_integer())
        throw ConfigError(path + "." + key, "expected a non-negative integer seed");
    if (v.is_number_integer() && v.get<std::int64_t>() < 0)
        throw ConfigError(path + "." + key, "seed must be non-negative");
    return v.get<std::uint64_t>();
}

}  // namespace

RunConfig default_config() {
    RunConfig cfg;
    cfg.perturbations = perturb::default_suite();
    return cfg;
}

RunConfig validate_config(const std::string& text) {
    json j;
    try {
        j = text.empty() ? json::object() : json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what(),
                         static_cast<std::uint64_t>(e.byte));
    }
    RunConfig cfg = default_config();
    reject_unknown(j, "config",
                   {"pipeline", "pattern", "perturbations", "training", "dataset",
                    "evaluation", "multiuser", "paths"});

    if (j.contains("pipeline")) {
        const auto& p = j.at("pipeline");
        reject_unknown(p, "pipeline", {"seed", "channels", "width", "height"});
        cfg.pipeline.seed = get_seed(p, "pipeline", "seed", cfg.pipeline.seed);
        cfg.pipeline.channels =
            get_num<std::uint32_t>(p, "pipeline", "channels", cfg.pipeline.channels, 1, 64);
        cfg.pipeline.width =
            get_num<std::uint32_t>(p, "pipeline", "width", cfg.pipeline.width, 1, 256);
        cfg.pipeline.height =
            get_num<std::uint32_t>(p, "pipeline", "height", cfg.pipeline.height, 1, 256);
    }

    if (j.contains("pattern")) {
        const auto& p = j.at("pattern");
        reject_unknown(p, "pattern", {"seed", "alpha", "id"});
        cfg.pattern.seed = get_seed(p, "pattern", "seed", cfg.pattern.seed);
        cfg.pattern.alpha = get_num<double>(p, "pattern", "alpha", cfg.pattern.alpha, 0.0, 1.0);
        if (p.contains("id")) {
            if (!p.at("id").is_string()) throw ConfigError("pattern.id", "expected a string");
            cfg.pattern.id = p.at("id");
        }
    }

    if (j.contains("perturbations")) {
        const auto& arr = j.at("perturbations");
        if (!arr.is_array()) throw ConfigError("perturbations", "expected an array");
        cfg.perturbations.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            try {
                cfg.perturbations.push_back(perturb::PerturbSpec::from_text(arr[i].dump()));
            } catch (const Error& e) {
                throw ConfigError("perturbations[" + std::to_string(i) + "]", e.what());
            }
        }
    }

    if (j.contains("training")) {
        const auto& t = j.at("training");
        reject_unknown(t, "training",
                       {"epochs", "batch_clean", "batch_marked", "m", "optimizer",
                        "scheduler", "sampler", "precompute_copies", "seed",
                        "val_fraction", "model"});
        auto& tr = cfg.training;
        tr.epochs = get_num<std::uint32_t>(t, "training", "epochs", tr.epochs, 1, 100000);
        tr.batch_clean =
            get_num<std::uint32_t>(t, "training", "batch_clean", tr.batch_clean, 1, 65536);
        tr.batch_marked =
            get_num<std::uint32_t>(t, "training", "batch_marked", tr.batch_marked, 1, 65536);
        tr.m = get_num<std::uint32_t>(t, "training", "m", tr.m, 0, 65536);
        tr.precompute_copies = get_num<std::uint32_t>(t, "training", "precompute_copies",
                                                      tr.precompute_copies, 1, 64);
        tr.seed = get_seed(t, "training", "seed", tr.seed);
        tr.val_fraction =
            get_num<double>(t, "training", "val_fraction", tr.val_fraction, 0.0, 0.5);
        if (t.contains("optimizer")) {
            const auto& o = t.at("optimizer");
            reject_unknown(o, "training.optimizer", {"lr", "beta1", "beta2", "eps"});
            tr.lr = get_num<double>(o, "training.optimizer", "lr", tr.lr, 1e-12, 10.0);
            tr.beta1 = get_num<double>(o, "training.optimizer", "beta1", tr.beta1, 0.0, 1.0);
            tr.beta2 = get_num<double>(o, "training.optimizer", "beta2", tr.beta2, 0.0, 1.0);
            tr.adam_eps = get_num<double>(o, "training.optimizer", "eps", tr.adam_eps, 0.0, 1.0);
        }
        if (t.contains("scheduler")) {
            const auto& s = t.at("scheduler");
            reject_unknown(s, "training.scheduler", {"factor", "patience"});
            tr.sched_factor =
                get_num<double>(s, "training.scheduler", "factor", tr.sched_factor, 0.0, 1.0);
            tr.sched_patience = get_num<std::uint32_t>(s, "training.scheduler", "patience",
                                                       tr.sched_patience, 0, 1000);
        }
        if (t.contains("sampler")) {
            const auto& s = t.at("sampler");
            reject_unknown(s, "training.sampler",
                           {"eps", "eps_smooth", "tau", "base_lr_pos", "base_lr_neg",
                            "boost", "beta"});
            auto& h = tr.sampler;
            h.eps = get_num<double>(s, "training.sampler", "eps", h.eps, 1e-9, 0.4999);
            h.eps_smooth =
                get_num<double>(s, "training.sampler", "eps_smooth", h.eps_smooth, 0.0, 1.0);
            if (s.contains("tau")) {
                const auto& tv = s.at("tau");
                if (tv.is_string() && tv.get<std::string>() == "inf")
                    h.tau = std::numeric_limits<double>::infinity();
                else if (tv.is_number() && tv.get<double>() >= 0.0)
                    h.tau = tv.get<double>();
                else
                    throw ConfigError("training.sampler.tau",
                                      "expected a non-negative number or \"inf\"");
            }
            h.base_lr_pos =
                get_num<double>(s, "training.sampler", "base_lr_pos", h.base_lr_pos, 0.0, 10.0);
            h.base_lr_neg =
                get_num<double>(s, "training.sampler", "base_lr_neg", h.base_lr_neg, 0.0, 10.0);
            h.boost = get_num<double>(s, "training.sampler", "boost", h.boost, 0.0, 1000.0);
            h.beta = get_num<double>(s, "training.sampler", "beta", h.beta, 0.0, 100.0);
        }
        if (t.contains("model")) {
            const auto& mj = t.at("model");
            reject_unknown(mj, "training.model", {"convs"});
            std::vector<detector::ConvSpec> convs;
            for (const auto& cv : mj.at("convs")) {
                reject_unknown(cv, "training.model.convs[]",
                               {"out", "kernel", "stride", "pad"});
                detector::ConvSpec c{};
                c.out_ch = get_num<std::uint32_t>(cv, "training.model.convs[]", "out", 8, 1, 1024);
                c.kernel =
                    get_num<std::uint32_t>(cv, "training.model.convs[]", "kernel", 3, 1, 15);
                c.stride =
                    get_num<std::uint32_t>(cv, "training.model.convs[]", "stride", 1, 1, 8);
                c.pad = get_num<std::uint32_t>(cv, "training.model.convs[]", "pad", 1, 0, 7);
                convs.push_back(c);
            }
            if (convs.empty())
                throw ConfigError("training.model.convs", "need at least one layer");
            tr.model_convs = std::move(convs);
        }
    }

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        reject_unknown(d, "dataset", {"n_per_class", "seed"});
        cfg.dataset.n_per_class = get_num<std::uint32_t>(d, "dataset", "n_per_class",
                                                         cfg.dataset.n_per_class, 1, 1000000);
        cfg.dataset.seed = get_seed(d, "dataset", "seed", cfg.dataset.seed);
    }

    if (j.contains("evaluation")) {
        const auto& e = j.at("evaluation");
        reject_unknown(e, "evaluation", {"fpr_target", "n_per_class", "seed"});
        if (e.contains("fpr_target")) {
            if (!e.at("fpr_target").is_number())
                throw ConfigError("evaluation.fpr_target", "expected a number");
            const double f = e.at("fpr_target").get<double>();
            if (!(f >= 0.0 && f < 1.0))
                throw ConfigError("evaluation.fpr_target",
                                  "value " + std::to_string(f) + " outside [0, 1)");
            cfg.evaluation.fpr_target = f;
        }
        cfg.evaluation.n_per_class = get_num<std::uint32_t>(
            e, "evaluation", "n_per_class", cfg.evaluation.n_per_class, 1, 1000000);
        cfg.evaluation.seed = get_seed(e, "evaluation", "seed", cfg.evaluation.seed);
    }

    if (j.contains("multiuser")) {
        const auto& m = j.at("multiuser");
        reject_unknown(m, "multiuser",
                       {"m", "k", "n", "alpha_per_pattern", "alpha_total", "seed",
                        "train_n_per_class", "train_epochs"});
        cfg.multiuser.m = get_num<std::uint32_t>(m, "multiuser", "m", cfg.multiuser.m, 1, 100000);
        cfg.multiuser.k = get_num<std::uint32_t>(m, "multiuser", "k", cfg.multiuser.k, 1, 64);
        cfg.multiuser.n = get_num<std::uint64_t>(m, "multiuser", "n", cfg.multiuser.n, 1, 1e18);
        cfg.multiuser.alpha_per_pattern = get_num<double>(
            m, "multiuser", "alpha_per_pattern", cfg.multiuser.alpha_per_pattern, 0.0, 1.0);
        cfg.multiuser.alpha_total =
            get_num<double>(m, "multiuser", "alpha_total", cfg.multiuser.alpha_total, 0.0, 1.0);
        cfg.multiuser.seed = get_seed(m, "multiuser", "seed", cfg.multiuser.seed);
        cfg.multiuser.train_n_per_class = get_num<std::uint32_t>(
            m, "multiuser", "train_n_per_class", cfg.multiuser.train_n_per_class, 1, 1000000);
        cfg.multiuser.train_epochs = get_num<std::uint32_t>(
            m, "multiuser", "train_epochs", cfg.multiuser.train_epochs, 1, 100000);
        if (cfg.multiuser.k > cfg.multiuser.m)
            throw ConfigError("multiuser.k", "k exceeds the pattern count m");
    }

    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        reject_unknown(p, "paths", {"out_dir"});
        if (p.contains("out_dir")) {
            if (!p.at("out_dir").is_string())
                throw ConfigError("paths.out_dir", "expected a string");
            cfg.paths.out_dir = p.at("out_dir");
        }
    }

    // cross-field invariants
    if (cfg.training.m > cfg.training.batch_clean ||
        cfg.training.m > cfg.training.batch_marked)
        throw ConfigError("training.m", "m exceeds the per-class batch size");
    const std::uint64_t ds_lo = cfg.dataset.seed;
    const std::uint64_t ds_hi = cfg.dataset.seed + 2ULL * cfg.dataset.n_per_class;
    const std::uint64_t ev_lo = cfg.evaluation.seed;
    const std::uint64_t ev_hi = cfg.evaluation.seed + 2ULL * cfg.evaluation.n_per_class;
    if (ds_lo < ev_hi && ev_lo < ds_hi)
        throw ConfigError("evaluation.seed",
                          "evaluation seed range overlaps the training dataset range");
    return cfg;
}

std::string RunConfig::canonical_json() const {
    json perts = json::array();
    for (const auto& p : perturbations) perts.push_back(json::parse(p.to_text()));
    json model = nullptr;
    if (training.model_convs) {
        json convs = json::array();
        for (const auto& c : *training.model_convs)
            convs.push_back({{"out", c.out_ch},
                             {"kernel", c.kernel},
                             {"stride", c.stride},
                             {"pad", c.pad}});
        model = {{"convs", convs}};
    }
    const json j{
        {"pipeline",
         {{"seed", pipeline.seed},
          {"channels", pipeline.channels},
          {"width", pipeline.width},
          {"height", pipeline.height}}},
        {"pattern",
         {{"seed", pattern.seed}, {"alpha", pattern.alpha}, {"id", pattern.id}}},
        {"perturbations", perts},
        {"training",
         {{"epochs", training.epochs},
          {"batch_clean", training.batch_clean},
          {"batch_marked", training.batch_marked},
          {"m", training.m},
          {"optimizer",
           {{"lr", training.lr},
            {"beta1", training.beta1},
            {"beta2", training.beta2},
            {"eps", training.adam_eps}}},
          {"scheduler",
           {{"factor", training.sched_factor}, {"patience", training.sched_patience}}},
          {"sampler",
           {{"eps", training.sampler.eps},
            {"eps_smooth", training.sampler.eps_smooth},
            {"tau", std::isinf(training.sampler.tau) ? json("inf")
                                                     : json(training.sampler.tau)},
            {"base_lr_pos", training.sampler.base_lr_pos},
            {"base_lr_neg", training.sampler.base_lr_neg},
            {"boost", training.sampler.boost},
            {"beta", training.sampler.beta}}},
          {"precompute_copies", training.precompute_copies},
          {"seed", training.seed},
          {"val_fraction", training.val_fraction},
          {"model", model}}},
        {"dataset", {{"n_per_class", dataset.n_per_class}, {"seed", dataset.seed}}},
        {"evaluation",
         {{"fpr_target", evaluation.fpr_target},
          {"n_per_class", evaluation.n_per_class},
          {"seed", evaluation.seed}}},
        {"multiuser",
         {{"m", multiuser.m},
          {"k", multiuser.k},
          {"n", multiuser.n},
          {"alpha_per_pattern", multiuser.alpha_per_pattern},
          {"alpha_total", multiuser.alpha_total},
          {"seed", multiuser.seed},
          {"train_n_per_class", multiuser.train_n_per_class},
          {"train_epochs", multiuser.train_epochs}}},
        {"paths", {{"out_dir", paths.out_dir}}},
    };
    return j.dump();
}

std::string RunConfig::config_hash() const { return io::sha256_hex(canonical_json()); }

detector::ModelSpec RunConfig::model_spec() const {
    if (!training.model_convs)
        return detector::ModelSpec::desk_default(pipeline.channels, pipeline.width,
                                                 pipeline.height);
    detector::ModelSpec spec;
    spec.in_channels = pipeline.channels;
    spec.in_width = pipeline.width;
    spec.in_height = pipeline.height;
    std::uint32_t in_ch = pipeline.channels;
    for (auto cv : *training.model_convs) {
        cv.in_ch = in_ch;
        in_ch = cv.out_ch;
        spec.convs.push_back(cv);
    }
    spec.validate();
    return spec;
}

detector::TrainConfig RunConfig::train_config() const {
    detector::TrainConfig tc;
    tc.epochs = training.epochs;
    tc.batch_clean = training.batch_clean;
    tc.batch_marked = training.batch_marked;
    tc.dynamic_count = training.m;
    tc.alpha = pattern.alpha;
    tc.augmentations = perturbations;
    tc.precompute_copies = training.precompute_copies;
    tc.seed = training.seed;
    tc.val_fraction = training.val_fraction;
    tc.lr = training.lr;
    tc.beta1 = training.beta1;
    tc.beta2 = training.beta2;
    tc.adam_eps = training.adam_eps;
    tc.sched_factor = training.sched_factor;
    tc.sched_patience = training.sched_patience;
    tc.model = model_spec();
    return tc;
}

}  // namespace serum::config
