#include "serum/multiuser.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "serum/errors.hpp"
#include "serum/io.hpp"
#include "serum/rng.hpp"

#include <nlohmann/json.hpp>

namespace serum::multiuser {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::uint64_t binomial(std::uint64_t m, std::uint64_t k) {
    if (k > m) return 0;
    k = std::min(k, m - k);
    std::uint64_t c = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        // c * (m-k+i) / i is exact at every step
        const std::uint64_t num = m - k + i;
        if (c > UINT64_MAX / num) return UINT64_MAX;  // saturate
        c = c * num / i;
    }
    return c;
}

UserRegistry assign_users(std::uint32_t m, std::uint32_t k, std::uint64_t n,
                          std::uint64_t seed) {
    if (m == 0 || k == 0 || k > m)
        throw core::InvalidArgumentError("assign_users: need 1 <= k <= m");
    if (n == 0) throw core::InvalidArgumentError("assign_users: need n >= 1");
    const std::uint64_t cap = binomial(m, k);
    if (n > cap)
        throw CapacityError("assign_users: n = " + std::to_string(n) +
                            " exceeds C(" + std::to_string(m) + ", " +
                            std::to_string(k) + ") = " + std::to_string(cap));

    UserRegistry reg;
    reg.subset_size = k;
    reg.seed = seed;

    if (n == cap && cap != UINT64_MAX) {
        // full lexicographic enumeration
        Subset cur(k);
        for (std::uint32_t i = 0; i < k; ++i) cur[i] = i;
        for (;;) {
            reg.users.push_back(cur);
            int i = static_cast<int>(k) - 1;
            while (i >= 0 && cur[i] == m - k + i) --i;
            if (i < 0) break;
            ++cur[i];
            for (std::uint32_t j = i + 1; j < k; ++j) cur[j] = cur[j - 1] + 1;
        }
    } else {
        // seeded sampling of distinct subsets without replacement
        core::Rng rng(core::derive_seed(seed, "assign_users"));
        std::set<Subset> seen;
        std::vector<std::uint32_t> pool(m);
        for (std::uint32_t i = 0; i < m; ++i) pool[i] = i;
        while (reg.users.size() < n) {
            for (std::uint32_t i = 0; i < k; ++i)
                std::swap(pool[i], pool[i + rng.below(m - i)]);
            Subset s(pool.begin(), pool.begin() + k);
            std::sort(s.begin(), s.end());
            if (seen.insert(s).second) reg.users.push_back(std::move(s));
        }
    }
    return reg;
}

std::vector<double> score_all(const UserRegistry& registry, const LatentTensor& latent) {
    if (registry.detectors.size() != registry.patterns.size())
        throw RegistryIncompleteError(
            "score_all: registry holds " + std::to_string(registry.detectors.size()) +
            " detectors for " + std::to_string(registry.patterns.size()) + " patterns");
    std::vector<double> scores;
    scores.reserve(registry.detectors.size());
    for (const auto& d : registry.detectors) scores.push_back(d.forward(latent));
    return scores;
}

double watermark_score(const std::vector<double>& scores) {
    if (scores.empty())
        throw core::InvalidArgumentError("watermark_score: empty score array");
    return *std::max_element(scores.begin(), scores.end());
}

double calibrate_threshold(const std::vector<double>& negative_scores,
                           double fpr_target) {
    if (negative_scores.empty())
        throw core::InvalidArgumentError("calibrate_threshold: no negative scores");
    if (!(fpr_target >= 0.0 && fpr_target < 1.0))
        throw core::RangeError("calibrate_threshold: fpr target outside [0, 1)");
    std::vector<double> neg = negative_scores;
    std::sort(neg.begin(), neg.end(), std::greater<>());
    const auto allowed = static_cast<std::size_t>(
        std::floor(fpr_target * static_cast<double>(neg.size())));
    return neg[std::min(allowed, neg.size() - 1)];
}

IdentifyResult identify(const UserRegistry& registry,
                        const std::vector<double>& scores) {
    if (registry.users.empty())
        throw core::InvalidArgumentError("identify: registry has no users");
    if (scores.size() != registry.patterns.size() && !registry.patterns.empty())
        throw core::InvalidArgumentError("identify: score count != pattern count");
    IdentifyResult out;
    if (watermark_score(scores) <= registry.threshold) {
        out.watermarked = false;
        return out;
    }
    out.watermarked = true;
    double best = -std::numeric_limits<double>::infinity();
    for (std::uint32_t uid = 0; uid < registry.users.size(); ++uid) {
        double log_prod = 0;
        for (std::uint32_t p : registry.users[uid]) log_prod += std::log(scores.at(p));
        if (log_prod > best) {  // strict: ties stay with the lowest user id
            best = log_prod;
            out.user_id = uid;
        }
    }
    out.log_score = best;
    return out;
}

namespace {

std::string pattern_file(std::uint32_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%04u.srmp", i);
    return buf;
}
std::string detector_file(std::uint32_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "d%04u.srmc", i);
    return buf;
}

}  // namespace

void write_registry(const UserRegistry& registry, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "patterns");
    fs::create_directories(fs::path(dir) / "detectors");

    json patterns = json::array();
    for (std::uint32_t i = 0; i < registry.patterns.size(); ++i) {
        const auto rel = std::string("patterns/") + pattern_file(i);
        const auto path = (fs::path(dir) / rel).string();
        io::write_pattern(registry.patterns[i], path);
        patterns.push_back({{"file", rel},
                            {"id", registry.patterns[i].id},
                            {"sha256", io::sha256_file(path)}});
    }

    json detectors = json::array();
    for (std::uint32_t i = 0; i < registry.detectors.size(); ++i) {
        const auto rel = std::string("detectors/") + detector_file(i);
        const auto path = (fs::path(dir) / rel).string();
        detector::Checkpoint ck;
        ck.model = registry.detectors[i];
        ck.config.model = registry.detectors[i].spec;
        ck.priorities = sampler::PriorityState::init(1);
        ck.metadata["pattern_index"] = std::to_string(i);
        detector::write_checkpoint(ck, path);
        detectors.push_back({{"file", rel}, {"sha256", io::sha256_file(path)}});
    }

    json users = json::array();
    for (const auto& s : registry.users) users.push_back(s);
    io::atomic_write_file((fs::path(dir) / "users.json").string(),
                          json{{"users", users}}.dump(2) + "\n");

    json manifest{{"m", registry.patterns.size()},
                  {"k", registry.subset_size},
                  {"n", registry.users.size()},
                  {"alpha_per_pattern", registry.alpha_per_pattern},
                  {"alpha_total", registry.alpha_total},
                  {"threshold", registry.threshold},
                  {"seed", registry.seed},
                  {"generator", std::string(core::kGeneratorName)},
                  {"patterns", patterns},
                  {"detectors", detectors},
                  {"users_file", "users.json"}};
    io::atomic_write_file((fs::path(dir) / "manifest.json").string(),
                          manifest.dump(2) + "\n");
}

UserRegistry read_registry(const std::string& dir) {
    const auto manifest_path = (fs::path(dir) / "manifest.json").string();
    const auto bytes = io::read_file(manifest_path);
    const json manifest = json::parse(bytes.begin(), bytes.end());
    UserRegistry reg;
    reg.subset_size = manifest.at("k");
    reg.alpha_per_pattern = manifest.at("alpha_per_pattern");
    reg.alpha_total = manifest.at("alpha_total");
    reg.threshold = manifest.at("threshold");
    reg.seed = manifest.at("seed");

    for (const auto& p : manifest.at("patterns")) {
        const auto path = (fs::path(dir) / p.at("file").get<std::string>()).string();
        const std::string expect = p.at("sha256");
        if (io::sha256_file(path) != expect)
            throw Error("registry: content hash mismatch for " + path);
        reg.patterns.push_back(io::read_pattern(path));
    }
    for (const auto& d : manifest.at("detectors")) {
        const auto path = (fs::path(dir) / d.at("file").get<std::string>()).string();
        const std::string expect = d.at("sha256");
        if (io::sha256_file(path) != expect)
            throw Error("registry: content hash mismatch for " + path);
        reg.detectors.push_back(detector::read_checkpoint(path).model);
    }

    const auto users_path =
        (fs::path(dir) / manifest.at("users_file").get<std::string>()).string();
    const auto ubytes = io::read_file(users_path);
    const json users = json::parse(ubytes.begin(), ubytes.end());
    for (const auto& s : users.at("users"))
        reg.users.push_back(s.get<Subset>());

    const std::uint64_t m = manifest.at("m");
    const std::uint64_t n = manifest.at("n");
    if (reg.patterns.size() != m || reg.users.size() != n)
        throw Error("registry: manifest counts disagree with payload");
    return reg;
}

}  // namespace serum::multiuser
