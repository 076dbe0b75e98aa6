#pragma once

#include <mffqi/envs.hpp>
#include <mffqi/fqi.hpp>
#include <mffqi/regression.hpp>
#include <mffqi/types.hpp>

#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace mffqi {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON encodings. The float profile is nlohmann's shortest round-trip
// encoding, so save/load is lossless for doubles.
// ---------------------------------------------------------------------------

inline json to_json(const BaseKernelSpec& spec) { return json{{"sigma", spec.sigma}}; }

inline BaseKernelSpec base_spec_from_json(const json& j) {
    BaseKernelSpec spec;
    spec.sigma = j.at("sigma").get<double>();
    return spec;
}

inline json to_json(const EmbeddingKernelSpec& spec) {
    return json{{"variant", to_string(spec.variant)}, {"tau", spec.tau}};
}

inline EmbeddingKernelSpec emb_spec_from_json(const json& j) {
    EmbeddingKernelSpec spec;
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "linear")
        spec.variant = EmbeddingKernelSpec::Variant::linear;
    else if (variant == "gaussian-on-mmd")
        spec.variant = EmbeddingKernelSpec::Variant::gaussian_on_mmd;
    else
        throw config_error("unknown embedding kernel variant: " + variant);
    spec.tau = j.value("tau", 1.0);
    return spec;
}

inline json to_json(const EnvSpec& spec) {
    json j{{"n_agents", spec.n_agents},
           {"r_max", spec.r_max},
           {"gamma", spec.gamma},
           {"seed", spec.seed}};
    if (const auto* g = std::get_if<GaussianDriftParams>(&spec.params)) {
        j["kind"] = "gaussian-drift";
        j["gauss"] = json{{"d", g->d},
                          {"drifts", g->drifts},
                          {"pull", g->pull},
                          {"noise_std", g->noise_std},
                          {"reward_weights", g->reward_weights},
                          {"reward_offsets", g->reward_offsets},
                          {"reward_noise_std", g->reward_noise_std}};
    } else {
        const auto& c = spec.chain();
        j["kind"] = "discrete-chain";
        j["chain"] = json{{"n_states", c.n_states},
                          {"transitions", c.transitions},
                          {"reward_weights", c.reward_weights},
                          {"separation", c.separation},
                          {"obs_noise_std", c.obs_noise_std},
                          {"init_probs", c.init_probs},
                          {"init_mode", c.init_mode},
                          {"init_fractions", c.init_fractions}};
    }
    return j;
}

inline EnvSpec env_spec_from_json(const json& j) {
    EnvSpec spec;
    spec.n_agents = j.at("n_agents").get<int>();
    spec.r_max = j.at("r_max").get<double>();
    spec.gamma = j.at("gamma").get<double>();
    spec.seed = j.value("seed", std::uint64_t{0});
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "gaussian-drift") {
        const json& g = j.at("gauss");
        GaussianDriftParams p;
        p.d = g.at("d").get<int>();
        p.drifts = g.at("drifts").get<std::vector<std::vector<double>>>();
        p.pull = g.value("pull", 0.0);
        p.noise_std = g.value("noise_std", 0.0);
        p.reward_weights = g.at("reward_weights").get<std::vector<double>>();
        p.reward_offsets = g.at("reward_offsets").get<std::vector<double>>();
        p.reward_noise_std = g.value("reward_noise_std", 0.0);
        spec.params = std::move(p);
    } else if (kind == "discrete-chain") {
        const json& c = j.at("chain");
        DiscreteChainParams p;
        p.n_states = c.at("n_states").get<int>();
        p.transitions = c.at("transitions").get<std::vector<std::vector<std::vector<double>>>>();
        p.reward_weights = c.at("reward_weights").get<std::vector<std::vector<double>>>();
        p.separation = c.value("separation", 3.0);
        p.obs_noise_std = c.value("obs_noise_std", 0.0);
        p.init_probs = c.at("init_probs").get<std::vector<double>>();
        p.init_mode = c.value("init_mode", "iid");
        p.init_fractions = c.value("init_fractions", std::vector<std::vector<double>>{});
        spec.params = std::move(p);
    } else {
        throw config_error("unknown env kind: " + kind);
    }
    validate(spec);
    return spec;
}

// ---------------------------------------------------------------------------
// Batch container: self-describing JSON with a header and per-record flat
// coordinate arrays.
// ---------------------------------------------------------------------------

struct BatchFile {
    Batch batch;
    std::optional<EnvSpec> env;
    std::uint64_t seed = 0;
};

inline json to_json(const BatchFile& file) {
    const Batch& b = file.batch;
    json header{{"d", b.records.front().sample.dim()},
                {"N", b.records.front().sample.size()},
                {"n", b.records.size()},
                {"n_actions", b.n_actions},
                {"gamma", b.gamma},
                {"r_max", b.r_max},
                {"seed", file.seed}};
    header["env"] = file.env ? to_json(*file.env) : json(nullptr);
    json records = json::array();
    for (const auto& rec : b.records) {
        records.push_back(json{{"action", rec.action},
                               {"reward", rec.reward},
                               {"sample", rec.sample.flat()},
                               {"next_sample", rec.next_sample.flat()}});
    }
    return json{{"format", "mffqi-batch"}, {"version", 1}, {"header", std::move(header)},
                {"records", std::move(records)}};
}

inline BatchFile batch_file_from_json(const json& j) {
    if (j.value("format", "") != "mffqi-batch") throw config_error("not a batch container");
    const json& header = j.at("header");
    BatchFile file;
    file.seed = header.value("seed", std::uint64_t{0});
    if (header.contains("env") && !header.at("env").is_null())
        file.env = env_spec_from_json(header.at("env"));
    Batch& b = file.batch;
    b.n_actions = header.at("n_actions").get<int>();
    b.gamma = header.at("gamma").get<double>();
    b.r_max = header.at("r_max").get<double>();
    const std::size_t d = header.at("d").get<std::size_t>();
    for (const json& rec : j.at("records")) {
        b.records.push_back(TransitionRecord{
            AgentSample(rec.at("sample").get<std::vector<double>>(), d),
            rec.at("action").get<ActionId>(), rec.at("reward").get<double>(),
            AgentSample(rec.at("next_sample").get<std::vector<double>>(), d)});
    }
    validate(b);
    return file;
}

// ---------------------------------------------------------------------------
// Model container (same JSON profile as batches).
// ---------------------------------------------------------------------------

inline json to_json(const QModel& m) {
    json support = json::array();
    for (const auto& c : m.support)
        support.push_back(json{{"action", c.action}, {"d", c.sample.dim()}, {"states", c.sample.flat()}});
    std::vector<double> alpha(m.alpha.data(), m.alpha.data() + m.alpha.size());
    return json{{"format", "mffqi-model"}, {"version", 1},
                {"base", to_json(m.base)},  {"emb", to_json(m.emb)},
                {"q_max", m.q_max},         {"truncated", m.truncated},
                {"clamp_below", m.clamp_below}, {"support", std::move(support)}, {"alpha", alpha}};
}

inline QModel model_from_json(const json& j) {
    if (j.value("format", "") != "mffqi-model") throw config_error("not a model container");
    QModel m;
    m.base = base_spec_from_json(j.at("base"));
    m.emb = emb_spec_from_json(j.at("emb"));
    m.q_max = j.at("q_max").get<double>();
    m.truncated = j.at("truncated").get<bool>();
    m.clamp_below = j.value("clamp_below", false);
    for (const json& c : j.at("support")) {
        m.support.push_back(Config{c.at("action").get<ActionId>(),
                                   AgentSample(c.at("states").get<std::vector<double>>(),
                                               c.at("d").get<std::size_t>())});
    }
    const auto alpha = j.at("alpha").get<std::vector<double>>();
    m.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
    validate(m);
    return m;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw config_error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

inline void save_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write file: " + path);
    out << j.dump(2) << '\n';
}

inline void save_batch(const std::string& path, const Batch& batch,
                       const std::optional<EnvSpec>& env = std::nullopt, std::uint64_t seed = 0) {
    save_json(path, to_json(BatchFile{batch, env, seed}));
}

inline BatchFile load_batch(const std::string& path) { return batch_file_from_json(load_json(path)); }

inline void save_model(const std::string& path, const QModel& m) { save_json(path, to_json(m)); }

inline QModel load_model(const std::string& path) { return model_from_json(load_json(path)); }

// ---------------------------------------------------------------------------
// Results CSV (RFC 4180 quoting, fixed versioned header).
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string experiment;
    std::optional<std::uint64_t> seed;
    std::optional<int> n_agents;
    std::optional<int> batch_size;
    std::optional<int> kappa;
    std::optional<double> lambda;
    std::string metric;
    double value = 0.0;
    std::optional<double> wall_clock_s;
};

inline constexpr const char* kResultSchemaVersion = "result-rows-v1";
inline constexpr const char* kResultCsvHeader =
    "experiment,seed,N,n,kappa,lambda,metric,value,wall_clock_s";

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

}  // namespace detail

inline void write_csv_header(std::ostream& out) { out << kResultCsvHeader << '\n'; }

inline void write_csv_row(std::ostream& out, const ResultRow& row) {
    out << detail::csv_escape(row.experiment) << ',';
    if (row.seed) out << *row.seed;
    out << ',';
    if (row.n_agents) out << *row.n_agents;
    out << ',';
    if (row.batch_size) out << *row.batch_size;
    out << ',';
    if (row.kappa) out << *row.kappa;
    out << ',';
    if (row.lambda) out << detail::format_double(*row.lambda);
    out << ',';
    out << detail::csv_escape(row.metric) << ',';
    out << detail::format_double(row.value) << ',';
    if (row.wall_clock_s) out << detail::format_double(*row.wall_clock_s);
    out << '\n';
}

inline std::string rows_to_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    write_csv_header(out);
    for (const auto& row : rows) write_csv_row(out, row);
    return out.str();
}

inline void save_csv(const std::string& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path, std::ios::binary);  // binary: byte-stable line endings
    if (!out) throw config_error("cannot write file: " + path);
    out << rows_to_csv(rows);
}

#ifndef MFFQI_GIT_DESCRIBE
#define MFFQI_GIT_DESCRIBE "unknown"
#endif

inline std::string git_describe() { return MFFQI_GIT_DESCRIBE; }

/// Run manifest: everything needed to reproduce the outputs next to which it
/// is written.
inline json make_manifest(const std::string& command, const json& resolved_config,
                          const std::vector<std::string>& outputs) {
    return json{{"format", "mffqi-manifest"},
                {"version", 1},
                {"result_schema", kResultSchemaVersion},
                {"git_describe", git_describe()},
                {"command", command},
                {"config", resolved_config},
                {"outputs", outputs}};
}

}  // namespace mffqi
