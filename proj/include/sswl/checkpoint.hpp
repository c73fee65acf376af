#pragma once

/// Checkpoint container:
///
///     "SSWLCKPT" | u32 LE header length | header JSON | payload
///
/// The header carries the format version, precision, model configuration,
/// training metadata and a table of arrays (group, name, shape, offset,
/// count) into the payload; the payload is the raw little-endian arrays in
/// the checkpoint precision, CRC-64 protected.

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sswl/ct_dataio.hpp"
#include "sswl/rvae.hpp"

namespace sswl {

inline constexpr const char* checkpoint_format = "sswl-checkpoint/1";

enum class Precision { f32, f64 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "32" : "64"; }

inline Precision precision_from_string(const std::string& s) {
    if (s == "32" || s == "f32" || s == "float") return Precision::f32;
    if (s == "64" || s == "f64" || s == "double") return Precision::f64;
    throw ValidationError("precision must be 32 or 64, got '" + s + "'");
}

template <class T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

/// One epoch of the loss curve.
struct LogRow {
    int epoch = 0;
    std::string phase;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_mse = 0.0;

    friend bool operator==(const LogRow& a, const LogRow& b) {
        const auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
        return a.epoch == b.epoch && a.phase == b.phase && same(a.lr, b.lr) && same(a.train_loss, b.train_loss) &&
               same(a.val_mse, b.val_mse);
    }
};

/// Everything needed to continue training bit-identically.
template <class T>
struct TrainState {
    ParameterSet<T> params;
    ParameterSet<T> adam_m;
    ParameterSet<T> adam_v;
    std::int64_t step = 0;  // optimizer steps taken in the current phase
    int epoch = 0;          // completed epochs in the current phase
    std::string phase = "downstream";
    std::uint64_t seed = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    ParameterSet<T> best_params;
    std::vector<LogRow> log;

    static TrainState fresh(ParameterSet<T> params, std::uint64_t seed, std::string phase) {
        TrainState s;
        s.adam_m = params.zeros_like();
        s.adam_v = params.zeros_like();
        s.best_params = params;
        s.params = std::move(params);
        s.seed = seed;
        s.phase = std::move(phase);
        return s;
    }

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline nlohmann::json to_json(const RVAEConfig& c) {
    nlohmann::json skips = nlohmann::json::array();
    for (const auto& [e, d] : c.skip_pairs) skips.push_back({e, d});
    return {{"n_enc_layers", c.n_enc_layers}, {"n_dec_layers", c.n_dec_layers},
            {"filters", c.filters},           {"kernel", c.kernel},
            {"latent_dim", c.latent_dim},     {"bottleneck_hidden", c.bottleneck_hidden},
            {"bottleneck_enabled", c.bottleneck_enabled}, {"skip_pairs", skips},
            {"input_h", c.input_h},           {"input_w", c.input_w}};
}

inline RVAEConfig rvae_config_from_json(const nlohmann::json& j) {
    RVAEConfig c;
    c.n_enc_layers = j.at("n_enc_layers").get<int>();
    c.n_dec_layers = j.at("n_dec_layers").get<int>();
    c.filters = j.at("filters").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.bottleneck_hidden = j.at("bottleneck_hidden").get<int>();
    c.bottleneck_enabled = j.at("bottleneck_enabled").get<bool>();
    c.skip_pairs.clear();
    for (const auto& p : j.at("skip_pairs")) c.skip_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    c.input_h = j.at("input_h").get<int>();
    c.input_w = j.at("input_w").get<int>();
    c.validate();
    return c;
}

namespace detail {

inline nlohmann::json real_to_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double real_from_json(const nlohmann::json& j, double if_null) {
    return j.is_null() ? if_null : j.get<double>();
}

}  // namespace detail

template <class T>
std::vector<unsigned char> encode_checkpoint(const TrainState<T>& s, const RVAEConfig& c) {
    nlohmann::json arrays = nlohmann::json::array();
    std::vector<unsigned char> payload;
    const auto add_group = [&](const char* group, const ParameterSet<T>& set) {
        for (const auto& a : set.arrays()) {
            arrays.push_back({{"group", group},
                              {"name", a.name},
                              {"shape", a.shape},
                              {"offset", payload.size()},
                              {"count", a.values.size()}});
            for (T v : a.values) {
                if constexpr (std::is_same_v<T, float>)
                    detail::put_le<std::uint32_t>(payload, std::bit_cast<std::uint32_t>(v));
                else
                    detail::put_le<std::uint64_t>(payload, std::bit_cast<std::uint64_t>(v));
            }
        }
    };
    add_group("params", s.params);
    add_group("best_params", s.best_params);
    add_group("adam_m", s.adam_m);
    add_group("adam_v", s.adam_v);

    nlohmann::json log = nlohmann::json::array();
    for (const auto& r : s.log)
        log.push_back({{"epoch", r.epoch},
                       {"phase", r.phase},
                       {"lr", detail::real_to_json(r.lr)},
                       {"train_loss", detail::real_to_json(r.train_loss)},
                       {"val_mse", detail::real_to_json(r.val_mse)}});
    const nlohmann::json header = {
        {"format", checkpoint_format},
        {"precision", to_string(precision_of<T>())},
        {"config", to_json(c)},
        {"state",
         {{"phase", s.phase},
          {"epoch", s.epoch},
          {"step", s.step},
          {"seed", s.seed},
          {"best_val", detail::real_to_json(s.best_val)},
          {"best_epoch", s.best_epoch},
          {"log", log}}},
        {"arrays", arrays},
        {"payload_bytes", payload.size()},
        {"payload_crc64", crc64_hex(crc64(payload))},
    };
    const std::string text = header.dump();
    std::vector<unsigned char> out;
    const char magic[8] = {'S', 'S', 'W', 'L', 'C', 'K', 'P', 'T'};
    out.insert(out.end(), magic, magic + 8);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

struct CheckpointHeader {
    nlohmann::json json;
    std::size_t payload_offset = 0;

    Precision precision() const { return precision_from_string(json.at("precision").get<std::string>()); }
    RVAEConfig config() const { return rvae_config_from_json(json.at("config")); }
};

inline CheckpointHeader parse_checkpoint_header(const std::vector<unsigned char>& bytes, const std::string& path) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "SSWLCKPT", 8) != 0)
        throw FormatError(FormatError::Kind::bad_magic, path, "not a checkpoint");
    const auto len = detail::get_le<std::uint32_t>(&bytes[8]);
    if (bytes.size() < 12 + std::size_t(len)) throw FormatError(FormatError::Kind::truncated, path, "header truncated");
    CheckpointHeader h;
    try {
        h.json = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(FormatError::Kind::bad_header, path, ex.what());
    }
    if (h.json.value("format", "") != checkpoint_format)
        throw FormatError(FormatError::Kind::version_mismatch, path,
                          "expected format " + std::string(checkpoint_format));
    h.payload_offset = 12 + len;
    const auto payload_bytes = h.json.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - h.payload_offset < payload_bytes)
        throw FormatError(FormatError::Kind::truncated, path, "payload truncated");
    const auto crc = crc64({bytes.data() + h.payload_offset, payload_bytes});
    if (crc64_hex(crc) != h.json.at("payload_crc64").get<std::string>())
        throw FormatError(FormatError::Kind::checksum_mismatch, path, "payload CRC-64 mismatch");
    return h;
}

template <class T>
TrainState<T> decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& path,
                                RVAEConfig* config_out = nullptr) {
    const auto h = parse_checkpoint_header(bytes, path);
    if (h.precision() != precision_of<T>())
        throw ValidationError(path + ": checkpoint precision is " + to_string(h.precision()) + "-bit");
    TrainState<T> s;
    try {
        const auto& st = h.json.at("state");
        s.phase = st.at("phase").get<std::string>();
        s.epoch = st.at("epoch").get<int>();
        s.step = st.at("step").get<std::int64_t>();
        s.seed = st.at("seed").get<std::uint64_t>();
        s.best_val = detail::real_from_json(st.at("best_val"), std::numeric_limits<double>::infinity());
        s.best_epoch = st.at("best_epoch").get<int>();
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (const auto& r : st.at("log"))
            s.log.push_back({r.at("epoch").get<int>(), r.at("phase").get<std::string>(),
                             detail::real_from_json(r.at("lr"), nan), detail::real_from_json(r.at("train_loss"), nan),
                             detail::real_from_json(r.at("val_mse"), nan)});
        for (const auto& a : h.json.at("arrays")) {
            const auto group = a.at("group").get<std::string>();
            ParameterSet<T>* set = group == "params"        ? &s.params
                                   : group == "best_params" ? &s.best_params
                                   : group == "adam_m"      ? &s.adam_m
                                   : group == "adam_v"      ? &s.adam_v
                                                            : nullptr;
            if (!set) throw FormatError(FormatError::Kind::bad_header, path, "unknown array group " + group);
            auto& arr = set->add(a.at("name").get<std::string>(), a.at("shape").get<std::vector<int>>());
            const auto off = h.payload_offset + a.at("offset").get<std::size_t>();
            if (a.at("count").get<std::size_t>() != arr.values.size() ||
                off + sizeof(T) * arr.values.size() > bytes.size())
                throw FormatError(FormatError::Kind::bad_header, path, "array table inconsistent for " + arr.name);
            for (std::size_t i = 0; i < arr.values.size(); ++i) {
                if constexpr (std::is_same_v<T, float>)
                    arr.values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(&bytes[off + 4 * i]));
                else
                    arr.values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(&bytes[off + 8 * i]));
            }
        }
        if (config_out) *config_out = h.config();
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(FormatError::Kind::bad_header, path, ex.what());
    }
    return s;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainState<T>& s, const RVAEConfig& c) {
    const auto bytes = encode_checkpoint(s, c);
    detail::write_file_atomic(path, bytes);
}

template <class T>
TrainState<T> load_checkpoint(const std::filesystem::path& path, RVAEConfig* config_out = nullptr) {
    return decode_checkpoint<T>(detail::read_file_bytes(path), path.string(), config_out);
}

inline CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    return parse_checkpoint_header(detail::read_file_bytes(path), path.string());
}

}  // namespace sswl
