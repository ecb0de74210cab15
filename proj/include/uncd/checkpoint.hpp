#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "uncd/errors.hpp"
#include "uncd/unet.hpp"

namespace uncd {

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double holdout_acc = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // 1-based; 0 when no holdout was evaluated
};

struct Checkpoint {
    UNetModel<float> model;
    TrainHistory history;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint: truncated while reading an integer");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline void write_f32_array(std::ostream& os, const float* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        write_u32(os, bits);
    }
}

inline void read_f32_array(std::istream& is, float* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = read_u32(is);
        std::memcpy(&data[i], &bits, 4);
    }
}

inline std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'U', 'N', 'C', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian binary checkpoint: magic "UNCD", version, a UTF-8 key=value
/// config block, then named records of (name length, name, rank, dims, raw
/// 32-bit float payload). Round trips are bit-exact.
inline void save_checkpoint(UNetModel<float>& model, const TrainHistory& history, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("save_checkpoint: cannot open " + path + " for writing");

    os.write(kCheckpointMagic, 4);
    detail::write_u32(os, kCheckpointVersion);

    std::string cfg;
    cfg += "input_size=" + std::to_string(model.config.input_size) + "\n";
    cfg += "input_channels=" + std::to_string(model.config.input_channels) + "\n";
    cfg += "num_classes=" + std::to_string(model.config.num_classes) + "\n";
    cfg += "base_channels=" + std::to_string(model.config.base_channels) + "\n";
    cfg += "levels=" + std::to_string(model.config.levels) + "\n";
    cfg += "leaky_slope=" + detail::format_float(model.config.leaky_slope) + "\n";
    cfg += "best_epoch=" + std::to_string(history.best_epoch) + "\n";
    detail::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    struct Rec {
        std::string name;
        const float* data;
        std::vector<std::size_t> dims;
        std::size_t count;
    };
    std::vector<Rec> recs;
    model.for_each_state([&](const std::string& name, float* data, std::size_t count,
                             const std::vector<std::size_t>& dims) {
        recs.push_back({name, data, dims, count});
    });
    recs.push_back({"norm.mean", model.norm.mean.data(), {3}, 3});
    recs.push_back({"norm.std", model.norm.stddev.data(), {3}, 3});

    std::vector<float> loss_v, acc_v, epoch_v;
    for (const auto& e : history.epochs) {
        epoch_v.push_back(static_cast<float>(e.epoch));
        loss_v.push_back(static_cast<float>(e.train_loss));
        acc_v.push_back(static_cast<float>(e.holdout_acc));
    }
    if (!history.epochs.empty()) {
        recs.push_back({"history.epoch", epoch_v.data(), {epoch_v.size()}, epoch_v.size()});
        recs.push_back({"history.train_loss", loss_v.data(), {loss_v.size()}, loss_v.size()});
        recs.push_back({"history.holdout_acc", acc_v.data(), {acc_v.size()}, acc_v.size()});
    }

    detail::write_u32(os, static_cast<std::uint32_t>(recs.size()));
    for (const auto& r : recs) {
        detail::write_u32(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(r.dims.size()));
        for (std::size_t d : r.dims) detail::write_u32(os, static_cast<std::uint32_t>(d));
        detail::write_f32_array(os, r.data, r.count);
    }
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("load_checkpoint: bad magic bytes (not a UNCD checkpoint)");
    const std::uint32_t version = detail::read_u32(is);
    if (version != kCheckpointVersion)
        throw FormatError("load_checkpoint: unsupported format version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");

    const std::uint32_t cfg_len = detail::read_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw FormatError("load_checkpoint: truncated config block");

    std::map<std::string, std::string> kv;
    std::size_t pos = 0;
    while (pos < cfg_text.size()) {
        const std::size_t nl = cfg_text.find('\n', pos);
        const std::string line = cfg_text.substr(pos, nl == std::string::npos ? nl : nl - pos);
        pos = nl == std::string::npos ? cfg_text.size() : nl + 1;
        const std::size_t eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("load_checkpoint: config key missing: ") + key);
        return it->second;
    };

    Checkpoint ck;
    UNetConfig cfg;
    cfg.input_size = std::stoul(need("input_size"));
    cfg.input_channels = std::stoul(need("input_channels"));
    cfg.num_classes = std::stoul(need("num_classes"));
    cfg.base_channels = std::stoul(need("base_channels"));
    cfg.levels = std::stoul(need("levels"));
    cfg.leaky_slope = std::strtof(need("leaky_slope").c_str(), nullptr);
    ck.model.build(cfg);
    ck.history.best_epoch = kv.count("best_epoch") ? std::stoul(kv["best_epoch"]) : 0;

    const std::uint32_t nrec = detail::read_u32(is);
    std::map<std::string, std::vector<float>> extra;
    std::map<std::string, std::pair<float*, std::size_t>> wanted;
    ck.model.for_each_state([&](const std::string& name, float* data, std::size_t count,
                                const std::vector<std::size_t>&) {
        wanted[name] = {data, count};
    });
    wanted["norm.mean"] = {ck.model.norm.mean.data(), 3};
    wanted["norm.std"] = {ck.model.norm.stddev.data(), 3};

    std::set<std::string> seen;
    for (std::uint32_t r = 0; r < nrec; ++r) {
        const std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("load_checkpoint: truncated record name");
        const std::uint32_t rank = detail::read_u32(is);
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) count *= detail::read_u32(is);
        auto it = wanted.find(name);
        if (it != wanted.end()) {
            if (count != it->second.second)
                throw FormatError("load_checkpoint: record " + name + " has " + std::to_string(count) +
                                  " values, expected " + std::to_string(it->second.second));
            detail::read_f32_array(is, it->second.first, count);
            seen.insert(name);
        } else {
            auto& buf = extra[name];
            buf.resize(count);
            detail::read_f32_array(is, buf.data(), count);
        }
    }
    for (const auto& [name, target] : wanted) {
        if (!seen.count(name)) throw FormatError("load_checkpoint: missing record " + name);
    }

    if (extra.count("history.epoch")) {
        const auto& ep = extra["history.epoch"];
        const auto& lo = extra["history.train_loss"];
        const auto& ac = extra["history.holdout_acc"];
        if (lo.size() != ep.size() || ac.size() != ep.size())
            throw FormatError("load_checkpoint: inconsistent history record lengths");
        for (std::size_t i = 0; i < ep.size(); ++i) {
            ck.history.epochs.push_back({static_cast<std::size_t>(ep[i]), lo[i], ac[i]});
        }
    }

    for (std::size_t i = 0; i < 5; ++i) {
        for (const auto* blk : {&ck.model.enc[i].c1, &ck.model.enc[i].c2}) {
            for (float v : blk->bn.running_var) {
                if (!(v > 0.0f)) throw FormatError("load_checkpoint: non-positive running variance");
            }
        }
    }
    return ck;
}

}  // namespace uncd
