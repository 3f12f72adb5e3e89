#pragma once

// SSPC1 checkpoints.
//
//   "SSPC" | u32 version=1 | u64 reserved=0
//   u64 metadata length | metadata (INI text: [model], [state])
//   u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u64 dims[rank] | f64 data
//
// Tensors appear in parameter registration order (encoder, projector pair,
// propagator, decoder), followed by the optimizer moments "optim.adam_m" and
// "optim.adam_v" when present.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssp/io.hpp"
#include "ssp/model.hpp"
#include "ssp/optim.hpp"

namespace ssp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainProgress {
    int epoch = 0;           // completed epochs
    std::uint64_t seed = 0;  // training seed
    std::int64_t total_steps = 0;
};

struct Checkpoint {
    Model model;
    std::optional<AdamState> adam;
    TrainProgress progress;
};

namespace detail {

inline void put_tensor(BinaryWriter& w, const std::string& name, const std::vector<int>& shape, const double* data,
                       std::size_t n) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.f64_array(data, n);
}

struct RawTensor {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> data;
};

inline RawTensor get_tensor(BinaryReader& r) {
    RawTensor t;
    const auto len = r.get<std::uint32_t>();
    if (len > 4096) throw IoError(r.source() + ": implausible tensor name length");
    t.name = r.str(len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw IoError(r.source() + ": implausible rank for " + t.name);
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
        t.shape.push_back(r.get<std::uint64_t>());
        if (t.shape.back() > r.remaining()) throw IoError(r.source() + ": implausible extent for " + t.name);
        n *= t.shape.back();
    }
    if (n > r.remaining() / sizeof(double)) throw IoError(r.source() + ": unexpected end of file in " + t.name);
    t.data.resize(n);
    r.f64_array(t.data.data(), n);
    return t;
}

} // namespace detail

inline std::vector<char> serialize_checkpoint(const Model& m, const AdamState* adam, const TrainProgress& prog) {
    IniDoc meta;
    write_model_config(m.cfg, meta.section("model"));
    auto& st = meta.section("state");
    st.set("epoch", std::to_string(prog.epoch));
    st.set("seed", std::to_string(prog.seed));
    st.set("total_steps", std::to_string(prog.total_steps));
    st.set("optimizer_step", std::to_string(adam ? adam->step : 0));
    std::string frozen;
    for (const auto& info : m.params.infos())
        if (!info.trainable) frozen += (frozen.empty() ? "" : ",") + info.name;
    st.set("frozen", frozen);
    const std::string text = write_ini(meta);

    BinaryWriter w;
    write_header(w, "SSPC", kCheckpointVersion);
    w.put<std::uint64_t>(text.size());
    w.str(text);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.params.count() + (adam ? 2 : 0)));
    const auto& vals = m.params.values();
    for (const auto& info : m.params.infos()) detail::put_tensor(w, info.name, info.shape, vals.data() + info.offset, info.size);
    if (adam) {
        const std::vector<int> flat = {static_cast<int>(vals.size())};
        detail::put_tensor(w, "optim.adam_m", flat, adam->m.data(), adam->m.size());
        detail::put_tensor(w, "optim.adam_v", flat, adam->v.data(), adam->v.size());
    }
    return w.buffer();
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& m, const AdamState* adam = nullptr,
                            const TrainProgress& prog = {}) {
    write_file_atomic(path, serialize_checkpoint(m, adam, prog));
}

/// Load a checkpoint, rebuilding the model from its stored configuration and
/// validating every tensor's name and shape against that model.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string src = path.string();
    BinaryReader r(read_file(path), src);
    read_header(r, "SSPC", kCheckpointVersion);
    const auto meta_len = r.get<std::uint64_t>();
    if (meta_len > r.remaining()) throw IoError(src + ": metadata length exceeds file size");
    Checkpoint ck;
    try {
        const IniDoc meta = parse_ini(r.str(meta_len), src + " metadata");
        SectionReader mr(meta.find("model"), "model", src);
        const ModelConfig cfg = read_model_config(mr, false);
        mr.finish();
        SectionReader sr(meta.find("state"), "state", src);
        ck.progress.epoch = static_cast<int>(sr.integer("epoch"));
        ck.progress.seed = sr.u64("seed");
        ck.progress.total_steps = sr.integer("total_steps");
        const std::int64_t opt_step = sr.integer("optimizer_step");
        const auto frozen = split(sr.str("frozen", ""), ',');
        sr.finish();

        ck.model = Model(cfg, 0);
        auto& ps = ck.model.params;
        for (int id = 0; id < ps.count(); ++id) ps.set_trainable(id, true);
        for (const auto& f : frozen) {
            if (f.empty()) continue;
            const ParamId id = ps.find(f);
            if (id < 0) throw IoError("frozen tensor '" + f + "' does not exist");
            ps.set_trainable(id, false);
        }

        const auto count = r.get<std::uint32_t>();
        const auto np = static_cast<std::uint32_t>(ps.count());
        if (count != np && count != np + 2)
            throw IoError("expected " + std::to_string(np) + " tensors, found " + std::to_string(count));
        for (std::uint32_t k = 0; k < np; ++k) {
            const auto t = detail::get_tensor(r);
            const auto& info = ps.info(static_cast<ParamId>(k));
            if (t.name != info.name) throw IoError("tensor " + std::to_string(k) + " is '" + t.name + "', expected '" + info.name + "'");
            std::vector<std::uint64_t> want(info.shape.begin(), info.shape.end());
            if (t.shape != want) throw IoError("shape mismatch for '" + info.name + "'");
            std::copy(t.data.begin(), t.data.end(), ps[static_cast<ParamId>(k)].begin());
        }
        if (count == np + 2) {
            AdamState st(ps);
            st.step = opt_step;
            for (auto* dst : {&st.m, &st.v}) {
                const auto t = detail::get_tensor(r);
                const char* want = dst == &st.m ? "optim.adam_m" : "optim.adam_v";
                if (t.name != want) throw IoError("expected tensor '" + std::string(want) + "', found '" + t.name + "'");
                if (t.data.size() != dst->size()) throw IoError("optimizer state size mismatch");
                *dst = t.data;
            }
            ck.adam = std::move(st);
        }
        if (r.remaining() != 0) throw IoError("trailing bytes after the last tensor");
    } catch (const IoError& e) {
        throw IoError(src + ": " + e.what());
    } catch (const ConfigError& e) {
        throw IoError(src + ": bad metadata: " + e.what());
    }
    return ck;
}

} // namespace ssp
