#include "omnirestore/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>

#include "omnirestore/error.hpp"
#include "omnirestore/image_io.hpp"

namespace omnirestore {

namespace {

struct ByteWriter {
    std::vector<unsigned char> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf.insert(buf.end(), s.begin(), s.end());
    }
    void floats(const std::vector<float>& v) {
        u64(v.size());
        for (float x : v) f32(x);
    }
};

struct ByteReader {
    const std::vector<unsigned char>& buf;
    size_t at = 0;

    void need(size_t n) const {
        if (buf.size() - at < n)
            throw ParseError("checkpoint: truncated at byte offset " + std::to_string(at));
    }
    std::uint8_t u8() {
        need(1);
        return buf[at++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[at++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[at++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + at), n);
        at += n;
        return s;
    }
    std::vector<float> floats() {
        const std::uint64_t n = u64();
        std::vector<float> v(n);
        for (auto& x : v) x = f32();
        return v;
    }
};

void write_params(ByteWriter& w, const ParamMap<float>& pm) {
    w.u32(static_cast<std::uint32_t>(pm.items.size()));
    for (const auto& [name, t] : pm.items) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
        w.floats(t.data());
    }
}

void read_params_into(ByteReader& r, ParamMap<float>& pm) {
    const std::uint32_t count = r.u32();
    size_t matched = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        const std::uint32_t ndim = r.u32();
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        std::vector<float> vals = r.floats();
        Tensor<float>* slot = pm.find(name);
        if (!slot) throw ParseError("checkpoint: unknown tensor '" + name + "'");
        if (slot->shape() != shape)
            throw ParseError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                             ", expected " + shape_str(slot->shape()));
        slot->mutable_data() = std::move(vals);
        ++matched;
    }
    if (matched != pm.items.size())
        throw ParseError("checkpoint: tensor count mismatch (" + std::to_string(matched) + " vs " +
                         std::to_string(pm.items.size()) + ")");
}

nlohmann::json encoder_config_json(const EncoderConfig& c) {
    return {{"embed_dim", c.embed_dim}, {"patch", c.patch},         {"heads", c.heads},
            {"blocks", c.blocks},       {"mlp_ratio", c.mlp_ratio}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.embed_dim = j.at("embed_dim").get<int>();
    c.patch = j.at("patch").get<int>();
    c.heads = j.at("heads").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    return c;
}

nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"patch_embed", c.patch_embed},
            {"widths", c.widths},
            {"blocks", c.blocks},
            {"heads", c.heads},
            {"k", c.k},
            {"n_classes", c.n_classes},
            {"ffn_expansion", c.ffn_expansion},
            {"encoder", encoder_config_json(c.encoder)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.patch_embed = j.at("patch_embed").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.blocks = j.at("blocks").get<std::vector<int>>();
    c.heads = j.at("heads").get<std::vector<int>>();
    c.k = j.at("k").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.ffn_expansion = j.at("ffn_expansion").get<int>();
    c.encoder = encoder_config_from_json(j.at("encoder"));
    return c;
}

void write_trainer_state(ByteWriter& w, const TrainerState& state) {
    w.u8(1);
    w.u64(static_cast<std::uint64_t>(state.opt.step_count));
    w.u32(static_cast<std::uint32_t>(state.opt.params.size()));
    for (size_t i = 0; i < state.opt.params.size(); ++i) {
        w.floats(state.opt.m[i]);
        w.floats(state.opt.v[i]);
    }
    w.str(state.rng.state());
    w.u32(static_cast<std::uint32_t>(state.epoch));
}

void read_trainer_state(ByteReader& r, TrainerState& state) {
    state.opt.step_count = static_cast<long>(r.u64());
    const std::uint32_t count = r.u32();
    if (count != state.opt.params.size())
        throw ParseError("checkpoint: optimizer slot count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        state.opt.m[i] = r.floats();
        state.opt.v[i] = r.floats();
        if (state.opt.m[i].size() != static_cast<size_t>(state.opt.params[i].numel()))
            throw ParseError("checkpoint: optimizer moment size mismatch at slot " +
                             std::to_string(i));
    }
    std::string rng_state = r.str();
    state.rng.restore(rng_state);
    state.epoch = static_cast<int>(r.u32());
}

std::vector<unsigned char> with_header(const std::string& kind, const std::string& config_json) {
    ByteWriter w;
    w.buf = {'O', 'M', 'N', 'R'};
    w.u32(kCheckpointVersion);
    w.str(kind);
    w.str(config_json);
    return std::move(w.buf);
}

ByteReader open_checkpoint(const std::vector<unsigned char>& bytes, const std::string& want_kind,
                           std::string& config_json) {
    ByteReader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), "OMNR", 4) != 0)
        throw ParseError("checkpoint: bad magic bytes");
    r.at = 4;
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported format version " + std::to_string(version));
    const std::string kind = r.str();
    if (kind != want_kind)
        throw ParseError("checkpoint: kind is '" + kind + "', expected '" + want_kind + "'");
    config_json = r.str();
    return r;
}

}  // namespace

void save_encoder_checkpoint(const std::string& path, DescriptorEncoder<float>& enc,
                             std::uint64_t seed) {
    ByteWriter w;
    w.buf = with_header("encoder", encoder_config_json(enc.cfg).dump());
    ParamMap<float> pm;
    enc.collect(pm, "encoder");
    write_params(w, pm);
    w.u8(0);  // no trainer state
    w.u64(seed);
    write_file_bytes(path, w.buf);
}

DescriptorEncoder<float> load_encoder_checkpoint(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    std::string config_json;
    ByteReader r = open_checkpoint(bytes, "encoder", config_json);
    EncoderConfig cfg = encoder_config_from_json(nlohmann::json::parse(config_json));
    DescriptorEncoder<float> enc;
    Rng rng(0);
    enc.init(cfg, rng);
    ParamMap<float> pm;
    enc.collect(pm, "encoder");
    read_params_into(r, pm);
    if (r.u8() != 0) throw ParseError("checkpoint: encoder checkpoints carry no trainer state");
    enc.set_trainable(false);
    return enc;
}

void save_pipeline_checkpoint(const std::string& path, Pipeline<float>& pipe,
                              const TrainerState* state, std::uint64_t seed) {
    nlohmann::json cfg = model_config_json(pipe.cfg);
    cfg["bank_texts"] = pipe.bank.texts;
    cfg["force_uniform_weights"] = pipe.force_uniform_weights;
    ByteWriter w;
    w.buf = with_header("pipeline", cfg.dump());
    ParamMap<float> pm = pipe.all_params();
    write_params(w, pm);
    if (state) {
        write_trainer_state(w, *state);
    } else {
        w.u8(0);
    }
    w.u64(seed);
    write_file_bytes(path, w.buf);
}

Pipeline<float> load_pipeline_checkpoint(const std::string& path, TrainerState* state_out,
                                         std::uint64_t* seed_out) {
    const auto bytes = read_file_bytes(path);
    std::string config_json;
    ByteReader r = open_checkpoint(bytes, "pipeline", config_json);
    nlohmann::json j = nlohmann::json::parse(config_json);
    ModelConfig cfg = model_config_from_json(j);
    Pipeline<float> pipe = Pipeline<float>::seeded(cfg, 0);
    pipe.bank.texts = j.at("bank_texts").get<std::vector<std::string>>();
    pipe.force_uniform_weights = j.value("force_uniform_weights", false);

    ParamMap<float> pm = pipe.all_params();
    read_params_into(r, pm);
    pipe.encoder.set_trainable(false);
    pipe.bank.refresh(pipe.encoder);

    const std::uint8_t has_state = r.u8();
    if (has_state) {
        TrainerState tmp;
        TrainerState& state = state_out ? *state_out : tmp;
        state.opt.attach(pipe.trainable_params());
        read_trainer_state(r, state);
    } else if (state_out) {
        throw ParseError("checkpoint has no trainer state; cannot resume from " + path);
    }
    const std::uint64_t seed = r.u64();
    if (seed_out) *seed_out = seed;
    return pipe;
}

}  // namespace omnirestore
