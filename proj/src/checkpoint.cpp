#include "saam/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "saam/config.hpp"

namespace saam {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'A', 'M'};
constexpr std::uint32_t kDtypeF32 = 0;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(char(v & 0xff));
    buf.push_back(char((v >> 8) & 0xff));
    buf.push_back(char((v >> 16) & 0xff));
    buf.push_back(char((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    std::uint32_t u32() {
        if (pos + 4 > buf.size())
            throw CheckpointError(CheckpointError::Kind::Malformed,
                                  "checkpoint truncated while reading");
        std::uint32_t v = std::uint32_t(std::uint8_t(buf[pos])) |
                          std::uint32_t(std::uint8_t(buf[pos + 1])) << 8 |
                          std::uint32_t(std::uint8_t(buf[pos + 2])) << 16 |
                          std::uint32_t(std::uint8_t(buf[pos + 3])) << 24;
        pos += 4;
        return v;
    }

    float f32() {
        std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    std::string bytes(std::size_t n) {
        if (pos + n > buf.size())
            throw CheckpointError(CheckpointError::Kind::Malformed,
                                  "checkpoint truncated while reading");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::uint32_t crc_of(const std::string& buf, std::size_t len) {
    return std::uint32_t(::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), uInt(len)));
}

struct ParsedCheckpoint {
    ModelConfig cfg;
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> tensors;
};

ParsedCheckpoint read_and_verify(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::BadMagic,
                              "'" + path + "' is not a SAAM checkpoint (bad magic)");
    const std::size_t body = buf.size() - 4;
    Reader tail{buf, body};
    const std::uint32_t stored_crc = tail.u32();
    if (crc_of(buf, body) != stored_crc)
        throw CheckpointError(CheckpointError::Kind::BadCrc,
                              "'" + path + "' failed CRC-32 verification");

    Reader r{buf, 4};
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::BadVersion,
                              "'" + path + "' has format version " + std::to_string(version) +
                                  ", expected " + std::to_string(kCheckpointVersion));

    ParsedCheckpoint out;
    const std::uint32_t cfg_len = r.u32();
    try {
        out.cfg = model_config_from_text(r.bytes(cfg_len));
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointError::Kind::Malformed,
                              "'" + path + "' carries a bad config echo: " + e.what());
    }

    const std::uint32_t count = r.u32();
    out.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        const std::uint32_t dtype = r.u32();
        if (dtype != kDtypeF32)
            throw CheckpointError(CheckpointError::Kind::Malformed,
                                  "tensor '" + name + "' has unsupported dtype code " +
                                      std::to_string(dtype));
        const std::uint32_t rank = r.u32();
        if (rank != 4)
            throw CheckpointError(CheckpointError::Kind::Malformed,
                                  "tensor '" + name + "' has rank " + std::to_string(rank));
        Shape s;
        s.n = r.u32();
        s.c = r.u32();
        s.h = r.u32();
        s.w = r.u32();
        std::vector<float> data(std::size_t(s.numel()));
        for (auto& v : data) v = r.f32();
        out.tensors.push_back({std::move(name), {s, std::move(data)}});
    }
    if (r.pos != body)
        throw CheckpointError(CheckpointError::Kind::Malformed,
                              "'" + path + "' has trailing bytes after the tensor table");
    return out;
}

}  // namespace

void save_checkpoint(Model<float>& model, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kCheckpointVersion);

    const std::string echo = model_config_to_text(model.cfg);
    put_u32(buf, std::uint32_t(echo.size()));
    buf += echo;

    auto params = model.params();
    put_u32(buf, std::uint32_t(params.size()));
    for (auto& p : params) {
        put_u32(buf, std::uint32_t(p.name.size()));
        buf += p.name;
        put_u32(buf, kDtypeF32);
        put_u32(buf, 4);
        const Shape s = p.tensor.shape();
        put_u32(buf, std::uint32_t(s.n));
        put_u32(buf, std::uint32_t(s.c));
        put_u32(buf, std::uint32_t(s.h));
        put_u32(buf, std::uint32_t(s.w));
        for (float v : p.tensor.data()) put_f32(buf, v);
    }
    put_u32(buf, crc_of(buf, buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

namespace {

void fill_params(Model<float>& model, ParsedCheckpoint& ck) {
    auto params = model.params();
    if (ck.tensors.size() != params.size())
        throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                              "checkpoint holds " + std::to_string(ck.tensors.size()) +
                                  " tensors, model expects " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, payload] = ck.tensors[i];
        auto& [shape, data] = payload;
        if (name != params[i].name)
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                  "tensor '" + name + "' does not match expected '" +
                                      params[i].name + "'");
        if (shape != params[i].tensor.shape())
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                  "tensor '" + name + "': checkpoint shape " + shape.str() +
                                      " vs model shape " + params[i].tensor.shape().str());
        params[i].tensor.data() = std::move(data);
    }
}

}  // namespace

void load_checkpoint_into(Model<float>& model, const std::string& path) {
    ParsedCheckpoint ck = read_and_verify(path);
    fill_params(model, ck);
}

Model<float> load_checkpoint(const std::string& path) {
    ParsedCheckpoint ck = read_and_verify(path);
    Model<float> model = build_model<float>(ck.cfg);
    fill_params(model, ck);
    return model;
}

ModelConfig checkpoint_config(const std::string& path) { return read_and_verify(path).cfg; }

}  // namespace saam
