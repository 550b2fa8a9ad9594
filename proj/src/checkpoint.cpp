#include "sail/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace {

constexpr char kMagic[8] = {'S', 'A', 'I', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

struct Writer {
    std::string buf;

    template <typename T>
    void raw(T v) {
        char tmp[sizeof(T)];
        std::memcpy(tmp, &v, sizeof(T));
        buf.append(tmp, sizeof(T));
    }
    void str(const std::string& s) {
        raw(static_cast<uint32_t>(s.size()));
        buf.append(s);
    }
    void doubles(const std::vector<double>& v) {
        buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }
};

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    void need(size_t n) const {
        if (pos + n > buf.size()) throw ArtifactError("checkpoint: truncated file");
    }
    template <typename T>
    T raw() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string str() {
        uint32_t n = raw<uint32_t>();
        need(n);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
    std::vector<double> doubles(size_t n) {
        need(n * sizeof(double));
        std::vector<double> v(n);
        std::memcpy(v.data(), buf.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        return v;
    }
};

}  // namespace

CheckpointData snapshot(const SailModel& model, const std::string& config_json,
                        const AdamW* opt) {
    CheckpointData data;
    data.config_json = config_json;
    for (const auto& name : model.param_names()) {
        Tensor t = model.param(name);
        data.shapes.emplace_back(name, t.shape());
        data.values[name] = t.vec();
    }
    if (opt) {
        data.has_optimizer = true;
        data.opt_step = opt->step_count();
        data.opt_state = opt->moments();
    }
    return data;
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    Writer w;
    w.buf.append(kMagic, sizeof(kMagic));
    w.raw(data.version);
    w.str(data.config_json);
    w.raw(static_cast<uint32_t>(data.shapes.size()));
    for (const auto& [name, shape] : data.shapes) {
        w.str(name);
        w.raw(static_cast<uint32_t>(shape.size()));
        for (int d : shape) w.raw(static_cast<int64_t>(d));
        const auto& vals = data.values.at(name);
        if (vals.size() != static_cast<size_t>(shape_numel(shape)))
            throw Error("save_checkpoint: value/shape mismatch for '" + name + "'");
        w.doubles(vals);
    }
    w.raw(static_cast<uint8_t>(data.has_optimizer ? 1 : 0));
    if (data.has_optimizer) {
        w.raw(data.opt_step);
        w.raw(static_cast<uint32_t>(data.opt_state.size()));
        for (const auto& [name, mv] : data.opt_state) {
            w.str(name);
            w.raw(static_cast<uint64_t>(mv.first.size()));
            w.doubles(mv.first);
            w.doubles(mv.second);
        }
    }
    w.raw(crc32(w.buf.data(), w.buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError("save_checkpoint: cannot open '" + path + "'");
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw ArtifactError("save_checkpoint: write failed for '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("load_checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) + sizeof(uint32_t) * 2)
        throw ArtifactError("checkpoint: truncated file");
    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    if (crc32(buf.data(), buf.size() - 4) != stored_crc)
        throw ArtifactError("checkpoint: CRC mismatch, refusing to load '" + path + "'");
    buf.resize(buf.size() - 4);

    Reader r(buf);
    r.need(sizeof(kMagic));
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw ArtifactError("checkpoint: bad magic in '" + path + "'");
    r.pos = sizeof(kMagic);

    CheckpointData data;
    data.version = r.raw<uint32_t>();
    if (data.version != kVersion)
        throw ArtifactError("checkpoint: unsupported format version " +
                            std::to_string(data.version));
    data.config_json = r.str();
    uint32_t count = r.raw<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        uint32_t ndims = r.raw<uint32_t>();
        Shape shape;
        for (uint32_t d = 0; d < ndims; ++d)
            shape.push_back(static_cast<int>(r.raw<int64_t>()));
        data.shapes.emplace_back(name, shape);
        data.values[name] = r.doubles(static_cast<size_t>(shape_numel(shape)));
    }
    if (r.raw<uint8_t>() != 0) {
        data.has_optimizer = true;
        data.opt_step = r.raw<int64_t>();
        uint32_t entries = r.raw<uint32_t>();
        for (uint32_t i = 0; i < entries; ++i) {
            std::string name = r.str();
            size_t n = static_cast<size_t>(r.raw<uint64_t>());
            auto m = r.doubles(n);
            auto v = r.doubles(n);
            data.opt_state[name] = {std::move(m), std::move(v)};
        }
    }
    if (r.pos != buf.size()) throw ArtifactError("checkpoint: trailing bytes in '" + path + "'");
    return data;
}

void load_into_model(const CheckpointData& data, SailModel& model) {
    if (data.shapes.size() != model.param_names().size())
        throw ConfigError("load_into_model: checkpoint has " +
                          std::to_string(data.shapes.size()) + " parameters, model expects " +
                          std::to_string(model.param_names().size()));
    for (const auto& [name, shape] : data.shapes) {
        if (!model.has_param(name))
            throw ConfigError("load_into_model: model has no parameter '" + name + "'");
        Tensor t = model.param(name);
        if (t.shape() != shape)
            throw ConfigError("load_into_model: shape mismatch for '" + name + "' (" +
                              shape_str(shape) + " vs " + shape_str(t.shape()) + ")");
        t.vec() = data.values.at(name);
    }
}

}  // namespace sail
