#include "duofit/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "duofit/errors.hpp"

namespace duofit {

namespace {

constexpr char kMagic[8] = {'D', 'U', 'O', 'F', 'I', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError(std::string("checkpoint truncated while reading ") + what);
    return v;
}

std::string take_str(std::istream& is, uint32_t len, const char* what) {
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw IoError(std::string("checkpoint truncated while reading ") + what);
    return s;
}

} // namespace

void save_checkpoint(const std::string& path, fields::FieldModelT<float>& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint: " + path);

    os.write(kMagic, sizeof(kMagic));
    put<uint32_t>(os, kVersion);
    put<uint64_t>(os, config_digest(model.cfg));
    put<uint64_t>(os, static_cast<uint64_t>(model.img_h));
    put<uint64_t>(os, static_cast<uint64_t>(model.img_w));
    const std::string cfg_text = serialize_config(model.cfg);
    put<uint32_t>(os, static_cast<uint32_t>(cfg_text.size()));
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    const auto params = fields::parameters(model);
    put<uint32_t>(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        put<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<uint32_t>(os, static_cast<uint32_t>(p.data->rank()));
        for (int d = 0; d < p.data->rank(); ++d)
            put<uint64_t>(os, static_cast<uint64_t>(p.data->dim(d)));
        os.write(reinterpret_cast<const char*>(p.data->data()),
                 static_cast<std::streamsize>(p.data->numel() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

fields::FieldModelT<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);

    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint (bad magic) in " + path);
    const uint32_t version = take<uint32_t>(is, "version");
    if (version != kVersion)
        throw IoError("checkpoint " + path + " has version " + std::to_string(version) +
                      ", expected " + std::to_string(kVersion));
    const uint64_t digest = take<uint64_t>(is, "config digest");
    const uint64_t img_h = take<uint64_t>(is, "image height");
    const uint64_t img_w = take<uint64_t>(is, "image width");
    const uint32_t cfg_len = take<uint32_t>(is, "config length");
    const std::string cfg_text = take_str(is, cfg_len, "config text");
    const TrainConfig cfg = parse_config_text(cfg_text);
    if (config_digest(cfg) != digest)
        throw IoError("checkpoint " + path + " config digest mismatch (corrupt header?)");

    fields::FieldModelT<float> model =
        fields::make_model<float>(cfg, static_cast<int64_t>(img_h), static_cast<int64_t>(img_w));
    auto params = fields::parameters(model);

    const uint32_t count = take<uint32_t>(is, "array count");
    if (count != params.size())
        throw IoError("checkpoint " + path + " has " + std::to_string(count) +
                      " arrays, model expects " + std::to_string(params.size()));
    for (auto& p : params) {
        const uint32_t nlen = take<uint32_t>(is, "array name length");
        const std::string name = take_str(is, nlen, "array name");
        if (name != p.name)
            throw IoError("checkpoint " + path + " array '" + name + "' where '" + p.name +
                          "' was expected");
        const uint32_t rank = take<uint32_t>(is, "array rank");
        if (rank != static_cast<uint32_t>(p.data->rank()))
            throw IoError("checkpoint array '" + name + "' rank mismatch");
        for (uint32_t d = 0; d < rank; ++d) {
            const uint64_t dim = take<uint64_t>(is, "array dim");
            if (dim != static_cast<uint64_t>(p.data->dim(static_cast<int>(d))))
                throw IoError("checkpoint array '" + name + "' shape mismatch");
        }
        is.read(reinterpret_cast<char*>(p.data->data()),
                static_cast<std::streamsize>(p.data->numel() * sizeof(float)));
        if (!is) throw IoError("checkpoint truncated in array '" + name + "'");
    }
    return model;
}

} // namespace duofit
