#include "nanofusion/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "nanofusion/io_util.hpp"

namespace nf {

void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        writer(out);
        out.flush();
        if (!out) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

void check_magic(std::istream& in, const char expect[4], const std::string& path) {
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, expect, 4) != 0)
        throw IoError("'" + path + "' is not a " + std::string(expect, 4) + " file");
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& what) {
    uint32_t n = read_pod<uint32_t>(in, what);
    if (n > (1u << 20)) throw IoError("implausible string length in " + what);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("short read while reading " + what);
    return s;
}

void save_dataset(const std::string& path, const std::vector<Sample>& samples) {
    write_file_atomic(path, [&](std::ostream& out) {
        out.write("NFD1", 4);
        write_pod<uint32_t>(out, static_cast<uint32_t>(samples.size()));
        for (const Sample& s : samples) {
            write_span(out, s.image.data(), s.image.size());
            std::array<float, 64> depth;
            for (int i = 0; i < 64; ++i)
                depth[static_cast<size_t>(i)] = s.depth.valid[static_cast<size_t>(i)] ? s.depth.meters[static_cast<size_t>(i)]
                                                                                      : std::nanf("");
            write_span(out, depth.data(), depth.size());
            float label[4] = {s.label.x, s.label.y, s.label.z, s.label.theta};
            write_span(out, label, 4);
            write_pod<uint32_t>(out, s.scene_seed);
        }
    });
}

std::vector<Sample> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    check_magic(in, "NFD1", path);
    uint32_t count = read_pod<uint32_t>(in, path);
    std::vector<Sample> samples(count);
    for (Sample& s : samples) {
        read_span(in, s.image.data(), s.image.size(), path);
        std::array<float, 64> depth;
        read_span(in, depth.data(), depth.size(), path);
        for (int i = 0; i < 64; ++i) {
            bool ok = std::isfinite(depth[static_cast<size_t>(i)]);
            s.depth.valid[static_cast<size_t>(i)] = ok ? 1 : 0;
            s.depth.meters[static_cast<size_t>(i)] = ok ? depth[static_cast<size_t>(i)] : 0.0f;
        }
        float label[4];
        read_span(in, label, 4, path);
        s.label = PoseEstimate{label[0], label[1], label[2], label[3]};
        s.scene_seed = read_pod<uint32_t>(in, path);
    }
    return samples;
}

Tensor images_to_tensor(const Sample* samples, int n) {
    Tensor t({n, 1, kImageH, kImageW});
    for (int i = 0; i < n; ++i) {
        float* dst = t.ptr() + static_cast<int64_t>(i) * kImageBytes;
        const uint8_t* src = samples[i].image.data();
        for (int j = 0; j < kImageBytes; ++j) dst[j] = static_cast<float>(src[j]) * (1.0f / 255.0f);
    }
    return t;
}

}  // namespace nf
