#include <cstring>
#include <fstream>

#include "tsim/model.hpp"

namespace tsim::learn {

// Parameter file: magic "TFP1"; all integers little-endian. Header: u32
// version then four u32 meta words (for the student: image_w, image_h,
// patch, context). Shape table: u32 tensor count, then per tensor u16 name
// length + name bytes, u32 rows, u32 cols. Payload: 32-bit little-endian
// floats, row-major, in shape-table order.

namespace {

constexpr char kMagic[4] = {'T', 'F', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

std::uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_tensor_file(const std::string& path, const std::array<std::uint32_t, 4>& meta,
                      const std::vector<std::pair<std::string, const Mat*>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write parameter file: " + path);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    for (const std::uint32_t m : meta) put_u32(out, m);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, mat] : tensors) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(mat->rows));
        put_u32(out, static_cast<std::uint32_t>(mat->cols));
    }
    for (const auto& [name, mat] : tensors) {
        (void)name;
        for (const double x : mat->v) {
            const float f = static_cast<float>(x);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

TensorFile load_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open parameter file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bad parameter file magic: " + path);
    if (get_u32(in) != kVersion) throw std::runtime_error("unsupported parameter file version");

    TensorFile tf;
    for (auto& m : tf.meta) m = get_u32(in);
    const std::uint32_t count = get_u32(in);
    std::vector<std::pair<int, int>> shapes(count);
    tf.tensors.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t len = get_u16(in);
        tf.tensors[i].first.resize(len);
        in.read(tf.tensors[i].first.data(), len);
        shapes[i].first = static_cast<int>(get_u32(in));
        shapes[i].second = static_cast<int>(get_u32(in));
    }
    if (!in) throw std::runtime_error("truncated parameter file: " + path);
    for (std::uint32_t i = 0; i < count; ++i) {
        Mat m(shapes[i].first, shapes[i].second);
        for (double& x : m.v) {
            const std::uint32_t bits = get_u32(in);
            float f;
            std::memcpy(&f, &bits, 4);
            x = static_cast<double>(f);
        }
        tf.tensors[i].second = std::move(m);
    }
    if (!in) throw std::runtime_error("truncated parameter payload: " + path);
    return tf;
}

void save_params(const PolicyParams& params, const std::string& path) {
    std::vector<std::pair<std::string, const Mat*>> tensors;
    params.for_each([&](const char* name, const Mat& m) { tensors.emplace_back(name, &m); });
    save_tensor_file(path,
                     {static_cast<std::uint32_t>(params.cfg.image_w),
                      static_cast<std::uint32_t>(params.cfg.image_h),
                      static_cast<std::uint32_t>(params.cfg.patch),
                      static_cast<std::uint32_t>(params.cfg.context)},
                     tensors);
}

PolicyParams load_params(const std::string& path) {
    const TensorFile tf = load_tensor_file(path);
    ModelConfig cfg;
    cfg.image_w = static_cast<int>(tf.meta[0]);
    cfg.image_h = static_cast<int>(tf.meta[1]);
    cfg.patch = static_cast<int>(tf.meta[2]);
    cfg.context = static_cast<int>(tf.meta[3]);
    for (const auto& [name, m] : tf.tensors) {
        if (name == "enc.patch.w") cfg.patch_dim = m.cols;
        if (name == "caption.embed") {
            cfg.vocab_size = m.rows;
            cfg.caption_dim = m.cols;
        }
        if (name == "attn.wq") cfg.d_model = m.cols;
    }

    PolicyParams p = PolicyParams::zeros(cfg);
    std::size_t i = 0;
    p.for_each([&](const char* name, Mat& m) {
        if (i >= tf.tensors.size() || tf.tensors[i].first != name ||
            tf.tensors[i].second.rows != m.rows || tf.tensors[i].second.cols != m.cols)
            throw std::runtime_error("parameter file shape table mismatch at " +
                                     std::string(name));
        m = tf.tensors[i].second;
        ++i;
    });
    return p;
}

}  // namespace tsim::learn
