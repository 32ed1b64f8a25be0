#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tsim/dataset.hpp"

namespace tsim::data {

using nlohmann::json;

std::vector<Trajectory> chunk_episode(const Episode& episode, int window) {
    std::vector<Trajectory> out;
    const int len = static_cast<int>(episode.steps.size());
    if (len == 0) return out;

    const auto fill_step = [&](Trajectory& t, int slot, int src) {
        const EpisodeStep& s = episode.steps[src];
        t.steps[slot].head_rgb = s.obs.head.rgb;
        t.steps[slot].back_rgb = s.obs.back.rgb;
        t.steps[slot].action = {s.action.forward_bin, s.action.lateral_bin, s.action.yaw_bin};
    };
    const auto make = [&](int start) {
        Trajectory t;
        t.episode_id = episode.ordinal;
        t.start_index = static_cast<std::uint16_t>(std::max(start, 0));
        t.tokens = episode.steps.front().obs.tokens;
        const int image_bytes = static_cast<int>(episode.steps.front().obs.head.rgb.size());
        for (int i = 0; i < window; ++i) {
            const int src = start + i;
            if (src < 0) {
                t.padded[i] = true;
                t.steps[i].head_rgb.assign(image_bytes, 0);
                t.steps[i].back_rgb.assign(image_bytes, 0);
                t.steps[i].action = {0, 0, 0};
            } else {
                fill_step(t, i, src);
            }
        }
        return t;
    };

    if (len < window) {
        out.push_back(make(len - window));  // single left-padded trajectory
        return out;
    }
    int start = 0;
    for (; start + window <= len; start += window) out.push_back(make(start));
    if (start < len) out.push_back(make(len - window));  // overlapping tail
    return out;
}

// ---- binary records ----------------------------------------------------------

namespace {

constexpr const char* kMagic = "TDS1";
constexpr std::size_t kHeaderWidth = 4096;  // first line, padded with spaces

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string encode_record(const Trajectory& t) {
    std::string body;
    const std::size_t img = t.steps[0].head_rgb.size();
    body.reserve(32 + t.tokens.size() * 2 + kTrajectoryLen * (2 * img + 3));
    put_u64(body, t.episode_id);
    put_u16(body, t.start_index);
    std::uint8_t mask = 0;
    for (int i = 0; i < kTrajectoryLen; ++i)
        if (t.padded[i]) mask |= static_cast<std::uint8_t>(1u << i);
    body.push_back(static_cast<char>(mask));
    put_u16(body, static_cast<std::uint16_t>(t.tokens.size()));
    for (const std::uint16_t tok : t.tokens) put_u16(body, tok);
    for (const auto& step : t.steps) {
        body.append(reinterpret_cast<const char*>(step.head_rgb.data()), step.head_rgb.size());
        body.append(reinterpret_cast<const char*>(step.back_rgb.data()), step.back_rgb.size());
        body.append(reinterpret_cast<const char*>(step.action.data()), 3);
    }
    std::string rec;
    rec.reserve(4 + body.size());
    put_u32(rec, static_cast<std::uint32_t>(body.size()));
    rec += body;
    return rec;
}

json camera_to_json(const render::CameraCfg& c) {
    return {{"name", c.name},
            {"fov_deg", c.fov_deg},
            {"width", c.width},
            {"height", c.height},
            {"mount", {c.mount.x, c.mount.y, c.mount.theta}},
            {"max_range", c.max_range},
            {"occlusion_rows", c.occlusion_rows},
            {"focal_k", c.focal_k}};
}

render::CameraCfg camera_from_json(const json& j) {
    render::CameraCfg c;
    c.name = j.at("name").get<std::string>();
    c.fov_deg = j.at("fov_deg").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.mount = {j.at("mount").at(0).get<double>(), j.at("mount").at(1).get<double>(),
               j.at("mount").at(2).get<double>()};
    c.max_range = j.at("max_range").get<double>();
    c.occlusion_rows = j.at("occlusion_rows").get<int>();
    c.focal_k = j.at("focal_k").get<double>();
    return c;
}

std::string header_to_json_line(const DatasetHeader& h) {
    json j;
    j["magic"] = kMagic;
    j["version"] = h.version;
    j["endian"] = "le";
    j["image"] = {h.image_w, h.image_h};
    j["bins"] = {{"fwd", h.fwd_bins}, {"lat", h.lat_bins}, {"yaw", h.yaw_bins}};
    j["cameras"] = {{"head", camera_to_json(h.head)}, {"back", camera_to_json(h.back)}};
    j["vocab_hash"] = h.vocab_hash;
    j["counts"] = {{"trajectories", h.n_trajectories}, {"episodes", h.n_episodes}};
    std::string line = j.dump();
    if (line.size() + 1 > kHeaderWidth)
        throw IoError("dataset header exceeds reserved width");
    line.append(kHeaderWidth - 1 - line.size(), ' ');
    line.push_back('\n');
    return line;
}

DatasetHeader header_from_json_line(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw VersionMismatch(std::string("unreadable dataset header: ") + e.what());
    }
    try {
        if (!j.contains("magic") || j.at("magic").get<std::string>() != kMagic)
            throw VersionMismatch("dataset magic mismatch");
        DatasetHeader h;
        h.version = j.at("version").get<int>();
        if (h.version != 1) throw VersionMismatch("unsupported dataset version");
        h.image_w = j.at("image").at(0).get<int>();
        h.image_h = j.at("image").at(1).get<int>();
        h.fwd_bins = j.at("bins").at("fwd").get<std::vector<double>>();
        h.lat_bins = j.at("bins").at("lat").get<std::vector<double>>();
        h.yaw_bins = j.at("bins").at("yaw").get<std::vector<double>>();
        h.head = camera_from_json(j.at("cameras").at("head"));
        h.back = camera_from_json(j.at("cameras").at("back"));
        h.vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
        h.n_trajectories = j.at("counts").at("trajectories").get<std::uint64_t>();
        h.n_episodes = j.at("counts").at("episodes").get<std::uint64_t>();
        return h;
    } catch (const json::exception& e) {
        throw VersionMismatch(std::string("unreadable dataset header: ") + e.what());
    }
}

}  // namespace

struct DatasetWriter::Impl {
    std::string path;
    std::ofstream out;
    DatasetHeader header;
};

DatasetWriter::DatasetWriter(const std::string& path, DatasetHeader header)
    : impl_(new Impl{path, std::ofstream(path, std::ios::binary), std::move(header)}) {
    if (!impl_->out) throw IoError("cannot open dataset for writing: " + path);
    impl_->out << header_to_json_line(impl_->header);
}

DatasetWriter::~DatasetWriter() {
    if (!finalized_) {
        try {
            finalize();
        } catch (...) {
        }
    }
}

void DatasetWriter::append(const Trajectory& traj) {
    const std::string rec = encode_record(traj);
    impl_->out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    if (!impl_->out) throw IoError("dataset write failed: " + impl_->path);
    ++written_;
}

void DatasetWriter::finalize() {
    if (finalized_) return;
    finalized_ = true;
    impl_->header.n_trajectories = written_;
    impl_->header.n_episodes = episodes_;
    impl_->out.seekp(0);
    impl_->out << header_to_json_line(impl_->header);
    impl_->out.flush();
    if (!impl_->out) throw IoError("dataset finalize failed: " + impl_->path);
    impl_->out.close();
}

struct DatasetReader::Impl {
    std::string path;
    mutable std::ifstream in;
    DatasetHeader header;
    std::vector<std::pair<std::uint64_t, std::uint32_t>> offsets;  // (file offset, length)
};

DatasetReader::DatasetReader(const std::string& path) : impl_(new Impl) {
    impl_->path = path;
    impl_->in.open(path, std::ios::binary);
    if (!impl_->in) throw IoError("cannot open dataset: " + path);
    std::string line(kHeaderWidth, '\0');
    impl_->in.read(line.data(), static_cast<std::streamsize>(kHeaderWidth));
    if (impl_->in.gcount() != static_cast<std::streamsize>(kHeaderWidth) ||
        line.back() != '\n')
        throw VersionMismatch("dataset header truncated");
    impl_->header = header_from_json_line(line);

    std::uint64_t pos = kHeaderWidth;
    impl_->in.seekg(0, std::ios::end);
    const std::uint64_t end = static_cast<std::uint64_t>(impl_->in.tellg());
    std::size_t index = 0;
    while (pos < end) {
        impl_->in.seekg(static_cast<std::streamoff>(pos));
        unsigned char b[4];
        impl_->in.read(reinterpret_cast<char*>(b), 4);
        if (!impl_->in) throw CorruptRecord(index, "truncated length prefix");
        const std::uint32_t len = static_cast<std::uint32_t>(b[0]) | (b[1] << 8) |
                                  (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        if (pos + 4 + len > end) throw CorruptRecord(index, "record overruns file");
        impl_->offsets.emplace_back(pos + 4, len);
        pos += 4 + len;
        ++index;
    }
    if (impl_->header.n_trajectories != impl_->offsets.size())
        throw VersionMismatch("header trajectory count disagrees with records");
}

DatasetReader::~DatasetReader() = default;

const DatasetHeader& DatasetReader::header() const { return impl_->header; }
std::size_t DatasetReader::size() const { return impl_->offsets.size(); }

Trajectory DatasetReader::read(std::size_t index) const {
    if (index >= impl_->offsets.size()) throw IoError("record index out of range");
    const auto [off, len] = impl_->offsets[index];
    std::string body(len, '\0');
    impl_->in.seekg(static_cast<std::streamoff>(off));
    impl_->in.read(body.data(), static_cast<std::streamsize>(len));
    if (!impl_->in) throw CorruptRecord(index, "short read");

    const std::size_t img =
        static_cast<std::size_t>(impl_->header.image_w) * impl_->header.image_h * 3;
    std::size_t p = 0;
    const auto need = [&](std::size_t n) {
        if (p + n > body.size()) throw CorruptRecord(index, "record body too short");
    };
    const auto u16 = [&]() {
        need(2);
        const auto* b = reinterpret_cast<const unsigned char*>(body.data() + p);
        p += 2;
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    };

    Trajectory t;
    need(8);
    std::uint64_t id = 0;
    for (int i = 7; i >= 0; --i)
        id = (id << 8) | static_cast<unsigned char>(body[p + i]);
    p += 8;
    t.episode_id = id;
    t.start_index = u16();
    need(1);
    const std::uint8_t mask = static_cast<std::uint8_t>(body[p++]);
    for (int i = 0; i < kTrajectoryLen; ++i) t.padded[i] = (mask >> i) & 1;
    const std::uint16_t n_tokens = u16();
    t.tokens.resize(n_tokens);
    for (int i = 0; i < n_tokens; ++i) t.tokens[i] = u16();
    for (auto& step : t.steps) {
        need(2 * img + 3);
        step.head_rgb.assign(body.begin() + p, body.begin() + p + img);
        p += img;
        step.back_rgb.assign(body.begin() + p, body.begin() + p + img);
        p += img;
        for (int i = 0; i < 3; ++i) step.action[i] = static_cast<std::uint8_t>(body[p++]);
    }
    if (p != body.size()) throw CorruptRecord(index, "trailing bytes in record");
    return t;
}

void write_dataset(const std::vector<Trajectory>& trajectories, const std::string& path,
                   DatasetHeader header) {
    DatasetWriter writer(path, std::move(header));
    for (const auto& t : trajectories) writer.append(t);
    writer.finalize();
}

std::vector<Trajectory> read_dataset(const std::string& path) {
    DatasetReader reader(path);
    std::vector<Trajectory> out;
    out.reserve(reader.size());
    for (std::size_t i = 0; i < reader.size(); ++i) out.push_back(reader.read(i));
    return out;
}

// ---- episode log -------------------------------------------------------------

std::string episode_log_to_json(const Episode& episode, const scenegen::Scene& scene) {
    json j;
    j["scene"] = json::parse(scenegen::scene_to_json(scene));
    j["task"] = {{"target_index", episode.task.target_index},
                 {"caption", episode.task.caption},
                 {"level", episode.task.caption_level},
                 {"language", scenegen::language_name(episode.task.language)}};
    j["rand_seed"] = episode.rand_seed;
    j["outcome"] = sim::status_name(episode.outcome);
    j["duration"] = episode.duration;
    json actions = json::array();
    for (const auto& s : episode.steps)
        actions.push_back({s.action.forward_bin, s.action.lateral_bin, s.action.yaw_bin});
    j["actions"] = std::move(actions);
    return j.dump(2) + "\n";
}

void write_episode_log(const Episode& episode, const scenegen::Scene& scene,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write episode log: " + path);
    out << episode_log_to_json(episode, scene);
}

}  // namespace tsim::data
