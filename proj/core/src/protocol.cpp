#include "tsim/protocol.hpp"

namespace tsim::deploy {

namespace {

void put_u16be(std::vector<std::uint8_t>& buf, std::uint16_t v) {
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
}

void put_u32be(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(static_cast<std::uint8_t>(v >> 24));
    buf.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
}

std::uint16_t get_u16be(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
    std::vector<std::uint8_t> out;
    out.reserve(9 + frame.payload.size());
    put_u32be(out, static_cast<std::uint32_t>(1 + 4 + frame.payload.size()));
    out.push_back(static_cast<std::uint8_t>(frame.type));
    put_u32be(out, frame.request_id);
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

std::optional<Frame> try_decode_frame(std::vector<std::uint8_t>& buf) {
    if (buf.size() < 4) return std::nullopt;
    const std::uint32_t len = get_u32be(buf.data());
    if (len < 5) throw ProtocolError("frame length below minimum");
    if (len > 64u * 1024 * 1024) throw ProtocolError("frame length implausibly large");
    if (buf.size() < 4 + len) return std::nullopt;

    Frame f;
    const std::uint8_t type = buf[4];
    if (type > 2) throw ProtocolError("unknown frame type");
    f.type = static_cast<FrameType>(type);
    f.request_id = get_u32be(buf.data() + 5);
    f.payload.assign(buf.begin() + 9, buf.begin() + 4 + len);
    buf.erase(buf.begin(), buf.begin() + 4 + len);
    return f;
}

std::vector<std::uint8_t> encode_obs_payload(const render::Observation& obs,
                                             std::uint8_t context_pos) {
    std::vector<std::uint8_t> out;
    const std::uint16_t w = static_cast<std::uint16_t>(obs.head.width);
    const std::uint16_t h = static_cast<std::uint16_t>(obs.head.height);
    out.reserve(7 + obs.head.rgb.size() + obs.back.rgb.size() + obs.tokens.size() * 2);
    put_u16be(out, w);
    put_u16be(out, h);
    out.insert(out.end(), obs.head.rgb.begin(), obs.head.rgb.end());
    out.insert(out.end(), obs.back.rgb.begin(), obs.back.rgb.end());
    put_u16be(out, static_cast<std::uint16_t>(obs.tokens.size()));
    for (const std::uint16_t t : obs.tokens) put_u16be(out, t);
    out.push_back(context_pos);
    return out;
}

ObsPayload decode_obs_payload(const std::vector<std::uint8_t>& payload) {
    std::size_t p = 0;
    const auto need = [&](std::size_t n) {
        if (p + n > payload.size()) throw ProtocolError("observation payload truncated");
    };
    need(4);
    const std::uint16_t w = get_u16be(payload.data());
    const std::uint16_t h = get_u16be(payload.data() + 2);
    p = 4;
    const std::size_t img = static_cast<std::size_t>(w) * h * 3;

    ObsPayload out;
    out.obs.head = render::Image(w, h);
    out.obs.back = render::Image(w, h);
    need(2 * img);
    std::copy(payload.begin() + p, payload.begin() + p + img, out.obs.head.rgb.begin());
    p += img;
    std::copy(payload.begin() + p, payload.begin() + p + img, out.obs.back.rgb.begin());
    p += img;
    need(2);
    const std::uint16_t n_tokens = get_u16be(payload.data() + p);
    p += 2;
    need(static_cast<std::size_t>(n_tokens) * 2 + 1);
    out.obs.tokens.resize(n_tokens);
    for (int i = 0; i < n_tokens; ++i) {
        out.obs.tokens[i] = get_u16be(payload.data() + p);
        p += 2;
    }
    out.context_pos = payload[p++];
    if (p != payload.size()) throw ProtocolError("trailing bytes in observation payload");
    return out;
}

std::vector<std::uint8_t> encode_act_payload(const sim::Action& action) {
    return {action.forward_bin, action.lateral_bin, action.yaw_bin};
}

sim::Action decode_act_payload(const std::vector<std::uint8_t>& payload) {
    if (payload.size() != 3) throw ProtocolError("action payload must be 3 bytes");
    if (payload[0] >= sim::kForwardBins.size() || payload[1] >= sim::kLateralBins.size() ||
        payload[2] >= sim::kYawBins.size())
        throw ProtocolError("action bin out of range");
    return {payload[0], payload[1], payload[2]};
}

std::vector<std::uint8_t> encode_err_payload(const std::string& message) {
    return {message.begin(), message.end()};
}

std::string decode_err_payload(const std::vector<std::uint8_t>& payload) {
    return {payload.begin(), payload.end()};
}

}  // namespace tsim::deploy
