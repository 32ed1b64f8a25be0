#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/render.hpp"

namespace tsim::deploy {

// Wire protocol, big-endian: frame = u32 length (bytes after the length
// field), u8 frame type, u32 request id, payload.
//   OBS payload: u16 W, u16 H, head RGB, back RGB, u16 token count,
//                u16 token ids, u8 context position.
//   ACT payload: 3 x u8 bin indices.
//   ERR payload: UTF-8 message.
enum class FrameType : std::uint8_t { Obs = 0, Act = 1, Err = 2 };

struct Frame {
    FrameType type = FrameType::Obs;
    std::uint32_t request_id = 0;
    std::vector<std::uint8_t> payload;
};

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_frame(const Frame& frame);

// Parses one frame from the start of `buf`, consuming it. nullopt when more
// bytes are needed. Throws ProtocolError on malformed framing.
std::optional<Frame> try_decode_frame(std::vector<std::uint8_t>& buf);

std::vector<std::uint8_t> encode_obs_payload(const render::Observation& obs,
                                             std::uint8_t context_pos);

struct ObsPayload {
    render::Observation obs;
    std::uint8_t context_pos = 0;
};
ObsPayload decode_obs_payload(const std::vector<std::uint8_t>& payload);

std::vector<std::uint8_t> encode_act_payload(const sim::Action& action);
sim::Action decode_act_payload(const std::vector<std::uint8_t>& payload);

std::vector<std::uint8_t> encode_err_payload(const std::string& message);
std::string decode_err_payload(const std::vector<std::uint8_t>& payload);

}  // namespace tsim::deploy
