#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

#include "tsim/deploy.hpp"

namespace tsim::deploy {

namespace {

void send_all(int fd, const std::uint8_t* data, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
        const ssize_t rc = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
        if (rc <= 0) throw ConnectionLost("send failed");
        sent += static_cast<std::size_t>(rc);
    }
}

}  // namespace

Connection::Connection(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw EndpointUnreachable("cannot create socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw EndpointUnreachable("bad address: " + host);
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd_);
        throw EndpointUnreachable("cannot connect to " + host + ":" + std::to_string(port));
    }
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

Connection::~Connection() {
    if (fd_ >= 0) ::close(fd_);
}

std::variant<sim::Action, TimedOut> Connection::remote_act(const render::Observation& obs,
                                                           std::uint8_t context_pos,
                                                           int timeout_ms) {
    Frame request;
    request.type = FrameType::Obs;
    request.request_id = next_request_++;
    request.payload = encode_obs_payload(obs, context_pos);
    const auto bytes = encode_frame(request);
    send_all(fd_, bytes.data(), bytes.size());
    expected_reply_ = request.request_id;

    const auto deadline_elapsed = [start = std::chrono::steady_clock::now(), timeout_ms]() {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - start)
                   .count() >= timeout_ms;
    };

    for (;;) {
        // Drain already-buffered frames first; stale ids are discarded.
        while (auto frame = try_decode_frame(recv_buf_)) {
            if (frame->type == FrameType::Err)
                throw ConnectionLost("server error: " + decode_err_payload(frame->payload));
            if (frame->type != FrameType::Act) throw ProtocolError("unexpected frame from server");
            if (frame->request_id == expected_reply_)
                return decode_act_payload(frame->payload);
            // Stale reply from an earlier timed-out request: drop it.
        }
        if (deadline_elapsed()) return TimedOut{};

        pollfd pfd{fd_, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, 10);
        if (rc < 0) throw ConnectionLost("poll failed");
        if (rc == 0) continue;
        std::uint8_t tmp[16384];
        const ssize_t got = ::recv(fd_, tmp, sizeof(tmp), 0);
        if (got <= 0) throw ConnectionLost("connection closed by server");
        recv_buf_.insert(recv_buf_.end(), tmp, tmp + got);
    }
}

}  // namespace tsim::deploy
