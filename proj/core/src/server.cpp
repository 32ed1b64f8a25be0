#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <deque>

#include "tsim/deploy.hpp"

namespace tsim::deploy {

PolicyServer::PolicyServer(learn::PolicyParams params, const std::string& bind_addr, int port)
    : params_(std::move(params)) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw BindError("cannot create listening socket");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, bind_addr.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw BindError("bad bind address: " + bind_addr);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(listen_fd_);
        throw BindError("cannot bind " + bind_addr + ":" + std::to_string(port));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    if (::listen(listen_fd_, 8) != 0) {
        ::close(listen_fd_);
        throw BindError("listen failed");
    }
    accept_thread_ = std::thread([this] { accept_loop(); });
}

PolicyServer::~PolicyServer() { stop(); }

void PolicyServer::stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> conns;
    {
        std::lock_guard<std::mutex> lock(conn_mu_);
        conns.swap(conn_threads_);
    }
    for (auto& t : conns)
        if (t.joinable()) t.join();
}

void PolicyServer::accept_loop() {
    for (;;) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (stopping_.load()) return;
            continue;
        }
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        std::lock_guard<std::mutex> lock(conn_mu_);
        conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void PolicyServer::serve_connection(int fd) {
    std::vector<std::uint8_t> buf;
    std::deque<render::Observation> context;
    const auto send_frame = [&](const Frame& f) {
        const auto bytes = encode_frame(f);
        std::size_t sent = 0;
        while (sent < bytes.size()) {
            const ssize_t rc = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
            if (rc <= 0) return false;
            sent += static_cast<std::size_t>(rc);
        }
        return true;
    };

    for (;;) {
        std::optional<Frame> frame;
        try {
            frame = try_decode_frame(buf);
        } catch (const ProtocolError& e) {
            Frame err;
            err.type = FrameType::Err;
            err.payload = encode_err_payload(e.what());
            send_frame(err);
            break;
        }
        if (!frame) {
            std::uint8_t tmp[16384];
            const ssize_t got = ::recv(fd, tmp, sizeof(tmp), 0);
            if (got <= 0) break;
            buf.insert(buf.end(), tmp, tmp + got);
            continue;
        }
        if (frame->type != FrameType::Obs) {
            Frame err;
            err.type = FrameType::Err;
            err.request_id = frame->request_id;
            err.payload = encode_err_payload("expected OBS frame");
            send_frame(err);
            break;
        }
        Frame reply;
        reply.request_id = frame->request_id;
        try {
            const ObsPayload obs = decode_obs_payload(frame->payload);
            if (obs.context_pos == 0) context.clear();
            if (static_cast<int>(context.size()) >= params_.cfg.context) context.pop_front();
            context.push_back(obs.obs);
            const sim::Action action = learn::student_act(params_, context);
            reply.type = FrameType::Act;
            reply.payload = encode_act_payload(action);
        } catch (const std::exception& e) {
            reply.type = FrameType::Err;
            reply.payload = encode_err_payload(e.what());
            send_frame(reply);
            break;
        }
        if (!send_frame(reply)) break;
    }
    ::close(fd);
}

}  // namespace tsim::deploy
