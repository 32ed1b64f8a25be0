#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "tsim/autodiff.hpp"
#include "tsim/render.hpp"
#include "tsim/sim.hpp"

namespace tsim::learn {

// ---- vocabulary ------------------------------------------------------------

struct EmptyCorpus : std::runtime_error {
    EmptyCorpus() : std::runtime_error("caption corpus is empty") {}
};

struct Vocab {
    static constexpr std::uint16_t kPad = 0;
    static constexpr std::uint16_t kUnk = 1;

    std::vector<std::string> words;  // sorted unique; id = index + 2
    std::map<std::string, std::uint16_t> index;

    std::uint16_t id(const std::string& word) const;
    std::size_t size() const { return words.size() + 2; }
    std::uint64_t hash() const;  // FNV-1a over the sorted word list
};

// Lowercased tokens split on whitespace and ASCII punctuation; bytes >= 0x80
// (UTF-8 continuations and accents) count as word characters.
std::vector<std::string> split_words(const std::string& text);

Vocab build_vocab(const std::vector<std::string>& captions);
std::vector<std::uint16_t> tokenize(const std::string& text, const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

// ---- policy ----------------------------------------------------------------

struct ModelConfig {
    int image_w = 64;
    int image_h = 64;
    int n_cameras = 2;
    int patch = 8;
    int patch_dim = 16;
    int d_model = 128;
    int caption_dim = 32;
    int context = 8;
    int vocab_size = 2;

    int patch_vec() const { return patch * patch * 3; }
    int patches_per_image() const { return (image_w / patch) * (image_h / patch); }
    int n_patches() const { return n_cameras * patches_per_image(); }
    int enc_concat() const { return n_patches() * patch_dim; }
    int fused_in() const { return d_model + caption_dim; }
    std::size_t image_bytes() const {
        return static_cast<std::size_t>(image_w) * image_h * 3;
    }
    std::size_t step_bytes() const { return image_bytes() * n_cameras; }
};

inline constexpr std::array<int, 3> kHeadSizes{
    static_cast<int>(sim::kForwardBins.size()), static_cast<int>(sim::kLateralBins.size()),
    static_cast<int>(sim::kYawBins.size())};

struct PolicyParams {
    ModelConfig cfg;
    Mat patch_w, patch_b;
    Mat proj_w, proj_b;
    Mat embed;
    Mat fuse_w, fuse_b;
    Mat wq, wk, wv, wo;
    std::array<Mat, 3> head_w;
    std::array<Mat, 3> head_b;

    static PolicyParams init(const ModelConfig& cfg, std::uint64_t seed);
    static PolicyParams zeros(const ModelConfig& cfg);
    std::size_t count() const;

    // Visits tensors in the fixed serialization order.
    template <class F>
    void for_each(F&& f) {
        f("enc.patch.w", patch_w);
        f("enc.patch.b", patch_b);
        f("enc.proj.w", proj_w);
        f("enc.proj.b", proj_b);
        f("caption.embed", embed);
        f("fuse.w", fuse_w);
        f("fuse.b", fuse_b);
        f("attn.wq", wq);
        f("attn.wk", wk);
        f("attn.wv", wv);
        f("attn.wo", wo);
        f("head.fwd.w", head_w[0]);
        f("head.fwd.b", head_b[0]);
        f("head.lat.w", head_w[1]);
        f("head.lat.b", head_b[1]);
        f("head.yaw.w", head_w[2]);
        f("head.yaw.b", head_b[2]);
    }
    template <class F>
    void for_each(F&& f) const {
        const_cast<PolicyParams*>(this)->for_each(
            [&](const char* name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
    }
};

// Fixed sinusoidal position pattern [context, d_model].
Mat positional_encoding(int context, int d_model);

// One training batch of fixed-length trajectories.
struct Batch {
    int n_traj = 0;
    int steps = 8;
    std::vector<std::uint8_t> images;  // n_traj*steps*(head+back) raw RGB
    std::vector<std::vector<std::uint16_t>> tokens;       // per trajectory
    std::vector<std::array<std::uint8_t, 3>> actions;     // n_traj*steps
    std::vector<std::uint8_t> padded;                     // n_traj*steps, 1 = padded
};

// Tape forward up to the three head logits.
struct ForwardNodes {
    Tape::Id logits_fwd, logits_lat, logits_yaw;
};
ForwardNodes forward_on_tape(Tape& tape, const PolicyParams& params, const Batch& batch,
                             std::array<Tape::Id, 17>* param_nodes_out = nullptr);

// Concatenated logits [n_traj*steps, 4+3+5]; causal by construction.
Mat forward_logits(const PolicyParams& params, const Batch& batch);

// Mean cross-entropy between logits and action bins over unmasked steps.
double loss_from_logits(const Mat& logits, const std::vector<std::array<std::uint8_t, 3>>& actions,
                        const std::vector<std::uint8_t>& padded);

struct Gradients {
    PolicyParams tensors;  // same shapes as the parameters
    double loss = 0.0;
};
Gradients grad(const PolicyParams& params, const Batch& batch);

// Greedy decode at the latest timestep of a left-padded context of <= 8
// observations; per-dimension argmax with ties toward the zero-velocity bin.
sim::Action student_act(const PolicyParams& params,
                        const std::deque<render::Observation>& context);

// Incremental rollout wrapper: caches per-observation fused embeddings so a
// 120-step episode does not re-encode its whole context every control step.
// Produces bitwise-identical actions to student_act.
class StudentRollout {
public:
    explicit StudentRollout(const PolicyParams& params);
    void reset();
    sim::Action act(const render::Observation& obs);

private:
    void act_encode_only(const render::Observation& obs);

    const PolicyParams& params_;
    Mat pe_;
    std::deque<std::vector<double>> fused_;  // per-step embeddings, pre-position
    std::deque<render::Observation> raw_;    // kept for token change detection
    std::vector<std::uint16_t> tokens_;
    std::vector<double> caption_embed_;
};

sim::Action argmax_action(const double* fwd, const double* lat, const double* yaw);

// "TFP1" little-endian parameter file: magic, shape table, f32 payload.
void save_params(const PolicyParams& params, const std::string& path);
PolicyParams load_params(const std::string& path);

// Generic layer under the parameter format, shared with the RL expert policy.
struct TensorFile {
    std::array<std::uint32_t, 4> meta{};
    std::vector<std::pair<std::string, Mat>> tensors;
};
void save_tensor_file(const std::string& path, const std::array<std::uint32_t, 4>& meta,
                      const std::vector<std::pair<std::string, const Mat*>>& tensors);
TensorFile load_tensor_file(const std::string& path);

}  // namespace tsim::learn
