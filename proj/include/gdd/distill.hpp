#pragma once
// Distillation losses. The headline path perturbs the aligned student feature
// with Gaussian noise, pushes it through a small conv generator, and matches
// the teacher with a channel-wise temperature-softmax KL. Baselines: plain
// channel KL (cwd), masked generative MSE (mgd), spatial MSE, logit KD, and
// the noise+generator+MSE arm (sn_only) used by the component ablation.
#include <string>

#include "gdd/nn.hpp"
#include "gdd/rng.hpp"
#include "gdd/tensor.hpp"

namespace gdd {

enum class Method { none, gdd, cwd, mgd, mse, logit_kd, sn_only };
enum class InjectLocation { feature, image };

Method method_from_string(const std::string& s);
std::string to_string(Method m);
InjectLocation inject_from_string(const std::string& s);
std::string to_string(InjectLocation loc);

struct DistillConfig {
    Method method = Method::none;
    double alpha = 5.0;       // loss weight
    double tau = 4.0;         // softmax temperature
    double mu = 0.0;          // noise mean
    double sigma = 1.0;       // noise std
    double mask_ratio = 0.5;  // mgd: fraction of spatial positions zeroed
    InjectLocation inject_location = InjectLocation::feature;
    int hidden_channels = 0;  // generator width; 0 = teacher channel count

    void validate() const;  // throws ConfigError
    bool needs_align() const;
    bool needs_generator() const;
    bool needs_teacher_logits() const { return method == Method::logit_kd; }
};

// 1x1 conv mapping student channels onto the teacher's; pure pass-through
// (no parameters) when the counts already agree.
struct AlignModule {
    int cs = 0, ct = 0;
    bool identity = false;
    ParamSet params;  // align.weight [Ct,Cs,1,1], align.bias [Ct]

    static AlignModule build(int cs, int ct, Rng& rng);
};
TensorPtr align_apply(const AlignModule& m, const TensorPtr& S);

// conv3x3 -> relu -> conv3x3, shape preserving.
struct GenerationModule {
    int ct = 0, hidden = 0;
    ParamSet params;  // gen.conv1.weight/.bias, gen.conv2.weight/.bias

    static GenerationModule build(int ct, int hidden, Rng& rng);
};
TensorPtr generate(const GenerationModule& m, const TensorPtr& x);

// generate(align(S) + noise). The noise tensor is a constant in backprop:
// gradients reach S, align and generator parameters only. With
// inject_location == image (or sigma == 0 and mu == 0) no noise is added
// here — noise then lives in exactly one place.
TensorPtr perturb_student(const TensorPtr& S, const AlignModule& align,
                          const GenerationModule& gen, const DistillConfig& cfg, Rng& rng);

// Per (sample, channel): softmax over the flattened H*W positions at
// temperature tau. Every (n,c) slice sums to 1.
TensorPtr channel_softmax(const TensorPtr& x, double tau);

// (tau^2 / C) * sum phi(T) * log(phi(T)/phi(S)) over channels and positions,
// averaged over the batch. The teacher side is a stop-gradient constant.
TensorPtr channel_kl(const TensorPtr& T, const TensorPtr& S, double tau);

// Same loss with the teacher side precomputed: phi_t = channel_softmax on the
// detached teacher feature and log_t = log(phi_t). Each (n,c) softmax slice
// only depends on its own row, so slices computed one sample at a time and
// stacked match the batched computation bit for bit — which lets callers cache
// them per sample. channel_kl is a thin wrapper over this.
TensorPtr channel_kl_probs(const TensorPtr& phi_t, const TensorPtr& log_t,
                           const TensorPtr& S, double tau);

TensorPtr gdd_loss(const TensorPtr& T, const TensorPtr& S, const AlignModule& align,
                   const GenerationModule& gen, const DistillConfig& cfg, Rng& rng);
// gdd_loss with cached teacher probabilities instead of the raw feature.
TensorPtr gdd_loss_probs(const TensorPtr& phi_t, const TensorPtr& log_t, const TensorPtr& S,
                         const AlignModule& align, const GenerationModule& gen,
                         const DistillConfig& cfg, Rng& rng);
TensorPtr cwd_loss(const TensorPtr& T, const TensorPtr& S_aligned, double tau);
TensorPtr sn_only_loss(const TensorPtr& T, const TensorPtr& S, const AlignModule& align,
                       const GenerationModule& gen, const DistillConfig& cfg, Rng& rng);
TensorPtr mse_feature_loss(const TensorPtr& T, const TensorPtr& S_aligned);
// Bernoulli spatial mask (per position, shared across channels) zeroes a
// mask_ratio fraction of the aligned student feature before the generator.
TensorPtr mgd_loss(const TensorPtr& T, const TensorPtr& S, const AlignModule& align,
                   const GenerationModule& gen, double mask_ratio, Rng& rng);
// Per-pixel KL over the class axis at temperature tau, scaled by tau^2,
// averaged over batch and pixels.
TensorPtr logit_kd_loss(const TensorPtr& logits_T, const TensorPtr& logits_S, double tau);

// x + N(mu, sigma^2), for the image-injection ablation arm.
TensorPtr inject_image_noise(const TensorPtr& x, const DistillConfig& cfg, Rng& rng);

// task + alpha * distill
TensorPtr total_loss(const TensorPtr& task, const TensorPtr& distill, double alpha);

}  // namespace gdd
