#include "gdd/distill.hpp"

#include <cmath>

#include "gdd/errors.hpp"
#include "gdd/ops.hpp"

namespace gdd {

Method method_from_string(const std::string& s) {
    if (s == "none") return Method::none;
    if (s == "gdd") return Method::gdd;
    if (s == "cwd") return Method::cwd;
    if (s == "mgd") return Method::mgd;
    if (s == "mse") return Method::mse;
    if (s == "logit_kd") return Method::logit_kd;
    if (s == "sn_only") return Method::sn_only;
    throw ConfigError("unknown method '" + s +
                      "' (expected none|gdd|cwd|mgd|mse|logit_kd|sn_only)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::none: return "none";
        case Method::gdd: return "gdd";
        case Method::cwd: return "cwd";
        case Method::mgd: return "mgd";
        case Method::mse: return "mse";
        case Method::logit_kd: return "logit_kd";
        case Method::sn_only: return "sn_only";
    }
    return "?";
}

InjectLocation inject_from_string(const std::string& s) {
    if (s == "feature") return InjectLocation::feature;
    if (s == "image") return InjectLocation::image;
    throw ConfigError("unknown inject_location '" + s + "' (expected feature|image)");
}

std::string to_string(InjectLocation loc) {
    return loc == InjectLocation::feature ? "feature" : "image";
}

void DistillConfig::validate() const {
    if (alpha < 0.0) throw ConfigError("distill.alpha must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("distill.tau must be > 0");
    if (sigma < 0.0) throw ConfigError("distill.sigma must be >= 0");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
        throw ConfigError("distill.mask_ratio must be in [0,1)");
    if (hidden_channels < 0) throw ConfigError("distill.hidden_channels must be >= 0");
}

bool DistillConfig::needs_align() const {
    switch (method) {
        case Method::gdd:
        case Method::cwd:
        case Method::mgd:
        case Method::mse:
        case Method::sn_only: return true;
        default: return false;
    }
}

bool DistillConfig::needs_generator() const {
    switch (method) {
        case Method::gdd:
        case Method::mgd:
        case Method::sn_only: return true;
        default: return false;
    }
}

namespace {

// Stop-gradient view: same values, no gradient path.
TensorPtr detach(const TensorPtr& t) {
    if (!t->requires_grad) return t;
    return tensor_from(t->shape, t->data, false);
}

void require_4d(const TensorPtr& t, const char* what) {
    if (t->shape.size() != 4)
        throw std::invalid_argument(std::string(what) + ": expected a 4-d (N,C,H,W) tensor, got " +
                                    shape_str(t->shape));
}

}  // namespace

AlignModule AlignModule::build(int cs, int ct, Rng& rng) {
    if (cs <= 0 || ct <= 0) throw std::invalid_argument("AlignModule: channel counts must be > 0");
    AlignModule m;
    m.cs = cs;
    m.ct = ct;
    m.identity = (cs == ct);
    if (!m.identity) {
        auto w = tensor_zeros({ct, cs, 1, 1}, true);
        glorot_init(*w, rng);
        m.params.add("align.weight", std::move(w));
        m.params.add("align.bias", tensor_zeros({ct}, true));
    }
    return m;
}

TensorPtr align_apply(const AlignModule& m, const TensorPtr& S) {
    require_4d(S, "align_apply");
    if (S->shape[1] != m.cs)
        throw std::invalid_argument("align_apply: expected " + std::to_string(m.cs) +
                                    " channels, got " + std::to_string(S->shape[1]));
    if (m.identity) return S;
    return conv2d(S, m.params.find("align.weight")->value, m.params.find("align.bias")->value, 1,
                  0);
}

GenerationModule GenerationModule::build(int ct, int hidden, Rng& rng) {
    if (ct <= 0) throw std::invalid_argument("GenerationModule: ct must be > 0");
    if (hidden <= 0) hidden = ct;  // default: teacher width
    GenerationModule m;
    m.ct = ct;
    m.hidden = hidden;
    auto w1 = tensor_zeros({hidden, ct, 3, 3}, true);
    glorot_init(*w1, rng);
    m.params.add("gen.conv1.weight", std::move(w1));
    m.params.add("gen.conv1.bias", tensor_zeros({hidden}, true));
    auto w2 = tensor_zeros({ct, hidden, 3, 3}, true);
    glorot_init(*w2, rng);
    m.params.add("gen.conv2.weight", std::move(w2));
    m.params.add("gen.conv2.bias", tensor_zeros({ct}, true));
    return m;
}

TensorPtr generate(const GenerationModule& m, const TensorPtr& x) {
    require_4d(x, "generate");
    if (x->shape[1] != m.ct)
        throw std::invalid_argument("generate: expected " + std::to_string(m.ct) +
                                    " channels, got " + std::to_string(x->shape[1]));
    TensorPtr h = relu(conv2d(x, m.params.find("gen.conv1.weight")->value,
                              m.params.find("gen.conv1.bias")->value, 1, 1));
    return conv2d(h, m.params.find("gen.conv2.weight")->value,
                  m.params.find("gen.conv2.bias")->value, 1, 1);
}

TensorPtr perturb_student(const TensorPtr& S, const AlignModule& align,
                          const GenerationModule& gen, const DistillConfig& cfg, Rng& rng) {
    TensorPtr aligned = align_apply(align, S);
    TensorPtr x = aligned;
    const bool add_noise = cfg.inject_location == InjectLocation::feature &&
                           !(cfg.sigma == 0.0 && cfg.mu == 0.0);
    if (add_noise) {
        TensorPtr noise = gaussian_sample(rng, aligned->shape, cfg.mu, cfg.sigma);
        x = add(aligned, noise);
    }
    return generate(gen, x);
}

TensorPtr channel_softmax(const TensorPtr& x, double tau) {
    require_4d(x, "channel_softmax");
    return softmax_spatial(x, tau);
}

TensorPtr channel_kl_probs(const TensorPtr& phi_t, const TensorPtr& log_t,
                           const TensorPtr& S, double tau) {
    require_4d(phi_t, "channel_kl_probs");
    if (!same_shape(*phi_t, *S) || !same_shape(*phi_t, *log_t))
        throw std::invalid_argument("channel_kl_probs: shape mismatch " + shape_str(phi_t->shape) +
                                    " vs " + shape_str(S->shape));
    const int N = phi_t->shape[0], C = phi_t->shape[1];
    TensorPtr phi_s = channel_softmax(S, tau);
    TensorPtr log_s = log_op(phi_s);
    TensorPtr kl = weighted_diff_sum(phi_t, log_t, log_s);
    return scalar_mul(tau * tau / ((double)C * (double)N), kl);
}

TensorPtr channel_kl(const TensorPtr& T, const TensorPtr& S, double tau) {
    require_4d(T, "channel_kl");
    if (!same_shape(*T, *S))
        throw std::invalid_argument("channel_kl: shape mismatch " + shape_str(T->shape) + " vs " +
                                    shape_str(S->shape));
    // Teacher probabilities through the same softmax routine as the student's:
    // identical inputs give identical bits, so KL(X, X) is exactly zero.
    TensorPtr phi_t = channel_softmax(detach(T), tau);
    return channel_kl_probs(phi_t, log_op(phi_t), S, tau);
}

TensorPtr gdd_loss(const TensorPtr& T, const TensorPtr& S, const AlignModule& align,
                   const GenerationModule& gen, const DistillConfig& cfg, Rng& rng) {
    return channel_kl(T, perturb_student(S, align, gen, cfg, rng), cfg.tau);
}

TensorPtr gdd_loss_probs(const TensorPtr& phi_t, const TensorPtr& log_t, const TensorPtr& S,
                         const AlignModule& align, const GenerationModule& gen,
                         const DistillConfig& cfg, Rng& rng) {
    return channel_kl_probs(phi_t, log_t, perturb_student(S, align, gen, cfg, rng), cfg.tau);
}

TensorPtr cwd_loss(const TensorPtr& T, const TensorPtr& S_aligned, double tau) {
    return channel_kl(T, S_aligned, tau);
}

TensorPtr mse_feature_loss(const TensorPtr& T, const TensorPtr& S_aligned) {
    if (!same_shape(*T, *S_aligned))
        throw std::invalid_argument("mse_feature_loss: shape mismatch " + shape_str(T->shape) +
                                    " vs " + shape_str(S_aligned->shape));
    TensorPtr d = sub(detach(T), S_aligned);
    return mean_all(mul(d, d));
}

TensorPtr sn_only_loss(const TensorPtr& T, const TensorPtr& S, const AlignModule& align,
                       const GenerationModule& gen, const DistillConfig& cfg, Rng& rng) {
    return mse_feature_loss(T, perturb_student(S, align, gen, cfg, rng));
}

TensorPtr mgd_loss(const TensorPtr& T, const TensorPtr& S, const AlignModule& align,
                   const GenerationModule& gen, double mask_ratio, Rng& rng) {
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
        throw std::invalid_argument("mgd_loss: mask_ratio must be in [0,1)");
    TensorPtr aligned = align_apply(align, S);
    const int N = aligned->shape[0], C = aligned->shape[1];
    const std::size_t hw = (std::size_t)aligned->shape[2] * aligned->shape[3];
    // one Bernoulli draw per (sample, position), copied across channels
    auto mask = tensor_zeros(aligned->shape, false);
    for (int n = 0; n < N; ++n) {
        double* mn = mask->data.data() + (std::size_t)n * C * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            const double keep = (rng.uniform() < mask_ratio) ? 0.0 : 1.0;
            for (int c = 0; c < C; ++c) mn[(std::size_t)c * hw + p] = keep;
        }
    }
    return mse_feature_loss(T, generate(gen, mul(aligned, mask)));
}

TensorPtr logit_kd_loss(const TensorPtr& logits_T, const TensorPtr& logits_S, double tau) {
    require_4d(logits_T, "logit_kd_loss");
    if (!same_shape(*logits_T, *logits_S))
        throw std::invalid_argument("logit_kd_loss: shape mismatch " + shape_str(logits_T->shape) +
                                    " vs " + shape_str(logits_S->shape));
    const int N = logits_T->shape[0];
    const double pixels = (double)N * logits_T->shape[2] * logits_T->shape[3];
    TensorPtr p_t = softmax_wt(detach(logits_T), 1, tau);
    TensorPtr log_t = log_op(p_t);
    TensorPtr p_s = softmax_wt(logits_S, 1, tau);
    TensorPtr log_s = log_op(p_s);
    TensorPtr kl = weighted_diff_sum(p_t, log_t, log_s);
    return scalar_mul(tau * tau / pixels, kl);
}

TensorPtr inject_image_noise(const TensorPtr& x, const DistillConfig& cfg, Rng& rng) {
    if (cfg.sigma == 0.0 && cfg.mu == 0.0) return x;
    return add(x, gaussian_sample(rng, x->shape, cfg.mu, cfg.sigma));
}

TensorPtr total_loss(const TensorPtr& task, const TensorPtr& distill, double alpha) {
    if (task->size() != 1 || distill->size() != 1)
        throw std::invalid_argument("total_loss: both terms must be scalars");
    return add(task, scalar_mul(alpha, distill));
}

}  // namespace gdd
