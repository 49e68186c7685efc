#pragma once
// Small segmentation CNNs: named parameters, Glorot init, SGD with momentum,
// JSON checkpoints, and teacher-to-student parameter inheritance.
#include <string>
#include <vector>

#include "gdd/rng.hpp"
#include "gdd/tensor.hpp"

namespace gdd {

struct Param {
    std::string name;               // dotted path, e.g. "block0.weight"
    TensorPtr value;                // requires_grad true while trainable
    std::vector<double> momentum;   // SGD buffer, same length as value
};

struct ParamSet {
    std::vector<Param> items;

    Param& add(std::string name, TensorPtr value);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    std::size_t scalar_count() const;
    void set_requires_grad(bool rg);
};

struct SgdConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int batch_size = 16;
};

// Stack of {3x3 same-padded conv + relu} blocks and a 1x1 classifier head.
// Spatial size is preserved everywhere; feature_tap picks the block whose
// post-relu output is handed to distillation.
struct SmallCNN {
    int in_channels = 3;
    int num_classes = 4;
    std::vector<int> widths;
    int feature_tap = -1;  // -1 = last block
    ParamSet params;

    static SmallCNN build(int in_channels, int num_classes, std::vector<int> widths,
                          int feature_tap = -1);
    // Rebuilds the architecture implied by checkpoint parameter shapes.
    static SmallCNN build_from_params(const ParamSet& loaded);

    struct Output {
        TensorPtr logits;   // [N, num_classes, H, W]
        TensorPtr feature;  // [N, widths[tap], H, W]
    };
    Output forward(const TensorPtr& x) const;

    int tap_index() const;
    int feature_channels() const { return widths.at((std::size_t)tap_index()); }
};

// Conv weights ~ Uniform(-b, b), b = sqrt(6/(fan_in+fan_out)); biases zero.
// Consumes rng in parameter order, weight entries in flat index order.
void init_params(SmallCNN& net, Rng& rng);
void glorot_init(Tensor& weight, Rng& rng);

// Mean over N*H*W pixels of -log softmax(logits over the class axis) at the
// true class. labels is the flattened [N,H,W] map.
TensorPtr pixel_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels);

// g <- grad + wd*value; buf <- momentum*buf + g; value <- value - lr*buf;
// grads zeroed afterwards. Every listed param must have a populated gradient.
void sgd_step(const std::vector<Param*>& params, const SgdConfig& cfg);
void sgd_step(ParamSet& params, const SgdConfig& cfg);

// JSON checkpoints ({format_version, params: [{name, shape, data}]}), doubles
// at full round-trip precision, written atomically. Extension: .ckpt.json
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);
// Copies values by name into an existing set; throws if a target param is
// missing from `loaded` or shapes differ.
void load_into(ParamSet& target, const ParamSet& loaded);

struct InheritResult {
    int copied = 0;
    std::vector<std::string> skipped;  // names present in both but shape-mismatched
};
// Copies every teacher parameter whose name and shape match the student's.
InheritResult inherit_parameters(SmallCNN& student, const SmallCNN& teacher);

}  // namespace gdd
