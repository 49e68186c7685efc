#pragma once
// Deterministic synthetic shape-segmentation data (circles, rectangles,
// triangles on gray) plus the confusion-matrix metrics used to score it.
// Every sample is a pure function of (spec seed, split, index).
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gdd/rng.hpp"
#include "gdd/tensor.hpp"

namespace gdd {

struct SynthSpec {
    int num_classes = 4;  // background + circle + rectangle + triangle
    int height = 32, width = 32;
    int shapes_min = 1, shapes_max = 3;
    double noise_level = 0.05;  // per-pixel Gaussian std on the image
    std::uint64_t seed = 1234;
    int train_count = 2000;
    int val_count = 500;

    void validate() const;  // throws ConfigError
};

struct SynthSample {
    TensorPtr image;          // [3,H,W], values clamped to [0,1]
    std::vector<int> labels;  // flattened [H,W], values in [0,K)
};

// Geometry record, exposed so tests can verify labels against the shapes.
struct ShapeDesc {
    int cls = 0;              // label it paints
    int kind = 0;             // 0 circle, 1 rectangle, 2 triangle
    double cx = 0, cy = 0, r = 0;              // circle
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;     // rectangle
    double ax = 0, ay = 0, base = 0, ht = 0;   // triangle (apex, base width, height)

    bool contains(double x, double y) const;
};

SynthSample make_sample(const SynthSpec& spec, std::uint64_t sample_seed,
                        std::vector<ShapeDesc>* shapes_out = nullptr);

// Train split uses stream tag 1, val tag 2; sample i is seeded with
// derive_seed(derive_seed(spec.seed, tag), i).
std::pair<std::vector<SynthSample>, std::vector<SynthSample>> generate_dataset(
    const SynthSpec& spec);

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::uint64_t> counts;  // rows = truth, cols = prediction

    explicit ConfusionMatrix(int k) : num_classes(k), counts((std::size_t)k * k, 0) {}
    std::uint64_t& at(int truth, int pred) {
        return counts[(std::size_t)truth * num_classes + pred];
    }
    std::uint64_t at(int truth, int pred) const {
        return counts[(std::size_t)truth * num_classes + pred];
    }
    std::uint64_t total() const;
};

void confusion_update(ConfusionMatrix& cm, const std::vector<int>& pred,
                      const std::vector<int>& truth);

struct MiouResult {
    std::vector<double> per_class_iou;  // -1 marks a class absent from both truth and prediction
    double miou = 0.0;                  // mean over the present classes
};
MiouResult miou(const ConfusionMatrix& cm);

double pixel_accuracy(const ConfusionMatrix& cm);

// Binary dump: "SYNTH1" magic, u32 {K,H,W,count} little-endian, then per
// sample float32 image [3,H,W] and uint8 labels [H,W]. Images are rounded to
// float32 by the format.
void dump_dataset(const std::vector<SynthSample>& samples, int num_classes,
                  const std::string& path);
struct LoadedDataset {
    int num_classes = 0, height = 0, width = 0;
    std::vector<SynthSample> samples;
};
LoadedDataset load_dataset(const std::string& path);

}  // namespace gdd
