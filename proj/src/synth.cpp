#include "gdd/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gdd/errors.hpp"

namespace gdd {

void SynthSpec::validate() const {
    if (num_classes < 2) throw ConfigError("dataset.num_classes must be >= 2");
    if (height < 8 || width < 8) throw ConfigError("dataset image must be at least 8x8");
    if (shapes_min < 1 || shapes_max < shapes_min)
        throw ConfigError("dataset shape count range invalid");
    if (noise_level < 0.0) throw ConfigError("dataset.noise_level must be >= 0");
    if (train_count <= 0 || val_count <= 0) throw ConfigError("dataset counts must be > 0");
    // smallest allowed shape is 6 px across; it must fit
    if (std::min(height, width) < 8)
        throw ConfigError("dataset image too small for the 6 px minimum shape size");
}

bool ShapeDesc::contains(double x, double y) const {
    switch (kind) {
        case 0: {
            const double dx = x - cx, dy = y - cy;
            return dx * dx + dy * dy <= r * r;
        }
        case 1:
            return x >= x0 && x <= x1 && y >= y0 && y <= y1;
        default: {
            // upward isoceles triangle: apex (ax, ay), base at ay + ht
            if (y < ay || y > ay + ht) return false;
            const double half = 0.5 * base * (y - ay) / ht;
            return std::fabs(x - ax) <= half;
        }
    }
}

namespace {

// Fixed palette; classes beyond the first three shape classes cycle through it.
constexpr double kPalette[][3] = {
    {0.85, 0.25, 0.25},  // circle-ish red
    {0.25, 0.80, 0.30},  // rectangle green
    {0.25, 0.35, 0.90},  // triangle blue
    {0.85, 0.80, 0.25},
    {0.80, 0.30, 0.80},
    {0.30, 0.80, 0.80},
};
constexpr int kPaletteSize = (int)(sizeof(kPalette) / sizeof(kPalette[0]));
constexpr double kMinShapePx = 6.0;

}  // namespace

// Draw order per sample is fixed: background gray, shape count, then per
// shape (class, geometry, color jitter), then per-pixel noise in flat
// [3,H,W] order. Changing this order changes every dataset, so don't.
SynthSample make_sample(const SynthSpec& spec, std::uint64_t sample_seed,
                        std::vector<ShapeDesc>* shapes_out) {
    Rng rng(sample_seed);
    const int H = spec.height, W = spec.width, K = spec.num_classes;
    SynthSample s;
    s.image = tensor_zeros({3, H, W}, false);
    s.labels.assign((std::size_t)H * W, 0);

    const double gray = rng.uniform_range(0.35, 0.65);
    std::fill(s.image->data.begin(), s.image->data.end(), gray);

    const int n_shapes =
        spec.shapes_min + (int)rng.uniform_index((std::uint64_t)(spec.shapes_max - spec.shapes_min + 1));
    const double max_r = std::max(kMinShapePx / 2.0, std::min(H, W) / 4.0);
    const double max_side = std::max(kMinShapePx, std::min(H, W) / 2.0);

    for (int i = 0; i < n_shapes; ++i) {
        ShapeDesc d;
        d.cls = 1 + (int)rng.uniform_index((std::uint64_t)(K - 1));
        d.kind = (d.cls - 1) % 3;
        switch (d.kind) {
            case 0:
                d.r = rng.uniform_range(kMinShapePx / 2.0, max_r);
                d.cx = rng.uniform_range(d.r, (double)(W - 1) - d.r);
                d.cy = rng.uniform_range(d.r, (double)(H - 1) - d.r);
                break;
            case 1: {
                const double w = rng.uniform_range(kMinShapePx, max_side);
                const double h = rng.uniform_range(kMinShapePx, max_side);
                d.x0 = rng.uniform_range(0.0, (double)(W - 1) - w);
                d.y0 = rng.uniform_range(0.0, (double)(H - 1) - h);
                d.x1 = d.x0 + w;
                d.y1 = d.y0 + h;
                break;
            }
            default: {
                d.base = rng.uniform_range(kMinShapePx, max_side);
                d.ht = rng.uniform_range(kMinShapePx, max_side);
                d.ax = rng.uniform_range(d.base / 2.0, (double)(W - 1) - d.base / 2.0);
                d.ay = rng.uniform_range(0.0, (double)(H - 1) - d.ht);
                break;
            }
        }
        const double* base_col = kPalette[(d.cls - 1) % kPaletteSize];
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = base_col[c] + rng.uniform_range(-0.08, 0.08);

        // painter's order: this shape overwrites anything beneath it
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (!d.contains((double)x, (double)y)) continue;
                s.labels[(std::size_t)y * W + x] = d.cls;
                for (int c = 0; c < 3; ++c)
                    s.image->data[((std::size_t)c * H + y) * W + x] = col[c];
            }
        }
        if (shapes_out) shapes_out->push_back(d);
    }

    if (spec.noise_level > 0.0) {
        for (double& v : s.image->data) v += rng.normal(0.0, spec.noise_level);
    }
    for (double& v : s.image->data) v = std::clamp(v, 0.0, 1.0);
    return s;
}

std::pair<std::vector<SynthSample>, std::vector<SynthSample>> generate_dataset(
    const SynthSpec& spec) {
    spec.validate();
    std::vector<SynthSample> train, val;
    train.reserve(spec.train_count);
    val.reserve(spec.val_count);
    const std::uint64_t train_stream = derive_seed(spec.seed, 1);
    const std::uint64_t val_stream = derive_seed(spec.seed, 2);
    for (int i = 0; i < spec.train_count; ++i)
        train.push_back(make_sample(spec, derive_seed(train_stream, (std::uint64_t)i)));
    for (int i = 0; i < spec.val_count; ++i)
        val.push_back(make_sample(spec, derive_seed(val_stream, (std::uint64_t)i)));
    return {std::move(train), std::move(val)};
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

void confusion_update(ConfusionMatrix& cm, const std::vector<int>& pred,
                      const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("confusion_update: size mismatch");
    const int K = cm.num_classes;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= K || pred[i] < 0 || pred[i] >= K)
            throw std::invalid_argument("confusion_update: class out of range");
        ++cm.at(truth[i], pred[i]);
    }
}

MiouResult miou(const ConfusionMatrix& cm) {
    const int K = cm.num_classes;
    MiouResult r;
    r.per_class_iou.assign(K, -1.0);
    double sum = 0.0;
    int included = 0;
    for (int k = 0; k < K; ++k) {
        std::uint64_t row = 0, col = 0;
        for (int j = 0; j < K; ++j) {
            row += cm.at(k, j);
            col += cm.at(j, k);
        }
        const std::uint64_t denom = row + col - cm.at(k, k);
        if (denom == 0) continue;  // class absent from truth and prediction
        r.per_class_iou[k] = (double)cm.at(k, k) / (double)denom;
        sum += r.per_class_iou[k];
        ++included;
    }
    if (included == 0) throw std::invalid_argument("miou: empty confusion matrix");
    r.miou = sum / (double)included;
    return r;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
    const std::uint64_t t = cm.total();
    if (t == 0) throw std::invalid_argument("pixel_accuracy: empty confusion matrix");
    std::uint64_t diag = 0;
    for (int k = 0; k < cm.num_classes; ++k) diag += cm.at(k, k);
    return (double)diag / (double)t;
}

// ---- binary dump ------------------------------------------------------------

namespace {

constexpr char kMagic[6] = {'S', 'Y', 'N', 'T', 'H', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void require_little_endian() {
    static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big);
    if constexpr (std::endian::native != std::endian::little)
        throw std::runtime_error("dataset dump requires a little-endian host");
}

}  // namespace

void dump_dataset(const std::vector<SynthSample>& samples, int num_classes,
                  const std::string& path) {
    require_little_endian();
    if (samples.empty()) throw std::invalid_argument("dump_dataset: no samples");
    const int H = samples[0].image->dim(1), W = samples[0].image->dim(2);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, (std::uint32_t)num_classes);
    put_u32(out, (std::uint32_t)H);
    put_u32(out, (std::uint32_t)W);
    put_u32(out, (std::uint32_t)samples.size());
    std::vector<float> fimg((std::size_t)3 * H * W);
    std::vector<std::uint8_t> lbl((std::size_t)H * W);
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < fimg.size(); ++i) fimg[i] = (float)s.image->data[i];
        for (std::size_t i = 0; i < lbl.size(); ++i) lbl[i] = (std::uint8_t)s.labels[i];
        out.write(reinterpret_cast<const char*>(fimg.data()),
                  (std::streamsize)(fimg.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(lbl.data()), (std::streamsize)lbl.size());
    }
    if (!out) throw std::runtime_error("short write: " + path);
}

LoadedDataset load_dataset(const std::string& path) {
    require_little_endian();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, kMagic, 6) != 0)
        throw std::runtime_error("not a SYNTH1 dataset file: " + path);
    LoadedDataset ds;
    ds.num_classes = (int)get_u32(in);
    ds.height = (int)get_u32(in);
    ds.width = (int)get_u32(in);
    const std::uint32_t count = get_u32(in);
    if (!in) throw std::runtime_error("truncated dataset header: " + path);
    std::vector<float> fimg((std::size_t)3 * ds.height * ds.width);
    std::vector<std::uint8_t> lbl((std::size_t)ds.height * ds.width);
    for (std::uint32_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(fimg.data()),
                (std::streamsize)(fimg.size() * sizeof(float)));
        in.read(reinterpret_cast<char*>(lbl.data()), (std::streamsize)lbl.size());
        if (!in) throw std::runtime_error("truncated dataset body: " + path);
        SynthSample s;
        s.image = tensor_zeros({3, ds.height, ds.width}, false);
        for (std::size_t j = 0; j < fimg.size(); ++j) s.image->data[j] = (double)fimg[j];
        s.labels.assign(lbl.begin(), lbl.end());
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace gdd
