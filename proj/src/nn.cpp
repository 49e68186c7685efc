#include "gdd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "gdd/errors.hpp"
#include "gdd/io.hpp"
#include "gdd/ops.hpp"
#include "gdd/tape.hpp"

namespace gdd {

using nlohmann::json;

Param& ParamSet::add(std::string name, TensorPtr value) {
    if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
    items.push_back(Param{std::move(name), std::move(value), {}});
    Param& p = items.back();
    p.momentum.assign(p.value->size(), 0.0);
    return p;
}

Param* ParamSet::find(const std::string& name) {
    for (auto& p : items)
        if (p.name == name) return &p;
    return nullptr;
}

const Param* ParamSet::find(const std::string& name) const {
    for (auto& p : items)
        if (p.name == name) return &p;
    return nullptr;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (auto& p : items) n += p.value->size();
    return n;
}

void ParamSet::set_requires_grad(bool rg) {
    for (auto& p : items) p.value->requires_grad = rg;
}

SmallCNN SmallCNN::build(int in_channels, int num_classes, std::vector<int> widths,
                         int feature_tap) {
    if (widths.empty()) throw std::invalid_argument("SmallCNN: need at least one block");
    if (num_classes < 2) throw std::invalid_argument("SmallCNN: need >= 2 classes");
    if (feature_tap >= (int)widths.size())
        throw std::invalid_argument("SmallCNN: feature_tap out of range");
    SmallCNN net;
    net.in_channels = in_channels;
    net.num_classes = num_classes;
    net.widths = std::move(widths);
    net.feature_tap = feature_tap;
    int cin = in_channels;
    for (std::size_t b = 0; b < net.widths.size(); ++b) {
        const int cout = net.widths[b];
        const std::string prefix = "block" + std::to_string(b);
        net.params.add(prefix + ".weight", tensor_zeros({cout, cin, 3, 3}, true));
        net.params.add(prefix + ".bias", tensor_zeros({cout}, true));
        cin = cout;
    }
    net.params.add("head.weight", tensor_zeros({net.num_classes, cin, 1, 1}, true));
    net.params.add("head.bias", tensor_zeros({net.num_classes}, true));
    return net;
}

SmallCNN SmallCNN::build_from_params(const ParamSet& loaded) {
    std::vector<int> widths;
    for (std::size_t b = 0;; ++b) {
        const Param* w = loaded.find("block" + std::to_string(b) + ".weight");
        if (!w) break;
        widths.push_back(w->value->dim(0));
    }
    if (widths.empty()) throw ConfigError("checkpoint holds no block0.weight; not a SmallCNN");
    const Param* b0 = loaded.find("block0.weight");
    const Param* head = loaded.find("head.weight");
    if (!head) throw ConfigError("checkpoint holds no head.weight; not a SmallCNN");
    SmallCNN net = build(b0->value->dim(1), head->value->dim(0), widths);
    load_into(net.params, loaded);
    return net;
}

int SmallCNN::tap_index() const {
    return feature_tap < 0 ? (int)widths.size() - 1 : feature_tap;
}

SmallCNN::Output SmallCNN::forward(const TensorPtr& x) const {
    if (x->shape.size() != 4 || x->shape[1] != in_channels)
        throw std::invalid_argument("SmallCNN::forward: expected input (N," +
                                    std::to_string(in_channels) + ",H,W), got " +
                                    shape_str(x->shape));
    const int tap = tap_index();
    TensorPtr h = x;
    TensorPtr feature;
    for (std::size_t b = 0; b < widths.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b);
        const Param* w = params.find(prefix + ".weight");
        const Param* bb = params.find(prefix + ".bias");
        h = relu(conv2d(h, w->value, bb->value, 1, 1));
        if ((int)b == tap) feature = h;
    }
    TensorPtr logits =
        conv2d(h, params.find("head.weight")->value, params.find("head.bias")->value, 1, 0);
    return Output{logits, feature};
}

void glorot_init(Tensor& weight, Rng& rng) {
    if (weight.shape.size() != 4) throw std::invalid_argument("glorot_init: conv weight expected");
    const int cout = weight.shape[0], cin = weight.shape[1];
    const int k = weight.shape[2] * weight.shape[3];
    const double fan_in = (double)cin * k, fan_out = (double)cout * k;
    const double b = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : weight.data) v = rng.uniform_range(-b, b);
}

void init_params(SmallCNN& net, Rng& rng) {
    // biases stay zero and consume no rng; weights drawn in parameter order
    for (auto& p : net.params.items)
        if (p.name.ends_with(".weight")) glorot_init(*p.value, rng);
}

TensorPtr pixel_cross_entropy(const TensorPtr& logits, const std::vector<int>& labels) {
    if (logits->shape.size() != 4)
        throw std::invalid_argument("pixel_cross_entropy: logits must be (N,K,H,W)");
    const int N = logits->shape[0], K = logits->shape[1];
    const std::size_t hw = (std::size_t)logits->shape[2] * logits->shape[3];
    const std::size_t pixels = (std::size_t)N * hw;
    if (labels.size() != pixels)
        throw std::invalid_argument("pixel_cross_entropy: label count mismatch");
    for (int l : labels)
        if (l < 0 || l >= K)
            throw std::invalid_argument("pixel_cross_entropy: label out of range [0," +
                                        std::to_string(K) + ")");

    // softmax probabilities kept for the backward rule
    auto probs = std::make_shared<std::vector<double>>(logits->size());
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const std::size_t base_n = (std::size_t)n * K * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            const std::size_t base = base_n + p;
            double mx = logits->data[base];
            for (int k = 1; k < K; ++k) mx = std::max(mx, logits->data[base + (std::size_t)k * hw]);
            double sum = 0.0;
            for (int k = 0; k < K; ++k) {
                const double e = std::exp(logits->data[base + (std::size_t)k * hw] - mx);
                (*probs)[base + (std::size_t)k * hw] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int k = 0; k < K; ++k) (*probs)[base + (std::size_t)k * hw] *= inv;
            const int lbl = labels[(std::size_t)n * hw + p];
            // -log softmax at the label, from the stabilized pieces
            loss -= logits->data[base + (std::size_t)lbl * hw] - mx - std::log(sum);
        }
    }
    auto out = tensor_scalar(loss / (double)pixels, logits->requires_grad);
    if (Tape* tp = Tape::active(); tp && out->requires_grad) {
        auto labels_copy = std::make_shared<std::vector<int>>(labels);
        tp->record([logits, out, probs, labels_copy, N, K, hw, pixels] {
            if (out->grad.empty()) return;
            const double g = out->grad[0] / (double)pixels;
            logits->ensure_grad();
            for (int n = 0; n < N; ++n) {
                for (std::size_t p = 0; p < hw; ++p) {
                    const std::size_t base = (std::size_t)n * K * hw + p;
                    const int lbl = (*labels_copy)[(std::size_t)n * hw + p];
                    for (int k = 0; k < K; ++k) {
                        const std::size_t i = base + (std::size_t)k * hw;
                        const double onehot = (k == lbl) ? 1.0 : 0.0;
                        logits->grad[i] += g * ((*probs)[i] - onehot);
                    }
                }
            }
        });
    }
    return out;
}

void sgd_step(const std::vector<Param*>& params, const SgdConfig& cfg) {
    for (Param* p : params) {
        Tensor& t = *p->value;
        if (t.grad.empty())
            throw std::logic_error("sgd_step: missing gradient for " + p->name +
                                   " (run backward first)");
        const std::size_t n = t.size();
        if (p->momentum.size() != n) p->momentum.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double g = t.grad[i] + cfg.weight_decay * t.data[i];
            p->momentum[i] = cfg.momentum * p->momentum[i] + g;
            t.data[i] -= cfg.lr * p->momentum[i];
        }
        t.zero_grad();
    }
}

void sgd_step(ParamSet& params, const SgdConfig& cfg) {
    std::vector<Param*> ptrs;
    ptrs.reserve(params.items.size());
    for (auto& p : params.items) ptrs.push_back(&p);
    sgd_step(ptrs, cfg);
}

namespace {
constexpr int kCheckpointVersion = 1;
}

void save_checkpoint(const ParamSet& params, const std::string& path) {
    json doc;
    doc["format_version"] = kCheckpointVersion;
    json arr = json::array();
    for (const auto& p : params.items) {
        json e;
        e["name"] = p.name;
        e["shape"] = p.value->shape;
        e["data"] = p.value->data;
        arr.push_back(std::move(e));
    }
    doc["params"] = std::move(arr);
    atomic_write_file(path, doc.dump());
}

ParamSet load_checkpoint(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const std::exception& e) {  // unreadable file or broken JSON
        throw ConfigError("checkpoint " + path + ": " + e.what());
    }
    if (!doc.contains("format_version") || doc["format_version"] != kCheckpointVersion)
        throw ConfigError("checkpoint " + path + ": unsupported format_version");
    ParamSet set;
    try {
        for (const auto& e : doc.at("params")) {
            auto shape = e.at("shape").get<std::vector<int>>();
            auto data = e.at("data").get<std::vector<double>>();
            set.add(e.at("name").get<std::string>(),
                    tensor_from(std::move(shape), std::move(data), true));
        }
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint " + path + ": " + e.what());
    }
    return set;
}

void load_into(ParamSet& target, const ParamSet& loaded) {
    for (auto& p : target.items) {
        const Param* src = loaded.find(p.name);
        if (!src) throw ConfigError("checkpoint is missing parameter " + p.name);
        if (src->value->shape != p.value->shape)
            throw ConfigError("checkpoint shape mismatch for " + p.name + ": have " +
                              shape_str(src->value->shape) + ", want " +
                              shape_str(p.value->shape));
        p.value->data = src->value->data;
    }
}

InheritResult inherit_parameters(SmallCNN& student, const SmallCNN& teacher) {
    InheritResult r;
    for (const auto& tp : teacher.params.items) {
        Param* sp = student.params.find(tp.name);
        if (!sp) continue;
        if (sp->value->shape != tp.value->shape) {
            r.skipped.push_back(tp.name);
            continue;
        }
        sp->value->data = tp.value->data;
        ++r.copied;
    }
    return r;
}

}  // namespace gdd
