#include "gdd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <numeric>
#include <thread>

#include "gdd/errors.hpp"
#include "gdd/io.hpp"
#include "gdd/ops.hpp"
#include "gdd/tape.hpp"

namespace gdd {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config -----------------------------------------------------------------

void TrainConfig::finalize() {
    if (role != "teacher" && role != "student")
        throw ConfigError("role must be 'teacher' or 'student', got '" + role + "'");
    const bool teacher = role == "teacher";
    if (widths.empty()) widths = teacher ? std::vector<int>{32, 64, 64} : std::vector<int>{8, 16, 16};
    for (int w : widths)
        if (w <= 0) throw ConfigError("widths must be positive");
    if (epochs < 0) epochs = teacher ? 30 : 20;
    if (feature_tap < -1 || feature_tap >= (int)widths.size())
        throw ConfigError("feature_tap out of range for " + std::to_string(widths.size()) +
                          " blocks");
    if (!(sgd.lr > 0.0)) throw ConfigError("sgd.lr must be > 0");
    if (sgd.momentum < 0.0 || sgd.momentum >= 1.0) throw ConfigError("sgd.momentum must be in [0,1)");
    if (sgd.weight_decay < 0.0) throw ConfigError("sgd.weight_decay must be >= 0");
    if (sgd.batch_size < 1) throw ConfigError("sgd.batch_size must be >= 1");
    distill.validate();
    dataset.validate();
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (teacher && distill.method != Method::none)
        throw ConfigError("teacher runs train with method 'none'");
    if (!teacher && (distill.method != Method::none || inherit) && teacher_checkpoint.empty())
        throw ConfigError("student with a distillation method (or inherit) needs teacher_checkpoint");
}

namespace {

void require_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

TrainConfig config_from_json(const json& j) {
    TrainConfig cfg;
    require_keys(j, "config",
                 {"role", "widths", "feature_tap", "epochs", "sgd", "distill",
                  "teacher_checkpoint", "inherit", "seed", "dataset", "output_dir"});
    read_field(j, "role", cfg.role);
    read_field(j, "widths", cfg.widths);
    read_field(j, "feature_tap", cfg.feature_tap);
    read_field(j, "epochs", cfg.epochs);
    if (j.contains("sgd")) {
        const json& s = j.at("sgd");
        require_keys(s, "sgd", {"lr", "momentum", "weight_decay", "batch_size"});
        read_field(s, "lr", cfg.sgd.lr);
        read_field(s, "momentum", cfg.sgd.momentum);
        read_field(s, "weight_decay", cfg.sgd.weight_decay);
        read_field(s, "batch_size", cfg.sgd.batch_size);
    }
    if (j.contains("distill")) {
        const json& d = j.at("distill");
        require_keys(d, "distill",
                     {"method", "alpha", "tau", "mu", "sigma", "mask_ratio", "inject_location",
                      "hidden_channels"});
        if (d.contains("method")) cfg.distill.method = method_from_string(d.at("method").get<std::string>());
        read_field(d, "alpha", cfg.distill.alpha);
        read_field(d, "tau", cfg.distill.tau);
        read_field(d, "mu", cfg.distill.mu);
        read_field(d, "sigma", cfg.distill.sigma);
        read_field(d, "mask_ratio", cfg.distill.mask_ratio);
        if (d.contains("inject_location"))
            cfg.distill.inject_location = inject_from_string(d.at("inject_location").get<std::string>());
        read_field(d, "hidden_channels", cfg.distill.hidden_channels);
    }
    read_field(j, "teacher_checkpoint", cfg.teacher_checkpoint);
    read_field(j, "inherit", cfg.inherit);
    read_field(j, "seed", cfg.seed);
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        require_keys(d, "dataset",
                     {"num_classes", "height", "width", "shapes_min", "shapes_max", "noise_level",
                      "seed", "train_count", "val_count"});
        read_field(d, "num_classes", cfg.dataset.num_classes);
        read_field(d, "height", cfg.dataset.height);
        read_field(d, "width", cfg.dataset.width);
        read_field(d, "shapes_min", cfg.dataset.shapes_min);
        read_field(d, "shapes_max", cfg.dataset.shapes_max);
        read_field(d, "noise_level", cfg.dataset.noise_level);
        read_field(d, "seed", cfg.dataset.seed);
        read_field(d, "train_count", cfg.dataset.train_count);
        read_field(d, "val_count", cfg.dataset.val_count);
    }
    read_field(j, "output_dir", cfg.output_dir);
    return cfg;
}

TrainConfig config_from_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const std::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const TrainConfig& cfg) {
    json j;
    j["role"] = cfg.role;
    j["widths"] = cfg.widths;
    j["feature_tap"] = cfg.feature_tap;
    j["epochs"] = cfg.epochs;
    j["sgd"] = {{"lr", cfg.sgd.lr},
                {"momentum", cfg.sgd.momentum},
                {"weight_decay", cfg.sgd.weight_decay},
                {"batch_size", cfg.sgd.batch_size}};
    j["distill"] = {{"method", to_string(cfg.distill.method)},
                    {"alpha", cfg.distill.alpha},
                    {"tau", cfg.distill.tau},
                    {"mu", cfg.distill.mu},
                    {"sigma", cfg.distill.sigma},
                    {"mask_ratio", cfg.distill.mask_ratio},
                    {"inject_location", to_string(cfg.distill.inject_location)},
                    {"hidden_channels", cfg.distill.hidden_channels}};
    j["teacher_checkpoint"] = cfg.teacher_checkpoint;
    j["inherit"] = cfg.inherit;
    j["seed"] = cfg.seed;
    j["dataset"] = {{"num_classes", cfg.dataset.num_classes},
                    {"height", cfg.dataset.height},
                    {"width", cfg.dataset.width},
                    {"shapes_min", cfg.dataset.shapes_min},
                    {"shapes_max", cfg.dataset.shapes_max},
                    {"noise_level", cfg.dataset.noise_level},
                    {"seed", cfg.dataset.seed},
                    {"train_count", cfg.dataset.train_count},
                    {"val_count", cfg.dataset.val_count}};
    j["output_dir"] = cfg.output_dir;
    return j;
}

// ---- report serialization ---------------------------------------------------

json report_to_json(const RunReport& r) {
    json j;
    j["config"] = config_to_json(r.config);
    j["seed"] = r.seed;
    json eps = json::array();
    for (const auto& e : r.epochs) {
        eps.push_back({{"epoch", e.epoch},
                       {"task_loss", e.task_loss},
                       {"distill_loss", e.distill_loss},
                       {"total_loss", e.total_loss},
                       {"val_miou", e.val_miou},
                       {"val_pixel_acc", e.val_pixel_acc}});
    }
    j["epochs"] = std::move(eps);
    j["final"] = {{"per_class_iou", r.per_class_iou},
                  {"miou", r.miou},
                  {"pixel_acc", r.pixel_acc},
                  {"confusion", r.confusion},
                  {"aux_param_count", r.aux_param_count},
                  {"wall_seconds", r.wall_seconds}};
    return j;
}

RunReport report_from_json(const json& j) {
    RunReport r;
    r.config = config_from_json(j.at("config"));
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("epochs")) {
        EpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.task_loss = e.at("task_loss").get<double>();
        rec.distill_loss = e.at("distill_loss").get<double>();
        rec.total_loss = e.at("total_loss").get<double>();
        rec.val_miou = e.at("val_miou").get<double>();
        rec.val_pixel_acc = e.at("val_pixel_acc").get<double>();
        r.epochs.push_back(rec);
    }
    const json& f = j.at("final");
    r.per_class_iou = f.at("per_class_iou").get<std::vector<double>>();
    r.miou = f.at("miou").get<double>();
    r.pixel_acc = f.at("pixel_acc").get<double>();
    r.confusion = f.at("confusion").get<std::vector<std::vector<std::uint64_t>>>();
    r.aux_param_count = f.at("aux_param_count").get<std::uint64_t>();
    r.wall_seconds = f.at("wall_seconds").get<double>();
    return r;
}

// ---- training ---------------------------------------------------------------

namespace {

TensorPtr batch_images(const std::vector<SynthSample>& data, const std::vector<int>& order,
                       std::size_t lo, std::size_t hi) {
    const int B = (int)(hi - lo);
    const auto& first = *data[(std::size_t)order[lo]].image;
    const int H = first.shape[1], W = first.shape[2];
    auto x = tensor_zeros({B, 3, H, W}, false);
    const std::size_t plane = (std::size_t)3 * H * W;
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& img = data[(std::size_t)order[i]].image->data;
        std::copy(img.begin(), img.end(), x->data.begin() + (i - lo) * plane);
    }
    return x;
}

std::vector<int> batch_labels(const std::vector<SynthSample>& data, const std::vector<int>& order,
                              std::size_t lo, std::size_t hi) {
    std::vector<int> labels;
    labels.reserve((hi - lo) * data[(std::size_t)order[lo]].labels.size());
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& l = data[(std::size_t)order[i]].labels;
        labels.insert(labels.end(), l.begin(), l.end());
    }
    return labels;
}

// argmax over the class axis; ties keep the lowest class index
std::vector<int> predict_labels(const TensorPtr& logits) {
    const int N = logits->shape[0], K = logits->shape[1];
    const std::size_t hw = (std::size_t)logits->shape[2] * logits->shape[3];
    std::vector<int> pred((std::size_t)N * hw);
    for (int n = 0; n < N; ++n) {
        const double* base = logits->data.data() + (std::size_t)n * K * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            int best = 0;
            double bv = base[p];
            for (int k = 1; k < K; ++k) {
                const double v = base[(std::size_t)k * hw + p];
                if (v > bv) { bv = v; best = k; }
            }
            pred[(std::size_t)n * hw + p] = best;
        }
    }
    return pred;
}

struct EvalOut {
    ConfusionMatrix cm;
    MiouResult mi;
    double pixel_acc = 0;
};

EvalOut evaluate(const SmallCNN& net, const std::vector<SynthSample>& val, int batch, int K) {
    ConfusionMatrix cm(K);
    std::vector<int> order((int)val.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t lo = 0; lo < val.size(); lo += (std::size_t)batch) {
        const std::size_t hi = std::min(val.size(), lo + (std::size_t)batch);
        auto x = batch_images(val, order, lo, hi);
        auto out = net.forward(x);  // no tape active: pure evaluation
        confusion_update(cm, predict_labels(out.logits), batch_labels(val, order, lo, hi));
    }
    EvalOut ev{std::move(cm), {}, 0.0};
    ev.mi = miou(ev.cm);
    ev.pixel_acc = pixel_accuracy(ev.cm);
    return ev;
}

void fisher_yates(std::vector<int>& order, Rng& rng) {
    for (std::size_t i = order.size() - 1; i >= 1; --i) {
        const std::size_t j = (std::size_t)rng.uniform_index(i + 1);
        std::swap(order[i], order[j]);
    }
}

// Frozen-teacher activations over the train split, computed once in index
// order. Pure memoization: bit-identical to recomputing per batch. For the
// KL-based losses the teacher only ever enters as softmax probabilities and
// their logs, and each (sample, channel) softmax slice depends on nothing
// outside its own row — so those are cached per sample instead of the raw
// feature, sparing the per-batch softmax/log over the teacher half.
struct TeacherCache {
    std::vector<std::vector<double>> features;   // per sample, [Ct*H*W]
    std::vector<std::vector<double>> probs;      // per sample, channel softmax of the feature
    std::vector<std::vector<double>> log_probs;  // per sample, log of probs
    std::vector<std::vector<double>> logits;     // per sample, [K*H*W] (logit_kd only)
    std::vector<int> feat_shape, logit_shape;    // [C,H,W]
};

void slice_rows(std::vector<std::vector<double>>& rows, const TensorPtr& t, std::size_t lo,
                std::size_t hi) {
    const std::size_t plane = t->size() / (hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
        auto begin = t->data.begin() + (i - lo) * plane;
        rows[i].assign(begin, begin + plane);
    }
}

TeacherCache build_teacher_cache(const SmallCNN& teacher, const std::vector<SynthSample>& train,
                                 int batch, bool want_features, bool want_probs, bool want_logits,
                                 double tau) {
    TeacherCache cache;
    if (want_features) cache.features.resize(train.size());
    if (want_probs) {
        cache.probs.resize(train.size());
        cache.log_probs.resize(train.size());
    }
    if (want_logits) cache.logits.resize(train.size());
    std::vector<int> order((int)train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t lo = 0; lo < train.size(); lo += (std::size_t)batch) {
        const std::size_t hi = std::min(train.size(), lo + (std::size_t)batch);
        auto x = batch_images(train, order, lo, hi);
        auto out = teacher.forward(x);
        if (want_features || want_probs)
            cache.feat_shape = {out.feature->shape[1], out.feature->shape[2], out.feature->shape[3]};
        if (want_features) slice_rows(cache.features, out.feature, lo, hi);
        if (want_probs) {
            // the frozen teacher's feature is already gradient-free here
            TensorPtr phi = channel_softmax(out.feature, tau);
            slice_rows(cache.probs, phi, lo, hi);
            slice_rows(cache.log_probs, log_op(phi), lo, hi);
        }
        if (want_logits) {
            cache.logit_shape = {out.logits->shape[1], out.logits->shape[2], out.logits->shape[3]};
            slice_rows(cache.logits, out.logits, lo, hi);
        }
    }
    return cache;
}

TensorPtr gather_cached(const std::vector<std::vector<double>>& rows,
                        const std::vector<int>& shape_chw, const std::vector<int>& order,
                        std::size_t lo, std::size_t hi) {
    const int B = (int)(hi - lo);
    const std::size_t plane = rows[(std::size_t)order[lo]].size();
    std::vector<double> flat;
    flat.reserve((hi - lo) * plane);
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& src = rows[(std::size_t)order[i]];
        flat.insert(flat.end(), src.begin(), src.end());
    }
    return tensor_from({B, shape_chw[0], shape_chw[1], shape_chw[2]}, std::move(flat));
}

TrainResult train_run(TrainConfig cfg) {
    cfg.finalize();
    const auto t0 = std::chrono::steady_clock::now();

    auto [train, val] = generate_dataset(cfg.dataset);
    const int K = cfg.dataset.num_classes;
    const int B = cfg.sgd.batch_size;

    Rng init_rng(derive_seed(cfg.seed, kStreamInit));
    SmallCNN net = SmallCNN::build(3, K, cfg.widths, cfg.feature_tap);
    init_params(net, init_rng);

    const bool is_student = cfg.role == "student";
    const Method method = cfg.distill.method;
    const bool distill_active = is_student && method != Method::none && cfg.distill.alpha != 0.0;

    SmallCNN teacher;
    bool have_teacher = false;
    if (is_student && (method != Method::none || cfg.inherit)) {
        if (!fs::exists(cfg.teacher_checkpoint))
            throw ConfigError("teacher checkpoint not found: " + cfg.teacher_checkpoint);
        teacher = SmallCNN::build_from_params(load_checkpoint(cfg.teacher_checkpoint));
        teacher.params.set_requires_grad(false);
        have_teacher = true;
    }
    if (cfg.inherit && have_teacher) inherit_parameters(net, teacher);

    // Auxiliaries exist only when the distillation loss is actually applied:
    // with alpha = 0 the distillation path is skipped entirely and training
    // must match a plain supervised run bit for bit.
    AlignModule align;
    GenerationModule gen;
    bool use_align = false, use_gen = false;
    if (distill_active) {
        Rng aux_rng(derive_seed(cfg.seed, kStreamAux));
        if (cfg.distill.needs_align()) {
            align = AlignModule::build(net.feature_channels(), teacher.feature_channels(), aux_rng);
            use_align = true;
        }
        if (cfg.distill.needs_generator()) {
            gen = GenerationModule::build(teacher.feature_channels(), cfg.distill.hidden_channels,
                                          aux_rng);
            use_gen = true;
        }
    }

    TeacherCache cache;
    if (distill_active) {
        const bool want_probs = method == Method::gdd || method == Method::cwd;
        const bool want_logits = cfg.distill.needs_teacher_logits();
        cache = build_teacher_cache(teacher, train, B, !want_probs && !want_logits, want_probs,
                                    want_logits, cfg.distill.tau);
    }

    std::vector<Param*> trainables;
    for (auto& p : net.params.items) trainables.push_back(&p);
    if (use_align)
        for (auto& p : align.params.items) trainables.push_back(&p);
    if (use_gen)
        for (auto& p : gen.params.items) trainables.push_back(&p);

    RunReport report;
    report.config = cfg;
    report.seed = cfg.seed;
    report.aux_param_count = (use_align ? align.params.scalar_count() : 0) +
                             (use_gen ? gen.params.scalar_count() : 0);

    Rng shuffle_rng(derive_seed(cfg.seed, kStreamShuffle));
    Rng noise_rng(derive_seed(cfg.seed, kStreamNoise));
    Rng mask_rng(derive_seed(cfg.seed, kStreamMask));
    const bool noise_on_image = distill_active &&
                                (method == Method::gdd || method == Method::sn_only) &&
                                cfg.distill.inject_location == InjectLocation::image;

    std::vector<int> order((std::size_t)cfg.dataset.train_count);
    std::iota(order.begin(), order.end(), 0);

    EvalOut last_eval{ConfusionMatrix(K), {}, 0.0};
    bool have_eval = false;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        fisher_yates(order, shuffle_rng);
        double sum_task = 0, sum_dist = 0, sum_total = 0;
        std::size_t seen = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += (std::size_t)B) {
            const std::size_t hi = std::min(order.size(), lo + (std::size_t)B);
            auto x = batch_images(train, order, lo, hi);
            auto labels = batch_labels(train, order, lo, hi);
            TensorPtr x_student = noise_on_image ? inject_image_noise(x, cfg.distill, noise_rng) : x;

            Tape tape;
            auto out = net.forward(x_student);
            TensorPtr task = pixel_cross_entropy(out.logits, labels);
            TensorPtr dist;
            TensorPtr total = task;
            if (distill_active) {
                switch (method) {
                    case Method::gdd: {
                        auto phi = gather_cached(cache.probs, cache.feat_shape, order, lo, hi);
                        auto lg = gather_cached(cache.log_probs, cache.feat_shape, order, lo, hi);
                        dist = gdd_loss_probs(phi, lg, out.feature, align, gen, cfg.distill,
                                              noise_rng);
                        break;
                    }
                    case Method::cwd: {
                        auto phi = gather_cached(cache.probs, cache.feat_shape, order, lo, hi);
                        auto lg = gather_cached(cache.log_probs, cache.feat_shape, order, lo, hi);
                        dist = channel_kl_probs(phi, lg, align_apply(align, out.feature),
                                                cfg.distill.tau);
                        break;
                    }
                    case Method::mse: {
                        auto T = gather_cached(cache.features, cache.feat_shape, order, lo, hi);
                        dist = mse_feature_loss(T, align_apply(align, out.feature));
                        break;
                    }
                    case Method::mgd: {
                        auto T = gather_cached(cache.features, cache.feat_shape, order, lo, hi);
                        dist = mgd_loss(T, out.feature, align, gen, cfg.distill.mask_ratio, mask_rng);
                        break;
                    }
                    case Method::sn_only: {
                        auto T = gather_cached(cache.features, cache.feat_shape, order, lo, hi);
                        dist = sn_only_loss(T, out.feature, align, gen, cfg.distill, noise_rng);
                        break;
                    }
                    case Method::logit_kd: {
                        auto TL = gather_cached(cache.logits, cache.logit_shape, order, lo, hi);
                        dist = logit_kd_loss(TL, out.logits, cfg.distill.tau);
                        break;
                    }
                    default: break;
                }
                total = total_loss(task, dist, cfg.distill.alpha);
            }
            if (!std::isfinite(total->data[0]))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
            tape.backward(total);
            sgd_step(trainables, cfg.sgd);

            const double bsz = (double)(hi - lo);
            sum_task += task->data[0] * bsz;
            if (dist) sum_dist += dist->data[0] * bsz;
            sum_total += total->data[0] * bsz;
            seen += (std::size_t)(hi - lo);
        }
        for (Param* p : trainables) check_finite(*p->value, p->name.c_str());

        last_eval = evaluate(net, val, B, K);
        have_eval = true;
        static const bool progress = [] {
            const char* e = std::getenv("GDD_PROGRESS");
            return e && *e && *e != '0';
        }();
        if (progress)
            std::fprintf(stderr, "[%s seed %llu] epoch %d/%d task %.4f dist %.4f val_miou %.4f\n",
                         cfg.role.c_str(), (unsigned long long)cfg.seed, epoch, cfg.epochs,
                         sum_task / (double)seen, sum_dist / (double)seen, last_eval.mi.miou);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.task_loss = sum_task / (double)seen;
        rec.distill_loss = sum_dist / (double)seen;
        rec.total_loss = sum_total / (double)seen;
        rec.val_miou = last_eval.mi.miou;
        rec.val_pixel_acc = last_eval.pixel_acc;
        report.epochs.push_back(rec);
    }

    if (!have_eval) last_eval = evaluate(net, val, B, K);
    report.per_class_iou = last_eval.mi.per_class_iou;
    report.miou = last_eval.mi.miou;
    report.pixel_acc = last_eval.pixel_acc;
    report.confusion.assign((std::size_t)K, std::vector<std::uint64_t>((std::size_t)K, 0));
    for (int t = 0; t < K; ++t)
        for (int p = 0; p < K; ++p) report.confusion[(std::size_t)t][(std::size_t)p] = last_eval.cm.at(t, p);

    fs::create_directories(cfg.output_dir);
    TrainResult result;
    result.checkpoint_path =
        (fs::path(cfg.output_dir) / (is_student ? "student.ckpt.json" : "teacher.ckpt.json")).string();
    save_checkpoint(net.params, result.checkpoint_path);
    if (use_align || use_gen) {
        ParamSet aux;
        if (use_align)
            for (auto& p : align.params.items) aux.add(p.name, p.value);
        if (use_gen)
            for (auto& p : gen.params.items) aux.add(p.name, p.value);
        save_checkpoint(aux, (fs::path(cfg.output_dir) / "aux.ckpt.json").string());
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report = report;
    atomic_write_file((fs::path(cfg.output_dir) / "report.json").string(),
                      report_to_json(report).dump(2) + "\n");
    return result;
}

}  // namespace

TrainResult train_teacher(const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.finalize();
    if (c.role != "teacher") throw ConfigError("train_teacher: config role must be 'teacher'");
    return train_run(std::move(c));
}

TrainResult train_student(const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.finalize();
    if (c.role != "student") throw ConfigError("train_student: config role must be 'student'");
    return train_run(std::move(c));
}

// ---- sweeps and reporting ---------------------------------------------------

namespace {

void apply_axis(TrainConfig& cfg, const std::string& axis, const std::string& value) {
    auto parse_double = [&](const std::string& s) {
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(s, &pos);
        } catch (const std::exception&) {
            throw ConfigError("axis " + axis + ": bad numeric value '" + s + "'");
        }
        if (pos != s.size()) throw ConfigError("axis " + axis + ": bad numeric value '" + s + "'");
        return v;
    };
    if (axis == "sigma") {
        cfg.distill.sigma = parse_double(value);
    } else if (axis == "alpha") {
        cfg.distill.alpha = parse_double(value);
    } else if (axis == "tau") {
        cfg.distill.tau = parse_double(value);
    } else if (axis == "inject_location") {
        cfg.distill.inject_location = inject_from_string(value);
    } else if (axis == "module_ablation") {
        const Method m = method_from_string(value);
        if (m != Method::none && m != Method::cwd && m != Method::sn_only && m != Method::gdd)
            throw ConfigError("module_ablation accepts none|cwd|sn_only|gdd, got '" + value + "'");
        cfg.distill.method = m;
    } else {
        throw ConfigError("unknown sweep axis '" + axis +
                          "' (expected sigma|alpha|tau|inject_location|module_ablation)");
    }
}

int sweep_threads() {
    const char* env = std::getenv("GDD_THREADS");
    if (!env || !*env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

}  // namespace

bool SweepReport::all_ok() const {
    for (const auto& e : errors)
        if (!e.empty()) return false;
    return true;
}

SweepReport run_sweep(const TrainConfig& base, const std::string& axis,
                      const std::vector<std::string>& values,
                      const std::vector<std::uint64_t>& seeds) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
    TrainConfig checked = base;
    checked.finalize();
    if (checked.role != "student") throw ConfigError("sweep: base config role must be 'student'");

    struct Planned {
        TrainConfig cfg;
        std::string run_id;
    };
    std::vector<Planned> plan;
    for (const auto& v : values) {
        for (std::uint64_t s : seeds) {
            TrainConfig cfg = checked;
            apply_axis(cfg, axis, v);
            cfg.finalize();
            cfg.seed = s;
            std::string run_id = axis + "=" + v + "_seed" + std::to_string(s);
            cfg.output_dir = (fs::path(checked.output_dir) / run_id).string();
            plan.push_back({std::move(cfg), std::move(run_id)});
        }
    }

    std::vector<RunReport> results(plan.size());
    std::vector<std::string> errors(plan.size());
    std::atomic<std::size_t> next{0};
    const int nthreads = std::min<int>(sweep_threads(), (int)plan.size());
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= plan.size()) return;
            // a diverged arm is recorded, not allowed to sink its siblings
            try {
                results[i] = train_student(plan[i].cfg).report;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            } catch (...) {
                errors[i] = "unknown error";
            }
        }
    };
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepReport sweep;
    sweep.axis = axis;
    sweep.values = values;
    sweep.seeds = seeds;
    sweep.runs = std::move(results);
    sweep.errors = std::move(errors);
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        SweepValueSummary s;
        s.value = values[vi];
        std::vector<double> finals;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            const std::size_t i = vi * seeds.size() + si;
            if (sweep.errors[i].empty()) {
                finals.push_back(sweep.runs[i].miou);
                s.run_ids.push_back(plan[i].run_id);
            } else {
                s.failed_run_ids.push_back(plan[i].run_id);
            }
        }
        if (finals.empty()) {
            s.mean_miou = s.std_miou = std::numeric_limits<double>::quiet_NaN();
        } else {
            double mean = 0;
            for (double f : finals) mean += f;
            mean /= (double)finals.size();
            double var = 0;
            for (double f : finals) var += (f - mean) * (f - mean);
            s.mean_miou = mean;
            s.std_miou = finals.size() > 1 ? std::sqrt(var / (double)(finals.size() - 1)) : 0.0;
        }
        sweep.summary.push_back(std::move(s));
    }

    std::vector<RunReport> finished;
    for (std::size_t i = 0; i < sweep.runs.size(); ++i)
        if (sweep.errors[i].empty()) finished.push_back(sweep.runs[i]);
    atomic_write_file((fs::path(checked.output_dir) / "sweep.csv").string(),
                      reports_to_csv(finished));
    json sj;
    sj["axis"] = sweep.axis;
    sj["values"] = sweep.values;
    sj["seeds"] = sweep.seeds;
    json summary = json::array();
    for (const auto& s : sweep.summary)
        summary.push_back({{"value", s.value},
                           {"mean_miou", s.mean_miou},
                           {"std_miou", s.std_miou},
                           {"run_ids", s.run_ids},
                           {"failed_run_ids", s.failed_run_ids}});
    sj["summary"] = std::move(summary);
    atomic_write_file((fs::path(checked.output_dir) / "summary.json").string(), sj.dump(2) + "\n");
    return sweep;
}

namespace {

std::string run_id_of(const RunReport& r) {
    return fs::path(r.config.output_dir).filename().string();
}

}  // namespace

std::string reports_to_csv(const std::vector<RunReport>& reports) {
    std::string csv =
        "run_id,method,alpha,tau,sigma,inject_location,seed,epochs,final_miou,final_pixel_acc,"
        "wall_seconds\n";
    for (const auto& r : reports) {
        csv += run_id_of(r);
        csv += ",";
        csv += to_string(r.config.distill.method);
        csv += ",";
        csv += fmt_double(r.config.distill.alpha);
        csv += ",";
        csv += fmt_double(r.config.distill.tau);
        csv += ",";
        csv += fmt_double(r.config.distill.sigma);
        csv += ",";
        csv += to_string(r.config.distill.inject_location);
        csv += ",";
        csv += std::to_string(r.seed);
        csv += ",";
        csv += std::to_string(r.config.epochs);
        csv += ",";
        csv += fmt_double(r.miou);
        csv += ",";
        csv += fmt_double(r.pixel_acc);
        csv += ",";
        csv += fmt_double(r.wall_seconds);
        csv += "\n";
    }
    return csv;
}

std::string reports_to_json(const std::vector<RunReport>& reports) {
    json j;
    json runs = json::array();
    for (const auto& r : reports) runs.push_back(report_to_json(r));
    j["runs"] = std::move(runs);
    return j.dump(2) + "\n";
}

std::vector<RunReport> collect_reports(const std::string& dir) {
    if (!fs::is_directory(dir)) throw ConfigError("report input is not a directory: " + dir);
    std::vector<fs::path> files;
    auto consider = [&](const fs::path& p) {
        if (fs::is_regular_file(p)) files.push_back(p);
    };
    consider(fs::path(dir) / "report.json");
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& sd : subdirs) {
        consider(sd / "report.json");
        std::vector<fs::path> nested;
        for (const auto& e : fs::directory_iterator(sd))
            if (e.is_directory()) nested.push_back(e.path());
        std::sort(nested.begin(), nested.end());
        for (const auto& nd : nested) consider(nd / "report.json");
    }
    std::vector<RunReport> out;
    for (const auto& f : files) {
        try {
            out.push_back(report_from_json(json::parse(read_file(f.string()))));
        } catch (const std::exception& e) {
            throw ConfigError("cannot parse " + f.string() + ": " + e.what());
        }
    }
    return out;
}

}  // namespace gdd
