// Command-line front end: train-teacher / train-student / sweep / report.
// Exit codes: 0 ok, 1 bad config or arguments, 2 runtime failure.
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gdd/errors.hpp"
#include "gdd/harness.hpp"
#include "gdd/io.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s, const char* what) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = s.find(',', start);
        const std::size_t end = comma == std::string::npos ? s.size() : comma;
        if (end == start) throw gdd::ConfigError(std::string(what) + ": empty entry in '" + s + "'");
        out.push_back(s.substr(start, end - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw gdd::ConfigError(std::string(what) + ": no entries");
    return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> seeds;
    for (const auto& part : split_csv(s, "--seeds")) {
        std::size_t pos = 0;
        std::uint64_t v = 0;
        try {
            v = std::stoull(part, &pos);
        } catch (const std::exception&) {
            throw gdd::ConfigError("--seeds: bad value '" + part + "'");
        }
        if (pos != part.size()) throw gdd::ConfigError("--seeds: bad value '" + part + "'");
        seeds.push_back(v);
    }
    return seeds;
}

void print_run(const gdd::TrainResult& res) {
    std::cout << "checkpoint: " << res.checkpoint_path << "\n"
              << "final miou " << gdd::fmt_double(res.report.miou) << ", pixel acc "
              << gdd::fmt_double(res.report.pixel_acc) << ", wall "
              << gdd::fmt_double(res.report.wall_seconds) << " s\n";
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Training churns through feature-map-sized buffers; left at the default
    // thresholds glibc serves them via mmap/munmap, and the page faults end up
    // costing more than the arithmetic. Keep big blocks in the arena instead.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
    CLI::App app{"distillation lab for synthetic shape segmentation"};
    app.require_subcommand(1);

    std::string config_path, axis, values_csv, seeds_csv, input_dir, format = "csv";

    auto* tt = app.add_subcommand("train-teacher", "train the wide supervised network");
    tt->add_option("--config", config_path, "JSON run config")->required();

    auto* ts = app.add_subcommand("train-student", "train a student, optionally distilling");
    ts->add_option("--config", config_path, "JSON run config")->required();

    auto* sw = app.add_subcommand("sweep", "train students over a value grid x seeds");
    sw->add_option("--config", config_path, "base student config")->required();
    sw->add_option("--axis", axis, "sigma|alpha|tau|inject_location|module_ablation")->required();
    sw->add_option("--values", values_csv, "comma-separated axis values")->required();
    sw->add_option("--seeds", seeds_csv, "comma-separated seeds")->required();

    auto* rp = app.add_subcommand("report", "aggregate report.json files under a directory");
    rp->add_option("--input", input_dir, "directory holding run outputs")->required();
    rp->add_option("--format", format, "csv (default) or json")
        ->check(CLI::IsMember({"csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // bad arguments are config errors
    }

    try {
        if (tt->parsed()) {
            print_run(gdd::train_teacher(gdd::config_from_file(config_path)));
        } else if (ts->parsed()) {
            print_run(gdd::train_student(gdd::config_from_file(config_path)));
        } else if (sw->parsed()) {
            auto base = gdd::config_from_file(config_path);
            auto sweep = gdd::run_sweep(base, axis, split_csv(values_csv, "--values"),
                                        parse_seeds(seeds_csv));
            for (const auto& s : sweep.summary)
                std::cout << axis << "=" << s.value << ": mean miou "
                          << gdd::fmt_double(s.mean_miou) << " (std "
                          << gdd::fmt_double(s.std_miou) << ", n=" << s.run_ids.size() << ")\n";
            for (std::size_t i = 0; i < sweep.errors.size(); ++i)
                if (!sweep.errors[i].empty())
                    std::cerr << "run " << axis << "=" << sweep.values[i / sweep.seeds.size()]
                              << " seed " << sweep.seeds[i % sweep.seeds.size()]
                              << " failed: " << sweep.errors[i] << "\n";
            std::cout << "wrote " << base.output_dir << "/sweep.csv and summary.json\n";
            if (!sweep.all_ok()) return 2;
        } else if (rp->parsed()) {
            auto reports = gdd::collect_reports(input_dir);
            std::cout << (format == "json" ? gdd::reports_to_json(reports)
                                           : gdd::reports_to_csv(reports));
        }
        return 0;
    } catch (const gdd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
