#pragma once

// Command implementations behind the `hnet` executable. Each command returns
// its exit code; messages go to the given streams. Primary outputs depend only
// on the inputs recorded in run_manifest.json; wall-clock timings live in the
// timings.json sidecar so manifests stay byte-identical across reruns.

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hnet/checkpoint.hpp"
#include "hnet/config.hpp"
#include "hnet/dataset.hpp"
#include "hnet/errors.hpp"
#include "hnet/metrics.hpp"
#include "hnet/model.hpp"
#include "hnet/plot.hpp"
#include "hnet/png.hpp"
#include "hnet/synth.hpp"
#include "hnet/train.hpp"
#include "hnet/version.hpp"

namespace hnet::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumeric = 3, kMismatch = 4 };

inline constexpr const char* kManifestFile = "run_manifest.json";
inline constexpr const char* kTimingsFile = "timings.json";
inline constexpr const char* kEpochLogFile = "epoch_log.jsonl";
inline constexpr const char* kBestMarker = "best";
inline constexpr const char* kModelFile = "model.ckpt";
inline constexpr const char* kInitFile = "init.ckpt";

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { write_file_bytes(path, text); }

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::string epoch_file(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", epoch);
  return buf;
}

inline nlohmann::ordered_json manifest(const std::string& command, const nlohmann::ordered_json& config,
                                       std::uint64_t seed, const nlohmann::ordered_json& inputs,
                                       const std::vector<std::string>& outputs) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = seed;
  j["config"] = config;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  return j;
}

inline void write_timings(const std::filesystem::path& dir, const nlohmann::ordered_json& t) {
  write_json(dir / kTimingsFile, t);
}

/// Maps the error taxonomy onto the exit-code contract.
template <class F>
int guarded(Streams s, F&& body) {
  try {
    return body();
  } catch (const CheckpointMismatch& e) {
    s.err << "error: checkpoint mismatch at parameter '" << e.param() << "': " << e.what() << "\n";
    return kMismatch;
  } catch (const NumericError& e) {
    s.err << "error: numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    s.err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

/// Float model matching a checkpoint for inputs of the given size.
inline HNetModel<float> model_from_checkpoint(const std::filesystem::path& path, std::size_t height,
                                              std::size_t width, std::size_t channels) {
  const auto entries = read_checkpoint(path);
  const HNetConfig cfg = infer_config(entries, height, width);
  if (cfg.channels != channels)
    throw CheckpointMismatch("enc.b1.conv1.weight", "checkpoint expects " + std::to_string(cfg.channels) +
                                                        " input channels, data has " + std::to_string(channels));
  HNetModel<float> m = build_hnet<float>(cfg, 0);
  restore(m.params, entries);
  return m;
}

}  // namespace detail

struct GenDataArgs {
  std::filesystem::path config, out;
  std::optional<std::uint64_t> seed;
};

/// Generates a synthetic dataset; --seed overrides the config seed.
inline int cmd_gen_data(const GenDataArgs& a, Streams s) {
  return detail::guarded(s, [&] {
    const auto t0 = detail::Clock::now();
    GenDataConfig cfg = GenDataConfig::from(KeyValues::load(a.config));
    if (a.seed) cfg.synth.seed = *a.seed;
    auto parts = split_dataset(generate_records(cfg.synth, cfg.count), cfg.fractions, cfg.synth.seed);
    std::vector<DatasetRecord> all;
    for (auto& p : parts) all.insert(all.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    detail::ensure_dir(a.out);
    write_dataset(all, a.out);
    const std::string checksum = hex64(dataset_checksum(a.out));
    auto m = detail::manifest("gen-data", cfg.to_json(), cfg.synth.seed, {{"config", a.config.string()}},
                              {"manifest.jsonl"});
    m["dataset_checksum"] = checksum;
    m["splits"] = {{"train", parts[0].size()}, {"val", parts[1].size()}, {"test", parts[2].size()}};
    detail::write_json(a.out / kManifestFile, m);
    detail::write_timings(a.out, {{"total_seconds", detail::seconds_since(t0)}});
    s.out << "records " << all.size() << "\n"
          << "train " << parts[0].size() << "\nval " << parts[1].size() << "\ntest " << parts[2].size() << "\n"
          << "checksum " << checksum << "\n";
    return kOk;
  });
}

struct TrainArgs {
  std::filesystem::path data, config, out;
  std::optional<std::uint64_t> seed;
};

/// Fits on the train split with early stopping on the val split. Writes
/// init.ckpt, one checkpoint per epoch, model.ckpt (best weights), the `best`
/// marker naming the best epoch's checkpoint, and epoch_log.jsonl.
inline int cmd_train(const TrainArgs& a, Streams s) {
  return detail::guarded(s, [&] {
    const auto t0 = detail::Clock::now();
    TrainRunConfig cfg = TrainRunConfig::from(KeyValues::load(a.config));
    if (a.seed) cfg.train.seed = *a.seed;
    const auto train = read_dataset(a.data, "train");
    const auto val = read_dataset(a.data, "val");
    if (train.empty() || val.empty()) throw IoError(a.data.string() + ": dataset needs nonempty train and val splits");
    cfg.model.height = train.front().view_a.shape().h;
    cfg.model.width = train.front().view_a.shape().w;
    cfg.model.channels = train.front().view_a.shape().c;
    cfg.model.validate();
    const std::string checksum = hex64(dataset_checksum(a.data));

    detail::ensure_dir(a.out);
    HNetModel<float> m = build_hnet<float>(cfg.model, cfg.train.seed);
    save_checkpoint(m.params, a.out / kInitFile);
    std::ofstream log(a.out / kEpochLogFile, std::ios::binary | std::ios::trunc);
    if (!log) throw IoError("cannot write " + (a.out / kEpochLogFile).string());
    std::vector<std::string> outputs{kInitFile, kEpochLogFile};
    nlohmann::ordered_json epoch_seconds = nlohmann::ordered_json::array();
    auto t_epoch = detail::Clock::now();
    s.out << "params " << parameter_count(m) << "\n";

    const FitResult res = fit(m, train, val, cfg.train, [&](const EpochLog& e, const HNetModel<float>& cur, bool) {
      const std::string name = detail::epoch_file(e.epoch);
      save_checkpoint(cur.params, a.out / name);
      outputs.push_back(name);
      log << e.to_json().dump() << "\n" << std::flush;
      epoch_seconds.push_back(detail::seconds_since(t_epoch));
      t_epoch = detail::Clock::now();
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %zu train_loss %.6g val_loss %.6g train_acc %.6g val_acc %.6g\n", e.epoch,
                    e.train.total, e.val.total, e.train.seg_acc, e.val.seg_acc);
      s.out << buf << std::flush;
    });

    save_checkpoint(m.params, a.out / kModelFile);
    const std::string best = res.best_epoch == 0 ? kInitFile : detail::epoch_file(res.best_epoch);
    detail::write_text(a.out / kBestMarker, best + "\n");
    outputs.push_back(kModelFile);
    outputs.push_back(kBestMarker);
    auto man = detail::manifest("train", cfg.to_json(), cfg.train.seed, {{"data", a.data.string()}, {"config", a.config.string()}},
                                outputs);
    man["dataset_checksum"] = checksum;
    man["input_size"] = {cfg.model.height, cfg.model.width, cfg.model.channels};
    man["best_epoch"] = res.best_epoch;
    man["epochs_run"] = res.log.size();
    man["stopped_early"] = res.stopped_early;
    detail::write_json(a.out / kManifestFile, man);
    detail::write_timings(a.out, {{"total_seconds", detail::seconds_since(t0)}, {"epoch_seconds", epoch_seconds}});
    s.out << "best_epoch " << res.best_epoch << "\n";
    return kOk;
  });
}

struct EvalArgs {
  std::filesystem::path data, checkpoint, out;
  std::string split = "test";
};

/// Scores a checkpoint on one split: metrics.txt (key value lines in table
/// column order), metrics.json, and per-record predictions.jsonl.
inline int cmd_eval(const EvalArgs& a, Streams s) {
  return detail::guarded(s, [&] {
    const auto t0 = detail::Clock::now();
    if (a.split != "train" && a.split != "val" && a.split != "test")
      throw ConfigError("split must be train, val or test, got '" + a.split + "'");
    const auto records = read_dataset(a.data, a.split);
    if (records.empty()) throw IoError(a.data.string() + ": split '" + a.split + "' is empty");
    const Shape sh = records.front().view_a.shape();
    const HNetModel<float> m = detail::model_from_checkpoint(a.checkpoint, sh.h, sh.w, sh.c);
    const EvalResult r = evaluate(m, records);

    detail::ensure_dir(a.out);
    const std::string kv = r.report.to_kv();
    detail::write_text(a.out / "metrics.txt", kv);
    nlohmann::ordered_json mj = r.report.to_json();
    const auto seg = [](const SegMetrics& x) {
      return nlohmann::ordered_json{{"acc", x.accuracy}, {"miou", x.miou}, {"mdice", x.mdice}};
    };
    mj["seg_a"] = seg(r.report.seg_a);
    mj["seg_b"] = seg(r.report.seg_b);
    mj["n"] = records.size();
    detail::write_json(a.out / "metrics.json", mj);
    std::string lines;
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
      nlohmann::ordered_json p;
      p["id"] = r.ids[i];
      p["predicted"] = r.predicted[i];
      p["actual"] = r.actual[i];
      lines += p.dump() + "\n";
    }
    detail::write_text(a.out / "predictions.jsonl", lines);
    auto man = detail::manifest("eval", {{"split", a.split}}, 0,
                                {{"data", a.data.string()}, {"checkpoint", a.checkpoint.string()}},
                                {"metrics.txt", "metrics.json", "predictions.jsonl"});
    man["dataset_checksum"] = hex64(dataset_checksum(a.data));
    detail::write_json(a.out / kManifestFile, man);
    detail::write_timings(a.out, {{"total_seconds", detail::seconds_since(t0)}});
    s.out << kv;
    return kOk;
  });
}

struct InferArgs {
  std::filesystem::path checkpoint, image_a, image_b, out;
};

/// Writes exactly mask_a.png, mask_b.png and forces.json.
inline int cmd_infer(const InferArgs& a, Streams s) {
  return detail::guarded(s, [&] {
    const Tensor<float> va = read_image_tensor(a.image_a), vb = read_image_tensor(a.image_b);
    if (va.shape() != vb.shape())
      throw ShapeError("view sizes differ: " + va.shape().str() + " vs " + vb.shape().str());
    const HNetModel<float> m = detail::model_from_checkpoint(a.checkpoint, va.shape().h, va.shape().w, va.shape().c);
    const Prediction<float> p = predict(m, va, vb);
    detail::ensure_dir(a.out);
    write_png(a.out / "mask_a.png", tensor_to_gray(predict_mask(p.seg_a)));
    write_png(a.out / "mask_b.png", tensor_to_gray(predict_mask(p.seg_b)));
    const nlohmann::ordered_json f{{"fx", p.force[0]}, {"fy", p.force[1]}, {"fz", p.force[2]}};
    detail::write_json(a.out / "forces.json", f);
    s.out << f.dump() << "\n";
    return kOk;
  });
}

struct ReportArgs {
  std::filesystem::path run;
  std::filesystem::path out;  // empty: <run>/report
};

/// Figures for a completed eval run: per-axis predicted-vs-actual traces and
/// error histograms, plus loss and accuracy curves from the training run that
/// produced the evaluated checkpoint. series.json holds every plotted number.
inline int cmd_report(const ReportArgs& a, Streams s, std::size_t bins = 20) {
  return detail::guarded(s, [&] {
    const auto man = detail::read_json(a.run / kManifestFile);
    if (man.value("command", "") != "eval") throw IoError(a.run.string() + " is not a completed eval run");
    std::ifstream pin(a.run / "predictions.jsonl");
    if (!pin) throw IoError(a.run.string() + ": missing predictions.jsonl");
    std::array<std::vector<double>, 3> pred, act, err;
    std::vector<double> index;
    std::string line;
    while (std::getline(pin, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      for (std::size_t d = 0; d < 3; ++d) {
        pred[d].push_back(j.at("predicted").at(d).get<double>());
        act[d].push_back(j.at("actual").at(d).get<double>());
        err[d].push_back(pred[d].back() - act[d].back());
      }
      index.push_back(static_cast<double>(index.size()));
    }
    if (index.empty()) throw IoError(a.run.string() + ": predictions.jsonl is empty");

    const std::filesystem::path train_dir =
        std::filesystem::path(man.at("inputs").at("checkpoint").get<std::string>()).parent_path();
    std::ifstream lin(train_dir / kEpochLogFile);
    if (!lin) throw IoError("missing " + (train_dir / kEpochLogFile).string());
    std::vector<double> epochs, train_loss, val_loss, train_acc, val_acc;
    while (std::getline(lin, line)) {
      if (line.empty()) continue;
      const EpochLog e = EpochLog::from_json(nlohmann::json::parse(line));
      epochs.push_back(static_cast<double>(e.epoch));
      train_loss.push_back(e.train.total);
      val_loss.push_back(e.val.total);
      train_acc.push_back(e.train.seg_acc);
      val_acc.push_back(e.val.seg_acc);
    }

    const std::filesystem::path out = a.out.empty() ? a.run / "report" : a.out;
    detail::ensure_dir(out);
    nlohmann::ordered_json series;
    static constexpr std::array<const char*, 3> kAxes = {"x", "y", "z"};
    for (std::size_t d = 0; d < 3; ++d) {
      Canvas trace(640, 320);
      const auto [lo, hi] = value_range({pred[d], act[d]});
      trace.set_range(0.0, static_cast<double>(index.size() - 1), lo, hi);
      trace.frame();
      trace.polyline(index, act[d], kBlack);
      trace.polyline(index, pred[d], kRed);
      trace.save(out / (std::string("force_trace_") + kAxes[d] + ".png"));

      const Histogram h = histogram(err[d], bins);
      Canvas hist(480, 320);
      const auto top = static_cast<double>(*std::max_element(h.counts.begin(), h.counts.end()));
      hist.set_range(h.edges.front(), h.edges.back(), 0.0, top);
      for (std::size_t b = 0; b < bins; ++b) hist.bar(h.edges[b], h.edges[b + 1], static_cast<double>(h.counts[b]), kBlue);
      hist.frame();
      hist.save(out / (std::string("error_hist_") + kAxes[d] + ".png"));

      series["force_trace"][kAxes[d]] = {{"actual", act[d]}, {"predicted", pred[d]}};
      series["error_histogram"][kAxes[d]] = {{"edges", h.edges}, {"counts", h.counts}};
    }
    const auto curves = [&](const std::vector<double>& tr, const std::vector<double>& va, const char* file) {
      Canvas c(640, 320);
      const auto [lo, hi] = value_range({tr, va});
      c.set_range(epochs.empty() ? 0.0 : epochs.front(), epochs.empty() ? 1.0 : epochs.back(), lo, hi);
      c.frame();
      c.polyline(epochs, tr, kBlue);
      c.polyline(epochs, va, kRed);
      c.save(out / file);
    };
    curves(train_loss, val_loss, "loss_curves.png");
    curves(train_acc, val_acc, "accuracy_curves.png");
    series["curves"] = {{"epoch", epochs},          {"train_loss", train_loss}, {"val_loss", val_loss},
                        {"train_acc", train_acc},   {"val_acc", val_acc}};
    detail::write_json(out / "series.json", series);
    s.out << "samples " << index.size() << "\nepochs " << epochs.size() << "\nreport " << out.string() << "\n";
    return kOk;
  });
}

}  // namespace hnet::cli
