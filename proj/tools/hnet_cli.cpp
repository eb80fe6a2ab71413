#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hnet/cli.hpp"

int main(int argc, char** argv) {
  using namespace hnet::cli;
  CLI::App app{"H-Net: two-view catheter segmentation and tip-force regression"};
  app.set_version_flag("--version", hnet::kVersion);
  app.require_subcommand(1);

  GenDataArgs gen;
  std::uint64_t gen_seed = 0;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic two-view dataset");
  g->add_option("--config", gen.config, "Key-value generator config")->required();
  g->add_option("--out", gen.out, "Dataset directory")->required();
  auto* g_seed = g->add_option("--seed", gen_seed, "Master seed (overrides the config)");

  TrainArgs train;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train on the train split with early stopping on val");
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--config", train.config, "Key-value training config")->required();
  t->add_option("--out", train.out, "Run directory")->required();
  auto* t_seed = t->add_option("--seed", train_seed, "Master seed (overrides the config)");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on one split");
  e->add_option("--data", eval.data, "Dataset directory")->required();
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--out", eval.out, "Run directory")->required();
  e->add_option("--split", eval.split, "Split to score")->check(CLI::IsMember({"train", "val", "test"}));

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Predict masks and force for one image pair");
  i->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
  i->add_option("--out", infer.out, "Output directory")->required();
  i->add_option("image_a", infer.image_a, "First view (PNG)")->required();
  i->add_option("image_b", infer.image_b, "Second view (PNG)")->required();

  ReportArgs report;
  auto* r = app.add_subcommand("report", "Plot force traces, error histograms and training curves");
  r->add_option("run", report.run, "Eval run directory")->required();
  r->add_option("--out", report.out, "Output directory (default: <run>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  const Streams s{std::cout, std::cerr};
  if (g->parsed()) {
    if (*g_seed) gen.seed = gen_seed;
    return cmd_gen_data(gen, s);
  }
  if (t->parsed()) {
    if (*t_seed) train.seed = train_seed;
    return cmd_train(train, s);
  }
  if (e->parsed()) return cmd_eval(eval, s);
  if (i->parsed()) return cmd_infer(infer, s);
  return cmd_report(report, s);
}
