// cdseg: dataset generation, two-stage training, evaluation, inference,
// gradient checking and runtime benchmarking.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "cdseg/commands.hpp"
#include "cdseg/error.hpp"

namespace {

std::string config_help() {
  std::string s = "Config file of key=value lines. Keys (default):";
  for (const auto& k : cdseg::config_keys()) {
    s += std::string("\n    ") + k.key + " (" + (*k.default_value ? k.default_value : "\"\"") + ")  " + k.help;
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crater and rock segmentation from RGB-D frames"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);

  cdseg::GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic lunar dataset (train/test splits + manifest)");
  g->add_option("--config", gen.config, config_help());
  g->add_option("--out", gen.out, "Dataset root directory")->required();
  g->add_option("--seed", gen.seed, "Master seed (default: config seed, 0)");
  g->add_option("--per-preset", gen.per_preset, "Train samples per preset (default: 60)");
  g->add_option("--test-per-preset", gen.test_per_preset, "Test samples per preset (default: 15)");
  g->add_option("--threads", gen.threads, "Worker threads (default: 1); output is identical for any count");

  cdseg::TrainArgs train;
  auto* t = app.add_subcommand("train", "Train stage 1 (single encoder) or stage 2 (fusion + contrastive alignment)");
  t->add_option("--stage", train.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  t->add_option("--data", train.data, "Dataset root (uses its train split)")->required();
  t->add_option("--config", train.config, config_help());
  t->add_option("--init", train.init, "Stage-1 RGB checkpoint; required for stage 2");
  t->add_option("--out", train.out, "Checkpoint path; the train log goes to <out>.log")->required();

  cdseg::EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint path")->required();
  e->add_option("--data", ev.data, "Dataset root")->required();
  e->add_option("--split", ev.split, "Split name")->capture_default_str();
  e->add_flag("--per-scenario", ev.per_scenario, "Also report each preset separately (default: off)");

  cdseg::InferArgs inf;
  auto* i = app.add_subcommand("infer", "Predict a label mask for one RGB/depth pair");
  i->add_option("--ckpt", inf.ckpt, "Checkpoint path")->required();
  i->add_option("--rgb", inf.rgb, "8-bit RGB PNG")->required();
  i->add_option("--depth", inf.depth, "16-bit depth PNG aligned with --rgb")->required();
  i->add_option("--out", inf.out, "Output label PNG (values 0/1/2)")->required();

  cdseg::GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare analytic gradients against central differences");
  c->add_option("--ops", gc.ops, "'all' or comma-separated op names")->capture_default_str();
  c->add_option("--trials", gc.trials, "Random points per op")->capture_default_str();
  c->add_option("--seed", gc.seed, "Seed for the random points")->capture_default_str();
  c->add_option("--perturb", gc.perturb, "Test fixture: scale this op's gradient by 1.01 (default: none)");

  cdseg::BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Measure per-frame inference time");
  b->add_option("--ckpt", bench.ckpt, "Checkpoint path")->required();
  b->add_option("--data", bench.data, "Dataset root")->required();
  b->add_option("--split", bench.split, "Split name")->capture_default_str();
  b->add_option("--frames", bench.frames, "Timed frames")->capture_default_str();
  b->add_option("--warmup", bench.warmup, "Untimed warm-up frames")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << "error=usage detail=" << err.what() << "\n";
    return 2;
  }

  try {
    if (g->parsed()) return cdseg::cmd_gen(gen, std::cout);
    if (t->parsed()) return cdseg::cmd_train(train, std::cout);
    if (e->parsed()) return cdseg::cmd_eval(ev, std::cout);
    if (i->parsed()) return cdseg::cmd_infer(inf, std::cout);
    if (c->parsed()) return cdseg::cmd_gradcheck(gc, std::cout);
    if (b->parsed()) return cdseg::cmd_bench(bench, std::cout);
  } catch (const cdseg::Error& err) {
    std::cout << std::flush;
    std::cerr << "error=" << cdseg::to_string(err.kind()) << " detail=" << err.what() << "\n";
    return err.kind() == cdseg::ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& err) {
    std::cerr << "error=internal detail=" << err.what() << "\n";
    return 1;
  }
  return 2;
}
