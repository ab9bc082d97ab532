#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cdseg/config.hpp"
#include "cdseg/rng.hpp"

namespace cdseg {

// ------------------------------------------------------------- gradient suite

struct GradcheckOp {
  std::string name;
  // One trial at a fresh random point; returns the max relative error.
  // With `perturb` set, the op's input gradient is deliberately skewed so
  // the check must fail.
  std::function<double(Rng& rng, bool perturb)> trial;
};

inline constexpr double kGradTolerance = 1e-4;

/// conv2d, upsample_nearest, softmax_channels, ntxent, lovasz_softmax and
/// the pointwise/reduction operators.
std::vector<GradcheckOp> gradcheck_ops();

struct GradcheckResult {
  std::string name;
  double max_error = 0.0;
  bool passed() const { return max_error < kGradTolerance; }
};

/// `filter` is "all" or a comma-separated list of op names.
std::vector<GradcheckResult> run_gradcheck(const std::vector<GradcheckOp>& ops,
                                           const std::string& filter, int trials,
                                           std::uint64_t seed,
                                           const std::string& perturb = "");

// ------------------------------------------------------------- subcommands
//
// Each command validates its inputs before writing anything, prints its
// report to `out` and returns the process exit code. Failures throw
// cdseg::Error, which the executable turns into `error=<kind> detail=<text>`.

struct GenArgs {
  std::optional<std::string> config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> per_preset;
  std::optional<int> test_per_preset;
  std::optional<int> threads;
};
int cmd_gen(const GenArgs& args, std::ostream& out);

struct TrainArgs {
  int stage = 1;
  std::string data;
  std::optional<std::string> config;
  std::optional<std::string> init;
  std::string out;
};
int cmd_train(const TrainArgs& args, std::ostream& out);

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  bool per_scenario = false;
};
int cmd_eval(const EvalArgs& args, std::ostream& out);

struct InferArgs {
  std::string ckpt;
  std::string rgb;
  std::string depth;
  std::string out;
};
int cmd_infer(const InferArgs& args, std::ostream& out);

struct GradcheckArgs {
  std::string ops = "all";
  int trials = 10;
  std::uint64_t seed = 0;
  std::string perturb;
};
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out);

struct BenchArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  int frames = 100;
  int warmup = 5;
};
int cmd_bench(const BenchArgs& args, std::ostream& out);

struct BenchStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double fps = 0.0;
};
BenchStats bench_stats(std::vector<double> frame_ms);

}  // namespace cdseg
