#include "cdseg/commands.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "cdseg/error.hpp"
#include "cdseg/gradcheck.hpp"
#include "cdseg/io_store.hpp"
#include "cdseg/lunargen.hpp"
#include "cdseg/metrics.hpp"
#include "cdseg/ops.hpp"
#include "cdseg/trainer.hpp"

namespace cdseg {
namespace {

using ad::Tensor;

Tensor random_tensor(ad::Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Identity whose backward is off by 1% plus 0.01 per coordinate.
Tensor skew(const Tensor& x) {
  return ad::make_result(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), {x},
                         "skew", [](ad::Node& self) {
                           auto& in = *self.parents[0];
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             in.grad[i] += 1.01 * self.grad[i] + 0.01;
                           }
                         });
}

Tensor weighted_sum(const Tensor& y, const Tensor& weights) { return ad::sum(ad::mul(y, weights)); }

ad::ScalarFn finish(ad::ScalarFn f, bool perturb) {
  if (!perturb) return f;
  return [f = std::move(f)](const Tensor& x) { return f(skew(x)); };
}

Tensor unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<double> v(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v[i * d + j] = rng.uniform(-1.0, 1.0);
      norm += v[i * d + j] * v[i * d + j];
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) v[i * d + j] /= norm;
  }
  return Tensor({n, d}, std::move(v));
}

// Smallest gap between any two sorted Lovasz errors of any class.
double min_error_gap(const Tensor& probs, const LabelMask& labels) {
  const std::size_t c = probs.dim(0), hw = probs.dim(1) * probs.dim(2);
  double gap = 1.0;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> err(hw);
    for (std::size_t p = 0; p < hw; ++p) {
      err[p] = labels[p] == k ? 1.0 - probs[k * hw + p] : probs[k * hw + p];
    }
    std::sort(err.begin(), err.end());
    for (std::size_t p = 1; p < hw; ++p) gap = std::min(gap, err[p] - err[p - 1]);
  }
  return gap;
}

// Tie-free pointwise input: every |x| >= margin.
Tensor away_from_zero(ad::Shape shape, Rng& rng, double margin) {
  Tensor t = random_tensor(std::move(shape), rng, -1.0, 1.0);
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin - std::abs(v) : margin + v;
  }
  return t;
}

void ensure_parent_dir(const std::string& path) {
  const auto parent = fs::absolute(fs::path(path)).parent_path();
  if (!fs::is_directory(parent)) fail(ErrorKind::kIo, "output directory does not exist: " + parent.string());
}

struct LoadedNet {
  NetworkParams params;
  NetworkKind kind;
};

LoadedNet load_network(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  const auto kind = network_kind(ck.params);
  ck.params.set_requires_grad(kRgbEncoder, false);
  ck.params.set_requires_grad(kDepthEncoder, false);
  ck.params.set_requires_grad(kDecoder, false);
  return {std::move(ck.params), kind};
}


}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kResolution: return "resolution";
    case ErrorKind::kDegenerateInput: return "degenerate_input";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kStructureMismatch: return "structure_mismatch";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

// ------------------------------------------------------------- gradient suite

std::vector<GradcheckOp> gradcheck_ops() {
  std::vector<GradcheckOp> ops;

  ops.push_back({"conv2d", [](Rng& rng, bool perturb) {
                   const int stride = static_cast<int>(rng.uniform_int(1, 2));
                   const int pad = static_cast<int>(rng.uniform_int(0, 1));
                   Tensor input = random_tensor({2, 6, 6}, rng, -1, 1);
                   Tensor kernel = random_tensor({3, 2, 3, 3}, rng, -1, 1);
                   Tensor bias = random_tensor({3}, rng, -1, 1);
                   const std::size_t o = (6 + 2 * pad - 3) / stride + 1;
                   Tensor w = random_tensor({3, o, o}, rng, -1, 1);
                   double err = 0.0;
                   err = std::max(err, ad::grad_check(finish([&](const Tensor& x) {
                     return weighted_sum(ad::conv2d(x, kernel, bias, stride, pad), w);
                   }, perturb), input));
                   err = std::max(err, ad::grad_check(finish([&](const Tensor& k) {
                     return weighted_sum(ad::conv2d(input, k, bias, stride, pad), w);
                   }, perturb), kernel));
                   err = std::max(err, ad::grad_check(finish([&](const Tensor& b) {
                     return weighted_sum(ad::conv2d(input, kernel, b, stride, pad), w);
                   }, perturb), bias));
                   return err;
                 }});

  ops.push_back({"upsample_nearest", [](Rng& rng, bool perturb) {
                   const int f = static_cast<int>(rng.uniform_int(1, 3));
                   Tensor x = random_tensor({2, 3, 3}, rng, -1, 1);
                   const auto n = static_cast<std::size_t>(3 * f);
                   Tensor w = random_tensor({2, n, n}, rng, -1, 1);
                   return ad::grad_check(finish([&](const Tensor& t) {
                     return weighted_sum(ad::upsample_nearest(t, f), w);
                   }, perturb), x);
                 }});

  ops.push_back({"softmax_channels", [](Rng& rng, bool perturb) {
                   Tensor x = random_tensor({3, 3, 3}, rng, -2, 2);
                   Tensor w = random_tensor({3, 3, 3}, rng, -1, 1);
                   return ad::grad_check(finish([&](const Tensor& t) {
                     return weighted_sum(ad::softmax_channels(t), w);
                   }, perturb), x);
                 }});

  ops.push_back({"ntxent", [](Rng& rng, bool perturb) {
                   Tensor fd = unit_rows(4, 6, rng);
                   Tensor fr = unit_rows(4, 6, rng);
                   double err = ad::grad_check(finish([&](const Tensor& t) { return ntxent(t, fr); }, perturb), fd);
                   return std::max(err, ad::grad_check(finish([&](const Tensor& t) { return ntxent(fd, t); }, perturb), fr));
                 }});

  ops.push_back({"lovasz_softmax", [](Rng& rng, bool perturb) {
                   Tensor logits;
                   LabelMask labels(16);
                   do {
                     logits = random_tensor({3, 4, 4}, rng, -2, 2);
                     for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
                   } while (min_error_gap(ad::softmax_channels(logits), labels) < 1e-3);
                   return ad::grad_check(finish([&](const Tensor& t) {
                     return lovasz_softmax(ad::softmax_channels(t), labels);
                   }, perturb), logits);
                 }});

  ops.push_back({"relu", [](Rng& rng, bool perturb) {
                   Tensor x = away_from_zero({12}, rng, 0.05);
                   Tensor w = random_tensor({12}, rng, -1, 1);
                   return ad::grad_check(finish([&](const Tensor& t) { return weighted_sum(ad::relu(t), w); }, perturb), x);
                 }});

  ops.push_back({"add", [](Rng& rng, bool perturb) {
                   Tensor a = random_tensor({8}, rng, -1, 1), b = random_tensor({8}, rng, -1, 1);
                   Tensor w = random_tensor({8}, rng, -1, 1);
                   return ad::grad_check(finish([&](const Tensor& t) { return weighted_sum(ad::add(t, b), w); }, perturb), a);
                 }});

  ops.push_back({"mul", [](Rng& rng, bool perturb) {
                   Tensor a = random_tensor({8}, rng, -1, 1), b = random_tensor({8}, rng, -1, 1);
                   Tensor w = random_tensor({8}, rng, -1, 1);
                   double err = ad::grad_check(finish([&](const Tensor& t) { return weighted_sum(ad::mul(t, b), w); }, perturb), a);
                   // x*x exercises fan-out into the same node
                   return std::max(err, ad::grad_check(finish([&](const Tensor& t) { return weighted_sum(ad::mul(t, t), w); }, perturb), a));
                 }});

  ops.push_back({"scale", [](Rng& rng, bool perturb) {
                   Tensor a = random_tensor({8}, rng, -1, 1), w = random_tensor({8}, rng, -1, 1);
                   const double s = rng.uniform(-3, 3);
                   return ad::grad_check(finish([&](const Tensor& t) { return weighted_sum(ad::scale(t, s), w); }, perturb), a);
                 }});

  ops.push_back({"sum", [](Rng& rng, bool perturb) {
                   Tensor a = random_tensor({2, 3, 4}, rng, -1, 1);
                   return ad::grad_check(finish([](const Tensor& t) { return ad::sum(t); }, perturb), a);
                 }});

  ops.push_back({"mean", [](Rng& rng, bool perturb) {
                   Tensor a = random_tensor({2, 3, 4}, rng, -1, 1);
                   return ad::grad_check(finish([](const Tensor& t) { return ad::mean(t); }, perturb), a);
                 }});

  ops.push_back({"exp", [](Rng& rng, bool perturb) {
                   Tensor a = random_tensor({8}, rng, -1, 1), w = random_tensor({8}, rng, -1, 1);
                   return ad::grad_check(finish([&](const Tensor& t) { return weighted_sum(ad::exp(t), w); }, perturb), a);
                 }});

  ops.push_back({"log", [](Rng& rng, bool perturb) {
                   Tensor a = random_tensor({8}, rng, 0.5, 2.0), w = random_tensor({8}, rng, -1, 1);
                   return ad::grad_check(finish([&](const Tensor& t) { return weighted_sum(ad::log(t), w); }, perturb), a);
                 }});

  return ops;
}

std::vector<GradcheckResult> run_gradcheck(const std::vector<GradcheckOp>& ops,
                                           const std::string& filter, int trials,
                                           std::uint64_t seed, const std::string& perturb) {
  if (trials < 1) fail(ErrorKind::kUsage, "--trials must be at least 1");
  std::vector<std::string> wanted;
  if (filter != "all") {
    std::istringstream in(filter);
    std::string name;
    while (std::getline(in, name, ',')) {
      const bool known = std::any_of(ops.begin(), ops.end(), [&](const auto& op) { return op.name == name; });
      if (!known) fail(ErrorKind::kUsage, "unknown op '" + name + "'");
      wanted.push_back(name);
    }
  }
  std::vector<GradcheckResult> results;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto& op = ops[i];
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), op.name) == wanted.end()) continue;
    Rng rng(derive_seed(seed, i));
    GradcheckResult r{op.name, 0.0};
    for (int t = 0; t < trials; ++t) r.max_error = std::max(r.max_error, op.trial(rng, op.name == perturb));
    results.push_back(r);
  }
  return results;
}

// ------------------------------------------------------------- subcommands

int cmd_gen(const GenArgs& args, std::ostream& out) {
  RunConfig cfg = args.config ? load_config(*args.config) : RunConfig{};
  if (args.per_preset) cfg.per_preset = *args.per_preset;
  if (args.test_per_preset) cfg.test_per_preset = *args.test_per_preset;
  if (args.threads) cfg.threads = *args.threads;
  if (args.seed) cfg.train.seed = *args.seed;
  const std::string root = !args.out.empty() ? args.out : cfg.out;
  if (root.empty()) fail(ErrorKind::kUsage, "gen needs --out");

  lunar::GenOptions opt;
  opt.n_per_preset = cfg.per_preset;
  opt.test_per_preset = cfg.test_per_preset;
  opt.seed = cfg.train.seed;
  opt.threads = cfg.threads;
  const auto result = lunar::gen_dataset(cfg.scene_specs(), opt, root);

  out << "samples=" << result.manifest.size() << " root=" << root << "\n";
  out << lunar::format_ratios(result.ratios);
  return 0;
}

int cmd_train(const TrainArgs& args, std::ostream& out) {
  if (args.stage != 1 && args.stage != 2) fail(ErrorKind::kUsage, "--stage must be 1 or 2");
  if (args.stage == 2 && !args.init) fail(ErrorKind::kUsage, "stage 2 requires --init <stage-1 checkpoint>");
  RunConfig cfg = args.config ? load_config(*args.config) : RunConfig{};
  const std::string data = !args.data.empty() ? args.data : cfg.data;
  const std::string ckpt_path = !args.out.empty() ? args.out : cfg.out;
  if (data.empty() || ckpt_path.empty()) fail(ErrorKind::kUsage, "train needs --data and --out");
  cfg.train.validate(args.stage);
  ensure_parent_dir(ckpt_path);

  std::optional<Checkpoint> init;
  if (args.stage == 2) {
    init = load_checkpoint(*args.init);
    init_stage2(init->params, cfg.train.seed);  // structure check before any work
  }
  const auto samples = load_split(data, "train");

  std::ostringstream log;
  log << echo_config(cfg);
  auto progress = [&](const EpochRecord& r) {
    const auto line = format_epoch_line(r);
    out << line << "\n" << std::flush;
    log << line << "\n";
  };

  TrainResult res = args.stage == 1
                        ? train_stage1(samples, cfg.train, cfg.encoder, cfg.modality, progress)
                        : train_stage2(samples, init->params, cfg.train, progress);

  if (args.stage == 2) {
    const std::string ref = std::string(kRefEncoder) + ".";
    std::size_t checked = 0;
    for (const auto& [name, t] : res.params) {
      if (!name.starts_with(ref)) continue;
      const auto& src = init->params.at(std::string(kRgbEncoder) + name.substr(ref.size() - 1));
      if (src.shape() != t.shape() ||
          !std::equal(src.data().begin(), src.data().end(), t.data().begin(),
                      [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); })) {
        fail(ErrorKind::kValidation, "frozen reference tensor " + name + " changed during training");
      }
      ++checked;
    }
    const std::string line = "frozen_check=passed tensors=" + std::to_string(checked);
    out << line << "\n";
    log << line << "\n";
  }

  save_checkpoint(res.params, &res.optimizer, ckpt_path);
  const std::string text = log.str();
  write_file_atomic(ckpt_path + ".log", std::vector<std::uint8_t>(text.begin(), text.end()));
  out << "checkpoint=" << ckpt_path << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const LoadedNet net = load_network(args.ckpt);
  const auto samples = load_split(args.data, args.split);

  ConfusionMatrix overall;
  std::vector<std::string> order;
  std::map<std::string, ConfusionMatrix> per_preset;
  ad::NoGradGuard no_grad;
  for (const auto& s : samples) {
    const auto pred = argmax_labels(predict_logits(net.params, s.rgb, s.depth));
    ConfusionMatrix cm;
    cdseg::accumulate(pred, s.labels, cm);
    overall += cm;
    if (!per_preset.contains(s.preset)) {
      order.push_back(s.preset);
      per_preset.emplace(s.preset, ConfusionMatrix{});
    }
    per_preset.at(s.preset) += cm;
  }
  if (args.per_scenario) {
    for (const auto& tag : order) {
      const auto r = make_report(per_preset.at(tag));
      out << format_report_table(r, "scenario " + tag);
      out << format_report_lines(r);
    }
  }
  const auto r = make_report(overall);
  out << format_report_table(r, "overall " + args.split + " (" + std::to_string(samples.size()) + " frames)");
  out << format_report_lines(r);
  return 0;
}

int cmd_infer(const InferArgs& args, std::ostream& out) {
  const LoadedNet net = load_network(args.ckpt);
  RenderedSample in;
  in.rgb = read_png8(args.rgb);
  in.depth = read_png16(args.depth);
  if (in.rgb.channels != 3) fail(ErrorKind::kFormat, args.rgb + ": expected an RGB image");
  if (in.rgb.width != in.depth.width || in.rgb.height != in.depth.height) {
    fail(ErrorKind::kShapeMismatch, "rgb and depth are not aligned: " + std::to_string(in.rgb.width) +
                                        "x" + std::to_string(in.rgb.height) + " vs " +
                                        std::to_string(in.depth.width) + "x" +
                                        std::to_string(in.depth.height));
  }
  in.labels = Image8{in.rgb.width, in.rgb.height, 1,
                     std::vector<std::uint8_t>(static_cast<std::size_t>(in.rgb.width) * in.rgb.height, 0)};
  const SegSample s = to_seg_sample(in, "infer", "");
  ensure_parent_dir(args.out);

  ad::NoGradGuard no_grad;
  const auto pred = argmax_labels(predict_logits(net.params, s.rgb, s.depth));
  write_png(args.out, Image8{s.width, s.height, 1, pred});
  out << "mask=" << args.out << " width=" << s.width << " height=" << s.height << "\n";
  return 0;
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out) {
  const auto results = run_gradcheck(gradcheck_ops(), args.ops, args.trials, args.seed, args.perturb);
  std::vector<std::string> offenders;
  char buf[160];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "op=%s max_rel_error=%.3e status=%s\n", r.name.c_str(),
                  r.max_error, r.passed() ? "pass" : "FAIL");
    out << buf;
    if (!r.passed()) offenders.push_back(r.name);
  }
  if (!offenders.empty()) {
    std::string list;
    for (const auto& o : offenders) list += (list.empty() ? "" : ",") + o;
    out << "offenders=" << list << "\n";
    return 1;
  }
  return 0;
}

BenchStats bench_stats(std::vector<double> ms) {
  if (ms.empty()) fail(ErrorKind::kUsage, "no frames measured");
  BenchStats s;
  double total = 0.0;
  for (double v : ms) total += v;
  s.mean_ms = total / static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  s.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  s.fps = s.mean_ms > 0.0 ? 1000.0 / s.mean_ms : 0.0;
  return s;
}

int cmd_bench(const BenchArgs& args, std::ostream& out) {
  if (args.frames < 1) fail(ErrorKind::kUsage, "--frames must be at least 1");
  const LoadedNet net = load_network(args.ckpt);
  const auto samples = load_split(args.data, args.split);

  ad::NoGradGuard no_grad;
  using Clock = std::chrono::steady_clock;
  std::vector<double> ms;
  for (int i = 0; i < args.warmup + args.frames; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i) % samples.size()];
    const auto t0 = Clock::now();
    const auto pred = argmax_labels(predict_logits(net.params, s.rgb, s.depth));
    const double elapsed = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    if (i >= args.warmup) ms.push_back(elapsed);
  }
  const auto st = bench_stats(ms);
  char buf[200];
  std::snprintf(buf, sizeof buf, "frames=%d warmup=%d mean_ms=%.4f median_ms=%.4f fps=%.2f\n",
                args.frames, args.warmup, st.mean_ms, st.median_ms, st.fps);
  out << buf;
  return 0;
}

}  // namespace cdseg
