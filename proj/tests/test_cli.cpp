#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "cdseg/commands.hpp"
#include "cdseg/io_store.hpp"
#include "cdseg/lunargen.hpp"
#include "helpers.hpp"

using namespace cdseg;
using testing::error_kind_of;

namespace {

int count_of(const std::string& text, const std::string& needle) {
  int n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

// Small generated dataset plus a short-run config, shared by the command tests.
struct Workspace {
  testing::TempDir dir;
  fs::path data = dir / "data";
  fs::path cfg = dir / "run.cfg";
  Workspace() {
    write_text(cfg, "# toy run\nepochs = 1\nbatch_size = 2\nseed = 3\nwidth = 32\nheight = 32\n");
    GenArgs g;
    g.config = cfg.string();
    g.out = data.string();
    g.per_preset = 1;
    g.test_per_preset = 1;
    std::ostringstream sink;
    REQUIRE(cmd_gen(g, sink) == 0);
  }
  fs::path train_stage1() {
    TrainArgs t;
    t.stage = 1;
    t.data = data.string();
    t.config = cfg.string();
    t.out = (dir / "s1.ckpt").string();
    std::ostringstream sink;
    REQUIRE(cmd_train(t, sink) == 0);
    return t.out;
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config parsing: defaults, comments, unknown keys") {
  const auto cfg = parse_config("# c\n  lr0 = 0.02  # inline\n\nuse_cdfm=false\nstage_channels=4,4,8,8,16\n");
  CHECK(cfg.train.lr0 == 0.02);
  CHECK_FALSE(cfg.train.use_cdfm);
  CHECK(cfg.encoder.stage_channels[4] == 16);
  CHECK(cfg.train.momentum == 0.9);
  CHECK(cfg.train.batch_size == 4);
  CHECK(cfg.width == 96);
  CHECK(error_kind_of([] { parse_config("bogus=1\n"); }) == ErrorKind::kConfig);
  CHECK(error_kind_of([] { parse_config("epochs=ten\n"); }) == ErrorKind::kConfig);
  CHECK(error_kind_of([] { parse_config("just text\n"); }) == ErrorKind::kConfig);
  CHECK(error_kind_of([] { parse_config("stage_channels=1,2\n"); }) == ErrorKind::kConfig);
}

TEST_CASE("every config key has a default that parses back to the defaults") {
  std::string text;
  for (const auto& k : config_keys()) {
    CHECK(std::string(k.help).size() > 0);
    text += std::string(k.key) + "=" + k.default_value + "\n";
  }
  CHECK(format_config(parse_config(text)) == format_config(RunConfig{}));
}

TEST_CASE("shipped desk config matches the built-in defaults") {
  const auto cfg = load_config(fs::path(CDSEG_SOURCE_DIR) / "configs/desk.cfg");
  CHECK(format_config(cfg) == format_config(RunConfig{}));
  const auto smoke = load_config(fs::path(CDSEG_SOURCE_DIR) / "configs/smoke.cfg");
  CHECK(smoke.train.epochs == 2);
  CHECK(smoke.width == 64);
}

TEST_CASE("config echo reproduces the source verbatim") {
  const std::string src = "# header\nepochs = 7   # note\n";
  const auto echo = echo_config(parse_config(src));
  CHECK(echo.find("# config: # header\n# config: epochs = 7   # note\n") == 0);
  CHECK(echo.find("# effective: epochs=7\n") != std::string::npos);
}

TEST_CASE("gen: sample count, ratio report, determinism") {
  testing::TempDir dir;
  GenArgs g;
  g.out = (dir / "a").string();
  g.per_preset = 60;
  g.test_per_preset = 0;
  g.seed = 7;
  std::ostringstream out;
  CHECK(cmd_gen(g, out) == 0);
  CHECK(out.str().find("samples=240") != std::string::npos);
  CHECK(count_of(out.str(), "preset=") == 4);
  CHECK(read_manifest(dir / "a").size() == 240);
  CHECK(std::distance(fs::directory_iterator(dir / "a/train/rgb"), fs::directory_iterator{}) == 240);

  GenArgs small = g;
  small.per_preset = 2;
  small.out = (dir / "b").string();
  std::ostringstream sink;
  cmd_gen(small, sink);
  small.out = (dir / "c").string();
  small.threads = 2;
  cmd_gen(small, sink);
  for (const auto& e : fs::recursive_directory_iterator(dir / "b")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "b");
    CHECK(testing::read_bytes(e.path()) == testing::read_bytes(dir / "c" / rel));
  }
}

TEST_CASE("gen: unwritable output fails") {
  GenArgs g;
  g.out = "/proc/cdseg_forbidden/data";
  g.per_preset = 1;
  std::ostringstream sink;
  CHECK(error_kind_of([&] { cmd_gen(g, sink); }) == ErrorKind::kIo);
}

TEST_CASE("train: stage 1 writes checkpoint and log; stage 2 checks freezing") {
  Workspace ws;
  const auto s1 = ws.train_stage1();
  CHECK(fs::exists(s1));
  const auto log1 = testing::read_bytes(s1.string() + ".log");
  const std::string log1s(log1.begin(), log1.end());
  CHECK(log1s.find("# config: # toy run\n") == 0);
  CHECK(log1s.find("epoch=0 l_ls=") != std::string::npos);

  TrainArgs t;
  t.stage = 2;
  t.data = ws.data.string();
  t.config = ws.cfg.string();
  t.init = s1.string();
  t.out = (ws.dir / "s2.ckpt").string();
  std::ostringstream out;
  CHECK(cmd_train(t, out) == 0);
  CHECK(out.str().find("frozen_check=passed tensors=10") != std::string::npos);
  const auto log2 = testing::read_bytes(t.out + ".log");
  CHECK(std::string(log2.begin(), log2.end()).find("frozen_check=passed") != std::string::npos);
  CHECK(network_kind(load_checkpoint(t.out).params) == NetworkKind::kStage2);
  CHECK(load_checkpoint(t.out).optimizer.has_value());
}

TEST_CASE("train: preconditions") {
  Workspace ws;
  TrainArgs t;
  t.stage = 2;
  t.data = ws.data.string();
  t.out = (ws.dir / "x.ckpt").string();
  std::ostringstream sink;
  CHECK(error_kind_of([&] { cmd_train(t, sink); }) == ErrorKind::kUsage);
  CHECK_FALSE(fs::exists(t.out));
  t.stage = 3;
  CHECK(error_kind_of([&] { cmd_train(t, sink); }) == ErrorKind::kUsage);
  t.stage = 1;
  t.out = (ws.dir / "missing_dir/x.ckpt").string();
  CHECK(error_kind_of([&] { cmd_train(t, sink); }) == ErrorKind::kIo);
  t.out = (ws.dir / "x.ckpt").string();
  t.data = (ws.dir / "nothing").string();
  CHECK(error_kind_of([&] { cmd_train(t, sink); }) == ErrorKind::kIo);
  CHECK_FALSE(fs::exists(t.out));
}

TEST_CASE("eval: per-scenario blocks, missing split, shape mismatch") {
  Workspace ws;
  const auto s1 = ws.train_stage1();
  EvalArgs e;
  e.ckpt = s1.string();
  e.data = ws.data.string();
  e.per_scenario = true;
  std::ostringstream out;
  CHECK(cmd_eval(e, out) == 0);
  CHECK(count_of(out.str(), "== ") == 5);
  CHECK(count_of(out.str(), "mean m_acc=") == 5);
  CHECK(out.str().find("== scenario LR ==") != std::string::npos);

  e.split = "val";
  std::ostringstream sink;
  CHECK(error_kind_of([&] { cmd_eval(e, sink); }) == ErrorKind::kValidation);

  // 32x32 frames through a network whose encoder ladder needs 64
  testing::TempDir other;
  lunar::GenOptions opt;
  opt.n_per_preset = 1;
  lunar::gen_dataset({lunar::preset("HF", 96, 64)}, opt, other.path());
  e.split = "train";
  e.data = other.path().string();
  EncoderConfig wide;
  auto p = build_network(wide, 3, 0);
  p.at("dec.s1.skip.weight") = ad::Tensor::zeros({40, 5, 1, 1});
  save_checkpoint(p, nullptr, ws.dir / "bad.ckpt");
  e.ckpt = (ws.dir / "bad.ckpt").string();
  CHECK(error_kind_of([&] { cmd_eval(e, sink); }) == ErrorKind::kShapeMismatch);
}

TEST_CASE("eval: exactly predictable split scores 1 everywhere") {
  testing::TempDir dir;
  RenderedSample s;
  s.rgb = Image8{32, 32, 3, std::vector<std::uint8_t>(32 * 32 * 3, 100)};
  s.depth = Image16{32, 32, std::vector<std::uint16_t>(32 * 32, 1000)};
  s.labels = Image8{32, 32, 1, std::vector<std::uint8_t>(32 * 32, 0)};
  s.labels.pixels[40] = 2;  // one rock pixel
  write_sample(dir.path(), "oracle", "only", s);
  write_manifest(dir.path(), {{"only", "oracle", "HF", 0.0, 1.0 / 1024}});

  // zero network: logits come from the classifier bias, plus one input-driven
  // rock detector is not expressible, so craft the prediction through the bias
  // and verify on a mask where rocks are absent instead
  auto p = build_network(EncoderConfig{}, 3, 0);
  for (auto& [name, t] : p) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  p.at("dec.cls.bias").mutable_data()[0] = 1.0;
  save_checkpoint(p, nullptr, dir / "oracle.ckpt");
  s.labels.pixels[40] = 0;
  write_sample(dir.path(), "oracle", "only", s);

  EvalArgs e;
  e.ckpt = (dir / "oracle.ckpt").string();
  e.data = dir.path().string();
  e.split = "oracle";
  std::ostringstream out;
  CHECK(cmd_eval(e, out) == 0);
  CHECK(out.str().find("mean m_acc=1.000000 m_iou=1.000000 m_f1=1.000000") != std::string::npos);
  CHECK(out.str().find("class=2 acc=1.000000 iou=1.000000 f1=1.000000") != std::string::npos);
}

TEST_CASE("infer: label domain, determinism, resolution, misalignment") {
  Workspace ws;
  const auto s1 = ws.train_stage1();
  InferArgs a;
  a.ckpt = s1.string();
  a.rgb = (ws.data / "test/rgb/HR_0000.png").string();
  a.depth = (ws.data / "test/depth/HR_0000.png").string();
  a.out = (ws.dir / "m1.png").string();
  std::ostringstream sink;
  CHECK(cmd_infer(a, sink) == 0);
  InferArgs b = a;
  b.out = (ws.dir / "m2.png").string();
  CHECK(cmd_infer(b, sink) == 0);
  CHECK(testing::read_bytes(a.out) == testing::read_bytes(b.out));
  const auto mask = read_png8(a.out);
  CHECK(mask.width == 32);
  CHECK(mask.height == 32);
  CHECK(mask.channels == 1);
  for (auto v : mask.pixels) CHECK(v <= 2);

  write_png(ws.dir / "wide.png", Image16{64, 32, std::vector<std::uint16_t>(64 * 32, 0)});
  InferArgs c = a;
  c.depth = (ws.dir / "wide.png").string();
  c.out = (ws.dir / "m3.png").string();
  CHECK(error_kind_of([&] { cmd_infer(c, sink); }) == ErrorKind::kShapeMismatch);
  CHECK_FALSE(fs::exists(c.out));
}

TEST_CASE("gradcheck command: pass, filter, perturbed fixture") {
  GradcheckArgs g;
  std::ostringstream all;
  CHECK(cmd_gradcheck(g, all) == 0);
  for (const char* op : {"conv2d", "upsample_nearest", "softmax_channels", "ntxent", "lovasz_softmax"}) {
    CHECK(all.str().find(std::string("op=") + op + " ") != std::string::npos);
  }
  CHECK(count_of(all.str(), "status=pass") == static_cast<int>(gradcheck_ops().size()));

  g.ops = "lovasz_softmax";
  std::ostringstream one;
  CHECK(cmd_gradcheck(g, one) == 0);
  CHECK(count_of(one.str(), "op=") == 1);

  g.ops = "all";
  g.perturb = "ntxent";
  std::ostringstream bad;
  CHECK(cmd_gradcheck(g, bad) == 1);
  CHECK(bad.str().find("offenders=ntxent") != std::string::npos);
  CHECK(count_of(bad.str(), "status=FAIL") == 1);

  g.ops = "nope";
  std::ostringstream sink;
  CHECK(error_kind_of([&] { cmd_gradcheck(g, sink); }) == ErrorKind::kUsage);
}

TEST_CASE("bench: output fields, degenerate statistics, usage") {
  Workspace ws;
  const auto s1 = ws.train_stage1();
  BenchArgs b;
  b.ckpt = s1.string();
  b.data = ws.data.string();
  b.frames = 3;
  std::ostringstream out;
  CHECK(cmd_bench(b, out) == 0);
  CHECK(out.str().find("mean_ms=") != std::string::npos);
  CHECK(out.str().find("median_ms=") != std::string::npos);
  CHECK(out.str().find("fps=") != std::string::npos);
  b.frames = 0;
  std::ostringstream sink;
  CHECK(error_kind_of([&] { cmd_bench(b, sink); }) == ErrorKind::kUsage);

  const auto one = bench_stats({4.25});
  CHECK(one.median_ms == 4.25);
  CHECK(one.mean_ms == 4.25);
  const auto even = bench_stats({1, 9, 3, 5});
  CHECK(even.median_ms == 4.0);
  CHECK(even.fps == doctest::Approx(1000.0 / 4.5));
}

}  // TEST_SUITE
