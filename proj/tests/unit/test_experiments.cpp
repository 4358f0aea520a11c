#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "vaedist/experiments.hpp"
#include "vaedist/report_io.hpp"

using namespace vaedist;
namespace fs = std::filesystem;

namespace {

const char *kTiny = R"(# small enough to train in well under a second
num_squares=1
image_size=8
square_size=2
grid_points=4
spacing=2
latents=2
hidden=8
batch=8
steps=20
log_every=10
eval_samples=60
dci_trees=3
)";

fs::path scratch(const std::string &name) {
  auto p = fs::temp_directory_path() /
           ("vaedist_exp_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace

TEST_CASE("key value parsing") {
  auto kv = parse_key_values("# comment\n\n beta = 0.5 \nlatents=4\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"beta", "0.5"});
  CHECK(kv[1].second == "4");
  CHECK_THROWS(parse_key_values("beta 0.5\n"));
}

TEST_CASE("config round trip and hash") {
  auto c = ExperimentConfig::parse(kTiny);
  CHECK(c.dataset.xysquares.num_squares == 1);
  CHECK(c.train.hidden == 8);
  auto back = ExperimentConfig::parse(c.serialise());
  CHECK(back.serialise() == c.serialise());
  CHECK(back.hash() == c.hash());

  // order of keys does not matter
  auto swapped = ExperimentConfig::parse("latents=2\nnum_squares=1\nimage_size=8\nsquare_size=2\n"
                                         "grid_points=4\nspacing=2\nhidden=8\nbatch=8\nsteps=20\n"
                                         "log_every=10\neval_samples=60\ndci_trees=3\n");
  CHECK(swapped.hash() == c.hash());

  auto other = c;
  other.set("beta", "0.5");
  CHECK(other.hash() != c.hash());
  CHECK(other.train.beta == 0.5);

  auto m = c.to_map();
  CHECK(m.at("framework") == "beta-vae");
  CHECK(m.count("blur_radius") == 0);
  other.set("loss", "blur-mse");
  other.set("blur_radius", "3");
  other.set("blur_alpha", "49");
  CHECK(other.to_map().at("blur_radius") == "3");
  CHECK(other.to_map().at("blur_padding") == "zero");
  auto circ = other;
  circ.set("blur_padding", "circular");
  CHECK(circ.hash() != other.hash());
  CHECK_THROWS_AS(circ.set("blur_padding", "wrap"), std::invalid_argument);
  CHECK(ExperimentConfig::parse(other.serialise()).hash() == other.hash());
}

TEST_CASE("config rejects bad settings") {
  ExperimentConfig c;
  CHECK_THROWS_AS(c.set("no_such_key", "1"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("beta", "abc"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("latents", "2.5"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("framework", "vae"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("loss", "l1"), std::invalid_argument);
  CHECK_NOTHROW(c.validate());
  auto d = c;
  d.eval_samples = 10;
  CHECK_THROWS(d.validate());
  d = c;
  d.train.steps = 0;
  CHECK_THROWS(d.validate());
  d = c;
  d.train.latents = 1;
  CHECK_THROWS(d.validate());
}

TEST_CASE("paper scale and model size") {
  auto p = ExperimentConfig::paper_scale();
  CHECK(p.train.batch == 256);
  CHECK(p.train.steps == 115200);
  CHECK(p.eval_samples == 10000);
  CHECK(p.model_size == 64);

  ExperimentConfig c;
  auto ds = c.dataset.open();
  CHECK(ds->height() == 64);
  CHECK(c.resolved_model_size(*ds) == 24);
  auto tiny = ExperimentConfig::parse(kTiny);
  CHECK(tiny.resolved_model_size(*tiny.dataset.open()) == 8);
  c.model_size = 12;
  CHECK(c.resolved_model_size(*ds) == 12);

  auto mv = make_model_view(tiny);
  CHECK(mv.view->height() == 8);
  CHECK(mv.view->space().total() == 16);
}

TEST_CASE("dataset spec") {
  DatasetSpec d;
  CHECK(d.label() == "xysquares(n=3;img=64;sq=8;grid=8;s=8)");
  d.name = "dsprites";
  CHECK_THROWS(d.open());
}

TEST_CASE("sweep expansion") {
  auto s = SweepSpec::parse(std::string(kTiny) + "beta=0.1,1\nlatents=2,3\nrepeats=3\nworkers=2\n");
  CHECK(s.repeats == 3);
  CHECK(s.workers == 2);
  REQUIRE(s.axes.size() == 2);
  CHECK(s.axes[0].second == std::vector<std::string>{"0.1", "1"});
  auto runs = s.expand();
  REQUIRE(runs.size() == 12);
  std::set<std::uint64_t> seeds;
  for (const auto &r : runs)
    seeds.insert(r.train.seed);
  CHECK(seeds.size() == 12);
  // later axes vary fastest, repeats innermost
  CHECK(runs[0].train.beta == 0.1);
  CHECK(runs[0].train.latents == 2);
  CHECK(runs[3].train.latents == 3);
  CHECK(runs[6].train.beta == 1.0);

  auto betas = SweepSpec::parse("beta=0.001, 0.01 ,0.1\n");
  REQUIRE(betas.axes.size() == 1);
  CHECK(betas.axes[0].second == std::vector<std::string>{"0.001", "0.01", "0.1"});
  CHECK(betas.expand().size() == 3);

  CHECK_THROWS(SweepSpec::parse("beta=0.1,x\n"));
  CHECK_THROWS(SweepSpec::parse("repeats=0\n"));
}

TEST_CASE("growing the grid keeps existing seeds") {
  auto small = SweepSpec::parse(std::string(kTiny) + "beta=0.1\nrepeats=2\n").expand();
  auto big = SweepSpec::parse(std::string(kTiny) + "beta=0.1,1\nrepeats=2\n").expand();
  REQUIRE(big.size() == 4);
  CHECK(small[0].train.seed == big[0].train.seed);
  CHECK(small[1].train.seed == big[1].train.seed);
  auto reseeded = SweepSpec::parse(std::string(kTiny) + "beta=0.1\nrepeats=2\nseed=1\n").expand();
  CHECK(reseeded[0].train.seed != small[0].train.seed);
}

TEST_CASE("run_experiment writes its artefacts") {
  auto dir = scratch("single");
  auto cfg = ExperimentConfig::parse(kTiny);
  auto rec = run_experiment(cfg, "run-x", dir);
  REQUIRE(rec.ok);
  CHECK(rec.config_hash == cfg.hash());
  CHECK(rec.provenance == provenance_string(cfg.hash()));
  CHECK(rec.mig >= 0.0);
  CHECK(rec.mig <= 1.0);
  CHECK(rec.dci >= 0.0);
  CHECK(rec.dci <= 1.0);
  for (auto f : {"config.txt", "trace.csv", "scores.csv", "model.ckpt"})
    CHECK(fs::exists(dir / f));
  CHECK(ExperimentConfig::load(dir / "config.txt").hash() == cfg.hash());
  auto scores = slurp(dir / "scores.csv");
  CHECK(scores.rfind("run_id,metric,value,bins,dci_trees,dci_depth\n", 0) == 0);
  CHECK(scores.find("run-x,mig,") != std::string::npos);
  CHECK(scores.find("run-x,dci_disentanglement,") != std::string::npos);
  auto trace = slurp(dir / "trace.csv");
  CHECK(trace.rfind("step,recon,kl,total\n", 0) == 0);
  CHECK(load_checkpoint(dir / "model.ckpt").latents() == 2);
  fs::remove_all(dir);
}

TEST_CASE("failed runs are recorded, not thrown") {
  auto cfg = ExperimentConfig::parse(kTiny);
  cfg.dataset.manifest = "/nonexistent/vaedist.manifest";
  cfg.dataset.name = "missing";
  auto rec = run_experiment(cfg, "run-bad", std::nullopt);
  CHECK_FALSE(rec.ok);
  CHECK_FALSE(rec.error.empty());
}

TEST_CASE("provenance") {
  CHECK(provenance_string(0x1234) == "vaedist-1.0.0+cfg.0000000000001234");
}

TEST_CASE("sweeps are reproducible across worker counts") {
  auto text = std::string(kTiny) + "beta=0.01,1\nrepeats=2\n";
  auto a = scratch("sweep_a"), b = scratch("sweep_b");
  auto sa = SweepSpec::parse(text + "workers=1\n");
  auto sb = SweepSpec::parse(text + "workers=3\n");
  auto ra = run_sweep(sa, a);
  auto rb = run_sweep(sb, b);
  CHECK(ra.records.size() == 4);
  CHECK(ra.failures.empty());
  auto runs_a = slurp(a / "runs.csv");
  CHECK(runs_a == slurp(b / "runs.csv"));
  CHECK(runs_a.rfind("run_id,config_hash,dataset,framework,loss,beta,latents,steps,seed,"
                     "recon,kl,total,mig,dci,provenance\n", 0) == 0);
  CHECK(slurp(a / "run-0003" / "trace.csv") == slurp(b / "run-0003" / "trace.csv"));
  CHECK(slurp(a / "run-0003" / "model.ckpt") == slurp(b / "run-0003" / "model.ckpt"));
  CHECK(slurp(a / "failures.csv") == "run_id,config_hash,error\n");
  CHECK(fs::exists(a / "timings.csv"));
  // sorted by beta then run id
  CHECK(ra.records[0].config.train.beta == 0.01);
  CHECK(ra.records[0].run_id == "run-0000");
  CHECK(ra.records[3].run_id == "run-0003");
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("pgm rendering") {
  DistanceMatrix m{0, 2, {0.0, 1.0, 1.0, 0.0}};
  auto img = matrix_to_gray(m);
  CHECK(img.pixels == std::vector<std::uint8_t>{0, 255, 255, 0});
  DistanceMatrix ramp{0, 2, {0.0, 0.25, 0.5, 1.0}};
  CHECK(matrix_to_gray(ramp).pixels == std::vector<std::uint8_t>{0, 64, 128, 255});
  DistanceMatrix flat{0, 2, {0.3, 0.3, 0.3, 0.3}};
  CHECK(matrix_to_gray(flat).pixels == std::vector<std::uint8_t>{0, 0, 0, 0});

  auto dir = scratch("pgm");
  emit_pgm(m, dir / "m.pgm");
  auto bytes = slurp(dir / "m.pgm");
  CHECK(bytes == std::string("P5\n2 2\n255\n\x00\xff\xff\x00", 15));
  auto back = read_pgm(dir / "m.pgm");
  CHECK(back.width == 2);
  CHECK(back.height == 2);
  CHECK(back.pixels == img.pixels);
  {
    std::ofstream bad(dir / "bad.pgm", std::ios::binary);
    bad << "P2\n2 2\n255\n";
  }
  CHECK_THROWS(read_pgm(dir / "bad.pgm"));
  fs::remove_all(dir);
}

TEST_CASE("matrix csv") {
  DistanceMatrix m{1, 2, {0.0, 0.5, 1.0 / 3, 2.0}};
  std::ostringstream out;
  write_matrix_csv(out, m);
  CHECK(out.str() == "0,0.5\n0.3333333333,2\n");
}
