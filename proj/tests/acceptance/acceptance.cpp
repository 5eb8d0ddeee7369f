// SPDX-License-Identifier: Apache-2.0
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits 1 if
// any criterion fails.
//
//   ppa_acceptance [--only 1,4,9] [--workdir DIR]
//
// Criteria 6 to 8 share the toy alignment runs, so selecting any of them
// runs all three seeds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_cases.hpp"
#include "oracles.hpp"
#include "ppa/cli.hpp"
#include "ppa/pipeline.hpp"
#include "test_util.hpp"

namespace ppa {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1. Every op and both loss heads against finite differences, 20 seeds,
// relative error at most 1e-3, under two minutes.
Verdict gradients() {
  constexpr int kSeeds = 20;
  constexpr double kTol = 1e-3;
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  int failures = 0, checks = 0;
  auto note = [&](const std::string& name, double err, bool ok) {
    ++checks;
    if (!ok) ++failures;
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };
  const auto cases = test::gradient_cases();
  for (const test::GradientCase& c : cases) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      const GradCheckReport r = test::run_gradient_case(c, seed, kTol);
      note(c.name, r.max_rel_error, r.passed && r.elements_checked > 0);
    }
  }
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const double nce = test::info_nce_head_check(seed).max_rel_error;
    note("info_nce head", nce, nce <= kTol);
    const double tlm = test::tlm_head_check(seed).max_rel_error;
    note("tlm head", tlm, tlm <= kTol);
  }
  const double secs = seconds_since(start);
  return {failures == 0 && secs < 120.0,
          std::to_string(cases.size()) + " ops + 2 heads x " + std::to_string(kSeeds) + " seeds, " +
              std::to_string(failures) + "/" + std::to_string(checks) + " over tolerance, max rel " +
              fmt("%.2e", worst) + " (" + worst_name + "), " + fmt("%.1f", secs) + " s"};
}

// 2. info_nce against a brute-force softmax cross-entropy.
Verdict info_nce_oracle() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = rng.range(2, 64);
    const int k = rng.range(1, 128);
    const double tau = rng.uniform(0.05, 1.0);
    const Tensor q = test::random_unit_rows(rng, 1, d);
    const Tensor pos = test::random_unit_rows(rng, 1, d);
    const Tensor queue = test::random_unit_rows(rng, k, d);
    const double expected = test::brute_force_info_nce(q.row(0), pos.row(0), queue, tau);
    worst = std::max(worst, std::fabs(info_nce(q, pos, queue, tau) - expected));
  }
  return {worst <= 1e-6, "1000 instances, queue <= 128, max abs error " + fmt("%.2e", worst)};
}

// 3. Momentum update against m k + (1 - m) q.
Verdict ema() {
  const EncoderConfig c = EncoderConfig::toy(512);
  const EncoderParams query = EncoderParams::initialize(c, 1);
  double worst = 0.0;
  for (const double m : {0.0, 0.5, 0.9, 0.99, 0.999, 0.123, 1.0}) {
    EncoderParams key = EncoderParams::initialize(c, 2);
    const EncoderParams before = key;
    momentum_update(key, query, m);
    for (std::size_t i = 0; i < key.params().size(); ++i) {
      const auto k0 = before.params()[i].value.data();
      const auto q = query.params()[i].value.data();
      const auto k1 = key.params()[i].value.data();
      for (std::size_t j = 0; j < k1.size(); ++j) {
        const double expected = m * k0[j] + (1.0 - m) * q[j];
        if (expected == 0.0 && k1[j] == 0.0f) continue;
        worst = std::max(worst, std::fabs(k1[j] - expected) / std::fabs(expected));
      }
    }
  }
  EncoderParams key = EncoderParams::initialize(c, 3);
  const EncoderParams original = key;
  momentum_update(key, query, 1.0);
  const bool one_exact = key.identical(original);
  momentum_update(key, query, 0.0);
  const bool zero_exact = key.identical(query);
  return {worst <= 1e-6 && one_exact && zero_exact,
          "max rel error " + fmt("%.2e", worst) + ", m=1 " + (one_exact ? "exact" : "NOT exact") + ", m=0 " +
              (zero_exact ? "exact" : "NOT exact")};
}

// 4. Queue storage and cursor against a plain ring buffer.
Verdict queue_fifo() {
  const EncoderConfig c = test::tiny_config();
  constexpr int kSize = 257;
  MoCoState state = MoCoState::init(c, kSize, 0.99, 0.05, 5);
  std::vector<float> ring(state.queue().data().begin(), state.queue().data().end());
  const int d = c.projection;
  int cursor = 0;
  Rng rng(77);
  for (int i = 0; i < 10000; ++i) {
    const Tensor keys = test::random_unit_rows(rng, rng.range(1, kSize), d);
    state.enqueue(keys);
    for (int r = 0; r < keys.rows(); ++r) {
      std::copy(keys.row(r).begin(), keys.row(r).end(), ring.begin() + static_cast<std::ptrdiff_t>(cursor) * d);
      cursor = (cursor + 1) % kSize;
    }
    const auto stored = state.queue().data();
    if (state.cursor() != cursor || !std::equal(stored.begin(), stored.end(), ring.begin(), ring.end())) {
      return {false, "diverged at enqueue " + std::to_string(i)};
    }
  }
  return {true, "10000 enqueues of 1.." + std::to_string(kSize) + " rows match a reference ring buffer"};
}

// 5. Selection rate and the conditional replacement split.
Verdict masking() {
  Rng rng(31);
  test::MaskCounts counts;
  while (counts.maskable < 200000) {
    const ParallelPair pair = test::random_pairs(rng.next_u64(), 1, 512, 5, 40)[0];
    const SegmentedInput in = build_tlm_input(pair, rng.bernoulli(0.5));
    counts.add(in.ids, apply_masking(in, 512, rng));
  }
  const double rate = counts.rate();
  const double mask = counts.share(counts.to_mask);
  const double random = counts.share(counts.to_random);
  const double same = counts.share(counts.unchanged);
  const bool ok = std::fabs(rate - 0.15) <= 0.01 && std::fabs(mask - 0.8) <= 0.02 && std::fabs(random - 0.1) <= 0.02 &&
                  std::fabs(same - 0.1) <= 0.02;
  return {ok, std::to_string(counts.maskable) + " maskable tokens, rate " + fmt("%.4f", rate) + ", split " +
                  fmt("%.3f", mask) + "/" + fmt("%.3f", random) + "/" + fmt("%.3f", same)};
}

/// Toy alignment runs shared by criteria 6 to 8.
struct ToyRuns {
  double seconds_first = 0.0;
  double warmup_retrieval_first = 0.0;
  double aligned_retrieval_first = 0.0;
  std::map<std::string, double> retrieval;  // variant -> mean over seeds
  double zero_shot_aligned = 0.0;
  double zero_shot_warmup = 0.0;
  int seeds = 0;
};

ToyRuns run_toy(const fs::path& workdir) {
  constexpr int kSeeds = 3;
  ToyRuns out;
  out.seeds = kSeeds;
  const PipelineConfig config = PipelineConfig::toy();
  const auto start = Clock::now();
  const DataFiles files = generate_data(config.data, workdir / "toy-data");
  const AlignmentData data = load_alignment_data(files, config.train.max_seq_len);
  for (int s = 0; s < kSeeds; ++s) {
    TrainConfig cfg = config.train;
    cfg.seed = config.train.seed + static_cast<std::uint64_t>(s);
    FinetuneConfig ft = config.finetune;
    ft.seed = config.finetune.seed + static_cast<std::uint64_t>(s);
    const AlignmentOutcome full = run_alignment(data, cfg);
    if (s == 0) {
      out.seconds_first = seconds_since(start);
      out.warmup_retrieval_first = full.warmup_retrieval;
      out.aligned_retrieval_first = full.aligned_retrieval;
    }
    std::cerr << "toy seed " << cfg.seed << ": full " << full.aligned_retrieval << " (warm-up "
              << full.warmup_retrieval << ")" << std::endl;
    out.retrieval["full"] += full.aligned_retrieval / kSeeds;
    out.retrieval["warm-up only"] += full.warmup_retrieval / kSeeds;
    struct Variant {
      const char* name;
      bool moco, tlm, mlm;
    };
    for (const Variant& v : {Variant{"-MoCo", false, true, false}, Variant{"-TLM", true, false, false},
                             Variant{"repl TLM w/ MLM", true, false, true}}) {
      TrainConfig vc = cfg;
      vc.use_moco = v.moco;
      vc.use_tlm = v.tlm;
      vc.use_mlm_instead_of_tlm = v.mlm;
      const AlignmentOutcome o = run_alignment(data, vc, {}, full.warmup);
      std::cerr << "toy seed " << cfg.seed << ": " << v.name << " " << o.aligned_retrieval << std::endl;
      out.retrieval[v.name] += o.aligned_retrieval / kSeeds;
    }
    const double aligned = run_zero_shot(full.aligned, data.vocab, files, ft).cipher_accuracy;
    const double warm = run_zero_shot(full.warmup, data.vocab, files, ft).cipher_accuracy;
    std::cerr << "toy seed " << cfg.seed << ": zero-shot cipher aligned " << aligned << ", warm-up " << warm
              << std::endl;
    out.zero_shot_aligned += aligned / kSeeds;
    out.zero_shot_warmup += warm / kSeeds;
  }
  return out;
}

// 6. Toy run quality and wall time.
Verdict toy_run(const ToyRuns& r) {
  const bool ok = r.aligned_retrieval_first >= 0.80 && r.warmup_retrieval_first <= 0.15 && r.seconds_first <= 900.0;
  return {ok, "held-out top-1 aligned " + fmt("%.3f", r.aligned_retrieval_first) + " vs warm-up only " +
                  fmt("%.3f", r.warmup_retrieval_first) + ", " + fmt("%.0f", r.seconds_first) + " s"};
}

// 7. Zero-shot gap between the aligned and the warm-up-only encoder.
Verdict zero_shot(const ToyRuns& r) {
  const double gap = r.zero_shot_aligned - r.zero_shot_warmup;
  return {gap >= 0.10, "cipher accuracy aligned " + fmt("%.3f", r.zero_shot_aligned) + " vs warm-up only " +
                           fmt("%.3f", r.zero_shot_warmup) + " over " + std::to_string(r.seeds) +
                           " seeds, gap " + fmt("%+.1f", 100.0 * gap) + " points"};
}

// 8. Retrieval ordering of the ablation variants.
Verdict ablation_order(const ToyRuns& r) {
  const auto& m = r.retrieval;
  const bool ok = m.at("full") >= m.at("-TLM") && m.at("full") >= m.at("-MoCo") && m.count("repl TLM w/ MLM");
  std::string detail = "mean retrieval over " + std::to_string(r.seeds) + " seeds:";
  for (const char* name : {"full", "-MoCo", "-TLM", "repl TLM w/ MLM", "warm-up only"}) {
    detail += std::string(" ") + name + " " + fmt("%.3f", m.at(name)) + ";";
  }
  detail.pop_back();
  return {ok, detail};
}

/// Small data and model settings for the pipeline-level criteria.
PipelineConfig small_pipeline() {
  PipelineConfig c = PipelineConfig::toy();
  c.data.n_pairs = 160;
  c.data.heldout_pairs = 20;
  c.data.vocab_words = 40;
  c.data.vocab_size = 128;
  c.data.min_words = 5;
  c.data.max_words = 8;
  c.data.task_train = 48;
  c.data.task_test = 24;
  c.data.qa_train = 8;
  c.data.qa_test = 4;
  c.train.encoder.vocab_size = 128;
  c.train.encoder.hidden = 16;
  c.train.encoder.ffn = 32;
  c.train.encoder.heads = 2;
  c.train.encoder.num_layers = 1;
  c.train.encoder.projection = 8;
  c.train.encoder.max_positions = 64;
  c.train.max_seq_len = 64;
  c.train.batch_size = 16;
  c.train.queue_size = 32;
  c.train.epochs = 2;
  c.train.warmup_mlm_steps = 10;
  c.train.warmup_mlm_batch = 16;
  c.finetune.batch_size = 8;
  c.finetune.max_seq_len = 64;
  c.finetune.epochs = 1;
  c.finetune.warmup_steps = 2;
  return c;
}

// 9. Code-switching augmentation and the -CS variant.
Verdict code_switching(const fs::path& workdir) {
  const PipelineConfig config = small_pipeline();
  const DataFiles files = generate_data(config.data, workdir / "cs-data");
  const Vocab vocab = Vocab::load(files.vocab());
  const auto base = read_labeled(files.task_train("base"));
  const auto cipher = read_labeled(files.task_train("cipher"));
  const std::vector<BilingualExample> aligned = align_bilingual(vocab, base, cipher);
  const std::vector<LabeledPairExample> augmented = code_switch_augment(aligned);

  const bool doubled = augmented.size() == 2 * aligned.size();
  bool no_all_target = true, one_side_each = true;
  for (const LabeledPairExample& ex : augmented) {
    const BilingualExample& src = aligned.at(static_cast<std::size_t>(ex.group));
    const bool a_target = ex.text_a == src.target.text_a;
    const bool b_target = ex.text_b == src.target.text_b;
    if (a_target && b_target) no_all_target = false;
    const bool a_pivot = ex.text_a == src.pivot.text_a;
    const bool b_pivot = ex.text_b == src.pivot.text_b;
    if (!((a_target && b_pivot) || (a_pivot && b_target))) one_side_each = false;
  }

  bool co_batched = true;
  const auto train_set = translate_train_set(vocab, files, true);
  for (std::uint64_t seed = 1; seed <= 20 && co_batched; ++seed) {
    for (int batch_size : {4, 7, 32}) {
      std::map<int, int> batch_of;
      const auto batches = make_group_batches(train_set, batch_size, seed);
      for (std::size_t b = 0; b < batches.size(); ++b) {
        for (int i : batches[b]) {
          const int g = train_set[static_cast<std::size_t>(i)].group;
          if (g < 0) continue;
          auto [it, inserted] = batch_of.emplace(g, static_cast<int>(b));
          if (!inserted && it->second != static_cast<int>(b)) co_batched = false;
        }
      }
    }
  }

  // The -CS row of the ablation must equal an unaugmented translate-train
  // run on the full system's encoder, rebuilt here from the public pieces.
  PipelineConfig ab = config;
  ab.ablate_seeds = 1;
  const std::vector<AblationRow> rows = run_ablation(ab, files);
  const AlignmentData data = load_alignment_data(files, config.train.max_seq_len);
  const EncoderParams warm = warmup_mlm(config.train.encoder, data.train.pairs, config.train.warmup_mlm_steps,
                                        config.train.warmup_mlm_batch, config.train.warmup_mlm_lr, config.train.seed);
  const EncoderParams full = run_alignment(data, config.train, {}, warm).aligned;
  const double unaugmented = run_translate_train(full, vocab, files, config.finetune, false).cipher_accuracy;
  const auto row = std::find_if(rows.begin(), rows.end(), [](const AblationRow& r) { return r.variant == "-CS"; });
  const bool reproduces = row != rows.end() && row->translate_train && *row->translate_train == unaugmented;

  const bool ok = doubled && no_all_target && one_side_each && co_batched && reproduces;
  return {ok, std::to_string(aligned.size()) + " -> " + std::to_string(augmented.size()) + " examples, all-target " +
                  (no_all_target ? "excluded" : "PRESENT") + ", co-batching " + (co_batched ? "held" : "BROKEN") +
                  ", -CS " + (reproduces ? "bit-reproduces" : "DIFFERS from") + " the unaugmented run"};
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

// 10. Manifest reruns and checkpoint resume.
Verdict reproducibility(const fs::path& workdir) {
  const PipelineConfig config = small_pipeline();
  const fs::path cfg = workdir / "small.cfg";
  std::ofstream(cfg) << config.to_key_values().to_text();
  const fs::path data = workdir / "repro-data";
  if (cli({"gen-data", "--config", cfg.string(), "--out", data.string()}) != 0) return {false, "gen-data failed"};
  const fs::path first = workdir / "repro-1", again = workdir / "repro-2";
  if (cli({"train-align", "--config", cfg.string(), "--data", data.string(), "--out", first.string()}) != 0 ||
      cli({"train-align", "--config", (first / kManifestFile).string(), "--data", data.string(), "--out",
           again.string()}) != 0) {
    return {false, "train-align failed"};
  }
  const std::string metrics = slurp(first / "metrics.csv");
  const bool rerun_identical = !metrics.empty() && metrics == slurp(again / "metrics.csv");

  // Resume at every few steps against the uninterrupted trainer.
  const AlignmentData loaded = load_alignment_data(DataFiles{data}, config.train.max_seq_len);
  auto fresh = [&] {
    const EncoderParams warm = warmup_mlm(config.train.encoder, loaded.train.pairs, config.train.warmup_mlm_steps,
                                          config.train.warmup_mlm_batch, config.train.warmup_mlm_lr, config.train.seed);
    MoCoState state(warm, config.train.queue_size, config.train.momentum, config.train.temperature,
                    config.train.seed, config.train.batch_size);
    return PpaTrainer(std::move(state), loaded.train.pairs, config.train);
  };
  PpaTrainer straight = fresh();
  const TrainMetrics reference = train_ppa(straight);
  std::optional<PpaTrainer> resumed;
  resumed.emplace(fresh());
  std::vector<StepMetrics> rows;
  int resumes = 0;
  while (!resumed->done()) {
    TrainOptions opts;
    opts.stop_at_step = resumed->steps_done() + 3;
    const TrainMetrics part = train_ppa(*resumed, opts);
    rows.insert(rows.end(), part.steps.begin(), part.steps.end());
    const fs::path ckpt = workdir / "repro-ckpt";
    resumed->save(ckpt);
    resumed.emplace(PpaTrainer::restore(ckpt, loaded.train.pairs));
    ++resumes;
  }
  const bool same_steps = rows == reference.steps;
  const MoCoState& got = resumed->state();
  const bool same_params = got.query().identical(straight.state().query()) &&
                           got.key().identical(straight.state().key()) &&
                           got.queue().identical(straight.state().queue());
  return {rerun_identical && same_steps && same_params,
          std::string("manifest rerun metrics ") + (rerun_identical ? "bit-identical" : "DIFFER") + ", " +
              std::to_string(resumes) + " save/restore cycles " +
              (same_steps && same_params ? "match" : "DO NOT match") + " the uninterrupted run over " +
              std::to_string(reference.steps.size()) + " steps"};
}

// 11. mBERT-sized parameter count.
Verdict mbert_size() {
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_layout(EncoderConfig::mbert())) {
    std::size_t n = 1;
    for (int dim : shape) n *= static_cast<std::size_t>(dim);
    total += n;
  }
  const double ratio = static_cast<double>(total) / 172e6;
  const bool ok = std::fabs(ratio - 1.0) <= 0.02 && total == parameter_count_formula(EncoderConfig::mbert());
  return {ok, std::to_string(total) + " parameters (" + fmt("%+.2f", 100.0 * (ratio - 1.0)) + "% vs 172M)"};
}

}  // namespace
}  // namespace ppa

int main(int argc, char** argv) {
  using namespace ppa;
  std::set<int> only;
  std::optional<fs::path> workdir_arg;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream list(argv[++i]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    } else if (arg == "--workdir" && i + 1 < argc) {
      workdir_arg = argv[++i];
    } else {
      std::cerr << "usage: ppa_acceptance [--only 1,2,...] [--workdir DIR]\n";
      return 2;
    }
  }
  std::optional<test::TempDir> temp;
  fs::path workdir;
  if (workdir_arg) {
    workdir = *workdir_arg;
    fs::create_directories(workdir);
  } else {
    temp.emplace("acceptance");
    workdir = temp->path();
  }
  auto wanted = [&](int id) { return only.empty() || only.count(id) != 0; };

  std::optional<ToyRuns> toy;
  auto toy_runs = [&]() -> const ToyRuns& {
    if (!toy) toy = run_toy(workdir);
    return *toy;
  };
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradients", gradients},
      {"info_nce oracle", info_nce_oracle},
      {"momentum update", ema},
      {"queue FIFO", queue_fifo},
      {"masking rates", masking},
      {"toy alignment run", [&] { return toy_run(toy_runs()); }},
      {"zero-shot transfer", [&] { return zero_shot(toy_runs()); }},
      {"ablation retrieval", [&] { return ablation_order(toy_runs()); }},
      {"code-switching", [&] { return code_switching(workdir); }},
      {"reproducibility", [&] { return reproducibility(workdir); }},
      {"mBERT size", mbert_size},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << ' ' << id << ' ' << criteria[i].first << ": " << v.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
