// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <vector>

#include "ppa/encoder.hpp"
#include "ppa/moco.hpp"
#include "ppa/rng.hpp"
#include "ppa/tokenizer.hpp"
#include "ppa/trainer.hpp"

namespace {

std::vector<ppa::ParallelPair> random_pairs(int n, int vocab_size) {
  ppa::Rng rng(42);
  std::vector<ppa::ParallelPair> pairs(n);
  for (int i = 0; i < n; ++i) {
    for (auto* side : {&pairs[i].src, &pairs[i].tgt}) {
      const int len = rng.range(8, 16);
      for (int t = 0; t < len; ++t) {
        side->push_back(ppa::Vocab::kNumReserved +
                        static_cast<int>(rng.below(vocab_size - ppa::Vocab::kNumReserved)));
      }
    }
    pairs[i].pair_id = i;
  }
  return pairs;
}

ppa::TrainConfig toy_train(int batch) {
  ppa::TrainConfig cfg;
  cfg.encoder = ppa::EncoderConfig::toy();
  cfg.batch_size = batch;
  cfg.warmup_mlm_steps = 0;
  cfg.epochs = 1000;
  return cfg;
}

// One full alignment step (contrastive + TLM, AdamW, enqueue, EMA) on the
// toy encoder.
void BM_AlignmentStep(benchmark::State& state) {
  const ppa::TrainConfig cfg = toy_train(static_cast<int>(state.range(0)));
  const auto pairs = random_pairs(cfg.batch_size * 8, cfg.encoder.vocab_size);
  ppa::MoCoState moco =
      ppa::MoCoState::init(cfg.encoder, cfg.queue_size, cfg.momentum, cfg.temperature, cfg.seed, cfg.batch_size);
  ppa::PpaTrainer trainer(std::move(moco), pairs, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
  state.SetItemsProcessed(state.iterations() * cfg.batch_size);
}
BENCHMARK(BM_AlignmentStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_SentenceEmbed(benchmark::State& state) {
  const ppa::EncoderParams params = ppa::EncoderParams::initialize(ppa::EncoderConfig::toy(), 1);
  const auto pairs = random_pairs(static_cast<int>(state.range(0)), params.config().vocab_size);
  std::vector<ppa::TokenSequence> texts;
  for (const auto& p : pairs) texts.push_back(p.src);
  for (auto _ : state) benchmark::DoNotOptimize(ppa::sentence_embed(params, texts));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SentenceEmbed)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
