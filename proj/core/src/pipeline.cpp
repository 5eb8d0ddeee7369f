// SPDX-License-Identifier: Apache-2.0
#include "ppa/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "ppa/serialize.hpp"

namespace ppa {

namespace {

constexpr const char* kEncoderTensors = "encoder.tensors";
constexpr const char* kEncoderConfig = "encoder.cfg";

std::vector<LabeledPairExample> encode_all(const Vocab& vocab, std::span<const LabeledTextExample> texts) {
  std::vector<LabeledPairExample> out;
  out.reserve(texts.size());
  for (const LabeledTextExample& t : texts) out.push_back(encode_example(vocab, t));
  return out;
}

std::vector<LabeledPairExample> load_task(const Vocab& vocab, const std::filesystem::path& path) {
  const std::vector<LabeledTextExample> texts = read_labeled(path);
  return encode_all(vocab, texts);
}

void write_pairs(const std::filesystem::path& path, std::span<const std::pair<std::string, std::string>> pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [src, tgt] : pairs) out << src << '\t' << tgt << '\n';
}

}  // namespace

void store(KeyValues& kv, const DataConfig& c, const std::string& prefix) {
  kv.set(prefix + "n_pairs", std::to_string(c.n_pairs));
  kv.set(prefix + "heldout_pairs", std::to_string(c.heldout_pairs));
  kv.set(prefix + "vocab_words", std::to_string(c.vocab_words));
  kv.set(prefix + "vocab_size", std::to_string(c.vocab_size));
  kv.set(prefix + "min_words", std::to_string(c.min_words));
  kv.set(prefix + "max_words", std::to_string(c.max_words));
  kv.set(prefix + "task_train", std::to_string(c.task_train));
  kv.set(prefix + "task_test", std::to_string(c.task_test));
  kv.set(prefix + "qa_train", std::to_string(c.qa_train));
  kv.set(prefix + "qa_test", std::to_string(c.qa_test));
  kv.set(prefix + "seed", std::to_string(c.seed));
}

void load(const KeyValues& kv, DataConfig& c, const std::string& prefix) {
  kv.read(prefix + "n_pairs", c.n_pairs);
  kv.read(prefix + "heldout_pairs", c.heldout_pairs);
  kv.read(prefix + "vocab_words", c.vocab_words);
  kv.read(prefix + "vocab_size", c.vocab_size);
  kv.read(prefix + "min_words", c.min_words);
  kv.read(prefix + "max_words", c.max_words);
  kv.read(prefix + "task_train", c.task_train);
  kv.read(prefix + "task_test", c.task_test);
  kv.read(prefix + "qa_train", c.qa_train);
  kv.read(prefix + "qa_test", c.qa_test);
  kv.read(prefix + "seed", c.seed);
}

KeyValues PipelineConfig::to_key_values() const {
  KeyValues kv;
  store(kv, data);
  store(kv, train);
  store(kv, finetune);
  kv.set("ablate.seeds", std::to_string(ablate_seeds));
  kv.set("ablate.finetune", ablate_finetune ? "true" : "false");
  kv.set("run.translate_train", translate_train ? "true" : "false");
  kv.set("run.code_switch", code_switch ? "true" : "false");
  return kv;
}

PipelineConfig PipelineConfig::from_key_values(const KeyValues& kv, const PipelineConfig& base) {
  PipelineConfig c = base;
  load(kv, c.data);
  load(kv, c.train);
  load(kv, c.finetune);
  kv.read("ablate.seeds", c.ablate_seeds);
  kv.read("ablate.finetune", c.ablate_finetune);
  kv.read("run.translate_train", c.translate_train);
  kv.read("run.code_switch", c.code_switch);
  const std::vector<std::string> unknown = kv.unread_keys();
  if (!unknown.empty()) throw ConfigError("unknown config key " + unknown.front());
  if (c.ablate_seeds < 1) throw ConfigError("ablate.seeds must be at least 1");
  c.train.validate();
  c.finetune.validate();
  return c;
}

PipelineConfig PipelineConfig::toy() {
  PipelineConfig c;
  c.train.encoder = EncoderConfig::toy(c.data.vocab_size);
  c.finetune.peak_lr = 1e-4;
  c.finetune.epochs = 3;
  return c;
}

PipelineConfig PipelineConfig::paper() {
  PipelineConfig c;
  c.train = TrainConfig::paper();
  c.finetune = FinetuneConfig::xnli();
  return c;
}

DataFiles generate_data(const DataConfig& config, const std::filesystem::path& dir) {
  if (config.n_pairs < 1 || config.heldout_pairs < 1) throw ConfigError("data needs training and held-out pairs");
  std::filesystem::create_directories(dir);
  DataFiles files{dir};
  const CipherLanguage language(config.vocab_words, config.seed);

  CipherCorpusOptions options;
  options.min_words = config.min_words;
  options.max_words = config.max_words;
  CipherCorpus corpus =
      generate_cipher_corpus(language, config.n_pairs + config.heldout_pairs, derive_seed(config.seed, 1), options);
  const auto split = corpus.pairs.begin() + config.n_pairs;
  const std::vector<std::pair<std::string, std::string>> train(corpus.pairs.begin(), split);
  const std::vector<std::pair<std::string, std::string>> heldout(split, corpus.pairs.end());
  write_pairs(files.corpus(), train);
  write_pairs(files.heldout(), heldout);
  write_pairs(files.word_map(), corpus.word_map);

  std::vector<std::string> lines;
  lines.reserve(train.size() * 2);
  for (const auto& [src, tgt] : train) {
    lines.push_back(src);
    lines.push_back(tgt);
  }
  build_vocab(lines, config.vocab_size).save(files.vocab());

  const BilingualTexts task_train = generate_relation_task(language, config.task_train, derive_seed(config.seed, 2));
  const BilingualTexts task_test = generate_relation_task(language, config.task_test, derive_seed(config.seed, 3));
  write_labeled(files.task_train("base"), task_train.base);
  write_labeled(files.task_train("cipher"), task_train.cipher);
  write_labeled(files.task_test("base"), task_test.base);
  write_labeled(files.task_test("cipher"), task_test.cipher);

  const BilingualQa qa_train = generate_copy_qa(language, config.qa_train, derive_seed(config.seed, 4));
  const BilingualQa qa_test = generate_copy_qa(language, config.qa_test, derive_seed(config.seed, 5));
  write_qa(files.qa_train("base"), qa_train.base);
  write_qa(files.qa_train("cipher"), qa_train.cipher);
  write_qa(files.qa_test("base"), qa_test.base);
  write_qa(files.qa_test("cipher"), qa_test.cipher);
  return files;
}

void save_encoder(const std::filesystem::path& dir, const EncoderParams& params) {
  std::filesystem::create_directories(dir);
  std::vector<NamedTensor> tensors;
  for (const Parameter& p : params.params()) tensors.push_back({p.name, p.value});
  write_tensors(dir / kEncoderTensors, tensors);
  KeyValues kv;
  store(kv, params.config());
  std::ofstream out(dir / kEncoderConfig, std::ios::trunc);
  out << kv.to_text();
  if (!out) throw std::runtime_error("cannot write " + (dir / kEncoderConfig).string());
}

EncoderParams load_encoder(const std::filesystem::path& dir) {
  const KeyValues kv = KeyValues::load(dir / kEncoderConfig);
  EncoderConfig config;
  load(kv, config);
  config.validate();
  std::vector<NamedTensor> tensors = read_tensors(dir / kEncoderTensors);
  EncoderParams params(config);
  if (tensors.size() != params.params().size()) {
    throw TensorFormatError(dir.string() + " holds " + std::to_string(tensors.size()) + " tensors, expected " +
                            std::to_string(params.params().size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Parameter& p = params.params()[i];
    if (tensors[i].name != p.name || tensors[i].tensor.shape() != p.value.shape()) {
      throw TensorFormatError("tensor " + tensors[i].name + " does not match parameter " + p.name + " " +
                              shape_string(p.value.shape()));
    }
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor& dst = params.params()[i].value;
    std::copy(tensors[i].tensor.data().begin(), tensors[i].tensor.data().end(), dst.data().begin());
  }
  return params;
}

AlignmentData load_alignment_data(const DataFiles& files, int max_seq_len) {
  Vocab vocab = Vocab::load(files.vocab());
  ParallelData train = load_parallel(files.corpus(), vocab, max_seq_len);
  ParallelData heldout = load_parallel(files.heldout(), vocab, max_seq_len);
  if (train.pairs.empty()) throw DataError("no training pair passes the length filter");
  if (heldout.pairs.empty()) throw DataError("no held-out pair passes the length filter");
  return {std::move(vocab), std::move(train), std::move(heldout)};
}

AlignmentOutcome run_alignment(const AlignmentData& data, const TrainConfig& cfg, const TrainOptions& options,
                               const std::optional<EncoderParams>& warmup) {
  cfg.validate();
  if (data.vocab.size() > cfg.encoder.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(data.vocab.size()) + " tokens but the encoder only " +
                      std::to_string(cfg.encoder.vocab_size));
  }
  EncoderParams start = warmup ? *warmup
                               : warmup_mlm(cfg.encoder, data.train.pairs, cfg.warmup_mlm_steps, cfg.warmup_mlm_batch,
                                            cfg.warmup_mlm_lr, cfg.seed);
  if (!(start.config() == cfg.encoder)) throw ConfigError("warm-up encoder shape differs from the configured one");
  MoCoState state(start, cfg.queue_size, cfg.momentum, cfg.temperature, cfg.seed, cfg.use_moco ? cfg.batch_size : 1);
  TrainOptions opts = options;
  if (opts.heldout.empty()) opts.heldout = data.heldout.pairs;
  AlignmentOutcome out{start, start, {}, 0.0, 0.0};
  out.warmup_retrieval = evaluate_retrieval(start, data.heldout.pairs);
  out.metrics = train_ppa(state, data.train.pairs, cfg, opts);
  out.aligned = state.query();
  out.aligned.set_trainable(true);
  out.aligned_retrieval = evaluate_retrieval(out.aligned, data.heldout.pairs);
  return out;
}

ClassificationOutcome run_zero_shot(const EncoderParams& encoder, const Vocab& vocab, const DataFiles& files,
                                    const FinetuneConfig& cfg) {
  const auto train = load_task(vocab, files.task_train("base"));
  const auto test_base = load_task(vocab, files.task_test("base"));
  const auto test_cipher = load_task(vocab, files.task_test("cipher"));
  const ClassifierModel model = finetune_classifier(encoder, train, kNumRelationLabels, cfg);
  return {accuracy(model, test_base, cfg.max_seq_len), accuracy(model, test_cipher, cfg.max_seq_len)};
}

std::vector<LabeledPairExample> translate_train_set(const Vocab& vocab, const DataFiles& files, bool code_switch) {
  const std::vector<LabeledTextExample> base = read_labeled(files.task_train("base"));
  const std::vector<LabeledTextExample> cipher = read_labeled(files.task_train("cipher"));
  std::vector<LabeledPairExample> out = encode_all(vocab, base);
  if (code_switch) {
    const std::vector<BilingualExample> aligned = align_bilingual(vocab, base, cipher);
    for (LabeledPairExample& ex : code_switch_augment(aligned)) out.push_back(std::move(ex));
  } else {
    for (LabeledPairExample& ex : encode_all(vocab, cipher)) out.push_back(std::move(ex));
  }
  return out;
}

ClassificationOutcome run_translate_train(const EncoderParams& encoder, const Vocab& vocab, const DataFiles& files,
                                          const FinetuneConfig& cfg, bool code_switch) {
  const auto train = translate_train_set(vocab, files, code_switch);
  const auto test_base = load_task(vocab, files.task_test("base"));
  const auto test_cipher = load_task(vocab, files.task_test("cipher"));
  const ClassifierModel model = finetune_classifier(encoder, train, kNumRelationLabels, cfg);
  return {accuracy(model, test_base, cfg.max_seq_len), accuracy(model, test_cipher, cfg.max_seq_len)};
}

std::vector<AblationRow> run_ablation(const PipelineConfig& config, const DataFiles& files) {
  const int seeds = config.ablate_seeds;
  const bool with_finetune = config.ablate_finetune;
  if (seeds < 1) throw ConfigError("ablation needs at least one seed");
  const AlignmentData data = load_alignment_data(files, config.train.max_seq_len);

  struct Variant {
    std::string name;
    bool moco, tlm, mlm, code_switch, align;
  };
  const std::vector<Variant> variants = {
      {"full", true, true, false, true, true},
      {"-MoCo", false, true, false, true, true},
      {"-TLM", true, false, false, true, true},
      {"repl TLM w/ MLM", true, false, true, true, true},
      {"-CS", true, true, false, false, true},
      {"warm-up only", false, false, false, true, false},
  };
  std::vector<AblationRow> rows;
  for (const Variant& v : variants) {
    AblationRow row{v.name, 0.0, std::nullopt, std::nullopt};
    if (with_finetune) row.zero_shot = row.translate_train = 0.0;
    rows.push_back(row);
  }

  for (int s = 0; s < seeds; ++s) {
    TrainConfig base = config.train;
    base.seed = config.train.seed + static_cast<std::uint64_t>(s);
    FinetuneConfig ft = config.finetune;
    ft.seed = config.finetune.seed + static_cast<std::uint64_t>(s);
    const EncoderParams warm = warmup_mlm(base.encoder, data.train.pairs, base.warmup_mlm_steps,
                                          base.warmup_mlm_batch, base.warmup_mlm_lr, base.seed);
    std::optional<EncoderParams> full;
    for (std::size_t i = 0; i < variants.size(); ++i) {
      const Variant& v = variants[i];
      std::fprintf(stderr, "ablation seed %llu: %s\n", static_cast<unsigned long long>(base.seed), v.name.c_str());
      EncoderParams encoder = warm;
      double retrieval = 0.0;
      if (!v.align) {
        retrieval = evaluate_retrieval(warm, data.heldout.pairs);
      } else if (!v.code_switch && full) {
        // -CS shares the aligned encoder of the full system.
        encoder = *full;
        retrieval = evaluate_retrieval(encoder, data.heldout.pairs);
      } else {
        TrainConfig cfg = base;
        cfg.use_moco = v.moco;
        cfg.use_tlm = v.tlm;
        cfg.use_mlm_instead_of_tlm = v.mlm;
        AlignmentOutcome outcome = run_alignment(data, cfg, {}, warm);
        encoder = std::move(outcome.aligned);
        retrieval = outcome.aligned_retrieval;
        if (i == 0) full = encoder;
      }
      rows[i].retrieval += retrieval / seeds;
      if (!with_finetune) continue;
      *rows[i].zero_shot += run_zero_shot(encoder, data.vocab, files, ft).cipher_accuracy / seeds;
      *rows[i].translate_train +=
          run_translate_train(encoder, data.vocab, files, ft, v.code_switch).cipher_accuracy / seeds;
    }
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
  out << "variant,retrieval_top1,zero_shot_accuracy,translate_train_accuracy\n";
  for (const AblationRow& r : rows) {
    out << r.variant << ',' << format_double(r.retrieval) << ',' << cell(r.zero_shot) << ','
        << cell(r.translate_train) << '\n';
  }
}

}  // namespace ppa
