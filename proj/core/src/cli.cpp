// SPDX-License-Identifier: Apache-2.0
#include "ppa/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>

#include "ppa/pipeline.hpp"
#include "ppa/serialize.hpp"

namespace ppa {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool paper_mode = false;
  bool force = false;
  bool no_moco = false;
  bool no_tlm = false;
  bool mlm = false;
  bool no_cs = false;
  bool translate_train = false;
  std::string data;
  std::string input;
  std::string model;
  std::string resume;
  std::string retrieval;
  bool zero_shot = false;
  std::string task = "relation";
  std::int64_t stop_after = -1;
  std::int64_t checkpoint_every = 0;
  int seeds = 0;
  bool no_finetune = false;
};

/// Raised for invalid flag combinations found after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

PipelineConfig resolve_config(const Options& o, bool seed_is_data) {
  if (o.paper_mode && !o.force) {
    throw UsageError(
        "--paper-mode uses a 32000-entry queue, batch 128 and an mBERT-sized encoder, which is impractical on a "
        "CPU; pass --force to run it anyway");
  }
  PipelineConfig cfg = o.paper_mode ? PipelineConfig::paper() : PipelineConfig::toy();
  if (!o.config.empty()) cfg = PipelineConfig::from_key_values(KeyValues::load(o.config), cfg);
  if (o.seed) {
    if (seed_is_data) {
      cfg.data.seed = *o.seed;
    } else {
      cfg.train.seed = *o.seed;
      cfg.finetune.seed = *o.seed;
    }
  }
  if (o.no_moco) cfg.train.use_moco = false;
  if (o.mlm) {
    cfg.train.use_tlm = false;
    cfg.train.use_mlm_instead_of_tlm = true;
  }
  if (o.no_tlm) {
    cfg.train.use_tlm = false;
    cfg.train.use_mlm_instead_of_tlm = false;
  }
  if (o.translate_train) cfg.translate_train = true;
  if (o.no_cs) cfg.code_switch = false;
  if (o.seeds > 0) cfg.ablate_seeds = o.seeds;
  if (o.no_finetune) cfg.ablate_finetune = false;
  cfg.train.validate();
  cfg.finetune.validate();
  return cfg;
}

/// Resolved config plus comment lines naming the command, seeds and input
/// hashes. Passing the file back through --config reruns the same settings.
void write_manifest(const fs::path& out, const std::string& command, const PipelineConfig& cfg,
                    const std::vector<fs::path>& inputs) {
  fs::create_directories(out);
  std::ofstream file(out / kManifestFile, std::ios::trunc);
  file << "# ppa run manifest\n";
  file << "# command = " << command << '\n';
  file << "# seeds: data.seed = " << cfg.data.seed << ", train.seed = " << cfg.train.seed
       << ", finetune.seed = " << cfg.finetune.seed << '\n';
  for (const fs::path& p : inputs) {
    if (fs::is_regular_file(p)) file << "# input " << p.string() << " fnv1a64 = " << hash_file(p) << '\n';
  }
  file << cfg.to_key_values().to_text();
  if (!file) throw std::runtime_error("cannot write " + (out / kManifestFile).string());
}

void copy_vocab(const fs::path& vocab, const fs::path& dir) {
  fs::create_directories(dir);
  fs::copy_file(vocab, dir / "vocab.txt", fs::copy_options::overwrite_existing);
}

Vocab model_vocab(const fs::path& model) {
  const fs::path path = model / "vocab.txt";
  if (!fs::exists(path)) throw DataError("model directory " + model.string() + " has no vocab.txt");
  return Vocab::load(path);
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(o, true);
  const DataFiles files = generate_data(cfg.data, o.out);
  write_manifest(o.out, "gen-data", cfg, {});
  out << "wrote " << cfg.data.n_pairs << " training pairs, " << cfg.data.heldout_pairs << " held-out pairs, "
      << cfg.data.task_train << "/" << cfg.data.task_test << " relation examples and " << cfg.data.qa_train << "/"
      << cfg.data.qa_test << " QA examples to " << files.dir.string() << '\n';
  return kExitOk;
}

int cmd_preprocess(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(o, true);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const auto text = read_parallel_text(o.input);
  std::vector<std::string> lines;
  for (const auto& [src, tgt] : text) {
    lines.push_back(src);
    lines.push_back(tgt);
  }
  const Vocab vocab = build_vocab(lines, cfg.data.vocab_size);
  vocab.save(dir / "vocab.txt");
  const ParallelData data = load_parallel(o.input, vocab, cfg.train.max_seq_len);
  {
    std::ofstream kept(dir / "corpus.parallel.tsv", std::ios::trunc);
    for (const ParallelPair& p : data.pairs) {
      kept << text[static_cast<std::size_t>(p.pair_id)].first << '\t' << text[static_cast<std::size_t>(p.pair_id)].second
           << '\n';
    }
    if (!kept) throw std::runtime_error("cannot write " + (dir / "corpus.parallel.tsv").string());
  }
  write_manifest(dir, "preprocess", cfg, {o.input});
  out << "read " << data.counts.read << " pairs, kept " << data.counts.kept << ", dropped "
      << data.counts.dropped_short << " short and " << data.counts.dropped_long << " long; vocabulary "
      << vocab.size() << " tokens\n";
  return kExitOk;
}

int cmd_train_align(const Options& o, std::ostream& out) {
  PipelineConfig cfg = resolve_config(o, false);
  const DataFiles files{o.data};
  const fs::path dir = o.out;
  const AlignmentData data = load_alignment_data(files, cfg.train.max_seq_len);
  if (data.vocab.size() > cfg.train.encoder.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(data.vocab.size()) + " tokens but the encoder only " +
                      std::to_string(cfg.train.encoder.vocab_size));
  }
  out << "training pairs: " << data.train.pairs.size() << " (dropped " << data.train.counts.dropped_short
      << " short, " << data.train.counts.dropped_long << " long), held-out pairs: " << data.heldout.pairs.size()
      << '\n';

  const auto started = std::chrono::steady_clock::now();
  std::optional<PpaTrainer> trainer;
  if (!o.resume.empty()) {
    trainer.emplace(PpaTrainer::restore(o.resume, data.train.pairs));
    cfg.train = trainer->config();
    out << "resumed at step " << trainer->steps_done() << " of " << trainer->total_steps() << '\n';
  } else {
    const EncoderParams warm = warmup_mlm(cfg.train.encoder, data.train.pairs, cfg.train.warmup_mlm_steps,
                                          cfg.train.warmup_mlm_batch, cfg.train.warmup_mlm_lr, cfg.train.seed);
    save_encoder(dir / "warmup", warm);
    copy_vocab(files.vocab(), dir / "warmup");
    out << "warm-up encoder retrieval top-1: " << fixed(evaluate_retrieval(warm, data.heldout.pairs)) << '\n';
    MoCoState state(warm, cfg.train.queue_size, cfg.train.momentum, cfg.train.temperature, cfg.train.seed,
                    cfg.train.use_moco ? cfg.train.batch_size : 1);
    trainer.emplace(std::move(state), data.train.pairs, cfg.train);
  }
  write_manifest(dir, "train-align", cfg, {files.corpus(), files.heldout(), files.vocab()});

  TrainOptions options;
  options.heldout = data.heldout.pairs;
  options.metrics_csv = dir / "metrics.csv";
  options.retrieval_csv = dir / "retrieval.csv";
  options.append = !o.resume.empty();
  if (o.stop_after >= 0) options.stop_at_step = o.stop_after;
  PpaTrainer& t = *trainer;
  options.on_step = [&](const StepMetrics& row) {
    if (row.step % 100 == 0 || row.step + 1 == t.total_steps()) {
      out << "step " << row.step << "/" << t.total_steps() << " loss " << fixed(row.l_total) << " lr "
          << format_double(row.lr) << '\n';
    }
    if (o.checkpoint_every > 0 && t.steps_done() % o.checkpoint_every == 0) t.save(dir / "checkpoint");
  };
  const TrainMetrics metrics = train_ppa(t, options);
  t.save(dir / "checkpoint");
  for (std::size_t e = 0; e < metrics.epoch_retrieval.size(); ++e) {
    out << "epoch retrieval top-1: " << fixed(metrics.epoch_retrieval[e]) << '\n';
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!t.done()) {
    out << "stopped at step " << t.steps_done() << "; resume with --resume " << (dir / "checkpoint").string() << '\n';
    return kExitOk;
  }
  EncoderParams aligned = t.state().query();
  save_encoder(dir / "encoder", aligned);
  copy_vocab(files.vocab(), dir / "encoder");
  out << "aligned encoder retrieval top-1: " << fixed(evaluate_retrieval(aligned, data.heldout.pairs)) << " ("
      << fixed(seconds, 1) << " s)\n";
  return kExitOk;
}

int cmd_finetune(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(o, false);
  const DataFiles files{o.data};
  const fs::path dir = o.out;
  const EncoderParams encoder = load_encoder(o.model);
  const Vocab vocab = model_vocab(o.model);
  std::vector<fs::path> inputs = {fs::path(o.model) / "encoder.tensors"};

  EvalReport report;
  if (o.task == "relation") {
    report.task = cfg.translate_train ? (cfg.code_switch ? "relation-translate-train" : "relation-translate-train-nocs")
                                      : "relation-zero-shot";
    const auto train = cfg.translate_train ? translate_train_set(vocab, files, cfg.code_switch)
                                           : [&] {
                                               std::vector<LabeledPairExample> v;
                                               for (const auto& t : read_labeled(files.task_train("base"))) {
                                                 v.push_back(encode_example(vocab, t));
                                               }
                                               return v;
                                             }();
    inputs.push_back(files.task_train("base"));
    if (cfg.translate_train) inputs.push_back(files.task_train("cipher"));
    write_manifest(dir, "finetune", cfg, inputs);
    const ClassifierModel model = finetune_classifier(
        encoder, train, kNumRelationLabels, cfg.finetune,
        [&out](int epoch, double loss) { out << "epoch " << epoch << " loss " << fixed(loss) << '\n'; });
    std::vector<int> ids;
    std::vector<std::string> predictions;
    for (const std::string language : {"base", "cipher"}) {
      std::vector<LabeledPairExample> test;
      for (const auto& t : read_labeled(files.task_test(language))) test.push_back(encode_example(vocab, t));
      const EvalReport scored = evaluate_zero_shot(model, test, language, cfg.finetune.max_seq_len);
      report.scores.insert(report.scores.end(), scored.scores.begin(), scored.scores.end());
      if (language == "cipher") {
        const std::vector<int> labels = predict_labels(model, test, cfg.finetune.max_seq_len);
        for (std::size_t i = 0; i < labels.size(); ++i) {
          ids.push_back(static_cast<int>(i));
          predictions.push_back(std::to_string(labels[i]));
        }
      }
    }
    write_predictions(dir / "predictions.tsv", ids, predictions);
  } else if (o.task == "qa") {
    if (cfg.translate_train) throw UsageError("--translate-train is only available for the relation task");
    report.task = "qa-zero-shot";
    std::vector<QaExample> train;
    for (const QaTextExample& t : read_qa(files.qa_train("base"))) {
      train.push_back(encode_qa(vocab, t, static_cast<int>(train.size())));
    }
    inputs.push_back(files.qa_train("base"));
    write_manifest(dir, "finetune", cfg, inputs);
    const SpanModel model = finetune_span(
        encoder, train, cfg.finetune,
        [&out](int epoch, double loss) { out << "epoch " << epoch << " loss " << fixed(loss) << '\n'; });
    std::vector<int> ids;
    std::vector<std::string> predictions;
    for (const std::string language : {"base", "cipher"}) {
      std::vector<QaExample> test;
      for (const QaTextExample& t : read_qa(files.qa_test(language))) {
        test.push_back(encode_qa(vocab, t, static_cast<int>(test.size())));
      }
      const auto spans = predict_spans(model, test, cfg.finetune.max_answer_len, cfg.finetune.max_seq_len);
      report.scores.push_back({language, "exact_match", exact_match(spans, test)});
      report.scores.push_back({language, "f1", span_f1(spans, test)});
      if (language == "cipher") {
        for (std::size_t i = 0; i < spans.size(); ++i) {
          ids.push_back(test[i].id);
          predictions.push_back(std::to_string(spans[i].start) + "-" + std::to_string(spans[i].end));
        }
      }
    }
    write_predictions(dir / "predictions.tsv", ids, predictions);
  } else {
    throw UsageError("unknown task " + o.task + " (expected relation or qa)");
  }
  report.write_csv(dir / "eval.csv");
  for (const LanguageScore& s : report.scores) out << s.language << ' ' << s.metric << ' ' << fixed(s.value) << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  if (o.retrieval.empty() && !o.zero_shot) throw UsageError("eval needs --retrieval FILE and/or --zero-shot");
  if (o.zero_shot && o.data.empty()) throw UsageError("--zero-shot needs --data DIR");
  const PipelineConfig cfg = resolve_config(o, false);
  const EncoderParams encoder = load_encoder(o.model);
  const Vocab vocab = model_vocab(o.model);
  EvalReport report{"eval", {}};
  std::vector<fs::path> inputs = {fs::path(o.model) / "encoder.tensors"};
  if (!o.retrieval.empty()) {
    const ParallelData pairs = load_parallel(o.retrieval, vocab, encoder.config().max_positions);
    if (pairs.pairs.empty()) throw DataError("no pair in " + o.retrieval + " passes the length filter");
    const double acc = evaluate_retrieval(encoder, pairs.pairs);
    out << "retrieval top-1: " << fixed(acc) << " over " << pairs.pairs.size() << " pairs\n";
    report.scores.push_back({"parallel", "retrieval_top1", acc});
    inputs.push_back(o.retrieval);
  }
  if (o.zero_shot) {
    const DataFiles files{o.data};
    const ClassificationOutcome r = run_zero_shot(encoder, vocab, files, cfg.finetune);
    out << "zero-shot accuracy: base " << fixed(r.base_accuracy) << ", cipher " << fixed(r.cipher_accuracy) << '\n';
    report.scores.push_back({"base", "zero_shot_accuracy", r.base_accuracy});
    report.scores.push_back({"cipher", "zero_shot_accuracy", r.cipher_accuracy});
    inputs.push_back(files.task_train("base"));
    inputs.push_back(files.task_test("cipher"));
  }
  if (!o.out.empty()) {
    write_manifest(o.out, "eval", cfg, inputs);
    report.write_csv(fs::path(o.out) / "eval.csv");
  }
  return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(o, false);
  const fs::path dir = o.out;
  DataFiles files{o.data};
  if (o.data.empty()) {
    files = generate_data(cfg.data, dir / "data");
    out << "generated data in " << files.dir.string() << '\n';
  }
  write_manifest(dir, "ablate", cfg, {files.corpus(), files.heldout(), files.vocab()});
  const std::vector<AblationRow> rows = run_ablation(cfg, files);
  write_ablation_csv(dir / "ablation.csv", rows);
  auto cell = [](const std::optional<double>& v) { return v ? fixed(*v) : std::string("NA"); };
  out << "variant            retrieval  zero-shot  translate-train\n";
  for (const AblationRow& r : rows) {
    std::string name = r.variant;
    name.resize(std::max<std::size_t>(name.size(), 18), ' ');
    out << name << ' ' << fixed(r.retrieval) << "     " << cell(r.zero_shot) << "     " << cell(r.translate_train)
        << '\n';
  }
  return kExitOk;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "key = value settings file (a manifest.cfg works)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "override the seed");
  cmd->add_flag("--paper-mode", o.paper_mode, "start from the full-scale settings");
  cmd->add_flag("--force", o.force, "allow --paper-mode");
}

void add_ablation_flags(CLI::App* cmd, Options& o) {
  cmd->add_flag("--no-moco", o.no_moco, "disable the contrastive objective");
  cmd->add_flag("--no-tlm", o.no_tlm, "disable the masked-LM objective");
  cmd->add_flag("--mlm", o.mlm, "replace translation LM with monolingual MLM");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Alignment training and evaluation for multilingual encoders", "ppa"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic bilingual corpus and tasks");
  add_common(gen, o);
  gen->add_option("--out", o.out, "output directory")->required();

  auto* pre = app.add_subcommand("preprocess", "build a vocabulary and length-filter a parallel TSV");
  add_common(pre, o);
  pre->add_option("--input", o.input, "src<TAB>tgt file")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", o.out, "output directory")->required();

  auto* train = app.add_subcommand("train-align", "warm-up MLM followed by alignment training");
  add_common(train, o);
  add_ablation_flags(train, o);
  train->add_option("--data", o.data, "data directory from gen-data")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", o.out, "output directory")->required();
  train->add_option("--resume", o.resume, "checkpoint directory to continue from")->check(CLI::ExistingDirectory);
  train->add_option("--stop-after", o.stop_after, "pause after this many steps");
  train->add_option("--checkpoint-every", o.checkpoint_every, "checkpoint interval in steps");

  auto* ft = app.add_subcommand("finetune", "train a task head and evaluate both languages");
  add_common(ft, o);
  ft->add_option("--data", o.data, "data directory from gen-data")->required()->check(CLI::ExistingDirectory);
  ft->add_option("--model", o.model, "encoder directory")->required()->check(CLI::ExistingDirectory);
  ft->add_option("--out", o.out, "output directory")->required();
  ft->add_option("--task", o.task, "relation or qa");
  ft->add_flag("--translate-train", o.translate_train, "also train on cipher-language data");
  ft->add_flag("--no-cs", o.no_cs, "translate-train without code-switching");

  auto* ev = app.add_subcommand("eval", "evaluate an encoder");
  add_common(ev, o);
  ev->add_option("--model", o.model, "encoder directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--retrieval", o.retrieval, "parallel TSV for top-1 retrieval")->check(CLI::ExistingFile);
  ev->add_flag("--zero-shot", o.zero_shot, "train on base-language task data, score the cipher test set");
  ev->add_option("--data", o.data, "data directory for --zero-shot")->check(CLI::ExistingDirectory);
  ev->add_option("--out", o.out, "optional output directory");

  auto* ab = app.add_subcommand("ablate", "run the ablation matrix and write ablation.csv");
  add_common(ab, o);
  add_ablation_flags(ab, o);
  ab->add_option("--data", o.data, "data directory (generated under --out when absent)")
      ->check(CLI::ExistingDirectory);
  ab->add_option("--out", o.out, "output directory")->required();
  ab->add_option("--seeds", o.seeds, "number of seeds to average");
  ab->add_flag("--no-cs", o.no_cs, "accepted for symmetry; the matrix always includes -CS");
  ab->add_flag("--no-finetune", o.no_finetune, "report retrieval only");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o, out);
    if (*pre) return cmd_preprocess(o, out);
    if (*train) return cmd_train_align(o, out);
    if (*ft) return cmd_finetune(o, out);
    if (*ev) return cmd_eval(o, out);
    if (*ab) return cmd_ablate(o, out);
  } catch (const UsageError& e) {
    err << "ppa: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "ppa: error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ppa
