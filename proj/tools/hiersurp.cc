// Command-line workbench: corpus synthesis, training, surprisal estimation,
// regression and reports. Exit codes: 0 success, 2 usage, 3 data error,
// 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hiersurp/csv.h"
#include "hiersurp/pipeline.h"

namespace fs = std::filesystem;
using namespace hiersurp;
using nlohmann::json;

namespace {

void log_line(const std::string& m) { std::cerr << m << "\n"; }

// Config file first, then --set key=value overrides in order.
ExperimentConfig make_config(const std::string& path, const std::vector<std::string>& sets) {
  ExperimentConfig c = path.empty() ? ExperimentConfig{} : load_config(path);
  for (const std::string& s : sets) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return c;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("missing input file " + path);
}

void require_corpus(const std::string& dir) {
  for (const char* f : {"train.txt", "valid.txt", "test.txt", "bpe.model", "labels.txt", "freq.tsv"}) {
    require_file(dir + "/" + f);
  }
}

std::vector<Tree> split_trees(const CorpusFiles& c, const std::string& split) {
  if (split == "train") return c.train;
  if (split == "valid") return c.valid;
  if (split == "test") return c.test;
  throw UsageError("unknown split '" + split + "' (expected train, valid or test)");
}

std::vector<std::vector<std::string>> yields_of(const std::vector<Tree>& trees) {
  std::vector<std::vector<std::string>> out;
  for (const Tree& t : trees) out.push_back(yield_terminals(t));
  return out;
}

std::string surprisal_json(const SurprisalRun& run, ModelKind kind, int beam) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["model"] = std::string(model_name(kind));
  j["beam"] = is_rnng(kind) ? beam : 0;
  j["perplexity"] = run.perplexity.perplexity;
  j["subwords"] = run.perplexity.subwords;
  j["excluded_sentences"] = run.perplexity.excluded_sentences;
  if (is_rnng(kind)) {
    j["thresholds"] = run.stats.thresholds();
    std::vector<double> counts;
    for (std::size_t t = 0; t < run.stats.thresholds().size(); ++t) counts.push_back(run.stats.mean(t));
    j["relative_counts"] = counts;
  }
  return j.dump(2) + "\n";
}

struct Options {
  // Shared.
  std::string config, corpus, model, out, split = "test";
  std::vector<std::string> sets;
  int beam = 100;
  int threads = 1;
  std::uint64_t seed = 1;
  // synth treebank.
  std::string grammar;
  int sentences = 2000;
  double left_bias = 0.9;
  int min_words = 3, max_words = 20;
  // synth rt / surprisal.
  std::string segments;
  // preprocess.
  std::string treebank;
  int bpe_vocab = 120;
  // train.
  std::string kind = "lc";
  int dim = 256, layers = 2, epochs = -1;
  double dropout = -1.0;
  // regress.
  std::string rt, freq;
  std::vector<std::string> surprisals;
  bool select = false, spillover = false;
  double alpha = kBonferroniAlpha;
  // report.
  std::string run;
};

int run_cli(int argc, char** argv) {
  CLI::App app{"Hierarchical surprisal workbench: RNNG language models and reading-time regression"};
  app.require_subcommand(1);
  Options o;

  CLI::App* synth = app.add_subcommand("synth", "Synthesize corpora");
  synth->require_subcommand(1);
  CLI::App* s_tree = synth->add_subcommand("treebank", "Sample a treebank from a PCFG");
  s_tree->add_option("--grammar", o.grammar, "PCFG file (built-in grammar when omitted)");
  s_tree->add_option("--sentences", o.sentences, "Number of sentences")->check(CLI::PositiveNumber);
  s_tree->add_option("--seed", o.seed, "Sampling seed");
  s_tree->add_option("--left-bias", o.left_bias, "Weight of left-branching rules in [0, 1]");
  s_tree->add_option("--min-words", o.min_words, "Minimum sentence length");
  s_tree->add_option("--max-words", o.max_words, "Maximum sentence length");
  s_tree->add_option("--out", o.out, "Output treebank")->required();
  s_tree->add_flag("--print-grammar", o.select, "Print the biased grammar instead of sampling");

  CLI::App* s_rt = synth->add_subcommand(
      "rt", "Segment the test split and simulate reading times from a gold model's surprisals");
  s_rt->add_option("--corpus", o.corpus, "Preprocessed corpus directory")->required();
  s_rt->add_option("--model", o.model, "Gold model checkpoint")->required();
  s_rt->add_option("--beam", o.beam, "Action beam for the gold surprisals");
  s_rt->add_option("--seed", o.seed, "Segmentation and simulation seed");
  s_rt->add_option("--config", o.config, "Config file (rt.* keys)");
  s_rt->add_option("--set", o.sets, "Override key=value (repeatable)");
  s_rt->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  s_rt->add_option("--out-dir", o.out, "Writes segments.csv, gold.csv, rt.csv")->required();

  CLI::App* pre = app.add_subcommand("preprocess", "Split a treebank and train the subword model");
  pre->add_option("--treebank", o.treebank, "Bracketed treebank")->required();
  pre->add_option("--split-seed", o.seed, "Split seed");
  pre->add_option("--bpe-vocab", o.bpe_vocab, "Subword vocabulary size")->check(CLI::PositiveNumber);
  pre->add_option("--out", o.out, "Corpus directory")->required();

  CLI::App* train = app.add_subcommand("train", "Train an LSTM or RNNG language model");
  train->add_option("--corpus", o.corpus, "Preprocessed corpus directory")->required();
  train->add_option("--model", o.kind, "lstm, td or lc");
  train->add_option("--seed", o.seed, "Initialization and shuffling seed");
  train->add_option("--dim", o.dim, "Hidden size")->check(CLI::PositiveNumber);
  train->add_option("--layers", o.layers, "LSTM layers")->check(CLI::PositiveNumber);
  train->add_option("--dropout", o.dropout, "Dropout (model default when omitted)");
  train->add_option("--epochs", o.epochs, "Epochs");
  train->add_option("--config", o.config, "Config file (lstm.* / rnng.* keys)");
  train->add_option("--set", o.sets, "Override key=value (repeatable)");
  train->add_option("--out", o.out, "Checkpoint path (loss curve in <out>.curve.csv)")->required();

  CLI::App* parse = app.add_subcommand("parse", "Parse a split with beam search and score F1");
  parse->add_option("--corpus", o.corpus, "Preprocessed corpus directory")->required();
  parse->add_option("--model", o.model, "RNNG checkpoint")->required();
  parse->add_option("--beam", o.beam, "Action beam size")->check(CLI::Range(10, 1 << 20));
  parse->add_option("--split", o.split, "train, valid or test");
  parse->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  parse->add_option("--out", o.out, "Output trees (subword leaves)")->required();

  CLI::App* surp = app.add_subcommand("surprisal", "Compute subword and segment surprisals");
  surp->add_option("--corpus", o.corpus, "Preprocessed corpus directory")->required();
  surp->add_option("--model", o.model, "Model checkpoint")->required();
  surp->add_option("--beam", o.beam, "Action beam size (RNNGs)")->check(CLI::Range(10, 1 << 20));
  surp->add_option("--segments", o.segments, "Segments CSV (test split, one segment per sentence, when omitted)");
  surp->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  surp->add_option("--out", o.out, "Output stem: <out>.csv, <out>.segments.csv, <out>.json")->required();

  CLI::App* reg = app.add_subcommand("regress", "Fit mixed models and compare surprisal predictors");
  reg->add_option("--rt", o.rt, "Reading-time CSV")->required();
  reg->add_option("--surprisal", o.surprisals, "NAME=segment table (repeatable)")->required();
  reg->add_option("--freq", o.freq, "Unigram frequency TSV (fills freq columns when absent)");
  reg->add_flag("--select-baseline", o.select, "Screen baseline predictors first");
  reg->add_flag("--spillover", o.spillover, "Add previous-segment surprisal");
  reg->add_option("--alpha", o.alpha, "Significance level");
  reg->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  reg->add_option("--out", o.out, "Output directory")->required();

  CLI::App* stats = app.add_subcommand("stats", "Relative-beam statistics of word beams");
  stats->add_option("--corpus", o.corpus, "Preprocessed corpus directory")->required();
  stats->add_option("--model", o.model, "RNNG checkpoint")->required();
  stats->add_option("--beam", o.beam, "Action beam size")->check(CLI::Range(10, 1 << 20));
  stats->add_option("--segments", o.segments, "Segments CSV (test split when omitted)");
  stats->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  stats->add_option("--out", o.out, "Output CSV")->required();

  CLI::App* report = app.add_subcommand("report", "Rebuild the report bundle of a finished run");
  report->add_option("--run", o.run, "Run directory")->required();

  CLI::App* run = app.add_subcommand("run", "Run the full experiment (resumable)");
  run->add_option("--config", o.config, "Config file");
  run->add_option("--set", o.sets, "Override key=value (repeatable)");
  run->add_flag("--print-config", o.select, "Print the effective config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*s_tree) {
    Pcfg g = (o.grammar.empty() ? Pcfg::parse(default_grammar_text())
                                : Pcfg::parse(read_file(o.grammar)))
                 .with_left_bias(o.left_bias);
    if (o.select) {
      write_file(o.out, g.to_text());
      return 0;
    }
    write_treebank(o.out, synthesize_treebank(g, o.sentences, o.seed, o.min_words, o.max_words));
    return 0;
  }
  if (*s_rt) {
    require_corpus(o.corpus);
    require_file(o.model);
    const ExperimentConfig cfg = make_config(o.config, o.sets);
    const CorpusFiles corpus = load_corpus(o.corpus);
    Rng rng(o.seed);
    const std::vector<SimSegment> segments = segment_sentences(yields_of(corpus.test), cfg.rt, rng);
    write_segments_csv(o.out + "/segments.csv", segments);
    const SurprisalRun g = compute_surprisals(load_model(o.model), corpus,
                                              segment_sentences_text(segments), o.beam, o.threads);
    const std::vector<SurprisalRow> rows = segment_surprisals(g, segments);
    std::ostringstream table;
    write_surprisal_table(table, rows);
    write_file(o.out + "/gold.csv", table.str());
    synthesize_reading_times(segments, corpus.freq, rows, cfg.rt, mix_seed(o.seed, 2),
                             o.out + "/rt.csv");
    return 0;
  }
  if (*pre) {
    require_file(o.treebank);
    std::vector<SourcedTree> trees;
    for (const SourcedTree& t : read_treebank(o.treebank)) trees.push_back({t.source, normalize(t.tree)});
    const CorpusFiles c = preprocess_corpus(trees, o.out, o.seed, o.bpe_vocab);
    std::cout << "train " << c.train.size() << " valid " << c.valid.size() << " test "
              << c.test.size() << " subwords " << c.bpe.size() << " labels " << c.labels.size()
              << "\n";
    return 0;
  }
  if (*train) {
    require_corpus(o.corpus);
    const ExperimentConfig cfg = make_config(o.config, o.sets);
    const ModelKind kind = parse_model_kind(o.kind);
    ModelSpec spec{kind, o.dim, o.layers,
                   o.dropout >= 0 ? o.dropout
                                  : (kind == ModelKind::kLstm ? cfg.lstm_dropout : cfg.rnng_dropout)};
    TrainConfig t = kind == ModelKind::kLstm ? cfg.lstm_train : cfg.rnng_train;
    if (o.epochs > 0) t.epochs = o.epochs;
    t.seed = o.seed;
    t.verbose = true;
    train_model(load_corpus(o.corpus), spec, t, o.out);
    return 0;
  }
  if (*parse) {
    require_corpus(o.corpus);
    require_file(o.model);
    const CorpusFiles corpus = load_corpus(o.corpus);
    const TrainedModel m = load_model(o.model);
    if (!is_rnng(m.kind)) throw UsageError("parse needs an RNNG checkpoint");
    const std::vector<Tree> gold = split_trees(corpus, o.split);
    const SurprisalRun r = compute_surprisals(m, corpus, yields_of(gold), o.beam, o.threads);
    std::string trees;
    for (const SentenceSurprisal& s : r.results) {
      trees += s.ok ? to_bracketed(s.best_tree) + "\n" : "(FAILED)\n";
    }
    write_file(o.out, trees);
    const F1Report f1 = parse_f1(r, gold, corpus.bpe, corpus.labels);
    std::cout << "precision " << fmt(f1.precision()) << " recall " << fmt(f1.recall()) << " f1 "
              << fmt(f1.f1()) << "\n";
    return 0;
  }
  if (*surp || *stats) {
    require_corpus(o.corpus);
    require_file(o.model);
    const CorpusFiles corpus = load_corpus(o.corpus);
    const TrainedModel m = load_model(o.model);
    if (*stats && !is_rnng(m.kind)) throw UsageError("stats needs an RNNG checkpoint");
    std::vector<SimSegment> segments;
    if (!o.segments.empty()) {
      require_file(o.segments);
      segments = read_segments_csv(o.segments);
    } else {
      int i = 0;
      for (const auto& words : yields_of(corpus.test)) {
        segments.push_back({"s" + std::to_string(i), 0, i, words});
        ++i;
      }
    }
    const SurprisalRun r =
        compute_surprisals(m, corpus, segment_sentences_text(segments), o.beam, o.threads);
    if (*stats) {
      std::ostringstream csv;
      csv << "threshold,mean_count,beams\n";
      for (std::size_t t = 0; t < r.stats.thresholds().size(); ++t) {
        write_csv_row(csv, {fmt(r.stats.thresholds()[t]), fmt(r.stats.mean(t)),
                            std::to_string(r.stats.beams())});
      }
      write_file(o.out, csv.str());
      return 0;
    }
    write_subword_surprisals(o.out + ".csv", r);
    std::ostringstream table;
    write_surprisal_table(table, segment_surprisals(r, segments));
    write_file(o.out + ".segments.csv", table.str());
    write_file(o.out + ".json", surprisal_json(r, m.kind, o.beam));
    std::cout << "perplexity " << fmt(r.perplexity.perplexity) << "\n";
    return 0;
  }
  if (*reg) {
    require_file(o.rt);
    std::map<std::string, std::string> paths;
    std::vector<std::string> names;
    for (const std::string& s : o.surprisals) {
      const std::size_t eq = s.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw UsageError("--surprisal expects NAME=path, got '" + s + "'");
      }
      const std::string name = s.substr(0, eq);
      if (paths.count(name)) throw UsageError("duplicate surprisal name " + name);
      require_file(s.substr(eq + 1));
      paths[name] = s.substr(eq + 1);
      names.push_back(name);
    }
    std::ifstream in(o.rt);
    std::vector<RtRow> rows = read_rt_csv(in);
    if (!o.freq.empty()) {
      require_file(o.freq);
      std::ifstream f(o.freq);
      fill_frequencies(rows, read_frequency_tsv(f));
    }
    PrepareOptions prep;
    prep.spillover = o.spillover;
    const Dataset data = prepare(rows, load_surprisal_tables(paths), prep);
    std::vector<std::string> base = baseline_predictors();
    if (o.select) base = baseline_predictor_selection(data, base).retained;
    const FitOptions fit_opt;
    const MixedModelFit base_fit = fit_lmm(data, base, fit_opt);
    std::ostringstream deltas;
    deltas << "model,delta_deviance,df,clamped\n";
    for (const std::string& n : names) {
      std::vector<std::string> preds = base;
      preds.push_back(n);
      const DeltaDeviance d = delta_deviance(base_fit, fit_lmm(data, preds, fit_opt));
      write_csv_row(deltas, {n, fmt(d.value), std::to_string(d.df), d.clamped ? "1" : "0"});
    }
    write_file(o.out + "/deltas.csv", deltas.str());
    if (names.size() >= 2) {
      const ComparisonMatrix m = comparison_matrix(data, base, names, fit_opt, o.alpha, o.threads);
      std::ostringstream csv;
      write_comparison_csv(csv, m);
      write_file(o.out + "/comparison.csv", csv.str());
    }
    json fits = json::object();
    fits["schema_version"] = kSchemaVersion;
    fits["rows_kept"] = data.counts.kept;
    fits["rows_total"] = data.counts.total;
    fits["baseline_predictors"] = base;
    fits["baseline"] = json::parse(fit_report_json(base_fit));
    write_file(o.out + "/fits.json", fits.dump(2) + "\n");
    std::cout << deltas.str();
    return 0;
  }
  if (*report) {
    write_report(o.run);
    return 0;
  }
  if (*run) {
    const ExperimentConfig cfg = make_config(o.config, o.sets);
    if (o.select) {
      std::cout << cfg.to_text();
      return 0;
    }
    run_experiment(cfg, log_line);
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
