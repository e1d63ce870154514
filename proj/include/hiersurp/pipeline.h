#ifndef HIERSURP_PIPELINE_H_
#define HIERSURP_PIPELINE_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hiersurp/beam.h"
#include "hiersurp/bpe.h"
#include "hiersurp/eval.h"
#include "hiersurp/models.h"
#include "hiersurp/oracle.h"
#include "hiersurp/regress.h"
#include "hiersurp/synth.h"
#include "hiersurp/treebank.h"

namespace hiersurp {

// Schema version stamped into every JSON artifact.
inline constexpr int kSchemaVersion = 1;

class SchemaMismatch : public DataError {
 public:
  SchemaMismatch(const std::string& path, int found)
      : DataError(path + ": schema version " + std::to_string(found) + ", expected " +
                  std::to_string(kSchemaVersion)) {}
};

enum class ModelKind { kLstm, kTopDown, kLeftCorner };

std::string_view model_name(ModelKind kind);  // "LSTM", "TD", "LC"
std::string_view model_stem(ModelKind kind);  // "lstm", "td", "lc"
ModelKind parse_model_kind(std::string_view name);  // either spelling
bool is_rnng(ModelKind kind);

// ---- Experiment configuration ----

// TOML-like "key = value" configuration. '#' starts a comment and a
// "[section]" header prefixes the keys below it with "section.". Unknown
// keys are usage errors.
struct ExperimentConfig {
  std::string out_dir = "run";
  // Corpus: an external treebank, or a synthetic one when empty.
  std::string treebank;
  std::string grammar;  // PCFG file; built-in grammar when empty
  int sentences = 2000;
  double left_bias = 0.9;
  int min_words = 3;
  int max_words = 20;
  std::uint64_t corpus_seed = 1;
  std::uint64_t split_seed = 1;
  int bpe_vocab = 120;
  // Reading times: external files, or synthesized from gold surprisals.
  std::string rt_csv;
  std::string segments_csv;
  std::string frequency_tsv;
  std::uint64_t gold_seed = 1000;
  int gold_beam = 400;
  std::uint64_t rt_seed = 7;
  RtSimConfig rt;
  // Grid.
  std::vector<ModelKind> models = {ModelKind::kLstm, ModelKind::kTopDown,
                                   ModelKind::kLeftCorner};
  std::vector<int> beams = {100, 200, 400, 600, 800, 1000};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  // Models and training.
  int dim = 256;
  int layers = 2;
  double lstm_dropout = 0.2;
  double rnng_dropout = 0.3;
  TrainConfig lstm_train = lstm_train_defaults();
  TrainConfig rnng_train = rnng_train_defaults();
  // Regression.
  PrepareOptions prepare;
  bool select_baseline = true;
  double alpha = kBonferroniAlpha;
  int threads = 1;

  // Throws UsageError on unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
};

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

// ---- Corpus artifacts ----

struct SubwordSentence {
  std::vector<int> ids;
  std::vector<std::size_t> word_pieces;  // subwords per word
  std::vector<char> unk;                 // per subword
  bool has_unk = false;
};

SubwordSentence encode_sentence(const BpeModel& bpe, const std::vector<std::string>& words);

// Replaces every word leaf by one leaf per subword, named by its decimal id.
Tree subword_tree(const Tree& tree, const BpeModel& bpe);

// Terminal table whose entry i is the string of subword id i.
SymbolTable subword_terminals(const BpeModel& bpe);

// Labels in order of first appearance.
SymbolTable collect_labels(const std::vector<Tree>& trees);

// Files under <dir>: train.txt, valid.txt, test.txt, bpe.model,
// labels.txt, freq.tsv.
struct CorpusFiles {
  std::vector<Tree> train, valid, test;
  BpeModel bpe;
  SymbolTable labels;
  FrequencyTable freq;
};

// Splits, trains BPE on the train split, and writes the corpus directory.
CorpusFiles preprocess_corpus(const std::vector<SourcedTree>& trees, const std::string& dir,
                              std::uint64_t split_seed, int bpe_vocab);
CorpusFiles load_corpus(const std::string& dir);

std::vector<SourcedTree> synthesize_treebank(const Pcfg& grammar, int n, std::uint64_t seed,
                                             int min_words, int max_words);

// Reading segments: segment_id, article, sentence, words.
void write_segments_csv(const std::string& path, const std::vector<SimSegment>& segments);
std::vector<SimSegment> read_segments_csv(const std::string& path);
// Sentence texts in sentence order (segments concatenated).
std::vector<std::vector<std::string>> segment_sentences_text(
    const std::vector<SimSegment>& segments);

// ---- Models ----

struct ModelSpec {
  ModelKind kind = ModelKind::kLstm;
  int dim = 256;
  int layers = 2;
  double dropout = 0.2;
};

struct TrainedModel {
  ModelKind kind = ModelKind::kLstm;
  std::optional<LstmLm> lstm;
  std::optional<Rnng> rnng;
};

// Trains and saves <path> (checkpoint) and <path>.curve.csv.
TrainedModel train_model(const CorpusFiles& corpus, const ModelSpec& spec,
                         const TrainConfig& train, const std::string& path);
TrainedModel load_model(const std::string& path);

// ---- Surprisal and evaluation ----

struct SurprisalRun {
  std::vector<SubwordSentence> sentences;
  std::vector<SentenceSurprisal> results;  // ok = false for failed searches
  RelativeBeamStats stats;
  PerplexityReport perplexity;
};

// Exact LSTM surprisals or beam-search RNNG surprisals with best parses
// (`beam` is ignored for the LSTM).
SurprisalRun compute_surprisals(const TrainedModel& model, const CorpusFiles& corpus,
                                const std::vector<std::vector<std::string>>& sentences,
                                int beam, int threads);

// sentence_id, word_index, subword_id, surprisal_nats, beam_mass (log of the
// word-beam mass; the exact prefix log probability for the LSTM).
void write_subword_surprisals(const std::string& path, const SurprisalRun& run);

// Segment-level table (write_surprisal_table format). Failed sentences get
// unk = 1 so that their segments are excluded downstream.
std::vector<SurprisalRow> segment_surprisals(const SurprisalRun& run,
                                             const std::vector<SimSegment>& segments);

// Labeled F1 of the best parses against the subword gold trees.
F1Report parse_f1(const SurprisalRun& run, const std::vector<Tree>& gold,
                  const BpeModel& bpe, const SymbolTable& labels);

// ---- Experiment ----

struct CellResult {
  ModelKind kind = ModelKind::kLstm;
  std::uint64_t seed = 0;
  int beam = 0;  // 0 for the LSTM
  double rt_perplexity = 0.0;
  double test_perplexity = 0.0;
  double f1 = 0.0;  // RNNGs only
  std::vector<double> relative_counts;  // per threshold, RNNGs only
  double delta_deviance = 0.0;  // Baseline < model
  std::string surprisal_table;  // relative to out_dir
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  std::vector<std::string> baseline;  // predictors after screening
  std::map<ModelKind, int> best_beam;
  std::map<std::uint64_t, ComparisonMatrix> comparisons;  // per seed
};

using Logger = std::function<void(const std::string&)>;

// Runs every stage, skipping those whose outputs exist (resumable).
ExperimentResult run_experiment(const ExperimentConfig& config, const Logger& log = {});

// Reads regress/results.json of a finished run and writes the report bundle
// under report/ (report.json, table1.csv, beam_stats.csv, figures with CSV
// twins). Throws SchemaMismatch for results of another schema version.
void write_report(const std::string& out_dir);

void write_results(const std::string& path, const ExperimentResult& result);
ExperimentResult read_results(const std::string& path);

// Relative-beam grid: model, word_beam, threshold, mean, sd over seeds.
void write_beam_stats(const std::string& path, const std::vector<CellResult>& cells);

// Stage building blocks, exposed for the command-line tool.
void synthesize_reading_times(const std::vector<SimSegment>& segments, const FrequencyTable& freq,
                              const std::vector<SurprisalRow>& gold, const RtSimConfig& config,
                              std::uint64_t seed, const std::string& path);
std::map<std::string, SurprisalColumn> load_surprisal_tables(
    const std::map<std::string, std::string>& paths);

// Fails with SchemaMismatch unless the file's "schema_version" matches.
void check_schema(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace hiersurp

#endif  // HIERSURP_PIPELINE_H_
