#include "hiersurp/pipeline.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <type_traits>

#include <json.hpp>

#include "hiersurp/csv.h"
#include "hiersurp/plot.h"

namespace hiersurp {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Files ----

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << content;
    if (!out) throw DataError("cannot write " + path);
  }
  fs::rename(tmp, path);
}

void check_schema(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  const int v = j.contains("schema_version") ? j["schema_version"].get<int>() : 0;
  if (v != kSchemaVersion) throw SchemaMismatch(path, v);
}

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <class T>
T parse_value(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw std::invalid_argument("bool");
    } else if constexpr (std::is_same_v<T, int>) {
      const int x = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument("int");
      return x;
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      const std::uint64_t x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument("u64");
      return x;
    } else if constexpr (std::is_same_v<T, double>) {
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("double");
      return x;
    } else if constexpr (std::is_same_v<T, std::vector<int>>) {
      std::vector<int> out;
      for (const std::string& s : split_list(v)) out.push_back(parse_value<int>(s, key));
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      std::vector<std::uint64_t> out;
      for (const std::string& s : split_list(v)) out.push_back(parse_value<std::uint64_t>(s, key));
      return out;
    } else {
      static_assert(std::is_same_v<T, std::vector<ModelKind>>);
      std::vector<ModelKind> out;
      for (const std::string& s : split_list(v)) out.push_back(parse_model_kind(s));
      return out;
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("bad value '" + v + "' for " + key);
  }
}

std::string format_value(const std::string& v) { return v; }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
// Shortest text that reads back to the same double.
std::string format_value(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
template <class T>
std::string format_value(const std::vector<T>& v) {
  std::string out;
  for (const T& x : v) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_same_v<T, ModelKind>) {
      out += model_name(x);
    } else {
      out += format_value(x);
    }
  }
  return out;
}

struct Field {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class F>
Field make_field(std::string name, F access) {
  using T = std::remove_reference_t<decltype(access(std::declval<ExperimentConfig&>()))>;
  return {name,
          [access, name](ExperimentConfig& c, const std::string& v) {
            access(c) = parse_value<T>(v, name);
          },
          [access](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return format_value(access(copy));
          }};
}

#define HS_FIELD(key, expr) make_field(key, [](ExperimentConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      HS_FIELD("out_dir", c.out_dir),
      HS_FIELD("treebank", c.treebank),
      HS_FIELD("grammar", c.grammar),
      HS_FIELD("sentences", c.sentences),
      HS_FIELD("left_bias", c.left_bias),
      HS_FIELD("min_words", c.min_words),
      HS_FIELD("max_words", c.max_words),
      HS_FIELD("corpus_seed", c.corpus_seed),
      HS_FIELD("split_seed", c.split_seed),
      HS_FIELD("bpe_vocab", c.bpe_vocab),
      HS_FIELD("rt_csv", c.rt_csv),
      HS_FIELD("segments_csv", c.segments_csv),
      HS_FIELD("frequency_tsv", c.frequency_tsv),
      HS_FIELD("gold_seed", c.gold_seed),
      HS_FIELD("gold_beam", c.gold_beam),
      HS_FIELD("rt_seed", c.rt_seed),
      HS_FIELD("rt.subjects", c.rt.subjects),
      HS_FIELD("rt.sentences_per_article", c.rt.sentences_per_article),
      HS_FIELD("rt.line_chars", c.rt.line_chars),
      HS_FIELD("rt.lines_per_screen", c.rt.lines_per_screen),
      HS_FIELD("rt.max_segment_words", c.rt.max_segment_words),
      HS_FIELD("rt.skip_rate", c.rt.skip_rate),
      HS_FIELD("rt.intercept", c.rt.intercept),
      HS_FIELD("rt.beta_length", c.rt.beta_length),
      HS_FIELD("rt.beta_prev_length", c.rt.beta_prev_length),
      HS_FIELD("rt.beta_freq", c.rt.beta_freq),
      HS_FIELD("rt.beta_prev_freq", c.rt.beta_prev_freq),
      HS_FIELD("rt.beta_is_first", c.rt.beta_is_first),
      HS_FIELD("rt.beta_is_last", c.rt.beta_is_last),
      HS_FIELD("rt.beta_is_second_last", c.rt.beta_is_second_last),
      HS_FIELD("rt.beta_screen", c.rt.beta_screen),
      HS_FIELD("rt.beta_line", c.rt.beta_line),
      HS_FIELD("rt.beta_segment", c.rt.beta_segment),
      HS_FIELD("rt.gamma", c.rt.gamma),
      HS_FIELD("rt.sd_article", c.rt.sd_article),
      HS_FIELD("rt.sd_subject", c.rt.sd_subject),
      HS_FIELD("rt.sd_noise", c.rt.sd_noise),
      HS_FIELD("models", c.models),
      HS_FIELD("beams", c.beams),
      HS_FIELD("seeds", c.seeds),
      HS_FIELD("dim", c.dim),
      HS_FIELD("layers", c.layers),
      HS_FIELD("lstm_dropout", c.lstm_dropout),
      HS_FIELD("rnng_dropout", c.rnng_dropout),
      HS_FIELD("lstm.epochs", c.lstm_train.epochs),
      HS_FIELD("lstm.batch_size", c.lstm_train.batch_size),
      HS_FIELD("lstm.optimizer", c.lstm_train.optimizer),
      HS_FIELD("lstm.lr", c.lstm_train.lr),
      HS_FIELD("lstm.clip", c.lstm_train.clip),
      HS_FIELD("rnng.epochs", c.rnng_train.epochs),
      HS_FIELD("rnng.batch_size", c.rnng_train.batch_size),
      HS_FIELD("rnng.optimizer", c.rnng_train.optimizer),
      HS_FIELD("rnng.lr", c.rnng_train.lr),
      HS_FIELD("rnng.clip", c.rnng_train.clip),
      HS_FIELD("regress.outlier_sd", c.prepare.outlier_sd),
      HS_FIELD("regress.outlier_on_log", c.prepare.outlier_on_log),
      HS_FIELD("regress.spillover", c.prepare.spillover),
      HS_FIELD("regress.select_baseline", c.select_baseline),
      HS_FIELD("regress.alpha", c.alpha),
      HS_FIELD("threads", c.threads),
  };
  return kFields;
}

#undef HS_FIELD

}  // namespace

std::string_view model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLstm: return "LSTM";
    case ModelKind::kTopDown: return "TD";
    default: return "LC";
  }
}

std::string_view model_stem(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLstm: return "lstm";
    case ModelKind::kTopDown: return "td";
    default: return "lc";
  }
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : {ModelKind::kLstm, ModelKind::kTopDown, ModelKind::kLeftCorner}) {
    if (name == model_name(k) || name == model_stem(k)) return k;
  }
  throw UsageError("unknown model '" + std::string(name) + "' (expected lstm, td or lc)");
}

bool is_rnng(ModelKind kind) { return kind != ModelKind::kLstm; }

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "epochs") {
    // Shorthand for both model families.
    set("lstm.epochs", value);
    set("rnng.epochs", value);
    return;
  }
  for (const Field& f : fields()) {
    if (f.name == key) {
      f.set(*this, value);
      return;
    }
  }
  throw UsageError("unknown configuration key '" + key + "'");
}

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw UsageError("out_dir is empty");
  if (seeds.empty()) throw UsageError("seeds must not be empty");
  if (models.empty()) throw UsageError("models must not be empty");
  for (int b : beams) {
    if (b < 10) throw UsageError("beam sizes must be at least 10, got " + std::to_string(b));
  }
  if (beams.empty()) {
    for (ModelKind k : models) {
      if (is_rnng(k)) throw UsageError("RNNG models need at least one beam size");
    }
  }
  if (gold_beam < 10) throw UsageError("gold_beam must be at least 10");
  if (sentences < 1) throw UsageError("sentences must be positive");
  if (min_words < 1 || max_words < min_words) throw UsageError("bad word-count bounds");
  if (dim < 1 || layers < 1) throw UsageError("dim and layers must be positive");
  if (threads < 1) throw UsageError("threads must be positive");
  for (const std::string* p : {&treebank, &grammar, &rt_csv, &segments_csv, &frequency_tsv}) {
    if (!p->empty() && !fs::exists(*p)) throw UsageError("missing input file " + *p);
  }
  if (!rt_csv.empty() && segments_csv.empty()) {
    throw UsageError("an external rt_csv needs segments_csv");
  }
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::istringstream in{std::string(text)};
  std::string line, section;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (std::size_t h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError("bad section header at line " + std::to_string(n));
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("expected key = value at line " + std::to_string(n));
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      value = value.substr(1, value.size() - 2);
    }
    c.set(section.empty() ? key : section + "." + key, value);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("missing config file " + path);
  return parse_config(read_file(path));
}

// ---- Corpus ----

SubwordSentence encode_sentence(const BpeModel& bpe, const std::vector<std::string>& words) {
  SubwordSentence s;
  for (const std::string& w : words) {
    Encoding e = bpe.encode(w);
    s.word_pieces.push_back(e.ids.size());
    for (int id : e.ids) {
      s.ids.push_back(id);
      s.unk.push_back(id == bpe.unk_id() ? 1 : 0);
    }
    s.has_unk = s.has_unk || e.has_unk;
  }
  return s;
}

Tree subword_tree(const Tree& tree, const BpeModel& bpe) {
  Tree out;
  out.label = tree.label;
  for (const Tree& c : tree.children) {
    if (c.is_terminal()) {
      for (int id : bpe.encode(c.label).ids) out.children.push_back(Tree::leaf(std::to_string(id)));
    } else {
      out.children.push_back(subword_tree(c, bpe));
    }
  }
  return out;
}

SymbolTable subword_terminals(const BpeModel& bpe) {
  SymbolTable t;
  for (std::size_t i = 0; i < bpe.size(); ++i) t.intern(std::to_string(i));
  return t;
}

namespace {

void collect_labels_rec(const Tree& t, SymbolTable& out) {
  if (t.is_terminal()) return;
  out.intern(t.label);
  for (const Tree& c : t.children) collect_labels_rec(c, out);
}

std::vector<Tree> plain(const std::vector<SourcedTree>& v) {
  std::vector<Tree> out;
  out.reserve(v.size());
  for (const SourcedTree& s : v) out.push_back(s.tree);
  return out;
}

std::string treebank_text(const std::vector<Tree>& trees) {
  std::string out;
  for (const Tree& t : trees) out += to_bracketed(t) + "\n";
  return out;
}

std::vector<std::vector<std::string>> yields(const std::vector<Tree>& trees) {
  std::vector<std::vector<std::string>> out;
  for (const Tree& t : trees) out.push_back(yield_terminals(t));
  return out;
}

}  // namespace

SymbolTable collect_labels(const std::vector<Tree>& trees) {
  SymbolTable t;
  for (const Tree& tree : trees) collect_labels_rec(tree, t);
  return t;
}

std::vector<SourcedTree> synthesize_treebank(const Pcfg& grammar, int n, std::uint64_t seed,
                                             int min_words, int max_words) {
  grammar.check_proper();
  Rng rng(seed);
  std::vector<SourcedTree> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back({"synthetic", grammar.sample(rng, min_words, max_words)});
  return out;
}

CorpusFiles preprocess_corpus(const std::vector<SourcedTree>& trees, const std::string& dir,
                              std::uint64_t split_seed, int bpe_vocab) {
  CorpusSplit split = split_corpus(trees, split_seed);
  CorpusFiles c;
  c.train = plain(split.train);
  c.valid = plain(split.validation);
  c.test = plain(split.test);
  if (c.train.empty()) throw EmptyCorpus();
  BpeOptions opt;
  opt.vocab_size = static_cast<std::size_t>(bpe_vocab);
  opt.clamp_to_corpus = true;
  c.bpe = BpeModel::train(yields(c.train), opt);
  // The label inventory is part of the annotation scheme, so it covers every
  // split and the RNNG action space is the same for all of them.
  std::vector<Tree> all = c.train;
  all.insert(all.end(), c.valid.begin(), c.valid.end());
  all.insert(all.end(), c.test.begin(), c.test.end());
  c.labels = collect_labels(all);
  c.freq = word_counts(c.train);

  fs::create_directories(dir);
  write_file(dir + "/train.txt", treebank_text(c.train));
  write_file(dir + "/valid.txt", treebank_text(c.valid));
  write_file(dir + "/test.txt", treebank_text(c.test));
  write_file(dir + "/bpe.model", c.bpe.serialize());
  std::string labels;
  for (const std::string& l : c.labels.symbols()) labels += l + "\n";
  write_file(dir + "/labels.txt", labels);
  std::vector<std::pair<std::string, double>> counts(c.freq.begin(), c.freq.end());
  std::sort(counts.begin(), counts.end());
  std::string freq;
  for (const auto& [w, n] : counts) freq += w + "\t" + fmt(n) + "\n";
  write_file(dir + "/freq.tsv", freq);
  return c;
}

CorpusFiles load_corpus(const std::string& dir) {
  CorpusFiles c;
  c.train = plain(read_treebank(dir + "/train.txt"));
  c.valid = plain(read_treebank(dir + "/valid.txt"));
  c.test = plain(read_treebank(dir + "/test.txt"));
  c.bpe = BpeModel::load(dir + "/bpe.model");
  std::istringstream labels(read_file(dir + "/labels.txt"));
  std::string l;
  while (std::getline(labels, l)) {
    if (!l.empty()) c.labels.intern(l);
  }
  std::istringstream freq(read_file(dir + "/freq.tsv"));
  c.freq = read_frequency_tsv(freq);
  return c;
}

void write_segments_csv(const std::string& path, const std::vector<SimSegment>& segments) {
  std::ostringstream o;
  o << "segment_id,article,sentence,words\n";
  for (const SimSegment& s : segments) {
    std::string words;
    for (const std::string& w : s.words) words += (words.empty() ? "" : " ") + w;
    write_csv_row(o, {s.id, std::to_string(s.article), std::to_string(s.sentence), words});
  }
  write_file(path, o.str());
}

std::vector<SimSegment> read_segments_csv(const std::string& path) {
  CsvTable t = read_csv_file(path);
  const int c_id = t.require("segment_id"), c_a = t.require("article"),
            c_s = t.require("sentence"), c_w = t.require("words");
  std::vector<SimSegment> out;
  for (const auto& r : t.rows) {
    SimSegment s;
    s.id = r[c_id];
    try {
      s.article = std::stoi(r[c_a]);
      s.sentence = std::stoi(r[c_s]);
    } catch (const std::exception&) {
      throw DataError(path + ": bad article/sentence index for segment " + s.id);
    }
    std::istringstream in(r[c_w]);
    std::string w;
    while (in >> w) s.words.push_back(w);
    if (s.words.empty()) throw DataError(path + ": segment " + s.id + " has no words");
    if (!out.empty() && s.sentence < out.back().sentence) {
      throw DataError(path + ": segments must be in sentence order");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<std::string>> segment_sentences_text(
    const std::vector<SimSegment>& segments) {
  std::vector<std::vector<std::string>> out;
  for (const SimSegment& s : segments) {
    if (s.sentence < 0) throw DataError("negative sentence index in segment " + s.id);
    if (out.size() <= static_cast<std::size_t>(s.sentence)) out.resize(s.sentence + 1);
    auto& sent = out[static_cast<std::size_t>(s.sentence)];
    sent.insert(sent.end(), s.words.begin(), s.words.end());
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].empty()) throw DataError("sentence " + std::to_string(i) + " has no segments");
  }
  return out;
}

// ---- Models ----

TrainedModel train_model(const CorpusFiles& corpus, const ModelSpec& spec,
                         const TrainConfig& train, const std::string& path) {
  TrainedModel m;
  m.kind = spec.kind;
  const std::uint64_t init_seed = mix_seed(train.seed, static_cast<std::uint64_t>(spec.kind) + 1);
  TrainResult result;
  std::map<std::string, std::string> meta;
  std::string kind;
  if (spec.kind == ModelKind::kLstm) {
    LstmLmConfig cfg;
    cfg.vocab = static_cast<int>(corpus.bpe.size());
    cfg.dim = spec.dim;
    cfg.layers = spec.layers;
    cfg.dropout = spec.dropout;
    m.lstm.emplace(cfg, init_seed);
    auto ids = [&](const std::vector<Tree>& trees) {
      std::vector<std::vector<int>> out;
      for (const Tree& t : trees) out.push_back(encode_sentence(corpus.bpe, yield_terminals(t)).ids);
      return out;
    };
    result = train_lstm(*m.lstm, ids(corpus.train), ids(corpus.valid), train);
    meta = m.lstm->meta();
    kind = "lstm";
  } else {
    RnngConfig cfg;
    cfg.strategy = spec.kind == ModelKind::kTopDown ? Strategy::kTopDown : Strategy::kLeftCorner;
    cfg.vocab = static_cast<int>(corpus.bpe.size());
    cfg.n_labels = static_cast<int>(corpus.labels.size());
    cfg.dim = spec.dim;
    cfg.layers = spec.layers;
    cfg.dropout = spec.dropout;
    m.rnng.emplace(cfg, init_seed);
    const SymbolTable terms = subword_terminals(corpus.bpe);
    auto seqs = [&](const std::vector<Tree>& trees) {
      std::vector<ActionSequence> out;
      for (const Tree& t : trees) {
        out.push_back(tree_to_actions_fixed(subword_tree(t, corpus.bpe), cfg.strategy,
                                            corpus.labels, terms));
      }
      return out;
    };
    result = train_rnng(*m.rnng, seqs(corpus.train), seqs(corpus.valid), train);
    meta = m.rnng->meta();
    kind = "rnng";
  }
  meta["train_seed"] = std::to_string(train.seed);
  meta["best_epoch"] = std::to_string(result.best_epoch);
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_loss_curve(path + ".curve.csv", result);
  save_checkpoint(path + ".tmp", kind, meta, m.kind == ModelKind::kLstm
                                                 ? m.lstm->params()
                                                 : m.rnng->params());
  fs::rename(path + ".tmp", path);
  return m;
}

TrainedModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  TrainedModel m;
  if (ck.kind == "lstm") {
    m.kind = ModelKind::kLstm;
    m.lstm.emplace(LstmLm::config_from_meta(ck.meta), 0);
    restore_parameters(ck, m.lstm->params());
  } else if (ck.kind == "rnng") {
    RnngConfig cfg = Rnng::config_from_meta(ck.meta);
    m.kind = cfg.strategy == Strategy::kTopDown ? ModelKind::kTopDown : ModelKind::kLeftCorner;
    m.rnng.emplace(cfg, 0);
    restore_parameters(ck, m.rnng->params());
  } else {
    throw DataError(path + ": unknown checkpoint kind '" + ck.kind + "'");
  }
  return m;
}

// ---- Surprisal ----

SurprisalRun compute_surprisals(const TrainedModel& model, const CorpusFiles& corpus,
                                const std::vector<std::vector<std::string>>& sentences,
                                int beam, int threads) {
  SurprisalRun run;
  std::vector<std::vector<int>> ids;
  for (const auto& s : sentences) {
    run.sentences.push_back(encode_sentence(corpus.bpe, s));
    ids.push_back(run.sentences.back().ids);
  }
  if (model.kind == ModelKind::kLstm) {
    for (const auto& v : ids) {
      SentenceSurprisal r;
      r.ok = true;
      r.surprisals = lstm_surprisals(*model.lstm, v);
      double prefix = 0.0;
      for (double x : r.surprisals) r.beam_mass.push_back(prefix -= x);
      run.results.push_back(std::move(r));
    }
    run.perplexity = lstm_perplexity(*model.lstm, ids);
  } else {
    const SymbolTable terms = subword_terminals(corpus.bpe);
    run.results = rnng_surprisals(*model.rnng, ids, BeamConfig::from_action_beam(beam), threads,
                                  &run.stats, &corpus.labels, &terms);
    run.perplexity = rnng_perplexity(run.results, ids);
  }
  return run;
}

void write_subword_surprisals(const std::string& path, const SurprisalRun& run) {
  std::ostringstream o;
  o << "sentence_id,word_index,subword_id,surprisal_nats,beam_mass\n";
  for (std::size_t s = 0; s < run.sentences.size(); ++s) {
    const SubwordSentence& sent = run.sentences[s];
    const SentenceSurprisal& r = run.results[s];
    std::size_t pos = 0;
    for (std::size_t w = 0; w < sent.word_pieces.size(); ++w) {
      for (std::size_t k = 0; k < sent.word_pieces[w]; ++k, ++pos) {
        o << s << ',' << w << ',' << sent.ids[pos] << ',';
        if (r.ok) {
          o << fmt(r.surprisals[pos]) << ',' << fmt(r.beam_mass[pos]) << '\n';
        } else {
          o << "nan,nan\n";
        }
      }
    }
  }
  write_file(path, o.str());
}

std::vector<SurprisalRow> segment_surprisals(const SurprisalRun& run,
                                             const std::vector<SimSegment>& segments) {
  std::vector<SurprisalRow> rows;
  std::vector<std::size_t> word_pos(run.sentences.size(), 0), sub_pos(run.sentences.size(), 0);
  for (const SimSegment& seg : segments) {
    const std::size_t s = static_cast<std::size_t>(seg.sentence);
    if (s >= run.sentences.size()) throw DataError("segment " + seg.id + " beyond the text");
    const SubwordSentence& sent = run.sentences[s];
    const SentenceSurprisal& res = run.results[s];
    SurprisalRow row;
    row.segment_id = seg.id;
    for (const std::string& w : seg.words) row.phrase += (row.phrase.empty() ? "" : " ") + w;
    for (std::size_t k = 0; k < seg.words.size(); ++k) {
      if (word_pos[s] >= sent.word_pieces.size()) throw SegmentationMismatch(word_pos[s], k);
      const std::size_t n = sent.word_pieces[word_pos[s]++];
      for (std::size_t j = 0; j < n; ++j, ++sub_pos[s]) {
        const double x = res.ok ? res.surprisals[sub_pos[s]] : 0.0;
        row.surprisal += x;
        row.subword_surprisals.push_back(x);
        if (sent.unk[sub_pos[s]]) row.unk = true;
      }
    }
    if (!res.ok) row.unk = true;
    rows.push_back(std::move(row));
  }
  return rows;
}

F1Report parse_f1(const SurprisalRun& run, const std::vector<Tree>& gold, const BpeModel& bpe,
                  const SymbolTable& labels) {
  (void)labels;
  if (gold.size() != run.results.size()) {
    throw DataError("parse count " + std::to_string(run.results.size()) + " != gold count " +
                    std::to_string(gold.size()));
  }
  F1Report total;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const Tree g = subword_tree(gold[i], bpe);
    if (!run.results[i].ok) {
      total += F1Report{0, labeled_spans(g).size(), 0};
      continue;
    }
    total += labeled_f1(g, run.results[i].best_tree);
  }
  return total;
}

// ---- Experiment ----

namespace {

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t t = std::min<std::size_t>(std::max(1, threads), n);
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < t; ++k) {
    pool.emplace_back([&, k] {
      for (std::size_t i = k; i < n; i += t) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct Cell {
  ModelKind kind;
  std::uint64_t seed;
  int beam;  // 0 for the LSTM

  std::string stem() const {
    std::string s = std::string(model_stem(kind)) + "-s" + std::to_string(seed);
    if (beam > 0) s += "-b" + std::to_string(beam);
    return s;
  }
  std::string column() const {
    std::string s = std::string(model_name(kind)) + "-s" + std::to_string(seed);
    if (beam > 0) s += "-b" + std::to_string(beam);
    return s;
  }
  std::string model_file() const {
    return "models/" + std::string(model_stem(kind)) + "-s" + std::to_string(seed) + ".ckpt";
  }
};

ModelSpec spec_for(const ExperimentConfig& c, ModelKind kind) {
  return {kind, c.dim, c.layers, kind == ModelKind::kLstm ? c.lstm_dropout : c.rnng_dropout};
}

TrainConfig train_for(const ExperimentConfig& c, ModelKind kind, std::uint64_t seed) {
  TrainConfig t = kind == ModelKind::kLstm ? c.lstm_train : c.rnng_train;
  t.seed = seed;
  t.verbose = false;
  return t;
}

std::string table_text(const std::vector<SurprisalRow>& rows) {
  std::ostringstream o;
  write_surprisal_table(o, rows);
  return o.str();
}

json cell_json(const CellResult& c) {
  return {{"model", std::string(model_name(c.kind))},
          {"seed", c.seed},
          {"beam", c.beam},
          {"rt_perplexity", c.rt_perplexity},
          {"test_perplexity", c.test_perplexity},
          {"f1", c.f1},
          {"relative_counts", c.relative_counts},
          {"delta_deviance", c.delta_deviance},
          {"surprisal_table", c.surprisal_table}};
}

CellResult cell_from_json(const json& j) {
  CellResult c;
  c.kind = parse_model_kind(j.at("model").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.beam = j.at("beam").get<int>();
  c.rt_perplexity = j.at("rt_perplexity").get<double>();
  c.test_perplexity = j.at("test_perplexity").get<double>();
  c.f1 = j.at("f1").get<double>();
  c.relative_counts = j.at("relative_counts").get<std::vector<double>>();
  c.delta_deviance = j.at("delta_deviance").get<double>();
  c.surprisal_table = j.at("surprisal_table").get<std::string>();
  return c;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void synthesize_reading_times(const std::vector<SimSegment>& segments, const FrequencyTable& freq,
                              const std::vector<SurprisalRow>& gold, const RtSimConfig& config,
                              std::uint64_t seed, const std::string& path) {
  std::map<std::string, double> s;
  for (const SurprisalRow& r : gold) s[r.segment_id] = r.surprisal;
  Rng rng(seed);
  std::vector<RtRow> rows = simulate_reading_times(segments, freq, s, config, rng);
  std::ostringstream o;
  write_rt_csv(o, rows);
  write_file(path, o.str());
}

std::map<std::string, SurprisalColumn> load_surprisal_tables(
    const std::map<std::string, std::string>& paths) {
  std::map<std::string, SurprisalColumn> out;
  for (const auto& [name, path] : paths) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read surprisal table " + path);
    out[name] = read_surprisal_column(in);
  }
  return out;
}

void write_results(const std::string& path, const ExperimentResult& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["baseline"] = r.baseline;
  json best = json::object();
  for (const auto& [k, b] : r.best_beam) best[std::string(model_name(k))] = b;
  j["best_beam"] = best;
  json cells = json::array();
  for (const CellResult& c : r.cells) cells.push_back(cell_json(c));
  j["cells"] = cells;
  json comps = json::object();
  for (const auto& [seed, m] : r.comparisons) {
    json rows = json::array();
    for (const ComparisonRow& row : m.rows) {
      rows.push_back({{"name", row.name},
                      {"smaller", row.smaller},
                      {"larger", row.larger},
                      {"chi2", row.chi2},
                      {"df", row.df},
                      {"p", row.p},
                      {"significant", row.significant},
                      {"clamped", row.clamped}});
    }
    comps[std::to_string(seed)] = rows;
  }
  j["comparisons"] = comps;
  write_file(path, j.dump(2) + "\n");
}

ExperimentResult read_results(const std::string& path) {
  check_schema(path);
  ExperimentResult r;
  try {
    const json j = json::parse(read_file(path));
    r.baseline = j.at("baseline").get<std::vector<std::string>>();
    for (const auto& [k, v] : j.at("best_beam").items()) r.best_beam[parse_model_kind(k)] = v.get<int>();
    for (const json& c : j.at("cells")) r.cells.push_back(cell_from_json(c));
    for (const auto& [seed, rows] : j.at("comparisons").items()) {
      ComparisonMatrix m;
      for (const json& row : rows) {
        ComparisonRow cr;
        cr.name = row.at("name").get<std::string>();
        cr.smaller = row.at("smaller").get<std::string>();
        cr.larger = row.at("larger").get<std::string>();
        cr.chi2 = row.at("chi2").get<double>();
        cr.df = row.at("df").get<int>();
        cr.p = row.at("p").get<double>();
        cr.significant = row.at("significant").get<bool>();
        cr.clamped = row.at("clamped").get<bool>();
        m.rows.push_back(cr);
      }
      r.comparisons[std::stoull(seed)] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return r;
}

void write_beam_stats(const std::string& path, const std::vector<CellResult>& cells) {
  const std::vector<double> thresholds = RelativeBeamStats().thresholds();
  std::map<std::pair<ModelKind, int>, std::vector<std::vector<double>>> grid;
  for (const CellResult& c : cells) {
    if (!is_rnng(c.kind)) continue;
    auto& v = grid[{c.kind, c.beam}];
    v.resize(thresholds.size());
    for (std::size_t t = 0; t < thresholds.size() && t < c.relative_counts.size(); ++t) {
      v[t].push_back(c.relative_counts[t]);
    }
  }
  std::ostringstream o;
  o << "model,action_beam,word_beam,threshold,mean,sd,seeds\n";
  for (const auto& [key, per_t] : grid) {
    for (std::size_t t = 0; t < per_t.size(); ++t) {
      write_csv_row(o, {std::string(model_name(key.first)), std::to_string(key.second),
                        std::to_string(std::max(1, key.second / 10)), fmt(thresholds[t]),
                        fmt(mean(per_t[t])), fmt(sd(per_t[t])), std::to_string(per_t[t].size())});
    }
  }
  write_file(path, o.str());
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Logger& logger) {
  config.validate();
  std::mutex log_mu;
  auto log = [&](const std::string& m) {
    if (!logger) return;
    std::lock_guard<std::mutex> lock(log_mu);
    logger(m);
  };
  const std::string out = config.out_dir;
  auto at = [&](const std::string& rel) { return out + "/" + rel; };
  fs::create_directories(out);
  write_file(at("config.txt"), config.to_text());

  // Stage 1: corpus.
  CorpusFiles corpus;
  if (fs::exists(at("corpus/freq.tsv"))) {
    log("corpus: reusing " + at("corpus"));
    corpus = load_corpus(at("corpus"));
  } else {
    std::vector<SourcedTree> trees;
    if (!config.treebank.empty()) {
      for (const SourcedTree& t : read_treebank(config.treebank)) {
        trees.push_back({t.source, normalize(t.tree)});
      }
    } else {
      const Pcfg g = (config.grammar.empty() ? Pcfg::parse(default_grammar_text())
                                             : Pcfg::parse(read_file(config.grammar)))
                         .with_left_bias(config.left_bias);
      trees = synthesize_treebank(g, config.sentences, config.corpus_seed, config.min_words,
                                  config.max_words);
    }
    fs::create_directories(at("corpus"));
    write_treebank(at("corpus/treebank.txt"), trees);
    corpus = preprocess_corpus(trees, at("corpus"), config.split_seed, config.bpe_vocab);
    log("corpus: " + std::to_string(corpus.train.size()) + "/" +
        std::to_string(corpus.valid.size()) + "/" + std::to_string(corpus.test.size()) +
        " sentences, " + std::to_string(corpus.bpe.size()) + " subwords, " +
        std::to_string(corpus.labels.size()) + " labels");
  }

  // Stage 2: reading-time data.
  std::vector<SimSegment> segments;
  std::string rt_path = config.rt_csv;
  FrequencyTable freq = corpus.freq;
  if (!config.frequency_tsv.empty()) {
    std::istringstream in(read_file(config.frequency_tsv));
    freq = read_frequency_tsv(in);
  }
  if (!config.rt_csv.empty()) {
    segments = read_segments_csv(config.segments_csv);
  } else {
    rt_path = at("rt/rt.csv");
    if (fs::exists(rt_path)) {
      segments = read_segments_csv(at("rt/segments.csv"));
      log("reading times: reusing " + rt_path);
    } else {
      Rng seg_rng(config.rt_seed);
      segments = segment_sentences(yields(corpus.test), config.rt, seg_rng);
      write_segments_csv(at("rt/segments.csv"), segments);
      const std::string gold_path = at("models/gold-lc.ckpt");
      TrainedModel gold =
          fs::exists(gold_path)
              ? load_model(gold_path)
              : train_model(corpus, spec_for(config, ModelKind::kLeftCorner),
                            train_for(config, ModelKind::kLeftCorner, config.gold_seed), gold_path);
      log("reading times: gold LC-RNNG ready");
      SurprisalRun g = compute_surprisals(gold, corpus, segment_sentences_text(segments),
                                          config.gold_beam, config.threads);
      const std::vector<SurprisalRow> gold_rows = segment_surprisals(g, segments);
      write_file(at("rt/gold.csv"), table_text(gold_rows));
      synthesize_reading_times(segments, freq, gold_rows, config.rt,
                               mix_seed(config.rt_seed, 2), rt_path);
      log("reading times: gold perplexity " + fmt(g.perplexity.perplexity) + ", wrote " + rt_path);
    }
  }
  const std::vector<std::vector<std::string>> rt_text = segment_sentences_text(segments);
  const bool rt_is_test = rt_text == yields(corpus.test);

  // Stage 3: training, one cell per (model, seed).
  std::vector<Cell> train_cells;
  for (std::uint64_t seed : config.seeds) {
    for (ModelKind k : config.models) train_cells.push_back({k, seed, 0});
  }
  parallel_for(train_cells.size(), config.threads, [&](std::size_t i) {
    const Cell& c = train_cells[i];
    if (fs::exists(at(c.model_file()))) return;
    train_model(corpus, spec_for(config, c.kind), train_for(config, c.kind, c.seed),
                at(c.model_file()));
    log("train: " + c.model_file());
  });

  // Stage 4: surprisals, perplexity, parsing and beam statistics.
  std::vector<Cell> cells;
  for (std::uint64_t seed : config.seeds) {
    for (ModelKind k : config.models) {
      if (!is_rnng(k)) {
        cells.push_back({k, seed, 0});
        continue;
      }
      for (int b : config.beams) cells.push_back({k, seed, b});
    }
  }
  std::vector<CellResult> results(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    const std::string stem = at("surprisal/" + c.stem());
    CellResult& r = results[i];
    r.kind = c.kind;
    r.seed = c.seed;
    r.beam = c.beam;
    r.surprisal_table = "surprisal/" + c.stem() + ".segments.csv";
    if (fs::exists(stem + ".json")) {
      check_schema(stem + ".json");
      const json j = json::parse(read_file(stem + ".json"));
      r.rt_perplexity = j.at("rt_perplexity").get<double>();
      r.test_perplexity = j.at("test_perplexity").get<double>();
      r.f1 = j.at("f1").get<double>();
      r.relative_counts = j.at("relative_counts").get<std::vector<double>>();
      continue;
    }
    const TrainedModel model = load_model(at(c.model_file()));
    SurprisalRun rt = compute_surprisals(model, corpus, rt_text, c.beam, config.threads);
    write_subword_surprisals(stem + ".csv", rt);
    write_file(stem + ".segments.csv", table_text(segment_surprisals(rt, segments)));
    r.rt_perplexity = rt.perplexity.perplexity;
    SurprisalRun test_run;
    const SurprisalRun* test = &rt;
    if (!rt_is_test) {
      test_run = compute_surprisals(model, corpus, yields(corpus.test), c.beam, config.threads);
      test = &test_run;
    }
    r.test_perplexity = test->perplexity.perplexity;
    json j;
    j["schema_version"] = kSchemaVersion;
    j["model"] = std::string(model_name(c.kind));
    j["seed"] = c.seed;
    j["beam"] = c.beam;
    j["rt_perplexity"] = r.rt_perplexity;
    j["rt_excluded_sentences"] = rt.perplexity.excluded_sentences;
    j["test_perplexity"] = r.test_perplexity;
    if (is_rnng(c.kind)) {
      const F1Report f1 = parse_f1(*test, corpus.test, corpus.bpe, corpus.labels);
      r.f1 = f1.f1();
      for (std::size_t t = 0; t < test->stats.thresholds().size(); ++t) {
        r.relative_counts.push_back(rt.stats.mean(t));
      }
      std::string trees;
      for (const SentenceSurprisal& s : test->results) {
        trees += s.ok ? to_bracketed(s.best_tree) + "\n" : "(FAILED)\n";
      }
      write_file(stem + ".trees.txt", trees);
      j["f1"] = r.f1;
      j["precision"] = f1.precision();
      j["recall"] = f1.recall();
      j["thresholds"] = rt.stats.thresholds();
    } else {
      j["f1"] = 0.0;
    }
    j["relative_counts"] = r.relative_counts;
    write_file(stem + ".json", j.dump(2) + "\n");
    log("surprisal: " + c.stem() + " perplexity " + fmt(r.rt_perplexity) +
        (is_rnng(c.kind) ? " F1 " + fmt(r.f1) : ""));
  }

  // Stage 5: regression.
  std::vector<RtRow> rows;
  {
    std::ifstream in(rt_path);
    if (!in) throw DataError("cannot read " + rt_path);
    rows = read_rt_csv(in);
    const CsvTable header = read_csv_file(rt_path);
    if (header.column("freq") < 0 || header.column("prev_freq") < 0) fill_frequencies(rows, freq);
  }
  std::map<std::string, std::string> table_paths;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    table_paths[cells[i].column()] = at(results[i].surprisal_table);
  }
  const Dataset data = prepare(rows, load_surprisal_tables(table_paths), config.prepare);
  log("regress: " + std::to_string(data.rows()) + " of " + std::to_string(data.counts.total) +
      " rows kept");
  ExperimentResult result;
  result.baseline = baseline_predictors();
  if (config.select_baseline) {
    result.baseline = baseline_predictor_selection(data, baseline_predictors()).retained;
  }
  const FitOptions fit_opt;
  const MixedModelFit base = fit_lmm(data, result.baseline, fit_opt);
  parallel_for(cells.size(), config.threads, [&](std::size_t i) {
    std::vector<std::string> preds = result.baseline;
    preds.push_back(cells[i].column());
    results[i].delta_deviance = delta_deviance(base, fit_lmm(data, preds, fit_opt)).value;
  });
  result.cells = results;
  // Best beam per RNNG: highest seed-averaged delta deviance (first on ties).
  for (ModelKind k : config.models) {
    if (!is_rnng(k)) continue;
    double best = -INFINITY;
    for (int b : config.beams) {
      std::vector<double> v;
      for (const CellResult& r : results) {
        if (r.kind == k && r.beam == b) v.push_back(r.delta_deviance);
      }
      if (mean(v) > best) {
        best = mean(v);
        result.best_beam[k] = b;
      }
    }
  }
  for (std::uint64_t seed : config.seeds) {
    Dataset d = data;
    std::vector<std::string> names;
    for (ModelKind k : config.models) {
      const Cell c{k, seed, is_rnng(k) ? result.best_beam.at(k) : 0};
      const int col = d.column(c.column());
      d.names[static_cast<std::size_t>(col)] = std::string(model_name(k));
      names.push_back(std::string(model_name(k)));
    }
    ComparisonMatrix m = comparison_matrix(d, result.baseline, names, fit_opt, config.alpha,
                                           config.threads);
    const std::string dir = at("regress/seed" + std::to_string(seed));
    std::ostringstream csv;
    write_comparison_csv(csv, m);
    write_file(dir + "/comparison.csv", csv.str());
    json fits = json::object();
    fits["schema_version"] = kSchemaVersion;
    for (const auto& [name, fit] : m.fits) fits[name] = json::parse(fit_report_json(fit));
    write_file(dir + "/fits.json", fits.dump(2) + "\n");
    result.comparisons[seed] = std::move(m);
  }
  write_results(at("regress/results.json"), result);
  log("regress: wrote " + at("regress/results.json"));

  write_report(out);
  log("report: wrote " + at("report"));
  return result;
}

void write_report(const std::string& out_dir) {
  const ExperimentResult r = read_results(out_dir + "/regress/results.json");
  const std::string dir = out_dir + "/report";
  fs::create_directories(dir);

  // Seed-averaged summaries per (model, beam).
  struct Agg {
    std::vector<double> dd, rt_ppl, test_ppl, f1;
  };
  std::map<std::pair<ModelKind, int>, Agg> agg;
  for (const CellResult& c : r.cells) {
    Agg& a = agg[{c.kind, c.beam}];
    a.dd.push_back(c.delta_deviance);
    a.rt_ppl.push_back(c.rt_perplexity);
    a.test_ppl.push_back(c.test_perplexity);
    a.f1.push_back(c.f1);
  }
  json summary = json::array();
  std::vector<PlotPoint> ppl_points, f1_points;
  for (const auto& [key, a] : agg) {
    const std::string name(model_name(key.first));
    summary.push_back({{"model", name},
                       {"beam", key.second},
                       {"seeds", a.dd.size()},
                       {"delta_deviance_mean", mean(a.dd)},
                       {"delta_deviance_sd", sd(a.dd)},
                       {"rt_perplexity_mean", mean(a.rt_ppl)},
                       {"rt_perplexity_sd", sd(a.rt_ppl)},
                       {"test_perplexity_mean", mean(a.test_ppl)},
                       {"test_perplexity_sd", sd(a.test_ppl)},
                       {"f1_mean", mean(a.f1)},
                       {"f1_sd", sd(a.f1)}});
    const std::string label = key.second > 0 ? "k=" + std::to_string(key.second) : "";
    ppl_points.push_back({name, label, mean(a.rt_ppl), sd(a.rt_ppl), mean(a.dd), sd(a.dd)});
    if (is_rnng(key.first)) {
      f1_points.push_back({name, label, mean(a.f1), sd(a.f1), mean(a.dd), sd(a.dd)});
    }
  }
  write_scatter(dir + "/ppl_vs_delta_deviance", ppl_points,
                {"Psychometric predictive power vs perplexity", "Perplexity (reading-time corpus)",
                 "Delta deviance", 640, 480});
  write_scatter(dir + "/f1_vs_delta_deviance", f1_points,
                {"Psychometric predictive power vs parsing accuracy", "Labeled bracketing F1",
                 "Delta deviance", 640, 480});

  // One row per comparison, one chi-square/p group per seed.
  std::ostringstream t1;
  std::vector<std::string> header = {"comparison"};
  for (const auto& [seed, m] : r.comparisons) {
    for (const char* f : {"chi2", "df", "p", "significant"}) {
      header.push_back(std::string(f) + "_s" + std::to_string(seed));
    }
  }
  write_csv_row(t1, header);
  if (!r.comparisons.empty()) {
    const ComparisonMatrix& first = r.comparisons.begin()->second;
    for (std::size_t i = 0; i < first.rows.size(); ++i) {
      std::vector<std::string> row = {first.rows[i].name};
      for (const auto& [seed, m] : r.comparisons) {
        const ComparisonRow& cr = m.row(first.rows[i].name);
        row.insert(row.end(), {fmt(cr.chi2), std::to_string(cr.df), fmt(cr.p),
                               cr.significant ? "1" : "0"});
      }
      write_csv_row(t1, row);
    }
  }
  write_file(dir + "/table1.csv", t1.str());
  write_beam_stats(dir + "/beam_stats.csv", r.cells);

  json j;
  j["schema_version"] = kSchemaVersion;
  j["baseline"] = r.baseline;
  json best = json::object();
  for (const auto& [k, b] : r.best_beam) best[std::string(model_name(k))] = b;
  j["best_beam"] = best;
  j["summary"] = summary;
  j["comparisons"] = json::parse(read_file(out_dir + "/regress/results.json"))["comparisons"];
  j["files"] = {"table1.csv", "beam_stats.csv", "ppl_vs_delta_deviance.svg",
                "ppl_vs_delta_deviance.csv", "f1_vs_delta_deviance.svg",
                "f1_vs_delta_deviance.csv"};
  write_file(dir + "/report.json", j.dump(2) + "\n");
}

}  // namespace hiersurp
