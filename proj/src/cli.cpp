#include "kvmt/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "kvmt/ann.hpp"
#include "kvmt/datastore.hpp"
#include "kvmt/decode.hpp"
#include "kvmt/gradcheck.hpp"
#include "kvmt/metrics.hpp"
#include "kvmt/model.hpp"
#include "kvmt/task.hpp"
#include "kvmt/trainer.hpp"

namespace kvmt {

namespace {

const std::string kOraclePrefix = "oracle:";

/// Errors in flag combinations that CLI11 cannot express; reported as usage errors.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
  } else {
    auto out = open_out(path);
    out << text;
  }
}

bool is_index_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string(magic, 4) == "KVDI";
}

/// A raw datastore or an index behind one Searcher. Heap-held so the searcher's
/// reference survives moves of the struct.
struct LoadedStore {
  std::unique_ptr<RawDatastore> raw;
  std::unique_ptr<IvfPqIndex> index;
  std::unique_ptr<Searcher> searcher;
};

LoadedStore load_store(const std::string& path, Metric metric, std::size_t nprobe, bool rerank) {
  LoadedStore s;
  if (is_index_file(path)) {
    s.index = std::make_unique<IvfPqIndex>(read_index(path));
    SearchParams p;
    p.nprobe = nprobe;
    p.rerank = rerank;
    if (nprobe > s.index->nlist()) throw UsageError("--nprobe exceeds the index nlist");
    s.searcher = std::make_unique<IndexSearcher>(*s.index, p);
  } else {
    s.raw = std::make_unique<RawDatastore>(read_raw(path));
    if (s.raw->size() == 0) throw std::runtime_error("datastore is empty: " + path);
    s.searcher = std::make_unique<ExactSearcher>(*s.raw, metric);
  }
  return s;
}

struct OracleSpec {
  double epsilon = -1;
  std::size_t dim = 32;
};

RawDatastore oracle_for_task(const SyntheticTask& task, const OracleSpec& spec, std::uint64_t seed) {
  if (spec.epsilon < 0) throw UsageError("oracle datastores need --epsilon");
  return generate_oracle_datastore(targets_with_eos(task.train), spec.dim, spec.epsilon, seed);
}

/// "<path>" reads KVDS-RAW, "oracle:<task_dir>" generates from the task's training targets.
RawDatastore load_datastore_input(const std::string& input, const OracleSpec& oracle, std::uint64_t seed) {
  if (input.rfind(kOraclePrefix, 0) == 0)
    return oracle_for_task(load_task(input.substr(kOraclePrefix.size())), oracle, seed);
  return read_raw(input);
}

std::string tsv_line(std::initializer_list<std::string> cells) {
  std::string s;
  for (const auto& c : cells) {
    if (!s.empty()) s += '\t';
    s += c;
  }
  return s + '\n';
}

std::vector<std::vector<float>> keys_of(const RawDatastore& ds) {
  std::vector<std::vector<float>> out;
  out.reserve(ds.size());
  for (EntryId i = 0; i < ds.size(); ++i) {
    const auto k = ds.key(i);
    out.emplace_back(k.begin(), k.end());
  }
  return out;
}

// ---- build-datastore -------------------------------------------------------

struct BuildArgs {
  std::string input, out, raw_out, metric = "l2";
  OracleSpec oracle;
  std::size_t pca_dim = 0, nlist = 0, pq_m = 0;
  bool flat = false, drop_raw = false;
  std::uint64_t seed = 0;
};

void run_build(const BuildArgs& a) {
  const RawDatastore ds = load_datastore_input(a.input, a.oracle, a.seed);
  if (!a.raw_out.empty()) write_raw(ds, a.raw_out);
  if (a.out.empty()) return;
  IndexConfig cfg;
  cfg.use_pca = a.pca_dim > 0;
  cfg.pca_dim = a.pca_dim;
  cfg.nlist = a.nlist;
  cfg.pq_m = a.flat ? 0 : a.pq_m;
  cfg.metric = parse_metric(a.metric);
  cfg.keep_raw_keys = !a.drop_raw;
  write_index(train_index(ds, cfg, a.seed), a.out);
}

// ---- eval-consistency ------------------------------------------------------

struct ConsistencyArgs {
  std::string index, raw, queries, report, metric = "cosine";
  std::size_t k = 8, nprobe = 0, sample_cap = 0;
  bool include_self = false;
  std::uint64_t seed = 0;
};

void run_consistency(const ConsistencyArgs& a) {
  const Metric metric = parse_metric(a.metric);
  std::optional<IvfPqIndex> index;
  std::optional<RawDatastore> ds;
  std::unique_ptr<Searcher> searcher;
  if (!a.index.empty()) {
    index = read_index(a.index);
    ds = index->raw_datastore();
    if (!ds) throw std::runtime_error("index does not retain raw keys; rebuild without --drop-raw-keys");
    if (a.nprobe > index->nlist()) throw UsageError("--nprobe exceeds the index nlist");
    SearchParams p;
    p.nprobe = a.nprobe;
    searcher = std::make_unique<IndexSearcher>(*index, p);
  } else {
    ds = read_raw(a.raw);
    searcher = std::make_unique<ExactSearcher>(*ds, metric);
  }
  MetricReport report;
  report.add("entries", static_cast<double>(ds->size()));
  KvConsistencyOptions opts;
  opts.exclude_self = !a.include_self;
  opts.sample_cap = a.sample_cap;
  opts.seed = a.seed;
  report.add("kv_consistency", kv_consistency(*ds, *searcher, a.k, opts));
  if (!a.queries.empty()) {
    const RawDatastore q = read_raw(a.queries);
    if (q.size() != ds->size()) throw std::runtime_error("query file must hold one query per datastore entry");
    const auto qs = keys_of(q);
    report.add("qk_consistency", qk_consistency(qs, keys_of(*ds)));
    report.add("retrieval_accuracy", retrieval_accuracy(qs, q.values(), *searcher, a.k));
  }
  emit(report.to_tsv(), a.report);
}

// ---- search ----------------------------------------------------------------

struct SearchArgs {
  std::string index, queries, report;
  std::size_t k = 8, nprobe = 0;
  bool rerank = false;
};

void run_search(const SearchArgs& a) {
  const LoadedStore store = load_store(a.index, Metric::kL2, a.nprobe, a.rerank);
  const RawDatastore q = read_raw(a.queries);
  std::string out = tsv_line({"query", "rank", "id", "value", "distance"});
  for (EntryId i = 0; i < q.size(); ++i) {
    const NeighborSet nb = store.searcher->search(q.key(i), a.k);
    for (std::size_t r = 0; r < nb.size(); ++r)
      out += tsv_line({std::to_string(i), std::to_string(r + 1), std::to_string(nb[r].id), std::to_string(nb[r].value),
                       format_value(nb[r].distance)});
  }
  emit(out, a.report);
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string task_dir, datastore, out, report, step_report, align = "nca", mode = "pred";
  double epsilon = -1;
  TrainConfig cfg;
  std::size_t d = 32, d_ff = 64;
};

/// Resolves --datastore / --epsilon into the training store and its positives.
struct TrainStore {
  std::unique_ptr<RawDatastore> ds;  // heap-held: positives may point into it
  std::unique_ptr<PositiveKeys> positives;
};

TrainStore make_train_store(const std::string& datastore, double epsilon, std::size_t dim,
                            const SyntheticTask& task, std::uint64_t seed) {
  TrainStore s;
  if (!datastore.empty() && epsilon >= 0) throw UsageError("--datastore and --epsilon are mutually exclusive");
  if (epsilon >= 0) {
    s.ds = std::make_unique<RawDatastore>(generate_oracle_datastore(targets_with_eos(task.train), dim, epsilon, seed));
    s.positives = std::make_unique<CodebookPositives>(oracle_codebook(task.vocab_size(), dim, seed));
  } else if (!datastore.empty()) {
    s.ds = std::make_unique<RawDatastore>(read_raw(datastore));
    s.positives = std::make_unique<AlignedPositives>(*s.ds, task.train);
  }
  return s;
}

void run_train(TrainArgs a) {
  const SyntheticTask task = load_task(a.task_dir);
  a.cfg.align = parse_align(a.align);
  a.cfg.fusion = parse_decode_mode(a.mode) == DecodeMode::kPredFusion;
  if (parse_decode_mode(a.mode) == DecodeMode::kKnnInterpolate) throw UsageError("--mode must be pred or baseline");
  const TrainStore store = make_train_store(a.datastore, a.epsilon, a.d, task, a.cfg.seed);
  if (a.cfg.uses_retrieval() && !store.ds) throw UsageError("this configuration needs --datastore or --epsilon");

  TrainInputs in;
  in.train = &task.train;
  in.valid = &task.valid;
  in.datastore = store.ds ? &*store.ds : nullptr;
  in.positives = store.positives.get();
  in.model.d = a.d;
  in.model.d_ff = a.d_ff;
  in.model.d_key = store.ds ? store.ds->dim() : a.d;
  in.model.src_vocab = in.model.tgt_vocab = task.vocab_size();

  std::string epochs;
  const TrainResult r = train(in, a.cfg, [&](const EpochReport& e) { epochs += to_json(e) + '\n'; });
  save_checkpoint(r.model, a.out);
  emit(epochs, a.report);
  if (!a.step_report.empty()) {
    std::string steps;
    for (const auto& s : r.steps) steps += to_json(s) + '\n';
    emit(steps, a.step_report);
  }
}

// ---- decode ----------------------------------------------------------------

struct DecodeArgs {
  std::string checkpoint, datastore, input, report, output, mode = "baseline", metric = "l2";
  DecodeConfig cfg;
  std::size_t nprobe = 0, max_len = 32;
};

void run_decode(DecodeArgs a) {
  const ToyModel model = load_checkpoint(a.checkpoint);
  a.cfg.mode = parse_decode_mode(a.mode);
  std::optional<LoadedStore> store;
  if (a.cfg.mode != DecodeMode::kBaseline) {
    if (a.datastore.empty()) throw UsageError("--mode " + a.mode + " needs --datastore");
    store = load_store(a.datastore, parse_metric(a.metric), a.nprobe, false);
  }
  const Searcher* searcher = store ? store->searcher.get() : nullptr;
  const Corpus corpus = read_corpus(a.input);
  const DecodeReport r = evaluate(model, searcher, corpus, a.cfg, a.max_len);
  MetricReport report;
  report.add("sentences", static_cast<double>(r.sentences));
  report.add("token_accuracy", r.token_accuracy);
  report.add("exact_match", r.exact_match);
  emit(report.to_tsv(), a.report);
  if (!a.output.empty()) {
    std::string hyp;
    for (const auto& p : corpus) hyp += format_token_ids(greedy_decode(model, searcher, p.source, a.cfg, a.max_len)) + '\n';
    emit(hyp, a.output);
  }
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
  std::string param, values, task_dir, report, metric = "cosine";
  double epsilon = 0.05;
  TrainConfig cfg;
  std::size_t dim = 32;
};

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw UsageError("invalid value in --values: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--values is empty");
  return out;
}

void run_sweep(const SweepArgs& a) {
  const SyntheticTask task = load_task(a.task_dir);
  const std::vector<double> values = parse_values(a.values);
  const Metric metric = parse_metric(a.metric);
  std::string out = tsv_line({a.param, "kv_consistency", "qk_cos", "retr_acc", "test_acc"});
  for (double v : values) {
    TrainConfig cfg = a.cfg;
    double eps = a.epsilon;
    if (a.param == "k") {
      if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v))) throw UsageError("k values must be positive integers");
      cfg.k = static_cast<std::size_t>(v);
    } else if (a.param == "alpha") {
      cfg.alpha = v;
    } else {
      eps = v;
    }
    const TrainStore store = make_train_store("", eps, a.dim, task, cfg.seed);
    const ExactSearcher consistency_searcher(*store.ds, metric);
    KvConsistencyOptions opts;
    opts.seed = cfg.seed;
    const double kv = kv_consistency(*store.ds, consistency_searcher, cfg.k, opts);

    std::string qk = "NA", retr = "NA", acc = "NA";
    if (cfg.epochs > 0) {
      TrainInputs in;
      in.train = &task.train;
      in.datastore = &*store.ds;
      in.positives = store.positives.get();
      in.model.d_key = a.dim;
      in.model.src_vocab = in.model.tgt_vocab = task.vocab_size();
      const TrainResult r = train(in, cfg);
      const ExactSearcher searcher(*store.ds, Metric::kL2);
      // Test-set queries against the gold tokens and the noiseless codebook keys.
      std::vector<std::vector<float>> queries, keys;
      std::vector<TokenId> gold;
      for (const auto& p : task.test) {
        TokenSeq y = p.target;
        y.push_back(kEos);
        const ForwardResult fwd = forward(r.model, p.source, y);
        for (std::size_t t = 0; t < y.size(); ++t) {
          queries.push_back(to_float(project_query(r.model, fwd.steps[t].q)));
          keys.push_back(to_float(store.positives->positive(0, t, y[t])));
          gold.push_back(y[t]);
        }
      }
      qk = format_value(qk_consistency(queries, keys));
      retr = format_value(retrieval_accuracy(queries, gold, searcher, cfg.k));
      DecodeConfig dc;
      dc.k = cfg.k;
      dc.mode = cfg.fusion ? DecodeMode::kPredFusion : DecodeMode::kBaseline;
      acc = format_value(token_accuracy(r.model, &searcher, task.test, dc));
    }
    char label[32];
    std::snprintf(label, sizeof label, "%g", v);
    out += tsv_line({label, format_value(kv), qk, retr, acc});
  }
  emit(out, a.report);
}

// ---- contrastive-eval ------------------------------------------------------

struct ContrastiveArgs {
  std::string checkpoint, items, datastore, report, scores, mode = "baseline";
  DecodeConfig cfg;
};

void run_contrastive(ContrastiveArgs a) {
  const ToyModel model = load_checkpoint(a.checkpoint);
  a.cfg.mode = parse_decode_mode(a.mode);
  std::optional<LoadedStore> store;
  if (a.cfg.mode != DecodeMode::kBaseline) {
    if (a.datastore.empty()) throw UsageError("--mode " + a.mode + " needs --datastore");
    store = load_store(a.datastore, Metric::kL2, 0, false);
  }
  const Searcher* searcher = store ? store->searcher.get() : nullptr;
  const auto items = read_contrastive_items(a.items);
  std::string rows = tsv_line({"item", "reference_score", "best_variant_score", "passed"});
  const SequenceScorer scorer = [&](const TokenSeq& src, const TokenSeq& cand) {
    return score_sequence(model, searcher, src, cand, a.cfg);
  };
  const ContrastiveResult r = contrastive_eval(scorer, items);
  for (std::size_t i = 0; i < items.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : items[i].contrastive) best = std::max(best, scorer(items[i].source, v));
    rows += tsv_line({std::to_string(i), format_value(scorer(items[i].source, items[i].reference)), format_value(best),
                      r.item_passed[i] ? "1" : "0"});
  }
  MetricReport report;
  report.add("items", static_cast<double>(r.total));
  report.add("contrastive_accuracy", r.accuracy);
  emit(report.to_tsv(), a.report);
  if (!a.scores.empty()) emit(rows, a.scores);
}

// ---- project / gradcheck ---------------------------------------------------

void run_project(const std::string& vectors, const std::string& out) {
  const RawDatastore ds = read_raw(vectors);
  write_projection_tsv(project_2d(keys_of(ds), ds.values()), out);
}

int run_gradcheck(std::uint64_t seed, const std::string& report) {
  std::string out = tsv_line({"check", "max_rel_err", "tolerance", "passed"});
  bool ok = true;
  for (const auto& e : run_gradient_suite(seed)) {
    char err[32], tol[32];
    std::snprintf(err, sizeof err, "%.3e", e.max_rel_err);
    std::snprintf(tol, sizeof tol, "%.0e", e.tolerance);
    out += tsv_line({e.name, err, tol, e.passed() ? "1" : "0"});
    ok = ok && e.passed();
  }
  emit(out, report);
  if (!ok) std::cerr << "kvmt: gradient check failed\n";
  return ok ? 0 : 1;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
  CLI::App app{"kvmt: token-level datastores, IVF-PQ retrieval and retrieval-fused toy translation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  const std::vector<std::string> metrics = {"l2", "cosine"};

  BuildArgs build;
  auto* c_build = app.add_subcommand("build-datastore", "Build an IVF index (and optionally a raw store)");
  c_build->add_option("--input", build.input, "KVDS-RAW file or oracle:<task_dir>")->required();
  c_build->add_option("--epsilon", build.oracle.epsilon, "Oracle key noise");
  c_build->add_option("--dim", build.oracle.dim, "Oracle key dimension")->capture_default_str();
  c_build->add_option("--raw-out", build.raw_out, "Also write the raw datastore here");
  c_build->add_option("--out", build.out, "KVDS-IDX output");
  c_build->add_option("--pca-dim", build.pca_dim, "PCA output dimension, 0 disables PCA")->capture_default_str();
  c_build->add_option("--nlist", build.nlist, "Coarse cells, 0 picks sqrt(N)")->capture_default_str();
  auto* o_pq = c_build->add_option("--pq-m", build.pq_m, "Subquantizers");
  auto* o_flat = c_build->add_flag("--flat", build.flat, "Store uncompressed vectors");
  o_pq->excludes(o_flat);
  c_build->add_option("--metric", build.metric)->check(CLI::IsMember(metrics))->capture_default_str();
  c_build->add_flag("--drop-raw-keys", build.drop_raw, "Do not keep raw keys in the index");
  c_build->add_option("--seed", build.seed)->required();

  ConsistencyArgs cons;
  auto* c_cons = app.add_subcommand("eval-consistency", "K-V consistency, plus Q-K and retrieval accuracy with --queries");
  auto* o_idx = c_cons->add_option("--index", cons.index, "KVDS-IDX with raw keys");
  auto* o_raw = c_cons->add_option("--raw", cons.raw, "KVDS-RAW (exact search)");
  o_idx->excludes(o_raw);
  c_cons->add_option("--k", cons.k)->capture_default_str();
  c_cons->add_option("--metric", cons.metric, "Metric for --raw")->check(CLI::IsMember(metrics))->capture_default_str();
  c_cons->add_option("--nprobe", cons.nprobe, "Cells probed with --index, 0 = nlist/8");
  c_cons->add_option("--queries", cons.queries, "KVDS-RAW of queries, one per entry");
  c_cons->add_option("--sample-cap", cons.sample_cap, "Use a seeded sample of this many entries as queries");
  c_cons->add_option("--seed", cons.seed, "Seed for --sample-cap");
  c_cons->add_flag("--include-self", cons.include_self, "Let an entry count as its own neighbour");
  c_cons->add_option("--report", cons.report, "TSV output (default stdout)");

  SearchArgs search;
  auto* c_search = app.add_subcommand("search", "k-NN search for a file of queries");
  c_search->add_option("--index", search.index, "KVDS-IDX or KVDS-RAW")->required();
  c_search->add_option("--queries", search.queries, "KVDS-RAW of queries")->required();
  c_search->add_option("--k", search.k)->capture_default_str();
  c_search->add_option("--nprobe", search.nprobe, "0 = nlist/8");
  c_search->add_flag("--rerank", search.rerank, "Exact re-scoring on raw keys");
  c_search->add_option("--report", search.report, "TSV output (default stdout)");

  std::uint64_t task_seed = 0;
  std::string task_out;
  auto* c_task = app.add_subcommand("make-task", "Write the synthetic translation task");
  c_task->add_option("--seed", task_seed)->required();
  c_task->add_option("--out-dir", task_out)->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the toy model");
  c_train->add_option("--task-dir", tr.task_dir)->required();
  c_train->add_option("--datastore", tr.datastore, "KVDS-RAW built from the training targets in order");
  c_train->add_option("--epsilon", tr.epsilon, "Generate an oracle datastore with this noise instead");
  c_train->add_option("--mode", tr.mode, "pred or baseline")->check(CLI::IsMember({"pred", "baseline"}))->capture_default_str();
  c_train->add_option("--align", tr.align)->check(CLI::IsMember({"nca", "mse", "none"}))->capture_default_str();
  c_train->add_option("--alpha", tr.cfg.alpha)->capture_default_str();
  c_train->add_option("--tau", tr.cfg.tau)->capture_default_str();
  c_train->add_option("--k", tr.cfg.k)->capture_default_str();
  c_train->add_option("--lr", tr.cfg.lr)->capture_default_str();
  c_train->add_option("--batch-tokens", tr.cfg.batch_tokens)->capture_default_str();
  c_train->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  c_train->add_option("--dim", tr.d, "Model dimension")->capture_default_str();
  c_train->add_option("--d-ff", tr.d_ff)->capture_default_str();
  c_train->add_flag("--normalize-nca", tr.cfg.normalize_nca, "Cosine scores in the NCA loss");
  c_train->add_flag("--keep-best", tr.cfg.keep_best, "Keep the epoch with the best validation accuracy");
  c_train->add_option("--seed", tr.cfg.seed)->required();
  c_train->add_option("--out", tr.out, "Checkpoint output")->required();
  c_train->add_option("--report", tr.report, "Per-epoch JSON lines (default stdout)");
  c_train->add_option("--step-report", tr.step_report, "Per-step JSON lines");

  DecodeArgs dec;
  auto* c_dec = app.add_subcommand("decode", "Decode a corpus and report accuracy");
  c_dec->add_option("--checkpoint", dec.checkpoint)->required();
  c_dec->add_option("--datastore", dec.datastore, "KVDS-RAW or KVDS-IDX");
  c_dec->add_option("--mode", dec.mode)->check(CLI::IsMember({"baseline", "knn", "pred"}))->capture_default_str();
  c_dec->add_option("--k", dec.cfg.k)->capture_default_str();
  c_dec->add_option("--T", dec.cfg.temperature, "kNN temperature")->capture_default_str();
  c_dec->add_option("--lambda", dec.cfg.lambda, "Weight of the model distribution")->capture_default_str();
  c_dec->add_option("--metric", dec.metric, "Metric for a raw datastore")->check(CLI::IsMember(metrics))->capture_default_str();
  c_dec->add_option("--nprobe", dec.nprobe, "0 = nlist/8");
  c_dec->add_option("--max-len", dec.max_len)->capture_default_str();
  c_dec->add_option("--input", dec.input, "Corpus file: source<TAB>target per line")->required();
  c_dec->add_option("--report", dec.report, "TSV output (default stdout)");
  c_dec->add_option("--output", dec.output, "Greedy hypotheses, one per line");

  SweepArgs sw;
  sw.cfg.epochs = 0;
  auto* c_sweep = app.add_subcommand("sweep", "Grid over k, alpha or epsilon on oracle datastores");
  c_sweep->add_option("--param", sw.param)->check(CLI::IsMember({"k", "alpha", "epsilon"}))->required();
  c_sweep->add_option("--values", sw.values, "Comma-separated values")->required();
  c_sweep->add_option("--task-dir", sw.task_dir)->required();
  c_sweep->add_option("--epsilon", sw.epsilon, "Oracle noise when not swept")->capture_default_str();
  c_sweep->add_option("--dim", sw.dim, "Oracle key dimension")->capture_default_str();
  c_sweep->add_option("--metric", sw.metric, "Metric for K-V consistency")->check(CLI::IsMember(metrics))->capture_default_str();
  c_sweep->add_option("--k", sw.cfg.k)->capture_default_str();
  c_sweep->add_option("--alpha", sw.cfg.alpha)->capture_default_str();
  c_sweep->add_option("--tau", sw.cfg.tau)->capture_default_str();
  c_sweep->add_option("--lr", sw.cfg.lr)->capture_default_str();
  c_sweep->add_option("--epochs", sw.cfg.epochs, "Training epochs per point, 0 skips training")->capture_default_str();
  c_sweep->add_option("--seed", sw.cfg.seed)->required();
  c_sweep->add_option("--report", sw.report, "TSV output (default stdout)");

  ContrastiveArgs con;
  auto* c_con = app.add_subcommand("contrastive-eval", "Score references against contrastive variants");
  c_con->add_option("--checkpoint", con.checkpoint)->required();
  c_con->add_option("--items", con.items, "JSON lines {source, reference, contrastive}")->required();
  c_con->add_option("--datastore", con.datastore, "KVDS-RAW or KVDS-IDX");
  c_con->add_option("--mode", con.mode)->check(CLI::IsMember({"baseline", "knn", "pred"}))->capture_default_str();
  c_con->add_option("--k", con.cfg.k)->capture_default_str();
  c_con->add_option("--T", con.cfg.temperature)->capture_default_str();
  c_con->add_option("--lambda", con.cfg.lambda)->capture_default_str();
  c_con->add_option("--report", con.report, "TSV output (default stdout)");
  c_con->add_option("--scores", con.scores, "Per-item scores TSV");

  std::string proj_in, proj_out;
  auto* c_proj = app.add_subcommand("project", "2-D PCA projection of stored keys");
  c_proj->add_option("--vectors", proj_in, "KVDS-RAW")->required();
  c_proj->add_option("--out", proj_out, "TSV x, y, label")->required();

  std::uint64_t gc_seed = 0;
  std::string gc_report;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  c_gc->add_option("--seed", gc_seed)->required();
  c_gc->add_option("--report", gc_report, "TSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (c_build->parsed()) {
      if (build.out.empty() && build.raw_out.empty()) throw UsageError("nothing to write: give --out and/or --raw-out");
      run_build(build);
    } else if (c_cons->parsed()) {
      if (cons.index.empty() == cons.raw.empty()) throw UsageError("give exactly one of --index or --raw");
      if (cons.sample_cap > 0 && c_cons->count("--seed") == 0) throw UsageError("--sample-cap needs --seed");
      run_consistency(cons);
    } else if (c_search->parsed()) {
      run_search(search);
    } else if (c_task->parsed()) {
      save_task(make_task(task_seed), task_out);
    } else if (c_train->parsed()) {
      run_train(tr);
    } else if (c_dec->parsed()) {
      run_decode(dec);
    } else if (c_sweep->parsed()) {
      run_sweep(sw);
    } else if (c_con->parsed()) {
      run_contrastive(con);
    } else if (c_proj->parsed()) {
      run_project(proj_in, proj_out);
    } else if (c_gc->parsed()) {
      return run_gradcheck(gc_seed, gc_report);
    }
  } catch (const UsageError& e) {
    std::cerr << "kvmt: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "kvmt: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace kvmt
