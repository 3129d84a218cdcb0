// sentitree command-line tool.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentitree/aggregate.hpp"
#include "sentitree/error.hpp"
#include "sentitree/gradcheck.hpp"
#include "sentitree/io.hpp"
#include "sentitree/metrics.hpp"
#include "sentitree/neural.hpp"
#include "sentitree/preprocess.hpp"
#include "sentitree/stack.hpp"
#include "sentitree/tasks.hpp"
#include "sentitree/treebank.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sentitree;

namespace {

void require_input(const std::string& path) {
  if (!fs::is_regular_file(path)) fail(Errc::IoError, "input file '" + path + "' does not exist");
}

void require_inputs(const std::vector<std::string>& paths) {
  for (const auto& p : paths) require_input(p);
}

void require_output(const std::string& path) {
  const fs::path parent = fs::absolute(path).parent_path();
  if (!fs::is_directory(parent)) fail(Errc::IoError, "output directory '" + parent.string() + "' does not exist");
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

// Shared options of the training-style subcommands.
struct Common {
  std::optional<std::uint64_t> seed;
  std::string output;
};

void add_seed(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "Random seed (required)")->required();
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string input, output, dict, emoji, lemmas;
  bool sentences = false;
  bool case_sensitive = false;
};

int run_preprocess(const PreprocessArgs& a) {
  require_input(a.input);
  for (const auto* p : {&a.dict, &a.emoji, &a.lemmas})
    if (!p->empty()) require_input(*p);
  require_output(a.output);
  preprocess::Pipeline pipe;
  if (!a.dict.empty()) pipe.dictionary = preprocess::load_dictionary(a.dict, a.case_sensitive);
  if (!a.emoji.empty()) pipe.emojis = preprocess::load_emoji_table(a.emoji);
  if (!a.lemmas.empty()) pipe.lemmas = preprocess::load_lemma_table(a.lemmas);
  std::string out;
  std::size_t lines = 0;
  for (const auto& line : io::read_lines(a.input)) {
    ++lines;
    if (a.sentences) {
      bool first = true;
      for (const auto& s : preprocess::split_sentences(line)) {
        if (!first) out += '\t';
        out += preprocess::join(pipe(s), pipe.lemmas.has_value());
        first = false;
      }
    } else {
      out += preprocess::join(pipe(line), pipe.lemmas.has_value());
    }
    out += '\n';
  }
  io::atomic_write(a.output, out);
  emit({{"command", "preprocess"}, {"lines", lines}, {"output", a.output}});
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainTreeArgs {
  Common c;
  std::string treebank, validation, embeddings;
  int d = 25;
  int epochs = 100;
  std::size_t batch = 4;
  double lr = 0.05;
  double l2 = 0.0;
  std::string supervision = "all";
  std::optional<double> target_accuracy;
};

neural::Supervision parse_supervision(const std::string& s) {
  if (s == "all") return neural::Supervision::AllLabeledNodes;
  if (s == "root") return neural::Supervision::RootOnly;
  fail(Errc::UsageError, "supervision must be 'all' or 'root'");
}

int run_train_tree(const TrainTreeArgs& a) {
  require_input(a.treebank);
  if (!a.validation.empty()) require_input(a.validation);
  if (!a.embeddings.empty()) require_input(a.embeddings);
  require_output(a.c.output);
  if (a.d < 1) fail(Errc::UsageError, "--d must be positive");
  const Treebank bank = load_treebank(a.treebank);
  std::optional<Treebank> val;
  if (!a.validation.empty()) val = load_treebank(a.validation);
  std::optional<std::map<std::string, neural::Vec, std::less<>>> pre;
  if (!a.embeddings.empty()) pre = neural::load_embeddings(a.embeddings, a.d);

  neural::TrainSchedule sched;
  sched.epochs = a.epochs;
  sched.batch_size = a.batch;
  sched.learning_rate = a.lr;
  sched.l2 = a.l2;
  sched.seed = *a.c.seed;
  sched.supervision = parse_supervision(a.supervision);
  sched.threads = neural::threads_from_env();
  sched.target_accuracy = a.target_accuracy;
  const auto result = neural::train(bank, neural::Hyper{a.d}, sched, std::nullopt, pre ? &*pre : nullptr,
                                    val ? &*val : nullptr);
  neural::save_params(a.c.output, result.params);
  emit({{"command", "train-tree"},
        {"seed", *a.c.seed},
        {"d", a.d},
        {"trees", bank.trees.size()},
        {"epochs_run", result.history.size()},
        {"best_epoch", result.best_epoch},
        {"train_accuracy", neural::node_accuracy(bank, result.params, sched.supervision)},
        {"output", a.c.output}});
  return 0;
}

struct PredictTreeArgs {
  std::string model, treebank, output;
};

int run_predict_tree(const PredictTreeArgs& a) {
  require_input(a.model);
  require_input(a.treebank);
  require_output(a.output);
  const auto params = neural::load_params(a.model);
  const Treebank bank = load_treebank(a.treebank);
  std::string out;
  for (std::size_t t = 0; t < bank.trees.size(); ++t) {
    const auto p = neural::predict(bank.trees[t], params);
    out += std::to_string(t + 1);
    for (double v : p) out += '\t' + io::format_double(v);
    out += '\n';
  }
  io::atomic_write(a.output, out);
  emit({{"command", "predict-tree"}, {"trees", bank.trees.size()}, {"output", a.output}});
  return 0;
}

// ---------------------------------------------------------------------------

struct AggregateArgs {
  std::string input, output;
  std::vector<double> grid;
};

// `tweet_id <TAB> label <TAB> f <TAB> l <TAB> p0..p4`, one line per sentence.
std::vector<aggregate::LabeledTweet> read_sentence_file(const std::string& path) {
  std::vector<aggregate::LabeledTweet> tweets;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 0;
  for (const auto& line : io::read_lines(path)) {
    ++line_no;
    if (io::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    const auto f = io::split(line, '\t');
    if (f.size() != 4 + kNumClasses) fail(Errc::FormatError, where + "expected id, label, f, l and 5 probabilities");
    aggregate::SentencePrediction s;
    const long long label = io::parse_int(f[1], "label");
    if (label < -2 || label > 2) fail(Errc::BadLabel, where + "label outside -2..2");
    s.known_fraction = io::parse_double(f[2], "known fraction");
    s.length = io::parse_double(f[3], "length");
    if (s.known_fraction < 0.0 || s.known_fraction > 1.0) fail(Errc::FormatError, where + "f must be in [0, 1]");
    if (s.length < 1.0) fail(Errc::FormatError, where + "l must be at least 1");
    for (int c = 0; c < kNumClasses; ++c) s.dist[c] = io::parse_double(f[4 + c], "probability");
    const std::string id(io::trim(f[0]));
    auto [it, fresh] = index.emplace(id, tweets.size());
    if (fresh) tweets.push_back({{}, static_cast<int>(label) + 2});
    if (tweets[it->second].gold != static_cast<int>(label) + 2)
      fail(Errc::FormatError, where + "sentences of one tweet disagree on its label");
    tweets[it->second].sentences.push_back(s);
  }
  return tweets;
}

int run_aggregate_fit(const AggregateArgs& a) {
  require_input(a.input);
  require_output(a.output);
  aggregate::FitConfig cfg;
  if (!a.grid.empty()) cfg.grid = a.grid;
  const auto tweets = read_sentence_file(a.input);
  const auto fit = aggregate::fit_params(tweets, cfg);
  const json j{{"format", "sentitree-aggregation"},
               {"version", 1},
               {"alpha", fit.params.alpha},
               {"beta", fit.params.beta},
               {"gamma", fit.params.gamma},
               {"objective", fit.objective}};
  stack::save_json(a.output, j);
  emit({{"command", "aggregate-fit"}, {"tweets", tweets.size()}, {"alpha", fit.params.alpha},
        {"beta", fit.params.beta},     {"gamma", fit.params.gamma}, {"objective", fit.objective}});
  return 0;
}

// ---------------------------------------------------------------------------

struct StackArgs {
  Common c;
  std::string train;
  std::vector<std::string> dists;
  std::string model = "mlp";
  std::size_t hidden = 32;
  int epochs = 200;
  double lr = 0.1;
  bool no_flags = false;
};

stack::Dataset stacked_dataset(const std::string& train, const std::vector<std::string>& dist_paths, bool flags) {
  tasks::TaskInput in;
  in.train = tasks::load_dataset(train);
  for (const auto& p : dist_paths) in.train_dists.push_back(tasks::load_dists(p));
  tasks::detail::require_gold(in.train);
  stack::Dataset data{stack::FeatureSchema::pipeline(dist_paths.size(), flags), {}, {}};
  const auto x = tasks::detail::stacked_features(in.train, in.train_dists, flags);
  for (std::size_t i = 0; i < x.size(); ++i) data.add(x[i], *in.train[i].gold);
  return data;
}

int run_stack_train(const StackArgs& a) {
  require_input(a.train);
  require_inputs(a.dists);
  require_output(a.c.output);
  const auto data = stacked_dataset(a.train, a.dists, !a.no_flags);
  std::size_t correct = 0;
  json model;
  if (a.model == "mlp") {
    stack::MlpConfig cfg;
    cfg.hidden = a.hidden;
    cfg.epochs = a.epochs;
    cfg.learning_rate = a.lr;
    cfg.seed = *a.c.seed;
    const auto m = stack::train_mlp(data, cfg);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto p = stack::predict_mlp(m, data.x[i]);
      correct += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == data.y[i];
    }
    model = stack::to_json(m);
  } else if (a.model == "logistic") {
    const auto m = stack::train_logistic(data);
    for (std::size_t i = 0; i < data.size(); ++i) correct += stack::predict_class(m, data.x[i]) == data.y[i];
    model = stack::to_json(m);
  } else {
    fail(Errc::UsageError, "--model must be 'mlp' or 'logistic'");
  }
  stack::save_json(a.c.output, model);
  emit({{"command", "stack-train"},
        {"seed", *a.c.seed},
        {"model", a.model},
        {"rows", data.size()},
        {"features", data.schema.width()},
        {"train_accuracy", static_cast<double>(correct) / static_cast<double>(data.size())},
        {"output", a.c.output}});
  return 0;
}

struct RfeArgs {
  Common c;
  std::string train;
  std::vector<std::string> dists;
  std::optional<std::size_t> target;
  std::size_t folds = 5;
  std::string mode = "group";
  bool no_flags = false;
};

int run_rfe(const RfeArgs& a) {
  require_input(a.train);
  require_inputs(a.dists);
  require_output(a.c.output);
  if (a.mode != "group" && a.mode != "column") fail(Errc::UsageError, "--mode must be 'group' or 'column'");
  const auto data = stacked_dataset(a.train, a.dists, !a.no_flags);
  stack::RfeConfig cfg;
  cfg.target = a.target;
  cfg.folds = a.folds;
  cfg.mode = a.mode == "group" ? stack::RfeMode::Group : stack::RfeMode::Column;
  cfg.seed = *a.c.seed;
  const auto r = stack::rfe_select(data, cfg);
  json steps = json::array();
  for (const auto& s : r.steps) {
    json step{{"groups", s.groups}, {"dropped", s.dropped}};
    if (s.cv_score) step["cv_macro_recall"] = *s.cv_score;
    steps.push_back(std::move(step));
  }
  const json out{{"seed", *a.c.seed}, {"mode", a.mode}, {"selected", r.selected}, {"pruned", r.pruned},
                 {"steps", steps}};
  stack::save_json(a.c.output, out);
  emit({{"command", "rfe"}, {"seed", *a.c.seed}, {"selected", r.selected}, {"output", a.c.output}});
  return 0;
}

// ---------------------------------------------------------------------------

struct TaskArgs {
  Common c;
  std::string train, test, summary;
  std::vector<std::string> train_dists, test_dists;
  double kappa = 10.0;
  std::size_t bootstrap = 100;
  std::string threshold_scope = "global";
  std::string t_scope = "entity";
  std::size_t hidden = 32;
  int epochs = 200;
  bool no_flags = false;
};

int run_task(tasks::Task task, const char* name, const TaskArgs& a) {
  require_input(a.train);
  require_input(a.test);
  require_inputs(a.train_dists);
  require_inputs(a.test_dists);
  require_output(a.c.output);
  if (!a.summary.empty()) require_output(a.summary);
  if (a.train_dists.size() != a.test_dists.size())
    fail(Errc::UsageError, "--train-dists and --test-dists must be given the same number of times");
  tasks::TaskConfig cfg;
  cfg.seed = *a.c.seed;
  cfg.kappa = a.kappa;
  cfg.bootstrap = a.bootstrap;
  cfg.use_flags = !a.no_flags;
  cfg.mlp.hidden = a.hidden;
  cfg.mlp.epochs = a.epochs;
  if (a.threshold_scope == "global")
    cfg.threshold = tasks::ThresholdScope::Global;
  else if (a.threshold_scope == "entity")
    cfg.threshold = tasks::ThresholdScope::Entity;
  else
    fail(Errc::UsageError, "--threshold-scope must be 'global' or 'entity'");
  if (a.t_scope == "entity")
    cfg.t_scope = tasks::TScope::Entity;
  else if (a.t_scope == "global")
    cfg.t_scope = tasks::TScope::Global;
  else
    fail(Errc::UsageError, "--t-scope must be 'entity' or 'global'");

  tasks::TaskInput in;
  in.train = tasks::load_dataset(a.train);
  in.test = tasks::load_dataset(a.test);
  for (const auto& p : a.train_dists) in.train_dists.push_back(tasks::load_dists(p));
  for (const auto& p : a.test_dists) in.test_dists.push_back(tasks::load_dists(p));

  const auto out = tasks::run_task(task, in, cfg);
  const bool quant = task == tasks::Task::D || task == tasks::Task::E;
  io::atomic_write(a.c.output, quant ? tasks::write_quantification(out.quantification)
                                     : tasks::write_predictions(out.predictions));
  json summary = out.summary;
  summary["command"] = std::string("task-") + name;
  summary["output"] = a.c.output;
  if (!a.summary.empty()) stack::save_json(a.summary, summary);
  emit(summary);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string gold, pred, metric = "macro-recall", task = "c", output;
  double epsilon = 1e-3;
};

std::size_t first_row_width(const std::string& path) {
  for (const auto& line : io::read_lines(path))
    if (!io::trim(line).empty()) return io::split(line, '\t').size();
  fail(Errc::EmptyInput, "'" + path + "' has no rows");
}

// id -> class index in the task's label space.
std::map<std::string, int> read_labels(const std::string& path, tasks::Task task) {
  std::map<std::string, int> out;
  if (first_row_width(path) == 3) {
    for (const auto& p : tasks::load_predictions(path)) out[p.id] = tasks::label_to_class(task, p.label);
    return out;
  }
  for (const auto& r : tasks::load_dataset(path)) {
    if (!r.gold) continue;
    if (auto c = tasks::task_class(task, *r.gold)) out[r.id] = *c;
  }
  return out;
}

tasks::QuantTable read_quant(const std::string& path, tasks::Task task) {
  const std::size_t w = first_row_width(path);
  if (w == 2 || w == 1 + kNumClasses) return tasks::load_quantification(path);
  return tasks::gold_quantification(tasks::load_dataset(path), task);
}

int run_evaluate(const EvaluateArgs& a) {
  require_input(a.gold);
  require_input(a.pred);
  if (!a.output.empty()) require_output(a.output);
  const tasks::Task task = tasks::parse_task(a.task);
  json result{{"metric", a.metric}, {"task", a.task}};

  if (a.metric == "macro-recall" || a.metric == "accuracy" || a.metric == "macro-mae") {
    const auto gold = read_labels(a.gold, task);
    const auto pred = read_labels(a.pred, task);
    std::vector<int> g, p;
    for (const auto& [id, cls] : gold) {
      auto it = pred.find(id);
      if (it == pred.end()) fail(Errc::FormatError, "no prediction for '" + id + "'");
      g.push_back(cls);
      p.push_back(it->second);
    }
    const std::size_t classes = tasks::task_classes(task);
    double value = 0.0;
    if (a.metric == "macro-mae") {
      value = metrics::macro_mae(g, p);
      result["scale"] = metrics::LabelScale{}.values;
    } else {
      const auto conf = metrics::ConfusionTable::from_labels(g, p, classes);
      value = a.metric == "accuracy" ? metrics::accuracy(conf) : metrics::macro_recall(conf);
    }
    result["value"] = value;
    result["items"] = g.size();
    result["classes"] = classes;
  } else if (a.metric == "kld" || a.metric == "emd") {
    const auto gold = read_quant(a.gold, task);
    const auto pred = read_quant(a.pred, task);
    double total = 0.0;
    for (const auto& [entity, gv] : gold) {
      auto it = pred.find(entity);
      if (it == pred.end()) fail(Errc::FormatError, "no estimate for entity '" + entity + "'");
      auto as_dist = [](const std::vector<double>& v) {
        return v.size() == 1 ? std::vector<double>{v[0], 1.0 - v[0]} : v;
      };
      const auto t = as_dist(gv), e = as_dist(it->second);
      total += a.metric == "kld" ? metrics::kld(t, e, a.epsilon) : metrics::emd_ordinal(t, e);
    }
    if (gold.empty()) fail(Errc::EmptyInput, "no gold entities");
    result["value"] = total / static_cast<double>(gold.size());
    result["items"] = gold.size();
    if (a.metric == "kld") result["epsilon"] = a.epsilon;
  } else {
    fail(Errc::UsageError, "--metric must be macro-recall, accuracy, macro-mae, kld or emd");
  }
  if (!a.output.empty()) stack::save_json(a.output, result);
  emit(result);
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 7;
  int d = 2;
  int instances = 1;
  int leaves = 4;
};

int run_gradcheck(const GradcheckArgs& a) {
  if (a.d < 1 || a.instances < 1 || a.leaves < 1) fail(Errc::UsageError, "--d, --instances and --leaves must be positive");
  double worst = 0.0;
  std::size_t coords = 0;
  for (int i = 0; i < a.instances; ++i) {
    const auto inst = neural::random_instance(derive_seed(a.seed, static_cast<std::uint64_t>(i)), a.d, a.leaves);
    const auto rep = neural::gradient_check(inst.tree, inst.params, neural::Supervision::AllLabeledNodes);
    worst = std::max(worst, rep.max_rel_error);
    coords += rep.coordinates;
  }
  const bool ok = worst < 1e-4;
  emit({{"command", "gradcheck"}, {"seed", a.seed}, {"d", a.d}, {"instances", a.instances},
        {"coordinates", coords}, {"max_rel_error", worst}, {"pass", ok}});
  return ok ? 0 : static_cast<int>(ErrorClass::Numeric);
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entity-aware tree-LSTM sentiment toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  PreprocessArgs pre;
  auto* s_pre = app.add_subcommand("preprocess", "Normalize and tokenize tweets, one per line");
  s_pre->add_option("--input", pre.input, "Text file, one tweet per line")->required();
  s_pre->add_option("--output", pre.output, "Output file, space-joined tokens per line")->required();
  s_pre->add_option("--dict", pre.dict, "Replacement dictionary TSV");
  s_pre->add_option("--emoji", pre.emoji, "Emoji cluster TSV");
  s_pre->add_option("--lemmas", pre.lemmas, "Lemma table TSV");
  s_pre->add_flag("--sentences", pre.sentences, "Split sentences, tab-separated in the output");
  s_pre->add_flag("--case-sensitive", pre.case_sensitive, "Match dictionary entries case-sensitively");

  TrainTreeArgs tt;
  auto* s_tt = app.add_subcommand("train-tree", "Train the tree-LSTM on a treebank");
  s_tt->add_option("--treebank", tt.treebank, "Training treebank")->required();
  s_tt->add_option("--validation", tt.validation, "Validation treebank for model selection");
  s_tt->add_option("--embeddings", tt.embeddings, "Pre-trained word vectors");
  s_tt->add_option("--output", tt.c.output, "Model JSON")->required();
  add_seed(s_tt, tt.c);
  s_tt->add_option("--d", tt.d, "Embedding dimension")->capture_default_str();
  s_tt->add_option("--epochs", tt.epochs, "Epochs")->capture_default_str();
  s_tt->add_option("--batch", tt.batch, "Minibatch size")->capture_default_str();
  s_tt->add_option("--lr", tt.lr, "AdaGrad learning rate")->capture_default_str();
  s_tt->add_option("--l2", tt.l2, "L2 regularization")->capture_default_str();
  s_tt->add_option("--supervision", tt.supervision, "all | root")->capture_default_str();
  s_tt->add_option("--target-accuracy", tt.target_accuracy, "Stop once training node accuracy reaches this");

  PredictTreeArgs pt;
  auto* s_pt = app.add_subcommand("predict-tree", "Root sentiment distribution per tree");
  s_pt->add_option("--model", pt.model, "Model JSON")->required();
  s_pt->add_option("--treebank", pt.treebank, "Treebank")->required();
  s_pt->add_option("--output", pt.output, "TSV: index p0..p4")->required();

  AggregateArgs ag;
  auto* s_ag = app.add_subcommand("aggregate-fit", "Fit sentence aggregation exponents");
  s_ag->add_option("--input", ag.input, "TSV: tweet_id label f l p0..p4, one line per sentence")->required();
  s_ag->add_option("--output", ag.output, "Parameter JSON")->required();
  s_ag->add_option("--grid", ag.grid, "Grid values per exponent")->delimiter(',');

  StackArgs st;
  auto* s_st = app.add_subcommand("stack-train", "Train the stacking model on base-model distributions");
  s_st->add_option("--train", st.train, "Dataset TSV")->required();
  s_st->add_option("--dists", st.dists, "Base-model distribution TSV (repeatable)")->required();
  s_st->add_option("--output", st.c.output, "Model JSON")->required();
  add_seed(s_st, st.c);
  s_st->add_option("--model", st.model, "mlp | logistic")->capture_default_str();
  s_st->add_option("--hidden", st.hidden, "Hidden units")->capture_default_str();
  s_st->add_option("--epochs", st.epochs, "Epochs")->capture_default_str();
  s_st->add_option("--lr", st.lr, "Learning rate")->capture_default_str();
  s_st->add_flag("--no-flags", st.no_flags, "Leave semantic flags out of the features");

  RfeArgs rf;
  auto* s_rf = app.add_subcommand("rfe", "Recursive feature elimination over model groups");
  s_rf->add_option("--train", rf.train, "Dataset TSV")->required();
  s_rf->add_option("--dists", rf.dists, "Base-model distribution TSV (repeatable)")->required();
  s_rf->add_option("--output", rf.c.output, "Selection JSON")->required();
  add_seed(s_rf, rf.c);
  s_rf->add_option("--target", rf.target, "Groups to keep; omitted picks by cross-validation");
  s_rf->add_option("--folds", rf.folds, "Cross-validation folds")->capture_default_str();
  s_rf->add_option("--mode", rf.mode, "group | column")->capture_default_str();
  s_rf->add_flag("--no-flags", rf.no_flags, "Leave semantic flags out of the features");

  TaskArgs ta;
  std::vector<std::pair<CLI::App*, tasks::Task>> task_subs;
  for (auto [name, task, desc] :
       {std::tuple{"task-a", tasks::Task::A, "Three-class tweet labels with train resampling"},
        std::tuple{"task-b", tasks::Task::B, "Entity-aware binary tweet labels"},
        std::tuple{"task-c", tasks::Task::C, "Entity-aware five-class tweet labels"},
        std::tuple{"task-d", tasks::Task::D, "Per-entity positive rate"},
        std::tuple{"task-e", tasks::Task::E, "Per-entity five-class distribution"}}) {
    auto* s = app.add_subcommand(name, desc);
    s->add_option("--train", ta.train, "Training dataset TSV")->required();
    s->add_option("--test", ta.test, "Test dataset TSV")->required();
    s->add_option("--train-dists", ta.train_dists, "Training base-model distributions (repeatable)")->required();
    s->add_option("--test-dists", ta.test_dists, "Test base-model distributions (repeatable)")->required();
    s->add_option("--output", ta.c.output, "Predictions or quantification TSV")->required();
    s->add_option("--summary", ta.summary, "Run summary JSON");
    add_seed(s, ta.c);
    s->add_option("--kappa", ta.kappa, "Prior concentration")->capture_default_str();
    s->add_option("--bootstrap", ta.bootstrap, "Bootstrap resamples per entity")->capture_default_str();
    s->add_option("--threshold-scope", ta.threshold_scope, "global | entity")->capture_default_str();
    s->add_option("--t-scope", ta.t_scope, "entity | global")->capture_default_str();
    s->add_option("--hidden", ta.hidden, "Pipeline hidden units")->capture_default_str();
    s->add_option("--epochs", ta.epochs, "Pipeline epochs")->capture_default_str();
    s->add_flag("--no-flags", ta.no_flags, "Leave semantic flags out of the pipeline features");
    task_subs.emplace_back(s, task);
  }

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "Score predictions against gold labels");
  s_ev->add_option("--gold", ev.gold, "Dataset, predictions or quantification TSV")->required();
  s_ev->add_option("--pred", ev.pred, "Predictions or quantification TSV")->required();
  s_ev->add_option("--metric", ev.metric, "macro-recall | accuracy | macro-mae | kld | emd")->capture_default_str();
  s_ev->add_option("--task", ev.task, "a..e, selects the label space")->capture_default_str();
  s_ev->add_option("--epsilon", ev.epsilon, "KLD smoothing")->capture_default_str();
  s_ev->add_option("--output", ev.output, "Also write the result JSON here");

  GradcheckArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Finite-difference check of tree-LSTM gradients");
  s_gc->add_option("--seed", gc.seed, "Instance seed")->capture_default_str();
  s_gc->add_option("--d", gc.d, "Embedding dimension")->capture_default_str();
  s_gc->add_option("--instances", gc.instances, "Random instances")->capture_default_str();
  s_gc->add_option("--leaves", gc.leaves, "Maximum leaves per tree")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: UsageError: " << one_line(e.what()) << " (see --help)\n";
    return static_cast<int>(ErrorClass::Usage);
  }

  try {
    if (s_pre->parsed()) return run_preprocess(pre);
    if (s_tt->parsed()) return run_train_tree(tt);
    if (s_pt->parsed()) return run_predict_tree(pt);
    if (s_ag->parsed()) return run_aggregate_fit(ag);
    if (s_st->parsed()) return run_stack_train(st);
    if (s_rf->parsed()) return run_rfe(rf);
    for (auto& [sub, task] : task_subs)
      if (sub->parsed()) return run_task(task, sub->get_name().c_str() + 5, ta);
    if (s_ev->parsed()) return run_evaluate(ev);
    if (s_gc->parsed()) return run_gradcheck(gc);
  } catch (const Error& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return static_cast<int>(error_class(e.code()));
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: IoError: " << one_line(e.what()) << "\n";
    return static_cast<int>(ErrorClass::Io);
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << one_line(e.what()) << "\n";
    return 1;
  }
  return static_cast<int>(ErrorClass::Usage);
}
