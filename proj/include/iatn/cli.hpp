// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iatn/checkpoint.hpp"
#include "iatn/config.hpp"
#include "iatn/data.hpp"
#include "iatn/error.hpp"
#include "iatn/log.hpp"
#include "iatn/model.hpp"
#include "iatn/render.hpp"
#include "iatn/trainer.hpp"

namespace iatn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad flags or paths; reported with exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A trained model ready to answer questions against a KB.
struct Served {
  Model model;
  QAPipeline pipeline;
  TrainConfig config;
};

inline Served load_served(const std::string& checkpoint_path, const std::string& kb_path,
                          const std::string& entities_path, std::optional<std::size_t> retrieval_n) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  TrainConfig cfg = checkpoint_config(ckpt);
  if (retrieval_n) cfg.retrieval_n = *retrieval_n;
  EntityLexicon lexicon;
  if (!entities_path.empty()) lexicon = EntityLexicon::load(entities_path);
  auto kb = parse_kb_file(kb_path, lexicon);
  QAPipeline pipeline(std::move(lexicon), std::move(kb), checkpoint_vocabulary(ckpt),
                      checkpoint_catalog(ckpt), cfg.retrieval_n);
  Model model = restore_model(ckpt);
  if (model.dims().vocab_size != pipeline.vocab().size() ||
      model.dims().num_answers != pipeline.catalog().size()) {
    throw CheckpointError("checkpoint vocabulary or answer list does not match its tensors");
  }
  return {std::move(model), std::move(pipeline), cfg};
}

/// The single forward pass behind both `ask` and `trace`. `probabilities`
/// is empty when retrieval found no fact.
struct QuestionRun {
  PreparedExample prepared;
  std::optional<ForwardPass> pass;
  std::vector<double> probabilities;

  bool retrieved() const { return pass.has_value(); }
};

inline QuestionRun run_question(const Model& model, const QAPipeline& pipeline,
                                const std::string& question) {
  QuestionRun run;
  run.prepared = pipeline.prepare_question(question);
  if (run.prepared.input.query.empty()) throw Error("question has no tokens");
  if (run.prepared.docs.empty()) return run;
  run.pass = model.forward(run.prepared.input, nd::Mode::eval, nullptr);
  run.probabilities = values_of(run.pass->prediction.probabilities);
  return run;
}

inline std::vector<AnswerWithScore> top_answers(const QuestionRun& run, const AnswerCatalog& catalog,
                                                int k) {
  std::vector<AnswerWithScore> out;
  if (!run.retrieved()) return out;
  for (const RankedAnswer& a : rank_answers(run.probabilities, k)) {
    out.push_back({catalog.surface(a.answer), a.score});
  }
  return out;
}

inline TraceView trace_view(const QuestionRun& run) {
  TraceView view;
  view.tokens_query = texts(run.prepared.query_tokens);
  if (!run.retrieved()) return view;
  view.trace = run.pass->inference->trace;
  for (const FactDocument& d : run.prepared.docs) view.tokens_docs.push_back({d.id, texts(d.tokens)});
  return view;
}

inline Json history_to_json(const TrainHistory& h) {
  Json epochs = Json::array();
  for (const EpochRecord& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"valid_hits", e.valid_hits},
                      {"valid_count_hits", e.valid_count_hits},
                      {"seconds", e.seconds}});
  }
  return {{"epochs", epochs}, {"best_epoch", h.best_epoch}, {"stopped_early", h.stopped_early}};
}

namespace detail {

inline void require_file(const std::string& path, const std::string& flag) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError(flag + ": no such file '" + path + "'");
}

inline void require_dir(const std::string& path, const std::string& flag) {
  if (!std::filesystem::is_directory(path)) throw UsageError(flag + ": no such directory '" + path + "'");
}

/// --entities, else entities.txt next to the KB file when present.
inline std::string entities_for(const std::string& kb, const std::string& entities) {
  if (!entities.empty()) {
    require_file(entities, "--entities");
    return entities;
  }
  const auto sibling = std::filesystem::path(kb).parent_path() / "entities.txt";
  return std::filesystem::is_regular_file(sibling) ? sibling.string() : std::string();
}

}  // namespace detail

struct CliOptions {
  std::string data, kb, entities, config, out, checkpoint, format = "json", question;
  int k = 1;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> retrieval_n;
};

inline int cmd_gen(const CliOptions& o, std::ostream& out) {
  if (o.out.empty()) throw UsageError("gen: --out DIR is required");
  SyntheticConfig cfg;
  if (!o.config.empty()) {
    detail::require_file(o.config, "--config");
    cfg = SyntheticConfig::from_key_values(load_key_values(o.config));
  }
  if (o.seed) cfg.seed = *o.seed;
  const SyntheticDataset ds = generate_synthetic(cfg);
  ds.write(o.out);
  out << Json{{"out", o.out},
              {"entities", ds.entities.size()},
              {"facts", ds.kb.size()},
              {"train", ds.train.size()},
              {"valid", ds.valid.size()},
              {"test", ds.test.size()}}
             .dump()
      << '\n';
  return kExitOk;
}

inline int cmd_train(const CliOptions& o, std::ostream& out) {
  if (o.data.empty()) throw UsageError("train: --data DIR is required");
  if (o.out.empty()) throw UsageError("train: --out PATH is required");
  detail::require_dir(o.data, "--data");
  TrainConfig cfg;
  if (!o.config.empty()) {
    detail::require_file(o.config, "--config");
    cfg = TrainConfig::from_key_values(load_key_values(o.config));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.retrieval_n) cfg.retrieval_n = *o.retrieval_n;
  cfg.validate();
  if (!o.checkpoint.empty()) detail::require_file(o.checkpoint, "--checkpoint");

  const Dataset ds = load_dataset(o.data);
  const QAPipeline pipeline = QAPipeline::build(ds, cfg);
  std::optional<Model> initial;
  if (!o.checkpoint.empty()) {
    const ModelDims expected = cfg.dims(pipeline.vocab().size(), pipeline.catalog().size());
    initial.emplace(restore_model(load_checkpoint(o.checkpoint), &expected));
  }
  TrainResult result = train(pipeline, ds.train, ds.valid, cfg, std::move(initial),
                             [](const EpochRecord& e) {
                               log::info("epoch " + std::to_string(e.epoch) + " loss " +
                                         std::to_string(e.train_loss) + " valid HITS " +
                                         std::to_string(e.valid_hits));
                             });
  save_checkpoint(make_checkpoint(result.model, pipeline, cfg), o.out);
  const Json history = history_to_json(result.history);
  const std::string history_path = o.out + ".history.json";
  std::ofstream hf(history_path);
  if (!hf) throw Error("cannot write '" + history_path + "'");
  hf << history.dump(2) << '\n';
  out << Json{{"checkpoint", o.out}, {"history", history_path},
              {"best_epoch", result.history.best_epoch},
              {"epochs", result.history.epochs.size()}}
             .dump()
      << '\n';
  return kExitOk;
}

inline int cmd_eval(const CliOptions& o, std::ostream& out) {
  if (o.data.empty()) throw UsageError("eval: --data DIR is required");
  if (o.checkpoint.empty()) throw UsageError("eval: --checkpoint PATH is required");
  detail::require_dir(o.data, "--data");
  detail::require_file(o.checkpoint, "--checkpoint");
  const std::filesystem::path dir(o.data);
  const std::string kb = o.kb.empty() ? (dir / "kb.txt").string() : o.kb;
  detail::require_file(kb, "--kb");
  Served s = load_served(o.checkpoint, kb, detail::entities_for(kb, o.entities), o.retrieval_n);
  const Dataset ds = load_dataset(o.data);
  Json report = {{"k", o.k}};
  for (const auto& [name, split] : {std::pair<const char*, const std::vector<QAExample>*>{"train", &ds.train},
                                    {"valid", &ds.valid},
                                    {"test", &ds.test}}) {
    if (split->empty()) continue;
    std::vector<PreparedExample> prepared;
    for (const QAExample& ex : *split) prepared.push_back(s.pipeline.prepare(ex));
    const HitsResult r = evaluate_hits(s.model, prepared, o.k, s.config.threads);
    report[name] = {{"hits", r.hits}, {"count_hits", r.count_hits}, {"examples", r.examples}};
  }
  out << report.dump() << '\n';
  return kExitOk;
}

inline Served served_for_question(const CliOptions& o, const char* cmd) {
  if (o.checkpoint.empty()) throw UsageError(std::string(cmd) + ": --checkpoint PATH is required");
  if (o.kb.empty()) throw UsageError(std::string(cmd) + ": --kb FILE is required");
  if (o.question.empty()) throw UsageError(std::string(cmd) + ": a question is required");
  detail::require_file(o.checkpoint, "--checkpoint");
  detail::require_file(o.kb, "--kb");
  return load_served(o.checkpoint, o.kb, detail::entities_for(o.kb, o.entities), o.retrieval_n);
}

inline int cmd_ask(const CliOptions& o, std::ostream& out) {
  const Served s = served_for_question(o, "ask");
  const QuestionRun run = run_question(s.model, s.pipeline, o.question);
  if (!run.retrieved()) log::warn("no KB fact matches the question; no answers");
  out << prediction_to_json(o.question, top_answers(run, s.pipeline.catalog(), o.k), o.k).dump()
      << '\n';
  return kExitOk;
}

inline int cmd_trace(const CliOptions& o, std::ostream& out) {
  const Served s = served_for_question(o, "trace");
  const QuestionRun run = run_question(s.model, s.pipeline, o.question);
  if (!run.retrieved()) log::warn("no KB fact matches the question; empty trace");
  const TraceView view = trace_view(run);
  if (o.format == "json") out << trace_to_json(view).dump() << '\n';
  else if (o.format == "ansi") out << render_ansi(view);
  else out << render_html(view, o.question);
  return kExitOk;
}

/// Parses argv and dispatches; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iterative multi-document attention QA"};
  app.require_subcommand(1);
  CliOptions o;
  std::uint64_t seed = 0;
  std::size_t retrieval_n = 30;

  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset");
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--config", o.config, "Synthetic key=value config");
  gen->add_option("--seed", seed, "Generator seed");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--data", o.data, "Dataset directory")->required();
  tr->add_option("--out", o.out, "Checkpoint path")->required();
  tr->add_option("--config", o.config, "Training key=value config");
  tr->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  tr->add_option("--seed", seed, "Training seed");
  tr->add_option("--retrieval-n", retrieval_n, "Facts retrieved per question")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "HITS@k of a checkpoint on a dataset");
  ev->add_option("--data", o.data, "Dataset directory")->required();
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint path")->required();
  ev->add_option("--kb", o.kb, "KB file (default DIR/kb.txt)");
  ev->add_option("--entities", o.entities, "Entity list");
  ev->add_option("--k", o.k, "Cutoff k")->check(CLI::PositiveNumber);
  ev->add_option("--retrieval-n", retrieval_n, "Facts retrieved per question")->check(CLI::PositiveNumber);

  std::vector<CLI::App*> question_cmds;
  for (const char* name : {"ask", "trace"}) {
    auto* c = app.add_subcommand(name, std::string(name) == "ask" ? "Answer one question"
                                                                   : "Render the attention trace");
    c->add_option("question", o.question, "Question text")->required();
    c->add_option("--checkpoint", o.checkpoint, "Checkpoint path")->required();
    c->add_option("--kb", o.kb, "KB file")->required();
    c->add_option("--entities", o.entities, "Entity list (default: entities.txt next to the KB)");
    c->add_option("--retrieval-n", retrieval_n, "Facts retrieved per question")->check(CLI::PositiveNumber);
    c->add_option("--seed", seed, "Accepted for uniformity; inference is deterministic");
    question_cmds.push_back(c);
  }
  question_cmds[0]->add_option("--k", o.k, "Answers to print")->check(CLI::PositiveNumber);
  question_cmds[1]
      ->add_option("--format", o.format, "ansi, html or json")
      ->check(CLI::IsMember({"ansi", "html", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->get_option_no_throw("--seed") && sub->count("--seed")) o.seed = seed;
    if (sub->get_option_no_throw("--retrieval-n") && sub->count("--retrieval-n")) o.retrieval_n = retrieval_n;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (question_cmds[0]->parsed()) return cmd_ask(o, out);
    return cmd_trace(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace iatn
