// SPDX-License-Identifier: Apache-2.0
//
// Dataset files and the synthetic desk-scale generator.
//
// Layout of a dataset directory:
//   entities.txt  one entity per line
//   kb.txt        `<n> <subject> <relation> <object>[, <object>]*`
//   train.txt, valid.txt, test.txt
//                 `<n> <question text>\t<answer>[, <answer>]*`
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iatn/config.hpp"
#include "iatn/error.hpp"
#include "iatn/ndgrad/rng.hpp"
#include "iatn/retrieval.hpp"
#include "iatn/textpipe.hpp"

namespace iatn {

enum class Split { train, valid, test };

struct QAExample {
  int id = 0;
  std::string question;
  TokenSequence tokens;
  std::vector<std::string> answers;
  Split split = Split::train;
  friend bool operator==(const QAExample&, const QAExample&) = default;
};

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

/// Splits "<int> <rest>"; returns false when there is no leading integer.
inline bool split_numbered(const std::string& line, std::string& rest) {
  std::size_t i = 0;
  while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
  if (i == 0 || i >= line.size() || line[i] != ' ') return false;
  rest = line.substr(i + 1);
  return true;
}

inline std::vector<std::string> split_answers(const std::string& field) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t sep = field.find(", ", start);
    std::string part = trim(field.substr(start, sep == std::string::npos ? std::string::npos
                                                                         : sep - start));
    if (!part.empty()) out.push_back(std::move(part));
    if (sep == std::string::npos) break;
    start = sep + 2;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace detail

/// One example per numbered line; answers are split on ", ".
inline std::vector<QAExample> parse_qa_file(const std::string& path, const EntityLexicon& lexicon,
                                            Split split = Split::train) {
  std::vector<QAExample> out;
  const auto lines = detail::read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::string& line = lines[n];
    if (trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(n + 1);
    std::string rest;
    if (!detail::split_numbered(line, rest)) {
      throw ParseError(where + ": expected '<number> <question>\\t<answers>': " + line);
    }
    const auto tab = rest.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(where + ": missing tab between question and answers: " + line);
    }
    QAExample ex;
    ex.id = static_cast<int>(out.size());
    ex.question = rest.substr(0, tab);
    ex.answers = detail::split_answers(rest.substr(tab + 1));
    ex.split = split;
    if (trim(ex.question).empty() || ex.answers.empty()) {
      throw ParseError(where + ": empty question or answer list: " + line);
    }
    ex.tokens = tokenize(ex.question, lexicon);
    out.push_back(std::move(ex));
  }
  return out;
}

/// One fact document per non-empty line, ids in file order.
inline std::vector<FactDocument> parse_kb_file(const std::string& path,
                                               const EntityLexicon& lexicon) {
  std::vector<FactDocument> out;
  const auto lines = detail::read_lines(path);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (trim(lines[n]).empty()) continue;
    std::string rest;
    if (!detail::split_numbered(lines[n], rest)) {
      throw ParseError(path + ":" + std::to_string(n + 1) + ": expected '<number> <fact>': " +
                       lines[n]);
    }
    FactDocument doc{static_cast<int>(out.size()), tokenize(rest, lexicon), rest};
    if (doc.tokens.empty()) {
      throw ParseError(path + ":" + std::to_string(n + 1) + ": fact has no tokens");
    }
    out.push_back(std::move(doc));
  }
  return out;
}

inline void write_qa_file(const std::string& path, const std::vector<QAExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const QAExample& ex : examples) {
    out << "1 " << ex.question << '\t' << detail::join(ex.answers, ", ") << '\n';
  }
}

inline void write_kb_file(const std::string& path, const std::vector<std::string>& facts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const std::string& f : facts) out << "1 " << f << '\n';
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  for (const std::string& l : lines) out << l << '\n';
}

struct Dataset {
  EntityLexicon lexicon;
  std::vector<FactDocument> kb;
  std::vector<QAExample> train, valid, test;
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ParseError("dataset directory '" + dir.string() + "' does not exist");
  }
  Dataset ds;
  const auto entities = dir / "entities.txt";
  if (std::filesystem::exists(entities)) ds.lexicon = EntityLexicon::load(entities.string());
  ds.kb = parse_kb_file((dir / "kb.txt").string(), ds.lexicon);
  ds.train = parse_qa_file((dir / "train.txt").string(), ds.lexicon, Split::train);
  ds.valid = parse_qa_file((dir / "valid.txt").string(), ds.lexicon, Split::valid);
  const auto test = dir / "test.txt";
  if (std::filesystem::exists(test)) {
    ds.test = parse_qa_file(test.string(), ds.lexicon, Split::test);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class SyntheticMode {
  qa,        // answers appear as fact objects in the KB text
  held_out,  // answers never appear in the KB text
  recs,      // preference-list questions (non-canonical construction)
};

struct SyntheticConfig {
  int num_entities = 50;
  int num_relations = 5;
  int num_questions = 200;
  int facts_per_entity = 5;
  int min_answers = 1;
  int max_answers = 2;
  std::uint64_t seed = 1;
  SyntheticMode mode = SyntheticMode::qa;

  static SyntheticConfig from_key_values(const KeyValues& kv) {
    SyntheticConfig c;
    KeyValueReader r(kv);
    r.read("num_entities", c.num_entities);
    r.read("num_relations", c.num_relations);
    r.read("num_questions", c.num_questions);
    r.read("facts_per_entity", c.facts_per_entity);
    r.read("min_answers", c.min_answers);
    r.read("max_answers", c.max_answers);
    r.read("seed", c.seed);
    std::string mode = "qa";
    r.read("mode", mode);
    if (mode == "qa") c.mode = SyntheticMode::qa;
    else if (mode == "held_out") c.mode = SyntheticMode::held_out;
    else if (mode == "recs") c.mode = SyntheticMode::recs;
    else throw ConfigError("synthetic config: unknown mode '" + mode + "'");
    r.finish("synthetic config");
    return c;
  }

  void validate() const {
    if (num_entities < 2 || num_relations < 1 || facts_per_entity < 1 || min_answers < 1 ||
        max_answers < min_answers) {
      throw ConfigError("synthetic config: counts must be positive with min_answers <= "
                        "max_answers and at least 2 entities");
    }
    if (num_questions < 1) {
      throw ConfigError("synthetic config: num_questions must be >= 1 (no answerable questions)");
    }
    if (facts_per_entity > num_relations) {
      throw ConfigError("synthetic config: facts_per_entity exceeds num_relations");
    }
    if (max_answers > num_entities - 1) {
      throw ConfigError("synthetic config: max_answers exceeds available object entities");
    }
  }
};

struct SyntheticDataset {
  std::vector<std::string> entities;
  std::vector<std::string> kb;  // fact text without the line number
  std::vector<QAExample> train, valid, test;

  /// Every (subject, relation) fact with its objects.
  std::map<std::pair<std::string, std::string>, std::vector<std::string>> facts;

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_lines((dir / "entities.txt").string(), entities);
    write_kb_file((dir / "kb.txt").string(), kb);
    write_qa_file((dir / "train.txt").string(), train);
    write_qa_file((dir / "valid.txt").string(), valid);
    write_qa_file((dir / "test.txt").string(), test);
  }
};

namespace detail {

inline std::vector<std::string> synthetic_names(int count, nd::Rng& rng,
                                                std::set<std::string>& taken) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                            "p", "r", "s", "t", "v", "z", "br", "dr",
                                            "st", "tr", "gl", "kr"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "o"};
  auto word = [&] {
    std::string w;
    const int syllables = 2 + static_cast<int>(rng.below(2));
    for (int s = 0; s < syllables; ++s) {
      w += kOnsets[rng.below(std::size(kOnsets))];
      w += kVowels[rng.below(std::size(kVowels))];
    }
    w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
  };
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < count) {
    std::string name = word() + " " + word();
    if (taken.insert(to_lower(name)).second) out.push_back(name);
  }
  return out;
}

inline std::vector<std::string> synthetic_relations(int count) {
  static constexpr const char* kKnown[] = {"starred_actors", "directed_by", "written_by",
                                           "has_genre",      "release_year", "has_tags",
                                           "in_language",    "has_plot"};
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(i < static_cast<int>(std::size(kKnown)) ? std::string(kKnown[i])
                                                          : "relation_" + std::to_string(i));
  }
  return out;
}

inline void assign_splits(std::vector<QAExample>& all, nd::Rng& rng, SyntheticDataset& out) {
  rng.shuffle(all);
  const std::size_t n = all.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  for (std::size_t i = 0; i < n; ++i) {
    QAExample ex = all[i];
    if (i < n_train) {
      ex.split = Split::train;
      ex.id = static_cast<int>(out.train.size());
      out.train.push_back(std::move(ex));
    } else if (i < n_train + n_valid) {
      ex.split = Split::valid;
      ex.id = static_cast<int>(out.valid.size());
      out.valid.push_back(std::move(ex));
    } else {
      ex.split = Split::test;
      ex.id = static_cast<int>(out.test.size());
      out.test.push_back(std::move(ex));
    }
  }
}

}  // namespace detail

/// Builds entities, subject-relation-object facts and questions whose gold
/// answers are exactly the objects of the matching fact. Splits 80/10/10.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  nd::Rng rng(config.seed);
  SyntheticDataset out;
  std::set<std::string> taken;
  out.entities = detail::synthetic_names(config.num_entities, rng, taken);
  const auto relations = detail::synthetic_relations(config.num_relations);

  // Held-out answers come from a separate pool that never enters the KB text.
  std::vector<std::string> object_pool = out.entities;
  if (config.mode == SyntheticMode::held_out) {
    object_pool = detail::synthetic_names(std::max(config.max_answers + 1, config.num_entities / 2),
                                          rng, taken);
    out.entities.insert(out.entities.end(), object_pool.begin(), object_pool.end());
  }

  std::vector<std::pair<std::string, std::string>> pairs;
  for (int e = 0; e < config.num_entities; ++e) {
    const std::string& subject = out.entities[static_cast<std::size_t>(e)];
    std::vector<int> rel_ids(relations.size());
    for (std::size_t i = 0; i < rel_ids.size(); ++i) rel_ids[i] = static_cast<int>(i);
    rng.shuffle(rel_ids);
    rel_ids.resize(static_cast<std::size_t>(config.facts_per_entity));
    std::sort(rel_ids.begin(), rel_ids.end());
    for (int r : rel_ids) {
      const std::string& relation = relations[static_cast<std::size_t>(r)];
      const int count = config.min_answers +
                        static_cast<int>(rng.below(static_cast<std::uint64_t>(
                            config.max_answers - config.min_answers + 1)));
      std::vector<std::string> objects;
      while (static_cast<int>(objects.size()) < count) {
        const std::string& cand = object_pool[rng.below(object_pool.size())];
        if (cand == subject || std::find(objects.begin(), objects.end(), cand) != objects.end()) {
          continue;
        }
        objects.push_back(cand);
      }
      if (config.mode == SyntheticMode::held_out) {
        out.kb.push_back(subject + " " + relation);
      } else {
        out.kb.push_back(subject + " " + relation + " " + detail::join(objects, ", "));
      }
      out.facts[{subject, relation}] = objects;
      pairs.emplace_back(subject, relation);
    }
  }

  std::vector<QAExample> all;
  if (config.mode == SyntheticMode::recs) {
    // Question lists liked subjects; answers are the other subjects sharing a
    // (relation, object) with any liked one.
    std::map<std::pair<std::string, std::string>, std::set<std::string>> by_object;
    for (const auto& [key, objects] : out.facts)
      for (const auto& o : objects) by_object[{key.second, o}].insert(key.first);
    int attempts = 0;
    while (static_cast<int>(all.size()) < config.num_questions) {
      if (++attempts > config.num_questions * 100) {
        throw ConfigError("synthetic config: cannot build enough answerable recs questions");
      }
      std::vector<std::string> liked;
      const int n_liked = 2 + static_cast<int>(rng.below(2));
      while (static_cast<int>(liked.size()) < n_liked) {
        const auto& e = out.entities[rng.below(static_cast<std::uint64_t>(config.num_entities))];
        if (std::find(liked.begin(), liked.end(), e) == liked.end()) liked.push_back(e);
      }
      std::set<std::string> answers;
      for (const auto& [key, objects] : out.facts) {
        if (std::find(liked.begin(), liked.end(), key.first) == liked.end()) continue;
        for (const auto& o : objects)
          for (const auto& other : by_object[{key.second, o}])
            if (std::find(liked.begin(), liked.end(), other) == liked.end()) answers.insert(other);
      }
      if (answers.empty()) continue;
      QAExample ex;
      ex.question = "i like " + detail::join(liked, " , ") + " . what else should i see ?";
      ex.answers.assign(answers.begin(), answers.end());
      all.push_back(std::move(ex));
    }
  } else {
    if (static_cast<std::size_t>(config.num_questions) > pairs.size()) {
      throw ConfigError("synthetic config: num_questions (" +
                        std::to_string(config.num_questions) + ") exceeds the " +
                        std::to_string(pairs.size()) + " distinct subject/relation facts");
    }
    rng.shuffle(pairs);
    for (int q = 0; q < config.num_questions; ++q) {
      const auto& [subject, relation] = pairs[static_cast<std::size_t>(q)];
      QAExample ex;
      ex.question = "what does " + subject + " " + relation + " ?";
      ex.answers = out.facts.at({subject, relation});
      all.push_back(std::move(ex));
    }
  }

  const EntityLexicon lexicon(out.entities);
  for (QAExample& ex : all) ex.tokens = tokenize(ex.question, lexicon);
  detail::assign_splits(all, rng, out);
  return out;
}

}  // namespace iatn
