#include "mice/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <omp.h>

#include "json.hpp"
#include "mice/metrics.hpp"
#include "mice/parallel.hpp"

namespace mice {

double margin_mse(double s_pos, double s_neg, double t_pos, double t_neg) {
  const double diff = (s_pos - s_neg) - (t_pos - t_neg);
  return diff * diff;
}

double margin_mse_batch(std::span<const double> s_pos, std::span<const double> s_neg,
                        std::span<const double> t_pos, std::span<const double> t_neg) {
  if (s_neg.size() != s_pos.size() || t_pos.size() != s_pos.size() || t_neg.size() != s_pos.size()) {
    throw DimensionError("margin_mse_batch: spans differ in length");
  }
  if (s_pos.empty()) throw InputError("margin_mse_batch: empty batch");
  double total = 0;
  for (std::size_t i = 0; i < s_pos.size(); ++i) total += margin_mse(s_pos[i], s_neg[i], t_pos[i], t_neg[i]);
  return total / static_cast<double>(s_pos.size());
}

template <typename T>
Var<T> margin_mse(Var<T> s_pos, Var<T> s_neg, T t_pos, T t_neg) {
  Tape<T>& tape = *s_pos.tape;
  auto target = tape.constant(Tensor<T>(s_pos.shape(), t_pos - t_neg));
  auto diff = sub(sub(s_pos, s_neg), target);
  return sum(mul(diff, diff));
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, AdamMoments<T>& moments, const AdamHyper& hyper,
               std::span<const std::string> names) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor<T>& p = *params[i];
    if (!p.has_grad()) continue;
    for (std::size_t j = 0; j < p.grad.size(); ++j) {
      if (!std::isfinite(static_cast<double>(p.grad[j]))) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw NumericError("non-finite gradient in parameter " + name + " at element " +
                           std::to_string(j) + " (value " + std::to_string(p.grad[j]) +
                           ", update " + std::to_string(moments.t + 1) + ")");
      }
    }
  }
  if (moments.m.size() != params.size()) {
    moments.m.clear();
    moments.v.clear();
    for (auto* p : params) {
      moments.m.emplace_back(p->numel(), T(0));
      moments.v.emplace_back(p->numel(), T(0));
    }
    moments.t = 0;
  }
  ++moments.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(moments.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(moments.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    if (!p.has_grad()) continue;
    auto& m = moments.m[i];
    auto& v = moments.v[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double g = p.grad[j];
      const double mj = hyper.beta1 * m[j] + (1 - hyper.beta1) * g;
      const double vj = hyper.beta2 * v[j] + (1 - hyper.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p.data[j] -= static_cast<T>(hyper.lr * (mj / c1) / (std::sqrt(vj / c2) + hyper.eps));
    }
  }
}

// ---- configuration ----

ModelVariant ModelVariant::parse(const std::string& text) {
  ModelVariant v;
  if (text == "mice") {
    v.kind = Kind::Mice;
    v.step = MaskStep::Step3;
    return v;
  }
  v.step = parse_step(text);
  return v;
}

std::string ModelVariant::name() const {
  return kind == Kind::Mice ? "mice" : step_name(step);
}

TrainConfig TrainConfig::profile(const std::string& name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.steps = 125000;
    c.batch_size = 32;
    c.lr_peak = 7e-6;
    c.warmup_steps = 5000;
    c.validate_every = 10000;
    return c;
  }
  throw ConfigError("unknown training profile '" + name + "' (expected desk or paper)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
    const auto v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "steps") {
    steps = parse_uint(key, value);
  } else if (key == "batch_size") {
    batch_size = parse_uint(key, value);
  } else if (key == "lr_peak") {
    lr_peak = parse_real(key, value);
  } else if (key == "warmup_steps") {
    warmup_steps = parse_uint(key, value);
  } else if (key == "validate_every") {
    validate_every = parse_uint(key, value);
  } else if (key == "seed") {
    seed = parse_uint(key, value);
  } else if (key == "variant") {
    try {
      variant = ModelVariant::parse(value);
    } catch (const UsageError& e) {
      throw ConfigError(std::string("config key 'variant': ") + e.what());
    }
  } else if (key == "ell_star") {
    ell_star = parse_uint(key, value);
  } else if (key == "k_inter") {
    k_inter = parse_uint(key, value);
  } else if (key == "dev_negatives") {
    dev_negatives = parse_uint(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool any = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "profile") {
      if (any) throw ConfigError("config line " + std::to_string(lineno) + ": profile must come first");
      c = profile(value);
    } else {
      c.set(key, value);
    }
    any = true;
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open training config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_string() const {
  std::ostringstream out;
  out << "steps = " << steps << "\nbatch_size = " << batch_size << "\nlr_peak = " << lr_peak
      << "\nwarmup_steps = " << warmup_steps << "\nvalidate_every = " << validate_every
      << "\nseed = " << seed << "\nvariant = " << variant.name() << "\nell_star = " << ell_star
      << "\nk_inter = " << k_inter << "\ndev_negatives = " << dev_negatives << "\n";
  return out.str();
}

void TrainConfig::validate() const {
  if (steps > 0 && warmup_steps >= steps) {
    throw ConfigError("warmup_steps (" + std::to_string(warmup_steps) + ") must be below steps (" +
                      std::to_string(steps) + ")");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (validate_every == 0) throw ConfigError("validate_every must be positive");
  if (!(lr_peak > 0)) throw ConfigError("lr_peak must be positive");
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step == 0) throw UsageError("lr_schedule: steps are counted from 1");
  const auto s = static_cast<double>(step);
  if (step <= cfg.warmup_steps) return cfg.lr_peak * s / static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.steps) return 0.0;
  return cfg.lr_peak * static_cast<double>(cfg.steps - step) /
         static_cast<double>(cfg.steps - cfg.warmup_steps);
}

// ---- synthetic data ----

std::vector<TextRecord> RankingTask::all_queries() const {
  auto out = train_queries;
  out.insert(out.end(), dev_queries.begin(), dev_queries.end());
  return out;
}

RankingTask synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_docs == 0 || cfg.n_queries == 0 || cfg.vocab_size == 0) {
    throw ConfigError("synth: sizes must be at least 1");
  }
  if (cfg.docs_per_topic == 0 || cfg.topic_terms == 0 || cfg.query_terms == 0) {
    throw ConfigError("synth: docs_per_topic, topic_terms and query_terms must be positive");
  }
  if (cfg.query_terms > cfg.topic_terms) throw ConfigError("synth: query_terms exceeds topic_terms");
  if (cfg.dev_queries >= cfg.n_queries) throw ConfigError("synth: dev_queries must be below n_queries");
  if (cfg.min_doc_len == 0 || cfg.min_doc_len > cfg.max_doc_len) {
    throw ConfigError("synth: need 1 <= min_doc_len <= max_doc_len");
  }
  const std::size_t topics = (cfg.n_docs + cfg.docs_per_topic - 1) / cfg.docs_per_topic;
  const std::size_t topic_words = topics * cfg.topic_terms;
  if (topic_words >= cfg.vocab_size) {
    throw ConfigError("synth: vocab_size " + std::to_string(cfg.vocab_size) + " leaves no background words after " +
                      std::to_string(topic_words) + " topic words");
  }
  const std::size_t background = cfg.vocab_size - topic_words;

  auto topic_word = [&](std::size_t topic, std::size_t j) {
    return "t" + std::to_string(topic) + "w" + std::to_string(j);
  };
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> len_dist(cfg.min_doc_len, cfg.max_doc_len);
  std::uniform_int_distribution<std::size_t> word_dist(0, cfg.topic_terms - 1);
  std::uniform_int_distribution<std::size_t> bg_dist(0, background - 1);
  std::bernoulli_distribution topical(cfg.topic_ratio);

  RankingTask task;
  std::vector<std::vector<std::string>> topic_docs(topics);
  for (std::size_t i = 0; i < cfg.n_docs; ++i) {
    const std::size_t topic = i / cfg.docs_per_topic;
    const std::size_t len = len_dist(rng);
    std::string text;
    for (std::size_t t = 0; t < len; ++t) {
      if (t) text += ' ';
      // The first token is always topical so every document carries its topic.
      if (t == 0 || topical(rng)) {
        text += topic_word(topic, word_dist(rng));
      } else {
        text += "bg" + std::to_string(bg_dist(rng));
      }
    }
    const std::string id = "d" + std::to_string(i);
    topic_docs[topic].push_back(id);
    task.corpus.push_back({id, std::move(text)});
  }

  std::uniform_int_distribution<std::size_t> topic_dist(0, topics - 1);
  std::vector<std::size_t> order(cfg.topic_terms);
  for (std::size_t q = 0; q < cfg.n_queries; ++q) {
    const std::size_t topic = topic_dist(rng);
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::shuffle(order.begin(), order.end(), rng);
    std::string text;
    for (std::size_t j = 0; j < cfg.query_terms; ++j) {
      if (j) text += ' ';
      text += topic_word(topic, order[j]);
    }
    const std::string id = "q" + std::to_string(q);
    for (const auto& d : topic_docs[topic]) task.qrels[id][d] = 1;
    TextRecord rec{id, std::move(text)};
    if (q < cfg.n_queries - cfg.dev_queries) {
      task.train_queries.push_back(std::move(rec));
    } else {
      task.dev_queries.push_back(std::move(rec));
    }
  }
  return task;
}

double Teacher::score(std::span<const std::string> query_terms, std::span<const std::string> doc_terms,
                      bool relevant) const {
  std::unordered_map<std::string_view, std::size_t> tf;
  for (const auto& t : doc_terms) ++tf[t];
  double s = 0;
  for (const auto& t : query_terms) {
    auto it = tf.find(t);
    if (it == tf.end()) continue;
    const double f = static_cast<double>(it->second);
    s += f / (f + 1.0);
  }
  return s + (relevant ? bonus : 0.0);
}

// ---- rankers ----

template <typename T>
std::vector<T> Ranker<T>::score_many(std::span<const TokenId> query,
                                     std::span<const std::vector<TokenId>> docs) const {
  std::vector<T> out(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    Tape<T> tape(false);
    out[i] = score(tape, query, docs[i]).value().data[0];
  });
  return out;
}

template <typename T>
CrossEncoderRanker<T>::CrossEncoderRanker(Weights<T> weights, MaskSpec spec)
    : w_(std::move(weights)), spec_(spec) {
  spec_.total_layers = w_.config.layers;
  spec_.validate();
}

template <typename T>
Var<T> CrossEncoderRanker<T>::score(Tape<T>& tape, std::span<const TokenId> query,
                                    std::span<const TokenId> doc) const {
  return cross_encoder_score(tape, w_, query, doc, spec_, 0, &cache_);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> CrossEncoderRanker<T>::parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  w_.visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

template <typename T>
void CrossEncoderRanker<T>::restore(const CheckpointData& ckpt) {
  w_ = weights_from_checkpoint<T>(ckpt);
}

template <typename T>
Var<T> MiceRanker<T>::score(Tape<T>& tape, std::span<const TokenId> query,
                            std::span<const TokenId> doc) const {
  return model_.score_online(tape, query, doc);
}

template <typename T>
std::vector<T> MiceRanker<T>::score_many(std::span<const TokenId> query,
                                         std::span<const std::vector<TokenId>> docs) const {
  const Tensor<T> q = model_.encode_query(query);
  std::vector<T> out(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) { out[i] = model_.score_encoded(q, model_.encode_document("", docs[i])); });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> MiceRanker<T>::parameters() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  model_.mutable_weights().visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

template <typename T>
void MiceRanker<T>::restore(const CheckpointData& ckpt) {
  model_.mutable_weights() = mice_weights_from_checkpoint<T>(ckpt);
  model_.refresh_fingerprint();
}

template <typename T>
MiceModel<T>& MiceRanker<T>::model() {
  model_.refresh_fingerprint();
  return model_;
}

// ---- training loop ----

std::map<std::string, std::vector<std::string>> dev_candidates(const RankingTask& task,
                                                               std::size_t negatives,
                                                               std::uint64_t seed) {
  if (task.corpus.empty()) throw InputError("validation: empty corpus");
  std::mt19937_64 rng(seed ^ 0x5eed'cafe'f00dULL);
  std::uniform_int_distribution<std::size_t> pick(0, task.corpus.size() - 1);
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& q : task.dev_queries) {
    auto it = task.qrels.find(q.id);
    std::vector<std::string> cands;
    std::unordered_set<std::string> used;
    if (it != task.qrels.end()) {
      for (const auto& [doc, rel] : it->second) {
        cands.push_back(doc);
        used.insert(doc);
      }
    }
    const std::size_t available = task.corpus.size() - std::min(used.size(), task.corpus.size());
    const std::size_t want = std::min(negatives, available);
    for (std::size_t added = 0; added < want;) {
      const auto& doc = task.corpus[pick(rng)].id;
      if (used.insert(doc).second) {
        cands.push_back(doc);
        ++added;
      }
    }
    out[q.id] = std::move(cands);
  }
  return out;
}

namespace {

using TokenTable = std::unordered_map<std::string, std::vector<TokenId>>;

TokenTable tokenize_all(std::span<const TextRecord> records, const Vocab& vocab) {
  TokenTable t;
  for (const auto& r : records) t[r.id] = tokenize_nonempty(r.text, vocab);
  return t;
}

}  // namespace

template <typename T>
std::vector<RankedList> dev_rankings(const Ranker<T>& model, const RankingTask& task, const Vocab& vocab,
                                     const std::map<std::string, std::vector<std::string>>& candidates) {
  const DocTexts texts = index_texts(task.corpus);
  std::vector<RankedList> out;
  for (const auto& q : task.dev_queries) {
    auto c = candidates.find(q.id);
    if (c == candidates.end()) throw InputError("validation: no candidates for query '" + q.id + "'");
    const auto& cands = c->second;
    std::vector<std::vector<TokenId>> docs;
    docs.reserve(cands.size());
    for (const auto& id : cands) {
      auto it = texts.find(id);
      if (it == texts.end()) throw InputError("validation: unknown doc id '" + id + "'");
      docs.push_back(tokenize_nonempty(it->second, vocab));
    }
    const auto scores = model.score_many(tokenize_nonempty(q.text, vocab), docs);
    RankedList list{q.id, {}};
    for (std::size_t i = 0; i < cands.size(); ++i) list.items.push_back({cands[i], static_cast<double>(scores[i])});
    sort_ranking(list.items);
    out.push_back(std::move(list));
  }
  return out;
}

template <typename T>
double validate_rr10(const Ranker<T>& model, const RankingTask& task, const Vocab& vocab,
                     const std::map<std::string, std::vector<std::string>>& candidates) {
  if (task.dev_queries.empty()) throw InputError("validation: no held-out queries");
  static const std::map<std::string, int> kNone;
  double total = 0;
  for (const auto& list : dev_rankings(model, task, vocab, candidates)) {
    auto rel = task.qrels.find(list.query_id);
    total += rr_at_k(list, rel == task.qrels.end() ? kNone : rel->second, 10);
  }
  return total / static_cast<double>(task.dev_queries.size());
}

template <typename T>
TrainResult train(Ranker<T>& model, const RankingTask& task, const Vocab& vocab, const TrainConfig& cfg,
                  const TrainOutputs& outputs) {
  cfg.validate();
  if (task.train_queries.empty()) throw InputError("training: no training queries");

  const TokenTable doc_tokens = tokenize_all(task.corpus, vocab);
  const TokenTable query_tokens = tokenize_all(task.train_queries, vocab);
  std::unordered_map<std::string, std::vector<std::string>> doc_terms, query_terms;
  for (const auto& d : task.corpus) doc_terms[d.id] = split_terms(d.text);
  for (const auto& q : task.train_queries) query_terms[q.id] = split_terms(q.text);

  // Queries usable for triples: at least one relevant and one non-relevant doc.
  std::vector<const TextRecord*> usable;
  for (const auto& q : task.train_queries) {
    auto it = task.qrels.find(q.id);
    if (it == task.qrels.end()) continue;
    std::size_t relevant = 0;
    for (const auto& [doc, rel] : it->second) {
      if (rel > 0 && doc_tokens.count(doc)) ++relevant;
    }
    if (relevant > 0 && relevant < task.corpus.size()) usable.push_back(&q);
  }
  if (cfg.steps > 0 && usable.empty()) {
    throw InputError("training: no query has both relevant and non-relevant documents");
  }

  const auto candidates = dev_candidates(task, cfg.dev_negatives, cfg.seed);
  const Teacher teacher;
  std::mt19937_64 rng(cfg.seed);

  std::ofstream metrics;
  if (outputs.metrics) {
    metrics.open(*outputs.metrics);
    if (!metrics) throw InputError("cannot write metrics log " + outputs.metrics->string());
  }

  TrainResult result;
  result.best_rr10 = -1;
  auto run_validation = [&](std::size_t step, std::optional<double> loss, double lr) {
    TrainLogEntry e{step, loss, lr, validate_rr10(model, task, vocab, candidates)};
    result.log.push_back(e);
    if (metrics) {
      nlohmann::json j{{"step", e.step}, {"lr", e.lr}, {"rr10", e.rr10}};
      j["loss"] = e.loss ? nlohmann::json(*e.loss) : nlohmann::json(nullptr);
      metrics << j.dump() << std::endl;
    }
    if (outputs.verbose) {
      std::cout << "step " << step << "  loss " << (loss ? std::to_string(*loss) : std::string("-"))
                << "  lr " << lr << "  rr@10 " << std::fixed << std::setprecision(4) << e.rr10
                << std::defaultfloat << "\n";
    }
    if (e.rr10 > result.best_rr10) {
      result.best_rr10 = e.rr10;
      result.best_step = step;
      result.best = model.checkpoint();
      if (outputs.checkpoint) write_checkpoint(*outputs.checkpoint, result.best);
    }
  };

  run_validation(0, std::nullopt, 0.0);

  auto named = model.parameters();
  std::vector<Tensor<T>*> params;
  std::vector<std::string> names;
  for (auto& [name, p] : named) {
    params.push_back(p);
    names.push_back(name);
  }
  AdamMoments<T> moments;
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, omp_get_max_threads()));
  std::uniform_int_distribution<std::size_t> pick_query(0, usable.size() - 1 + (usable.empty() ? 1 : 0));
  std::uniform_int_distribution<std::size_t> pick_doc(0, task.corpus.size() - 1);

  double interval_loss = 0;
  std::size_t interval_steps = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const double lr = lr_schedule(step, cfg);

    // Sample the batch sequentially so data order depends only on the seed.
    std::vector<Triple> batch(cfg.batch_size);
    for (auto& tr : batch) {
      const TextRecord& q = *usable[pick_query(rng)];
      const auto& rels = task.qrels.at(q.id);
      std::vector<std::string> pos;
      for (const auto& [doc, rel] : rels) {
        if (rel > 0 && doc_tokens.count(doc)) pos.push_back(doc);
      }
      tr.query_id = q.id;
      tr.pos_doc_id = pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(rng)];
      do {
        tr.neg_doc_id = task.corpus[pick_doc(rng)].id;
      } while (rels.count(tr.neg_doc_id) && rels.at(tr.neg_doc_id) > 0);
      const auto& qt = query_terms.at(q.id);
      tr.teacher_pos = teacher.score(qt, doc_terms.at(tr.pos_doc_id), true);
      tr.teacher_neg = teacher.score(qt, doc_terms.at(tr.neg_doc_id), false);
    }

    for (auto* p : params) {
      p->ensure_grad();
      p->zero_grad();
    }
    const T inv_batch = T(1) / static_cast<T>(cfg.batch_size);
    double batch_loss = 0;
    for (std::size_t begin = 0; begin < batch.size(); begin += chunk) {
      const std::size_t count = std::min(chunk, batch.size() - begin);
      std::vector<std::vector<Buffer<T>>> grads(count);
      std::vector<double> losses(count, 0.0);
      std::vector<std::exception_ptr> errors(count);
#pragma omp parallel for schedule(static, 1)
      for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(count); ++j) {
        const auto uj = static_cast<std::size_t>(j);
        const Triple& tr = batch[begin + uj];
        try {
          Tape<T> tape;
          const auto& q = query_tokens.at(tr.query_id);
          auto sp = model.score(tape, q, doc_tokens.at(tr.pos_doc_id));
          auto sn = model.score(tape, q, doc_tokens.at(tr.neg_doc_id));
          auto loss = margin_mse(sp, sn, static_cast<T>(tr.teacher_pos), static_cast<T>(tr.teacher_neg));
          losses[uj] = static_cast<double>(loss.value().data[0]);
          tape.backward(loss);
          grads[uj].resize(params.size());
          for (std::size_t i = 0; i < params.size(); ++i) {
            if (const Buffer<T>* g = tape.grad(*params[i])) grads[uj][i] = *g;
          }
        } catch (...) {
          errors[uj] = std::current_exception();
        }
      }
      for (std::size_t j = 0; j < count; ++j) {
        if (errors[j]) std::rethrow_exception(errors[j]);
        batch_loss += losses[j];
        for (std::size_t i = 0; i < params.size(); ++i) {
          const auto& g = grads[j][i];
          if (g.empty()) continue;
          auto& dst = params[i]->grad;
          for (std::size_t e = 0; e < g.size(); ++e) dst[e] += g[e] * inv_batch;
        }
      }
    }
    batch_loss /= static_cast<double>(cfg.batch_size);
    if (!std::isfinite(batch_loss)) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": loss is not finite");
    }
    adam_step<T>(params, moments, AdamHyper{lr, 0.9, 0.999, 1e-8}, names);
    interval_loss += batch_loss;
    ++interval_steps;

    if (step % cfg.validate_every == 0 || step == cfg.steps) {
      run_validation(step, interval_loss / static_cast<double>(interval_steps), lr);
      interval_loss = 0;
      interval_steps = 0;
    }
  }

  model.restore(result.best);
  return result;
}

#define MICE_INSTANTIATE_TRAINING(T)                                                              \
  template Var<T> margin_mse(Var<T>, Var<T>, T, T);                                               \
  template void adam_step(std::span<Tensor<T>* const>, AdamMoments<T>&, const AdamHyper&,         \
                          std::span<const std::string>);                                          \
  template class Ranker<T>;                                                                       \
  template class CrossEncoderRanker<T>;                                                           \
  template class MiceRanker<T>;                                                                   \
  template std::vector<RankedList> dev_rankings(const Ranker<T>&, const RankingTask&, const Vocab&,  \
                                                const std::map<std::string, std::vector<std::string>>&); \
  template double validate_rr10(const Ranker<T>&, const RankingTask&, const Vocab&,               \
                                const std::map<std::string, std::vector<std::string>>&);          \
  template TrainResult train(Ranker<T>&, const RankingTask&, const Vocab&, const TrainConfig&,    \
                             const TrainOutputs&);

MICE_INSTANTIATE_TRAINING(float)
MICE_INSTANTIATE_TRAINING(double)

}  // namespace mice
