// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint:
//   "IATN1\n"
//   u32 tensor count
//   per tensor: u16 name length, name (UTF-8), u8 rank, rank x u32 dims,
//               row-major f32 values
//   u32 length, then a UTF-8 key=value block (training config, dimensions,
//   vocabulary and answer catalog)
// All integers and floats little-endian.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "iatn/config.hpp"
#include "iatn/error.hpp"
#include "iatn/model.hpp"
#include "iatn/ndgrad/tensor.hpp"
#include "iatn/trainer.hpp"

namespace iatn {

inline constexpr char kCheckpointMagic[] = "IATN1\n";
inline constexpr std::size_t kCheckpointMagicSize = 6;

struct Checkpoint {
  std::vector<std::pair<std::string, nd::Tensor>> tensors;
  KeyValues meta;
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void le(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
    }
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError("corrupt checkpoint at offset " + std::to_string(pos_) + ": " + msg);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      fail(std::string("truncated while reading ") + what + " (need " + std::to_string(n) +
           " bytes, " + std::to_string(data_.size() - pos_) + " left)");
    }
  }

  std::vector<char> data_;
  std::size_t pos_ = 0;
};

inline std::string join_tab(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += '\t';
    out += parts[i];
  }
  return out;
}

inline std::vector<std::string> split_tab(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto tab = s.find('\t', start);
    out.push_back(s.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

/// key=value lines without comment handling; values may hold any byte but '\n'.
inline KeyValues parse_meta_block(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("corrupt checkpoint metadata line: " + line);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, kCheckpointMagicSize);
  w.le(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + name);
    w.le(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.le(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f32(static_cast<float>(v));
  }
  std::string meta;
  for (const auto& [k, v] : ckpt.meta) {
    if (v.find('\n') != std::string::npos) throw CheckpointError("metadata value for '" + k + "' has a newline");
    meta += k + "=" + v + "\n";
  }
  w.le(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(data));
  if (r.str(kCheckpointMagicSize, "magic") != std::string(kCheckpointMagic, kCheckpointMagicSize)) {
    throw CheckpointError("corrupt checkpoint at offset 0: bad magic bytes");
  }
  Checkpoint ckpt;
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    const auto rank = r.le<std::uint8_t>("tensor rank");
    if (rank == 0) r.fail("tensor '" + name + "' has rank 0");
    nd::Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim = r.le<std::uint32_t>("tensor dimension");
      if (dim == 0) r.fail("tensor '" + name + "' has a zero dimension");
      shape.push_back(dim);
    }
    std::vector<double> values(nd::shape_size(shape));
    for (double& v : values) v = static_cast<double>(r.f32("tensor values"));
    ckpt.tensors.emplace_back(std::move(name), nd::Tensor(std::move(shape), std::move(values)));
  }
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  ckpt.meta = detail::parse_meta_block(r.str(meta_len, "metadata block"));
  if (!r.at_end()) r.fail("trailing bytes after metadata block");
  return ckpt;
}

/// Parameters plus everything needed to serve them: config, vocabulary and
/// answer catalog.
inline Checkpoint make_checkpoint(const Model& model, const QAPipeline& pipeline,
                                  const TrainConfig& cfg) {
  Checkpoint ckpt;
  for (const nd::Var& p : model.params().all()) ckpt.tensors.emplace_back(p->name(), p->value());
  ckpt.meta = cfg.to_key_values();
  ckpt.meta["vocab_size"] = std::to_string(model.dims().vocab_size);
  ckpt.meta["num_answers"] = std::to_string(model.dims().num_answers);
  ckpt.meta["vocab"] = detail::join_tab(pipeline.vocab().corpus_tokens());
  ckpt.meta["answers"] = detail::join_tab(pipeline.catalog().answers());
  return ckpt;
}

/// Training config stored in a checkpoint (serving-only keys removed).
inline TrainConfig checkpoint_config(const Checkpoint& ckpt) {
  KeyValues kv = ckpt.meta;
  for (const char* k : {"vocab_size", "num_answers", "vocab", "answers"}) kv.erase(k);
  return TrainConfig::from_key_values(kv);
}

inline Vocabulary checkpoint_vocabulary(const Checkpoint& ckpt) {
  Vocabulary v;
  auto it = ckpt.meta.find("vocab");
  if (it != ckpt.meta.end())
    for (const auto& t : detail::split_tab(it->second)) v.add(t);
  return v;
}

inline AnswerCatalog checkpoint_catalog(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("answers");
  return it == ckpt.meta.end() ? AnswerCatalog{} : AnswerCatalog(detail::split_tab(it->second));
}

inline std::string describe_dims(const ModelDims& d) {
  return "d=" + std::to_string(d.embed) + ",h=" + std::to_string(d.hidden) +
         ",s=" + std::to_string(d.state) + ",u=" + std::to_string(d.pred_hidden) +
         ",g_hidden=" + std::to_string(d.gate_hidden) + ",T=" + std::to_string(d.steps) +
         ",|V|=" + std::to_string(d.vocab_size) + ",|A|=" + std::to_string(d.num_answers) +
         ",shared_encoder=" + (d.shared_encoder ? "true" : "false");
}

/// Rebuilds the model stored in `ckpt`. When `expected` is given its
/// dimensions must match the checkpoint's.
inline Model restore_model(const Checkpoint& ckpt, const ModelDims* expected = nullptr) {
  const TrainConfig cfg = checkpoint_config(ckpt);
  auto count = [&](const char* key) -> std::size_t {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw CheckpointError(std::string("checkpoint metadata lacks '") + key + "'");
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  const ModelDims dims = cfg.dims(count("vocab_size"), count("num_answers"));
  if (expected && !(*expected == dims)) {
    throw ConfigError("dimension mismatch: checkpoint has " + describe_dims(dims) +
                      " but config expects " + describe_dims(*expected));
  }
  Model model(dims, 0, cfg.init_std);
  if (ckpt.tensors.size() != model.params().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model expects " + std::to_string(model.params().size()));
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (!model.params().contains(name)) throw CheckpointError("unexpected tensor '" + name + "'");
    nd::Tensor& dst = model.params().get(name)->mutable_value();
    if (dst.shape() != t.shape()) {
      throw ConfigError("dimension mismatch for '" + name + "': checkpoint " +
                        nd::shape_str(t.shape()) + " vs model " + nd::shape_str(dst.shape()));
    }
    dst = t;
  }
  return model;
}

/// Rounds every parameter to the checkpoint's f32 storage precision.
inline void round_to_stored_precision(nd::ParamStore& params) {
  for (const nd::Var& p : params.all())
    for (double& v : p->mutable_value().data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace iatn
