#include "nstm/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "nstm/errors.hpp"

namespace nstm {

namespace {

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : b_(std::move(bytes)) {}

  void need(std::size_t n, const std::string &what) const {
    if (pos_ + n > b_.size()) throw DataError("malformed header: file truncated while reading " + what);
  }
  std::uint8_t u8(const std::string &what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const std::string &what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string &what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b_[pos_ + i];
    pos_ += 4;
    return v;
  }
  float f32(const std::string &what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const std::string &what) {
    need(n, what);
    std::string s(reinterpret_cast<const char *>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::vector<unsigned char> b_;
  std::size_t pos_ = 0;
};

class Writer {
 public:
  void u8(std::uint8_t v) { b_.push_back(v); }
  void u16(std::uint16_t v) {
    b_.push_back(v & 0xff);
    b_.push_back(v >> 8);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b_.push_back((v >> (8 * i)) & 0xff);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string &s) { b_.insert(b_.end(), s.begin(), s.end()); }
  const std::vector<unsigned char> &bytes() const { return b_; }

 private:
  std::vector<unsigned char> b_;
};

std::vector<std::pair<std::string, const Tensor *>> named_tensors(const ModelWeights &w) {
  std::vector<std::pair<std::string, const Tensor *>> out;
  out.emplace_back("tok_emb", &w.tok_emb);
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    const auto &b = w.blocks[l];
    const std::string p = "blk." + std::to_string(l) + ".";
    out.emplace_back(p + "attn_norm", &b.attn_norm);
    out.emplace_back(p + "wq", &b.wq);
    out.emplace_back(p + "wk", &b.wk);
    out.emplace_back(p + "wv", &b.wv);
    out.emplace_back(p + "wo", &b.wo);
    out.emplace_back(p + "mlp_norm", &b.mlp_norm);
    out.emplace_back(p + "w_up", &b.w_up);
    out.emplace_back(p + "b_up", &b.b_up);
    out.emplace_back(p + "w_down", &b.w_down);
    out.emplace_back(p + "b_down", &b.b_down);
  }
  out.emplace_back("final_norm", &w.final_norm);
  out.emplace_back("lm_head", &w.lm_head);
  return out;
}

}  // namespace

Model load_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path.string() + "'");
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));

  if (r.str(4, "magic") != "NSTM") throw DataError("malformed header: bad magic, expected 'NSTM'");
  const std::uint32_t version = r.u32("format version");
  if (version != kWeightFormatVersion)
    throw DataError("malformed header: unsupported format version " + std::to_string(version));

  ModelConfig cfg;
  cfg.n_layers = r.u32("n_layers");
  cfg.n_heads = r.u32("n_heads");
  cfg.d_model = r.u32("d_model");
  cfg.d_ff = r.u32("d_ff");
  cfg.vocab_size = r.u32("vocab_size");
  cfg.max_seq_len = r.u32("max_seq_len");
  cfg.norm_eps = r.f32("norm_eps");
  cfg.rope_base = r.f32("rope_base");
  cfg.validate();

  const std::uint32_t count = r.u32("tensor count");
  std::map<std::string, Tensor> found;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string idx = "tensor #" + std::to_string(i);
    const std::uint16_t len = r.u16(idx + " name length");
    std::string name = r.str(len, idx + " name");
    const std::uint8_t rank = r.u8("rank of '" + name + "'");
    std::vector<std::size_t> dims(rank);
    for (auto &d : dims) d = r.u32("dims of '" + name + "'");
    const std::size_t n = Tensor::numel_of(dims);
    if (n > (std::size_t{1} << 31)) throw DataError("tensor '" + name + "' is implausibly large");
    r.need(4 * n, "payload of '" + name + "'");
    std::vector<float> data(n);
    for (auto &x : data) x = r.f32(name);
    if (found.count(name)) throw DataError("duplicate tensor '" + name + "'");
    found.emplace(name, Tensor(std::move(dims), std::move(data)));
  }
  if (!r.done()) throw DataError("malformed file: trailing bytes after last tensor");

  auto take = [&](const std::string &name) {
    auto it = found.find(name);
    if (it == found.end()) throw DataError("missing tensor '" + name + "'");
    Tensor t = std::move(it->second);
    found.erase(it);
    return t;
  };
  ModelWeights w;
  w.tok_emb = take("tok_emb");
  w.blocks.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto &b = w.blocks[l];
    const std::string p = "blk." + std::to_string(l) + ".";
    b.attn_norm = take(p + "attn_norm");
    b.wq = take(p + "wq");
    b.wk = take(p + "wk");
    b.wv = take(p + "wv");
    b.wo = take(p + "wo");
    b.mlp_norm = take(p + "mlp_norm");
    b.w_up = take(p + "w_up");
    b.b_up = take(p + "b_up");
    b.w_down = take(p + "w_down");
    b.b_down = take(p + "b_down");
  }
  w.final_norm = take("final_norm");
  w.lm_head = take("lm_head");
  if (!found.empty()) throw DataError("unexpected tensor '" + found.begin()->first + "'");
  return Model(cfg, std::move(w));
}

void save_model(const std::filesystem::path &path, const Model &model) {
  const auto &cfg = model.config();
  Writer w;
  w.str("NSTM");
  w.u32(kWeightFormatVersion);
  w.u32(cfg.n_layers);
  w.u32(cfg.n_heads);
  w.u32(cfg.d_model);
  w.u32(cfg.d_ff);
  w.u32(cfg.vocab_size);
  w.u32(cfg.max_seq_len);
  w.f32(cfg.norm_eps);
  w.f32(cfg.rope_base);
  const auto tensors = named_tensors(model.weights());
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto &[name, t] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    w.u8(static_cast<std::uint8_t>(t->rank()));
    for (auto d : t->dims) w.u32(static_cast<std::uint32_t>(d));
    for (float x : t->data) w.f32(x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write model file '" + path.string() + "'");
  out.write(reinterpret_cast<const char *>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace nstm
