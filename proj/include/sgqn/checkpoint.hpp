#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgqn/agent.hpp"
#include "sgqn/config.hpp"
#include "sgqn/tensor.hpp"

namespace sgqn {

// Self-contained binary snapshot: the resolved config text, key=value
// metadata, and a flat list of named float64 tensors covering every
// parameter and optimizer moment. Enough to resume training or to evaluate
// without the original config file.
struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, Tensor<double>>> tensors;

  const Tensor<double>& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  }

  const std::string* meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return &v;
    return nullptr;
  }
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'S', 'G', 'Q', 'N', 'C', 'K', 'P', '1'};

inline void put_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

inline uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline std::string get_string(std::istream& is, uint64_t limit = 1ULL << 32) {
  const uint64_t n = get_u64(is);
  if (n > limit) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace ckpt_detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  using namespace ckpt_detail;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path +
                                    "' for writing");
  os.write(kMagic, sizeof kMagic);
  const uint32_t version = 1;
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  put_string(os, ck.config_text);
  put_u64(os, ck.metadata.size());
  for (const auto& [k, v] : ck.metadata) {
    put_string(os, k);
    put_string(os, v);
  }
  put_u64(os, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    put_string(os, name);
    put_u64(os, t.shape.size());
    for (int d : t.shape) put_u64(os, uint64_t(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             std::streamsize(t.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path +
                                    "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: '" + path +
                             "' is not a checkpoint file");
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!is || version != 1)
    throw std::runtime_error("checkpoint: unsupported version");

  Checkpoint ck;
  ck.config_text = get_string(is);
  const uint64_t nmeta = get_u64(is);
  for (uint64_t i = 0; i < nmeta; ++i) {
    std::string k = get_string(is);
    std::string v = get_string(is);
    ck.metadata.emplace_back(std::move(k), std::move(v));
  }
  const uint64_t ntensors = get_u64(is);
  for (uint64_t i = 0; i < ntensors; ++i) {
    std::string name = get_string(is);
    const uint64_t ndim = get_u64(is);
    if (ndim > 8) throw std::runtime_error("checkpoint: corrupt tensor rank");
    std::vector<int> shape;
    int64_t numel = 1;
    for (uint64_t d = 0; d < ndim; ++d) {
      const uint64_t dim = get_u64(is);
      if (dim == 0 || dim > (1ULL << 31))
        throw std::runtime_error("checkpoint: corrupt tensor shape");
      shape.push_back(int(dim));
      numel *= int64_t(dim);
    }
    Tensor<double> t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            std::streamsize(size_t(numel) * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

namespace ckpt_detail {

template <typename T>
void append_optimizer(Checkpoint& ck, const std::string& prefix,
                      const Adam<T>& opt, const ParamStore<T>& store) {
  Tensor<double> t({1});
  t[0] = double(opt.steps_taken());
  ck.tensors.emplace_back(prefix + ".t", std::move(t));
  for (size_t k = 0; k < opt.ids().size(); ++k) {
    const std::string& pname = store.names[opt.ids()[k]];
    ck.tensors.emplace_back(prefix + ".m." + pname, opt.moments_m()[k]);
    ck.tensors.emplace_back(prefix + ".v." + pname, opt.moments_v()[k]);
  }
}

template <typename T>
void restore_optimizer(const Checkpoint& ck, const std::string& prefix,
                       Adam<T>& opt, const ParamStore<T>& store) {
  const Tensor<double>& t = ck.tensor(prefix + ".t");
  opt.set_steps_taken(int64_t(t[0]));
  for (size_t k = 0; k < opt.ids().size(); ++k) {
    const std::string& pname = store.names[opt.ids()[k]];
    const Tensor<double>& m = ck.tensor(prefix + ".m." + pname);
    const Tensor<double>& v = ck.tensor(prefix + ".v." + pname);
    if (m.shape != opt.moments_m()[k].shape ||
        v.shape != opt.moments_v()[k].shape)
      throw std::runtime_error("checkpoint: moment shape mismatch for '" +
                               pname + "'");
    opt.moments_m()[k] = m;
    opt.moments_v()[k] = v;
  }
}

}  // namespace ckpt_detail

// Snapshot of everything the agent owns. float parameters round-trip
// exactly through the float64 container.
template <typename T>
void save_agent(const Agent<T>& agent, const std::string& path,
                std::vector<std::pair<std::string, std::string>> extra = {}) {
  Checkpoint ck;
  ck.config_text = serialize_config(agent.config());
  ck.metadata.emplace_back("action_dim",
                           std::to_string(agent.action_dim()));
  ck.metadata.emplace_back("action_entry", kActionEntry);
  ck.metadata.emplace_back("ssl_freezes_q_layers", "1");
  for (auto& kv : extra) ck.metadata.emplace_back(std::move(kv));

  const ParamStore<T>& store = agent.nets().store;
  for (size_t i = 0; i < store.size(); ++i)
    ck.tensors.emplace_back(store.names[i],
                            store.tensors[i].template cast<double>());
  ckpt_detail::append_optimizer(ck, "opt_critic", agent.opt_critic(), store);
  ckpt_detail::append_optimizer(ck, "opt_actor", agent.opt_actor(), store);
  ckpt_detail::append_optimizer(ck, "opt_temp", agent.opt_temp(), store);
  ckpt_detail::append_optimizer(ck, "opt_ssl", agent.opt_ssl(), store);
  write_checkpoint(path, ck);
}

// Rebuilds an agent from a checkpoint file; `raw_out`, when given, receives
// the parsed container (for metadata such as step counters).
template <typename T>
Agent<T> load_agent(const std::string& path, Checkpoint* raw_out = nullptr) {
  Checkpoint ck = read_checkpoint(path);
  const std::string* ad_str = ck.meta("action_dim");
  if (!ad_str)
    throw std::runtime_error("checkpoint: missing action_dim metadata");
  const int action_dim = std::stoi(*ad_str);
  const ExperimentConfig cfg = parse_config_text(ck.config_text, {});

  Agent<T> agent(cfg, action_dim);
  ParamStore<T>& store = agent.nets().store;
  for (size_t i = 0; i < store.size(); ++i) {
    const Tensor<double>& src = ck.tensor(store.names[i]);
    if (src.shape != store.tensors[i].shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" +
                               store.names[i] + "'");
    store.tensors[i] = src.template cast<T>();
  }
  ckpt_detail::restore_optimizer(ck, "opt_critic", agent.opt_critic(), store);
  ckpt_detail::restore_optimizer(ck, "opt_actor", agent.opt_actor(), store);
  ckpt_detail::restore_optimizer(ck, "opt_temp", agent.opt_temp(), store);
  ckpt_detail::restore_optimizer(ck, "opt_ssl", agent.opt_ssl(), store);
  if (raw_out) *raw_out = std::move(ck);
  return agent;
}

}  // namespace sgqn
