#pragma once

#include <fstream>

#include <nlohmann/json.hpp>

#include "sllie/params.hpp"

// Checkpoint container: a magic string, a JSON header describing config and
// tensor entries (canonical dot-separated names, shapes, byte offsets), then
// the raw little-endian float32 payload.

namespace sllie::ckpt {

inline constexpr char kMagic[] = "SLLIECKPT1\n";

struct Entry {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> data;
};

class Checkpoint {
 public:
  nlohmann::json meta;

  void add(const std::string& name, std::vector<int64_t> shape, std::vector<float> data) {
    if (index_.count(name)) throw std::invalid_argument("Checkpoint: duplicate entry " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(shape), std::move(data)});
  }

  template <typename T>
  void add_store(const std::string& prefix, const ParamStore<T>& store) {
    for (const auto& name : store.names()) {
      const Tensor<T>& t = store.get(name)->value;
      add(prefix + "." + name, t.shape, t.template cast<float>().data);
    }
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Entry& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("Checkpoint: missing entry " + name);
    return entries_[it->second];
  }

  const std::vector<Entry>& entries() const { return entries_; }

  // Strict load: every store parameter must exist with the right shape, and
  // no extra entries may hide under the prefix.
  template <typename T>
  void load_into_store(const std::string& prefix, ParamStore<T>& store) const {
    size_t used = 0;
    for (const auto& name : store.names()) {
      const std::string full = prefix + "." + name;
      if (!has(full)) throw std::runtime_error("Checkpoint: missing entry " + full);
      const Entry& e = get(full);
      Tensor<T>& dst = store.get(name)->value;
      if (e.shape != dst.shape)
        throw std::runtime_error("Checkpoint: shape mismatch at " + full);
      for (size_t i = 0; i < e.data.size(); ++i) dst.data[i] = T(e.data[i]);
      ++used;
    }
    for (const auto& e : entries_)
      if (e.name.rfind(prefix + ".", 0) == 0) --used;
    if (used != 0)
      throw std::runtime_error("Checkpoint: extra entries under prefix " + prefix);
  }

  void save(const std::string& path) const {
    nlohmann::json header;
    header["meta"] = meta;
    uint64_t offset = 0;
    for (const auto& e : entries_) {
      header["tensors"].push_back(
          {{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
      offset += e.data.size() * sizeof(float);
    }
    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("Checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic) - 1);
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& e : entries_)
      out.write(reinterpret_cast<const char*>(e.data.data()),
                std::streamsize(e.data.size() * sizeof(float)));
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("Checkpoint: cannot read " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, sizeof(magic)) != std::string(kMagic, sizeof(magic)))
      throw std::runtime_error("Checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), std::streamsize(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);
    Checkpoint ck;
    ck.meta = header.value("meta", nlohmann::json::object());
    if (header.contains("tensors"))
      for (const auto& t : header["tensors"]) {
        Entry e;
        e.name = t["name"].get<std::string>();
        e.shape = t["shape"].get<std::vector<int64_t>>();
        e.data.resize(size_t(Tensor<float>::numel_of(e.shape)));
        in.read(reinterpret_cast<char*>(e.data.data()),
                std::streamsize(e.data.size() * sizeof(float)));
        if (!in) throw std::runtime_error("Checkpoint: truncated payload in " + path);
        ck.index_[e.name] = ck.entries_.size();
        ck.entries_.push_back(std::move(e));
      }
    return ck;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace sllie::ckpt
