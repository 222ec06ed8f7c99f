#include "tcsf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace tcsf {

namespace {

void write_entry(std::ostream& os, const std::string& name, const Shape& shape,
                 const std::vector<double>& values) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<uint32_t>(shape.size()));
  for (int d : shape) write_u32(os, static_cast<uint32_t>(d));
  for (double v : values) write_f64(os, v);
}

struct Entry {
  Shape shape;
  std::vector<double> values;
};

std::pair<std::string, Entry> read_entry(std::istream& is) {
  const uint32_t name_len = read_u32(is);
  if (name_len == 0 || name_len > 4096) throw CorruptStreamError("bad checkpoint entry name");
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  if (!is) throw CorruptStreamError("truncated checkpoint entry name");
  const uint32_t rank = read_u32(is);
  if (rank > 8) throw CorruptStreamError("bad checkpoint entry rank");
  Entry e;
  int64_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint32_t d = read_u32(is);
    if (d == 0 || d > (1u << 26)) throw CorruptStreamError("bad checkpoint dimension");
    e.shape.push_back(static_cast<int>(d));
    count *= d;
  }
  if (count > (int64_t{1} << 28)) throw CorruptStreamError("checkpoint entry too large");
  e.values.resize(static_cast<size_t>(count));
  for (double& v : e.values) v = read_f64(is);
  return {std::move(name), std::move(e)};
}

}  // namespace

Checkpoint Checkpoint::fresh(const TrainConfig& cfg, int vocab_size) {
  Checkpoint ck;
  ck.config = cfg;
  ck.vocab_size = vocab_size;
  ck.epoch = 0;
  ck.model = std::make_unique<TcsfModel>(cfg.model_config(vocab_size), cfg.seed);
  ck.optimizer = AdamOptimizer(cfg.lr);
  return ck;
}

void save_checkpoint(std::ostream& os, const Checkpoint& ck) {
  if (!ck.model) throw std::logic_error("save_checkpoint: no model");
  const auto& items = ck.model->params().items();
  const auto kv = ck.config.to_kv();
  const auto& slots = const_cast<AdamOptimizer&>(ck.optimizer).slots();

  uint32_t entries = static_cast<uint32_t>(kv.size()) + 3;  // + meta
  entries += static_cast<uint32_t>(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    if (i < slots.size() && !slots[i].m.empty()) entries += 2;
  }

  os.write("TCSF", 4);
  write_u32(os, 1);  // format version
  write_u32(os, entries);
  for (const auto& [k, v] : kv) write_entry(os, "config." + k, {1}, {v});
  write_entry(os, "meta.vocab_size", {1}, {static_cast<double>(ck.vocab_size)});
  write_entry(os, "meta.epoch", {1}, {static_cast<double>(ck.epoch)});
  write_entry(os, "meta.adam", {2},
              {static_cast<double>(ck.optimizer.steps()), ck.optimizer.lr()});
  for (size_t i = 0; i < items.size(); ++i) {
    const auto& [name, tensor] = items[i];
    write_entry(os, "param." + name, tensor.shape(), tensor.values());
    if (i < slots.size() && !slots[i].m.empty()) {
      write_entry(os, "adam.m." + name, tensor.shape(), slots[i].m);
      write_entry(os, "adam.v." + name, tensor.shape(), slots[i].v);
    }
  }
  if (!os) throw IoError("failed writing checkpoint");
}

Checkpoint load_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TCSF", 4) != 0) {
    throw CorruptStreamError("bad checkpoint magic");
  }
  const uint32_t version = read_u32(is);
  if (version != 1) throw CorruptStreamError("unsupported checkpoint version");
  const uint32_t count = read_u32(is);
  if (count > (1u << 20)) throw CorruptStreamError("implausible checkpoint entry count");

  std::map<std::string, Entry> entries;
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, e] = read_entry(is);
    if (!entries.emplace(std::move(name), std::move(e)).second) {
      throw CorruptStreamError("duplicate checkpoint entry");
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CorruptStreamError("trailing data after checkpoint payload");
  }

  auto scalar = [&](const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw CorruptStreamError("missing checkpoint entry: " + name);
    return it->second.values.at(0);
  };

  Checkpoint ck;
  for (const auto& [name, e] : entries) {
    if (name.rfind("config.", 0) == 0) ck.config.set_kv(name.substr(7), e.values.at(0));
  }
  ck.config.validate();
  ck.vocab_size = static_cast<int>(scalar("meta.vocab_size"));
  ck.epoch = static_cast<int>(scalar("meta.epoch"));

  ck.model = std::make_unique<TcsfModel>(ck.config.model_config(ck.vocab_size), ck.config.seed);
  const auto& items = ck.model->params().items();

  auto meta_adam = entries.find("meta.adam");
  if (meta_adam == entries.end() || meta_adam->second.values.size() != 2) {
    throw CorruptStreamError("missing optimizer state");
  }
  ck.optimizer = AdamOptimizer(meta_adam->second.values[1]);
  ck.optimizer.set_steps(static_cast<int64_t>(meta_adam->second.values[0]));
  ck.optimizer.slots().resize(items.size());

  for (size_t i = 0; i < items.size(); ++i) {
    const auto& [name, tensor] = items[i];
    auto it = entries.find("param." + name);
    if (it == entries.end()) throw CorruptStreamError("missing parameter: " + name);
    if (it->second.shape != tensor.shape()) {
      throw CorruptStreamError("parameter shape mismatch for " + name +
                               " (incompatible checkpoint)");
    }
    const_cast<Tensor&>(tensor).mutable_values() = it->second.values;
    auto im = entries.find("adam.m." + name);
    auto iv = entries.find("adam.v." + name);
    if (im != entries.end() && iv != entries.end()) {
      ck.optimizer.slots()[i].m = im->second.values;
      ck.optimizer.slots()[i].v = iv->second.values;
    }
  }
  return ck;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  save_checkpoint(f, ck);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  return load_checkpoint(f);
}

}  // namespace tcsf
