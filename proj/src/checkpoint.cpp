// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "trex/config.hpp"
#include "trex/optim.hpp"

namespace trex {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'X', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeU32 = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw std::runtime_error(std::string("load_checkpoint: truncated file reading ") + what);
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, static_cast<std::uint64_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const char* what) {
  const auto len = read_pod<std::uint64_t>(is, what);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error(std::string("load_checkpoint: truncated ") + what);
  return s;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_pod(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod(os, kDtypeF64);
  write_pod(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t e : t.shape()) write_pod(os, static_cast<std::uint64_t>(e));
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void write_u32_tensor(std::ostream& os, const std::string& name,
                      const std::vector<std::uint32_t>& v) {
  write_pod(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod(os, kDtypeU32);
  write_pod(os, static_cast<std::uint32_t>(1));
  write_pod(os, static_cast<std::uint64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(std::uint32_t)));
}

struct RawEntry {
  std::uint8_t dtype = kDtypeF64;
  std::vector<std::size_t> shape;
  std::vector<double> f64;
  std::vector<std::uint32_t> u32;
};

std::map<std::string, RawEntry> read_entries(std::istream& is) {
  const auto count = read_pod<std::uint32_t>(is, "tensor count");
  std::map<std::string, RawEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(is, "tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("load_checkpoint: truncated tensor name");
    RawEntry e;
    e.dtype = read_pod<std::uint8_t>(is, "dtype");
    const auto ndim = read_pod<std::uint32_t>(is, "ndim");
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(is, "extent")));
      total *= e.shape.back();
    }
    if (e.dtype == kDtypeF64) {
      e.f64.resize(total);
      is.read(reinterpret_cast<char*>(e.f64.data()),
              static_cast<std::streamsize>(total * sizeof(double)));
    } else if (e.dtype == kDtypeU32) {
      e.u32.resize(total);
      is.read(reinterpret_cast<char*>(e.u32.data()),
              static_cast<std::streamsize>(total * sizeof(std::uint32_t)));
    } else {
      throw std::runtime_error("load_checkpoint: unknown dtype for " + name);
    }
    if (!is) throw std::runtime_error("load_checkpoint: truncated payload of " + name);
    out.emplace(std::move(name), std::move(e));
  }
  return out;
}

void fill_from(const std::map<std::string, RawEntry>& entries, const std::string& name,
               Tensor& dst) {
  auto it = entries.find(name);
  if (it == entries.end())
    throw std::runtime_error("load_checkpoint: missing tensor " + name);
  if (it->second.dtype != kDtypeF64 || it->second.f64.size() != dst.size())
    throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
  std::copy(it->second.f64.begin(), it->second.f64.end(), dst.data().begin());
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, ckpt.config_hash);
  write_pod(os, ckpt.step);
  write_pod(os, static_cast<std::uint64_t>(ckpt.params.num_classes));
  write_string(os, ckpt.config_json);
  write_pod(os, static_cast<std::uint8_t>(ckpt.has_ema ? 1 : 0));
  write_pod(os, static_cast<std::uint8_t>(ckpt.has_bank ? 1 : 0));
  write_pod(os, static_cast<std::uint64_t>(ckpt.has_bank ? ckpt.bank.capacity() : 0));
  write_pod(os, static_cast<std::uint64_t>(ckpt.has_bank ? ckpt.bank.cursor() : 0));
  write_pod(os, static_cast<std::uint64_t>(ckpt.has_bank ? ckpt.bank.fill() : 0));

  auto& params = const_cast<ModelParams&>(ckpt.params);
  auto refs = all_params(params);
  auto train_refs = trainable_params(params);

  std::uint32_t count = static_cast<std::uint32_t>(refs.size() + train_refs.size());
  if (ckpt.has_ema) {
    auto& ema = const_cast<EmaShadow&>(ckpt.ema);
    count += static_cast<std::uint32_t>(mlp_params(ema.encoder, "x").size() +
                                        mlp_params(ema.projector, "x").size());
  }
  if (ckpt.has_bank) count += 2;
  write_pod(os, count);

  for (auto& r : refs) write_tensor(os, r.name, *r.tensor);
  for (std::size_t i = 0; i < train_refs.size(); ++i)
    write_tensor(os, "opt." + train_refs[i].name, ckpt.opt.velocity[i]);
  if (ckpt.has_ema) {
    auto& ema = const_cast<EmaShadow&>(ckpt.ema);
    for (auto& r : mlp_params(ema.encoder, "ema.encoder")) write_tensor(os, r.name, *r.tensor);
    for (auto& r : mlp_params(ema.projector, "ema.projector")) write_tensor(os, r.name, *r.tensor);
  }
  if (ckpt.has_bank) {
    write_tensor(os, "bank.embeddings", ckpt.bank.storage());
    write_u32_tensor(os, "bank.labels", ckpt.bank.labels());
  }
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.version = version;
  ckpt.config_hash = read_pod<std::uint64_t>(is, "config hash");
  ckpt.step = read_pod<std::uint64_t>(is, "step");
  const auto num_classes = read_pod<std::uint64_t>(is, "class count");
  ckpt.config_json = read_string(is, "config json");
  if (fnv1a(ckpt.config_json) != ckpt.config_hash)
    throw std::runtime_error("load_checkpoint: embedded config does not match its hash");
  ckpt.has_ema = read_pod<std::uint8_t>(is, "ema flag") != 0;
  ckpt.has_bank = read_pod<std::uint8_t>(is, "bank flag") != 0;
  const auto bank_capacity = read_pod<std::uint64_t>(is, "bank capacity");
  const auto bank_cursor = read_pod<std::uint64_t>(is, "bank cursor");
  const auto bank_fill = read_pod<std::uint64_t>(is, "bank fill");

  RunConfig rc = parse_run_config(nlohmann::json::parse(ckpt.config_json));
  ckpt.cfg = rc.train;
  TrainConfig& cfg = ckpt.cfg;
  if (cfg.loss.kind == LossKind::VanillaCe) {
    cfg.loss.temperature = 1.0;
    cfg.projector.input_l2 = false;
    cfg.projector.normalize_output = false;
  }

  ClassifierMode cmode = ClassifierMode::Absent;
  if (cfg.loss.kind == LossKind::CosineCe)
    cmode = cfg.loss.classifier == "frozen_orthogonal" ? ClassifierMode::FrozenOrthogonal
                                                       : ClassifierMode::Learned;
  else if (cfg.loss.kind == LossKind::VanillaCe)
    cmode = ClassifierMode::Learned;

  const auto entries = read_entries(is);

  ckpt.params = init_params(cfg.encoder, cfg.projector, cfg.predictor, cmode,
                            static_cast<std::size_t>(num_classes), cfg.seed);
  for (auto& r : all_params(ckpt.params)) fill_from(entries, r.name, *r.tensor);

  ckpt.opt = make_opt_state(ckpt.params);
  auto train_refs = trainable_params(ckpt.params);
  for (std::size_t i = 0; i < train_refs.size(); ++i)
    fill_from(entries, "opt." + train_refs[i].name, ckpt.opt.velocity[i]);

  if (ckpt.has_ema) {
    ckpt.ema =
        make_ema_shadow(ckpt.params, cfg.loss.ema_momentum, cfg.loss.ema_average_bn_stats);
    for (auto& r : mlp_params(ckpt.ema.encoder, "ema.encoder"))
      fill_from(entries, r.name, *r.tensor);
    for (auto& r : mlp_params(ckpt.ema.projector, "ema.projector"))
      fill_from(entries, r.name, *r.tensor);
  }

  if (ckpt.has_bank) {
    ckpt.bank = MemoryBank(static_cast<std::size_t>(bank_capacity), cfg.projector.bottleneck_dim);
    Tensor storage({static_cast<std::size_t>(bank_capacity), cfg.projector.bottleneck_dim});
    fill_from(entries, "bank.embeddings", storage);
    auto it = entries.find("bank.labels");
    if (it == entries.end() || it->second.dtype != kDtypeU32)
      throw std::runtime_error("load_checkpoint: missing bank labels");
    ckpt.bank.restore(std::move(storage), it->second.u32,
                      static_cast<std::size_t>(bank_cursor), static_cast<std::size_t>(bank_fill));
  }
  return ckpt;
}

}  // namespace trex
