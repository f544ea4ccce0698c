#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rce/common.hpp"
#include "rce/eval.hpp"
#include "rce/model.hpp"
#include "rce/planar_env.hpp"
#include "rce/train.hpp"

namespace rce {

// ---------------------------------------------------------------------------
// JSON round-trips for configs. Unknown keys are rejected so config typos
// fail loudly; missing keys keep their defaults.

namespace io_detail {

inline void check_keys(const nlohmann::json& j,
                       std::initializer_list<const char*> allowed,
                       const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError(std::string(what) + ": unknown key \"" + item.key() + "\"");
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace io_detail

inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"arena_size", c.arena_size},
                     {"agent_half_width", c.agent_half_width},
                     {"max_action", c.max_action},
                     {"obstacle_radius", c.obstacle_radius},
                     {"obstacle_centers", c.obstacle_centers},
                     {"noise_sigma", c.noise_sigma}};
}

inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  io_detail::check_keys(j,
                        {"arena_size", "agent_half_width", "max_action",
                         "obstacle_radius", "obstacle_centers", "noise_sigma"},
                        "EnvConfig");
  io_detail::maybe(j, "arena_size", c.arena_size);
  io_detail::maybe(j, "agent_half_width", c.agent_half_width);
  io_detail::maybe(j, "max_action", c.max_action);
  io_detail::maybe(j, "obstacle_radius", c.obstacle_radius);
  io_detail::maybe(j, "obstacle_centers", c.obstacle_centers);
  io_detail::maybe(j, "noise_sigma", c.noise_sigma);
}

inline void to_json(nlohmann::json& j, const NetConfig& c) {
  j = nlohmann::json{{"n_x", c.n_x},         {"n_z", c.n_z},
                     {"n_u", c.n_u},         {"enc_h1", c.enc_h1},
                     {"enc_h2", c.enc_h2},   {"dec_h1", c.dec_h1},
                     {"dec_h2", c.dec_h2},   {"be_hx", c.be_hx},
                     {"be_hz", c.be_hz},     {"be_hm", c.be_hm},
                     {"lin_h1", c.lin_h1},   {"lin_h2", c.lin_h2}};
}

inline void from_json(const nlohmann::json& j, NetConfig& c) {
  io_detail::check_keys(j,
                        {"n_x", "n_z", "n_u", "enc_h1", "enc_h2", "dec_h1",
                         "dec_h2", "be_hx", "be_hz", "be_hm", "lin_h1",
                         "lin_h2"},
                        "NetConfig");
  io_detail::maybe(j, "n_x", c.n_x);
  io_detail::maybe(j, "n_z", c.n_z);
  io_detail::maybe(j, "n_u", c.n_u);
  io_detail::maybe(j, "enc_h1", c.enc_h1);
  io_detail::maybe(j, "enc_h2", c.enc_h2);
  io_detail::maybe(j, "dec_h1", c.dec_h1);
  io_detail::maybe(j, "dec_h2", c.dec_h2);
  io_detail::maybe(j, "be_hx", c.be_hx);
  io_detail::maybe(j, "be_hz", c.be_hz);
  io_detail::maybe(j, "be_hm", c.be_hm);
  io_detail::maybe(j, "lin_h1", c.lin_h1);
  io_detail::maybe(j, "lin_h2", c.lin_h2);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{
      {"w_kl", w.w_kl}, {"w_logp", w.w_logp}, {"schedule", w.schedule}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  io_detail::check_keys(j, {"w_kl", "w_logp", "schedule"}, "LossWeights");
  io_detail::maybe(j, "w_kl", w.w_kl);
  io_detail::maybe(j, "w_logp", w.w_logp);
  io_detail::maybe(j, "schedule", w.schedule);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"adam_betas", c.adam_betas},
                     {"adam_eps", c.adam_eps},
                     {"grad_clip_norm", c.grad_clip_norm},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"workers", c.workers},
                     {"net", c.net},
                     {"weights", c.weights}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  io_detail::check_keys(j,
                        {"batch_size", "epochs", "learning_rate", "adam_betas",
                         "adam_eps", "grad_clip_norm", "seed",
                         "checkpoint_every", "workers", "net", "weights"},
                        "TrainConfig");
  io_detail::maybe(j, "batch_size", c.batch_size);
  io_detail::maybe(j, "epochs", c.epochs);
  io_detail::maybe(j, "learning_rate", c.learning_rate);
  io_detail::maybe(j, "adam_betas", c.adam_betas);
  io_detail::maybe(j, "adam_eps", c.adam_eps);
  io_detail::maybe(j, "grad_clip_norm", c.grad_clip_norm);
  io_detail::maybe(j, "seed", c.seed);
  io_detail::maybe(j, "checkpoint_every", c.checkpoint_every);
  io_detail::maybe(j, "workers", c.workers);
  io_detail::maybe(j, "net", c.net);
  io_detail::maybe(j, "weights", c.weights);
}

// CRC32 of a canonical JSON dump, as 8 lowercase hex digits. Ties every
// report to the exact configuration that produced it.
inline std::string config_hash(const nlohmann::json& j) {
  std::string dump = j.dump();
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(dump.data()),
                    static_cast<uInt>(dump.size()));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

// When set, the RCE_SEED environment variable overrides every seed given on
// the command line, so one knob pins a whole pipeline run.
inline std::optional<std::uint64_t> seed_override_from_env() {
  const char* s = std::getenv("RCE_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || end == s || *end != '\0')
    throw ConfigError("RCE_SEED must be an unsigned integer");
  return static_cast<std::uint64_t>(v);
}

// ---------------------------------------------------------------------------
// Binary container shared by datasets and checkpoints:
//   magic(4) | u32 version | u32 header_len | header JSON | payload | u32 crc
// Integers and floats are little-endian; the trailing crc32 covers every
// preceding byte. Readers verify magic, version, and checksum before parsing.

namespace io_detail {

constexpr std::uint32_t kFormatVersion = 1;

struct ByteWriter {
  std::vector<std::uint8_t> bytes;

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v) {
    u32(std::uint32_t(v));
    u32(std::uint32_t(v >> 32));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const char> s) {
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
};

struct ByteReader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw IoError(std::string("truncated file while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t lo = u32(what);
    return lo | (std::uint64_t(u32(what)) << 32);
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

inline std::uint32_t crc_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, nullptr, 0);
  std::size_t off = 0;
  while (off < b.size()) {
    uInt chunk = static_cast<uInt>(std::min<std::size_t>(b.size() - off, 1u << 30));
    crc = crc32(crc, b.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void write_file(const std::string& path,
                       std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open: " + path);
  std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  if (size > 0)
    f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw IoError("read failed: " + path);
  return bytes;
}

// Writes magic + version + header, returns the writer for payload appends.
inline ByteWriter begin_container(const char magic[4],
                                  const nlohmann::json& header) {
  ByteWriter w;
  w.raw(std::span<const char>(magic, 4));
  w.u32(kFormatVersion);
  std::string h = header.dump();
  w.u32(static_cast<std::uint32_t>(h.size()));
  w.raw(h);
  return w;
}

inline void finish_container(ByteWriter& w, const std::string& path) {
  std::uint32_t crc = crc_of(w.bytes);
  w.u32(crc);
  write_file(path, w.bytes);
}

// Verifies magic/version/crc and parses the header; the reader is left at
// the first payload byte. `end` is the payload's one-past-last offset.
struct Container {
  std::vector<std::uint8_t> bytes;
  ByteReader reader;
  nlohmann::json header;
  std::size_t end = 0;
};

inline Container open_container(const std::string& path, const char magic[4],
                                const char* kind) {
  Container c;
  c.bytes = read_file(path);
  if (c.bytes.size() < 16)
    throw IoError(std::string(kind) + ": file too short: " + path);
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= std::uint32_t(c.bytes[c.bytes.size() - 4 + i]) << (8 * i);
  std::uint32_t actual =
      crc_of(std::span(c.bytes.data(), c.bytes.size() - 4));
  if (stored != actual)
    throw IoError(std::string(kind) + ": checksum mismatch: " + path);
  c.reader.bytes = std::span<const std::uint8_t>(c.bytes);
  std::string m = c.reader.str(4, "magic");
  if (m != std::string(magic, 4))
    throw IoError(std::string(kind) + ": bad magic: " + path);
  std::uint32_t version = c.reader.u32("version");
  if (version != kFormatVersion)
    throw IoError(std::string(kind) + ": unsupported version " +
                  std::to_string(version) + ": " + path);
  std::uint32_t hlen = c.reader.u32("header length");
  std::string hjson = c.reader.str(hlen, "header");
  try {
    c.header = nlohmann::json::parse(hjson);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string(kind) + ": bad header: " + e.what());
  }
  c.end = c.bytes.size() - 4;
  return c;
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Dataset files ("RCED"): header stores the environment and provenance, the
// payload packs each triple as f32 [x_t | u | x_next | s_t | s_next].

struct DatasetFile {
  EnvConfig env;
  std::uint64_t seed = 0;
  std::vector<ObservationTriple> data;
};

inline void save_dataset(const std::string& path, const DatasetFile& ds) {
  ds.env.validate();
  std::size_t n_x = static_cast<std::size_t>(ds.env.n_x());
  nlohmann::json header{{"env", ds.env},
                        {"n", ds.data.size()},
                        {"n_x", n_x},
                        {"n_u", 2},
                        {"seed", ds.seed}};
  io_detail::ByteWriter w = io_detail::begin_container("RCED", header);
  for (const ObservationTriple& t : ds.data) {
    if (t.x_t.size() != n_x || t.x_next.size() != n_x || t.u.size() != 2)
      throw DimensionError("save_dataset: triple does not match environment");
    for (double v : t.x_t) w.f32(static_cast<float>(v));
    for (double v : t.u) w.f32(static_cast<float>(v));
    for (double v : t.x_next) w.f32(static_cast<float>(v));
    w.f32(static_cast<float>(t.s_t.x));
    w.f32(static_cast<float>(t.s_t.y));
    w.f32(static_cast<float>(t.s_next.x));
    w.f32(static_cast<float>(t.s_next.y));
  }
  io_detail::finish_container(w, path);
}

inline DatasetFile load_dataset(const std::string& path) {
  io_detail::Container c = io_detail::open_container(path, "RCED", "dataset");
  DatasetFile ds;
  try {
    c.header.at("env").get_to(ds.env);
    c.header.at("seed").get_to(ds.seed);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("dataset: bad header: ") + e.what());
  }
  ds.env.validate();
  std::size_t n = c.header.value("n", std::size_t{0});
  std::size_t n_x = static_cast<std::size_t>(ds.env.n_x());
  std::size_t per = 4 * (n_x + 2 + n_x + 4);
  if (c.end - c.reader.pos != n * per)
    throw IoError("dataset: payload size does not match header");
  ds.data.resize(n);
  for (ObservationTriple& t : ds.data) {
    t.x_t.resize(n_x);
    for (double& v : t.x_t) v = c.reader.f32("x_t");
    t.u.resize(2);
    for (double& v : t.u) v = c.reader.f32("u");
    t.x_next.resize(n_x);
    for (double& v : t.x_next) v = c.reader.f32("x_next");
    t.s_t.x = c.reader.f32("s_t");
    t.s_t.y = c.reader.f32("s_t");
    t.s_next.x = c.reader.f32("s_next");
    t.s_next.y = c.reader.f32("s_next");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoint files ("RCEC"): header stores the epoch and full training
// config; the payload stores every named parameter tensor in canonical order
// as u32 name_len | name | u32 rank | u32 dims | f64 data.

struct Checkpoint {
  RceParams params;
  TrainConfig train;
  int epoch = 0;
};

inline void save_checkpoint(const std::string& path, const RceParams& params,
                            const TrainConfig& train, int epoch) {
  nlohmann::json header{
      {"epoch", epoch}, {"net", params.net}, {"train", train}};
  io_detail::ByteWriter w = io_detail::begin_container("RCEC", header);
  for (const auto& [name, t] : params.named_tensors()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t->data) w.f64(v);
  }
  io_detail::finish_container(w, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  io_detail::Container c =
      io_detail::open_container(path, "RCEC", "checkpoint");
  Checkpoint ck;
  NetConfig net;
  try {
    c.header.at("net").get_to(net);
    c.header.at("train").get_to(ck.train);
    c.header.at("epoch").get_to(ck.epoch);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  net.validate();
  ck.params = RceParams::init(net, 0);
  for (auto& [name, t] : ck.params.named_tensors()) {
    std::uint32_t nlen = c.reader.u32("name length");
    std::string fname = c.reader.str(nlen, "tensor name");
    if (fname != name)
      throw IoError("checkpoint: expected tensor \"" + name + "\", found \"" +
                    fname + "\"");
    std::uint32_t rank = c.reader.u32("rank");
    if (rank != t->shape.size())
      throw IoError("checkpoint: wrong rank for " + name);
    for (int d : t->shape) {
      std::uint32_t fd = c.reader.u32("dimension");
      if (fd != static_cast<std::uint32_t>(d))
        throw IoError("checkpoint: wrong shape for " + name);
    }
    for (double& v : t->data) v = c.reader.f64(name.c_str());
  }
  if (c.reader.pos != c.end)
    throw IoError("checkpoint: trailing bytes after parameters");
  return ck;
}

// ---------------------------------------------------------------------------
// CSV reports. Every file starts with "# config_hash=<hex8> seed=<n>" so a
// report can be matched to the run that produced it; floats are printed with
// 17 significant digits so equal values render identically.

namespace io_detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace io_detail

// Appends one row per epoch as training progresses, flushing each row so a
// crashed run keeps its history.
class TrainMetricsWriter {
 public:
  TrainMetricsWriter(const std::string& path, const std::string& hash,
                     std::uint64_t seed)
      : f_(path, std::ios::trunc) {
    if (!f_) throw IoError("cannot open for writing: " + path);
    f_ << "# config_hash=" << hash << " seed=" << seed << "\n";
    f_ << "epoch,mean_loss,bce,kl,entropy,logp,wall_seconds\n";
    f_.flush();
  }

  void append(const EpochMetrics& m) {
    using io_detail::fmt;
    f_ << m.epoch << ',' << fmt(m.mean_loss) << ',' << fmt(m.bce) << ','
       << fmt(m.kl) << ',' << fmt(m.entropy) << ',' << fmt(m.logp) << ','
       << fmt(m.wall_seconds) << "\n";
    f_.flush();
    if (!f_) throw IoError("write failed on metrics file");
  }

 private:
  std::ofstream f_;
};

struct PlanRunRow {
  int run = 0;
  bool success = false;
  double planning_loss = 0.0;
  bool failed = false;
  double final_dist = 0.0;
};

inline void write_plan_report(const std::string& path, const std::string& hash,
                              std::uint64_t seed,
                              std::span<const PlanRunRow> rows,
                              double success_rate) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "# config_hash=" << hash << " seed=" << seed << "\n";
  f << "# success_rate=" << io_detail::fmt(success_rate)
    << " runs=" << rows.size() << "\n";
  f << "run,success,planning_loss,failed,final_dist\n";
  for (const PlanRunRow& r : rows)
    f << r.run << ',' << (r.success ? 1 : 0) << ','
      << io_detail::fmt(r.planning_loss) << ',' << (r.failed ? 1 : 0) << ','
      << io_detail::fmt(r.final_dist) << "\n";
  if (!f) throw IoError("write failed: " + path);
}

inline void write_eval_report(
    const std::string& path, const std::string& hash, std::uint64_t seed,
    std::span<const std::pair<std::string, eval::MeanStd>> metrics) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "# config_hash=" << hash << " seed=" << seed << "\n";
  f << "metric,mean,std,n\n";
  for (const auto& [name, m] : metrics)
    f << name << ',' << io_detail::fmt(m.mean) << ',' << io_detail::fmt(m.std)
      << ',' << m.n << "\n";
  if (!f) throw IoError("write failed: " + path);
}

// One row of the noise-robustness table: metrics of a model trained and
// evaluated at a given transition-noise level.
struct SweepRow {
  double sigma = 0.0;
  std::size_t n_train = 0;
  eval::MeanStd reconstruction;
  eval::MeanStd prediction;
  eval::MeanStd planning;
  double success_rate = 0.0;
  int runs = 0;
};

inline void write_sweep_report(const std::string& path,
                               const std::string& hash, std::uint64_t seed,
                               std::span<const SweepRow> rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  using io_detail::fmt;
  f << "# config_hash=" << hash << " seed=" << seed << "\n";
  f << "sigma,n_train,recon_mean,recon_std,pred_mean,pred_std,"
       "plan_mean,plan_std,success_rate,runs\n";
  for (const SweepRow& r : rows)
    f << fmt(r.sigma) << ',' << r.n_train << ',' << fmt(r.reconstruction.mean)
      << ',' << fmt(r.reconstruction.std) << ',' << fmt(r.prediction.mean)
      << ',' << fmt(r.prediction.std) << ',' << fmt(r.planning.mean) << ','
      << fmt(r.planning.std) << ',' << fmt(r.success_rate) << ',' << r.runs
      << "\n";
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace rce
