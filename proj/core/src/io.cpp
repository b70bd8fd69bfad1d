#include "geoflow/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace geoflow {
namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename " + tmp + " to " + path);
}

// Little-endian scalar append / bounds-checked extraction.
struct Writer {
  std::string buf;

  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
};

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string what;

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos + sizeof(T) > buf.size()) throw DataError("truncated " + what);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void get_bytes(void* p, std::size_t n) {
    if (pos + n > buf.size()) throw DataError("truncated " + what);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  void expect_end() {
    if (pos != buf.size())
      throw DataError(what + " has trailing bytes");
  }
};

void append_f32_column(Writer& w, const MatrixXd& m, Eigen::Index col) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    w.put<float>(static_cast<float>(m(r, col)));
}

// Renormalises every column in place, returns the largest norm deviation.
double renormalize_columns(MatrixXd& m, const char* stream) {
  double max_dev = 0.0;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double n = m.col(c).norm();
    if (n < 1e-12)
      throw DataError(std::string("zero-norm ") + stream + " embedding at record " +
                      std::to_string(c));
    max_dev = std::max(max_dev, std::abs(n - 1.0));
    m.col(c) /= n;
  }
  return max_dev;
}

constexpr char kEmbeddingMagic[4] = {'G', 'F', 'V', '1'};
constexpr char kCheckpointMagic[4] = {'G', 'F', 'C', '1'};

void check_keys(const json& obj, const char* where,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) { ok = true; break; }
    if (!ok)
      throw ConfigError("unknown config key \"" + item.key() + "\" in " + where);
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

Geometry geometry_from_name(const std::string& s) {
  if (s == "riemannian") return Geometry::Riemannian;
  if (s == "euclidean") return Geometry::Euclidean;
  throw ConfigError("unknown geometry \"" + s + "\"");
}

ProbeKind probe_from_name(const std::string& s) {
  if (s == "rademacher") return ProbeKind::Rademacher;
  if (s == "gaussian") return ProbeKind::Gaussian;
  throw ConfigError("unknown probe kind \"" + s + "\"");
}

const char* probe_name(ProbeKind k) {
  return k == ProbeKind::Rademacher ? "rademacher" : "gaussian";
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void write_embeddings(const std::string& path, const MatrixXd& img,
                      const MatrixXd* txt) {
  if (img.cols() == 0 || img.rows() == 0)
    throw DataError("refusing to write empty embedding file " + path);
  if (txt && (txt->rows() != img.rows() || txt->cols() != img.cols()))
    throw DataError("paired embedding blocks disagree in shape");

  Writer w;
  w.put_bytes(kEmbeddingMagic, 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(img.rows()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(img.cols()));
  w.put<std::uint8_t>(txt ? 1 : 0);
  for (Eigen::Index c = 0; c < img.cols(); ++c) {
    append_f32_column(w, img, c);
    if (txt) append_f32_column(w, *txt, c);
  }
  write_file_atomic(path, w.buf);
}

EmbeddingData read_embeddings(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes, 0, "embedding file " + path};

  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw DataError(path + " is not an embedding file (bad magic)");

  const auto dim = r.get<std::uint32_t>();
  const auto count = r.get<std::uint64_t>();
  const auto paired = r.get<std::uint8_t>();
  if (dim < 2 || dim > 65536)
    throw DataError(path + ": implausible embedding dim " + std::to_string(dim));
  if (paired > 1) throw DataError(path + ": bad paired flag");
  const std::uint64_t streams = paired ? 2 : 1;
  const std::uint64_t expect = 17 + count * streams * dim * 4;
  if (bytes.size() != expect)
    throw DataError(path + ": payload size does not match header");

  EmbeddingData out;
  out.paired = paired != 0;
  out.img.resize(dim, static_cast<Eigen::Index>(count));
  if (out.paired) out.txt.resize(dim, static_cast<Eigen::Index>(count));
  for (std::uint64_t c = 0; c < count; ++c) {
    for (std::uint32_t k = 0; k < dim; ++k) out.img(k, c) = r.get<float>();
    if (out.paired)
      for (std::uint32_t k = 0; k < dim; ++k) out.txt(k, c) = r.get<float>();
  }
  r.expect_end();

  double dev = renormalize_columns(out.img, "image");
  if (out.paired) dev = std::max(dev, renormalize_columns(out.txt, "text"));
  if (dev > 1e-3)
    std::fprintf(stderr,
                 "warning: %s: embeddings deviated from unit norm by up to "
                 "%.3g; renormalized\n",
                 path.c_str(), dev);
  return out;
}

void save_checkpoint(const std::string& path, const NetParams& p, Geometry geom,
                     std::uint64_t seed) {
  NetParams copy = p;  // views need mutable access
  const auto views = tensor_views(copy);

  Writer w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put<std::uint32_t>(1);
  w.put<std::uint8_t>(geom == Geometry::Euclidean ? 1 : 0);
  w.put<std::uint8_t>(0);
  w.put<std::uint8_t>(0);
  w.put<std::uint8_t>(0);
  w.put<std::uint64_t>(seed);
  w.put<std::int32_t>(p.cfg.embed_dim);
  w.put<std::int32_t>(p.cfg.hidden_dim);
  w.put<std::int32_t>(p.cfg.depth);
  w.put<std::int32_t>(p.cfg.gate_heads);
  w.put<std::int32_t>(p.cfg.rff_features);
  w.put<double>(p.cfg.dropout_rate);
  w.put<double>(p.cfg.rff_scale);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(views.size()));
  for (const auto& v : views) {
    if (v.name.size() > 65535) throw DataError("tensor name too long");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(v.name.size()));
    w.put_bytes(v.name.data(), v.name.size());
    w.put<std::uint64_t>(static_cast<std::uint64_t>(v.size));
    w.put_bytes(v.data, static_cast<std::size_t>(v.size) * sizeof(double));
  }
  write_file_atomic(path, w.buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes, 0, "checkpoint " + path};

  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DataError(path + " is not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != 1)
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(version));
  const auto geom_flag = r.get<std::uint8_t>();
  if (geom_flag > 1) throw DataError(path + ": bad geometry flag");
  r.get<std::uint8_t>();
  r.get<std::uint8_t>();
  r.get<std::uint8_t>();
  const auto seed = r.get<std::uint64_t>();

  NetConfig cfg;
  cfg.embed_dim = r.get<std::int32_t>();
  cfg.hidden_dim = r.get<std::int32_t>();
  cfg.depth = r.get<std::int32_t>();
  cfg.gate_heads = r.get<std::int32_t>();
  cfg.rff_features = r.get<std::int32_t>();
  cfg.dropout_rate = r.get<double>();
  cfg.rff_scale = r.get<double>();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(path + ": corrupt header config: " + e.what());
  }

  Checkpoint out;
  out.geometry = geom_flag ? Geometry::Euclidean : Geometry::Riemannian;
  out.seed = seed;
  Rng scratch(0);
  out.params = init_params(cfg, scratch);

  auto views = tensor_views(out.params);
  std::unordered_map<std::string, TensorView*> by_name;
  for (auto& v : views) by_name[v.name] = &v;

  const auto n_tensors = r.get<std::uint32_t>();
  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    const auto size = r.get<std::uint64_t>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError(path + ": unexpected tensor \"" + name + "\"");
    if (it->second->data == nullptr)
      throw DataError(path + ": duplicate tensor \"" + name + "\"");
    if (size != static_cast<std::uint64_t>(it->second->size))
      throw DataError(path + ": tensor \"" + name + "\" has size " +
                      std::to_string(size) + ", expected " +
                      std::to_string(it->second->size));
    r.get_bytes(it->second->data, static_cast<std::size_t>(size) * sizeof(double));
    it->second->data = nullptr;  // consumed
    ++filled;
  }
  r.expect_end();
  if (filled != views.size())
    throw DataError(path + ": missing tensors (" + std::to_string(filled) +
                    " of " + std::to_string(views.size()) + ")");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  write_file_atomic(path, content);
}

void write_csv(const std::string& path, const std::string& manifest_ref,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string out = "# manifest=" + manifest_ref + "\n";
  auto join = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  join(header);
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw DataError("csv row width " + std::to_string(row.size()) +
                      " does not match header width " +
                      std::to_string(header.size()));
    join(row);
  }
  write_file_atomic(path, out);
}

int CsvData::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw DataError("csv has no column \"" + name + "\"");
}

CsvData read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  CsvData out;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      if (comma == std::string::npos) {
        cells.push_back(s.substr(start));
        return cells;
      }
      cells.push_back(s.substr(start, comma - start));
      start = comma + 1;
    }
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (out.header.empty()) {
      out.header = split(line);
    } else {
      auto cells = split(line);
      if (cells.size() != out.header.size())
        throw DataError(path + ": ragged csv row");
      out.rows.push_back(std::move(cells));
    }
  }
  if (out.header.empty()) throw DataError(path + ": empty csv");
  return out;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  if (name == "desk") {
    c.net = desk_net_config();
    c.train = desk_train_config();
  } else if (name == "full") {
    c.net.hidden_dim = 512;
    c.net.depth = 8;
    c.net.gate_heads = 4;
    // train/solver keep the full-scale struct defaults
  } else {
    throw ConfigError("unknown preset \"" + name + "\"");
  }
  c.preset = name;
  return c;
}

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    check_keys(root, "config root",
               {"preset", "geometry", "net", "train", "solver"});
    RunConfig c = preset_config(root.value("preset", std::string("desk")));
    if (root.contains("geometry"))
      c.geometry = geometry_from_name(root.at("geometry").get<std::string>());

    if (root.contains("net")) {
      const json& n = root.at("net");
      check_keys(n, "net", {"embed_dim", "hidden_dim", "depth", "gate_heads",
                            "dropout_rate", "rff_features", "rff_scale"});
      maybe(n, "embed_dim", c.net.embed_dim);
      maybe(n, "hidden_dim", c.net.hidden_dim);
      maybe(n, "depth", c.net.depth);
      maybe(n, "gate_heads", c.net.gate_heads);
      maybe(n, "dropout_rate", c.net.dropout_rate);
      maybe(n, "rff_features", c.net.rff_features);
      maybe(n, "rff_scale", c.net.rff_scale);
    }

    if (root.contains("train")) {
      const json& t = root.at("train");
      check_keys(t, "train",
                 {"lr", "weight_decay", "grad_clip", "warmup_steps",
                  "total_steps", "batch_size", "p_uncond", "seed", "curriculum",
                  "validation", "sinkhorn"});
      maybe(t, "lr", c.train.lr);
      maybe(t, "weight_decay", c.train.weight_decay);
      maybe(t, "grad_clip", c.train.grad_clip);
      maybe(t, "warmup_steps", c.train.warmup_steps);
      maybe(t, "total_steps", c.train.total_steps);
      maybe(t, "batch_size", c.train.batch_size);
      maybe(t, "p_uncond", c.train.p_uncond);
      maybe(t, "seed", c.train.seed);
      if (t.contains("curriculum")) {
        const json& cu = t.at("curriculum");
        check_keys(cu, "train.curriculum",
                   {"phase1_frac", "phase2_frac", "p_joint_target"});
        maybe(cu, "phase1_frac", c.train.curriculum.phase1_frac);
        maybe(cu, "phase2_frac", c.train.curriculum.phase2_frac);
        maybe(cu, "p_joint_target", c.train.curriculum.p_joint_target);
      }
      if (t.contains("validation")) {
        const json& v = t.at("validation");
        check_keys(v, "train.validation",
                   {"every", "batches", "patience", "min_abs_improve",
                    "min_rel_improve"});
        maybe(v, "every", c.train.validation.every);
        maybe(v, "batches", c.train.validation.batches);
        maybe(v, "patience", c.train.validation.patience);
        maybe(v, "min_abs_improve", c.train.validation.min_abs_improve);
        maybe(v, "min_rel_improve", c.train.validation.min_rel_improve);
      }
      if (t.contains("sinkhorn")) {
        const json& s = t.at("sinkhorn");
        check_keys(s, "train.sinkhorn", {"epsilon", "max_iters", "tol"});
        maybe(s, "epsilon", c.train.sinkhorn.epsilon);
        maybe(s, "max_iters", c.train.sinkhorn.max_iters);
        maybe(s, "tol", c.train.sinkhorn.tol);
      }
    }

    if (root.contains("solver")) {
      const json& s = root.at("solver");
      check_keys(s, "solver",
                 {"n_steps", "n_probes", "probe", "guidance", "seed"});
      maybe(s, "n_steps", c.solver.n_steps);
      maybe(s, "n_probes", c.solver.n_probes);
      if (s.contains("probe"))
        c.solver.probe = probe_from_name(s.at("probe").get<std::string>());
      maybe(s, "guidance", c.solver.guidance);
      maybe(s, "seed", c.solver.seed);
    }

    c.solver.geometry = c.geometry;
    c.net.validate();
    c.train.validate();
    c.solver.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_file(path));
}

std::string run_config_json(const RunConfig& c) {
  ordered_json root;
  root["preset"] = c.preset;
  root["geometry"] = geometry_name(c.geometry);
  root["net"] = {{"embed_dim", c.net.embed_dim},
                 {"hidden_dim", c.net.hidden_dim},
                 {"depth", c.net.depth},
                 {"gate_heads", c.net.gate_heads},
                 {"dropout_rate", c.net.dropout_rate},
                 {"rff_features", c.net.rff_features},
                 {"rff_scale", c.net.rff_scale}};
  root["train"] = {
      {"lr", c.train.lr},
      {"weight_decay", c.train.weight_decay},
      {"grad_clip", c.train.grad_clip},
      {"warmup_steps", c.train.warmup_steps},
      {"total_steps", c.train.total_steps},
      {"batch_size", c.train.batch_size},
      {"p_uncond", c.train.p_uncond},
      {"seed", c.train.seed},
      {"curriculum",
       {{"phase1_frac", c.train.curriculum.phase1_frac},
        {"phase2_frac", c.train.curriculum.phase2_frac},
        {"p_joint_target", c.train.curriculum.p_joint_target}}},
      {"validation",
       {{"every", c.train.validation.every},
        {"batches", c.train.validation.batches},
        {"patience", c.train.validation.patience},
        {"min_abs_improve", c.train.validation.min_abs_improve},
        {"min_rel_improve", c.train.validation.min_rel_improve}}},
      {"sinkhorn",
       {{"epsilon", c.train.sinkhorn.epsilon},
        {"max_iters", c.train.sinkhorn.max_iters},
        {"tol", c.train.sinkhorn.tol}}}};
  root["solver"] = {{"n_steps", c.solver.n_steps},
                    {"n_probes", c.solver.n_probes},
                    {"probe", probe_name(c.solver.probe)},
                    {"guidance", c.solver.guidance},
                    {"seed", c.solver.seed}};
  return root.dump();
}

std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(run_config_json(c)));
  return buf;
}

void write_manifest(const std::string& path, const std::string& tool,
                    const RunConfig& config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  ordered_json root;
  root["tool"] = tool;
  root["config_hash"] = config_hash(config);
  root["config"] = ordered_json::parse(run_config_json(config));
  root["inputs"] = inputs;
  root["outputs"] = outputs;
  write_file_atomic(path, root.dump(2) + "\n");
}

void write_mixture_json(const std::string& path, const PairedMixture& m,
                        std::uint64_t seed) {
  ordered_json root;
  root["seed"] = seed;
  ordered_json comps = ordered_json::array();
  for (int k = 0; k < m.components(); ++k) {
    ordered_json c;
    c["weight"] = m.weights()[k];
    c["image_mean"] = std::vector<double>(
        m.image_means()[k].data(),
        m.image_means()[k].data() + m.image_means()[k].size());
    c["text_mean"] = std::vector<double>(
        m.text_means()[k].data(),
        m.text_means()[k].data() + m.text_means()[k].size());
    c["image_kappa"] = m.image_kappas()[k];
    c["text_kappa"] = m.text_kappas()[k];
    comps.push_back(c);
  }
  root["components"] = comps;
  write_file_atomic(path, root.dump(2) + "\n");
}

PairedMixture read_mixture_json(const std::string& path) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError(path + " is not valid JSON: " + std::string(e.what()));
  }
  try {
    std::vector<double> w, ki, kt;
    std::vector<VectorXd> mu, nu;
    for (const json& c : root.at("components")) {
      w.push_back(c.at("weight").get<double>());
      const auto im = c.at("image_mean").get<std::vector<double>>();
      const auto tm = c.at("text_mean").get<std::vector<double>>();
      mu.push_back(Eigen::Map<const VectorXd>(im.data(), im.size()));
      nu.push_back(Eigen::Map<const VectorXd>(tm.data(), tm.size()));
      ki.push_back(c.at("image_kappa").get<double>());
      kt.push_back(c.at("text_kappa").get<double>());
    }
    return PairedMixture(std::move(w), std::move(mu), std::move(nu),
                         std::move(ki), std::move(kt));
  } catch (const json::exception& e) {
    throw DataError(path + ": bad mixture description: " + std::string(e.what()));
  }
}

}  // namespace geoflow
