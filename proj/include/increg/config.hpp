#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "increg/dataset.hpp"
#include "increg/error.hpp"
#include "increg/groups.hpp"
#include "increg/network.hpp"
#include "increg/presets.hpp"
#include "increg/scheduler.hpp"
#include "increg/sgd.hpp"

namespace increg {

enum class DataFormat { synthetic, idx, cifar10 };

struct DataConfig {
  DataFormat format = DataFormat::synthetic;
  BlobSpec blobs;                 // synthetic
  std::string cifar_dir;          // cifar10: directory holding the *.bin batches
  std::string idx_train_images;   // idx
  std::string idx_train_labels;
  std::string idx_test_images;
  std::string idx_test_labels;
  std::size_t classes = 10;       // idx
  std::size_t val_size = 5000;    // tail of the training file held out
  bool normalize = true;          // subtract train-split channel means
};

struct PruneConfig {
  GroupKind kind = GroupKind::column;
  double ratio = 0.5;                         // default R for every prunable conv
  std::map<std::string, double> layer_ratio;  // per-layer overrides, keyed by layer name
  std::optional<double> speed;                // A; unset means weight_decay / 2
  double epsilon = 1e-5;
  std::size_t update_interval = 10;
  std::size_t log_every = 0;
  TrainConfig train;                          // optimizer for the pruning phase
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "runs/default";
  DataConfig data;
  std::string preset = "toy";
  std::string layers;  // inline layer list; overrides the preset when set
  TrainConfig train;
  PruneConfig prune;
  TrainConfig retrain;
  std::size_t bench_batch = 10;
  std::size_t bench_repeats = 50;
  std::size_t bench_warmup = 5;
  std::vector<double> theorem_lambdas{0.25, 0.5, 1.0, 2.0, 3.0};
  std::vector<double> theorem_deltas{1e-3, 1e-2, 1e-1, 0.0};

  RunConfig() {
    train.max_iters = 2000;
    prune.train.max_iters = 1000000;
    retrain.max_iters = 1000;
    retrain.base_lr = 0.001;
  }

  double speed() const { return prune.speed.value_or(train.weight_decay / 2.0); }
};

namespace detail {

inline std::string format_list(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<double> parse_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config: '" + key + "' expects a comma-separated number list");
    }
  }
  return out;
}

inline std::string to_string(DataFormat f) {
  switch (f) {
    case DataFormat::synthetic: return "synthetic";
    case DataFormat::idx: return "idx";
    case DataFormat::cifar10: return "cifar10";
  }
  return "?";
}

inline std::string to_string(LrPolicy p) { return p == LrPolicy::fixed ? "fixed" : "step"; }

inline std::vector<std::string> split_trim(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(" \t");
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace detail

/// Parses an inline layer list such as
///   "conv 8 k3 p1, relu, pool 2, conv 16 k3 s1 p1 exempt, relu, pool 2 s2, fc 10, softmax".
inline std::vector<LayerSpec> parse_layers(const std::string& text) {
  std::vector<LayerSpec> out;
  for (const auto& item : detail::split_trim(text, ',')) {
    const auto tok = detail::split_trim(item, ' ');
    auto bad = [&]() { return ConfigError("config: cannot parse layer '" + item + "'"); };
    auto number = [&](const std::string& t, std::size_t skip) -> std::size_t {
      try {
        std::size_t used = 0;
        const auto v = std::stoul(t.substr(skip), &used);
        if (used + skip != t.size()) throw bad();
        return v;
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception&) {
        throw bad();
      }
    };
    const std::string& kind = tok.at(0);
    if (kind == "conv") {
      if (tok.size() < 2) throw bad();
      LayerSpec s = LayerSpec::conv(number(tok[1], 0), 3, 1, 0);
      for (std::size_t i = 2; i < tok.size(); ++i) {
        if (tok[i] == "exempt") s.prune_exempt = true;
        else if (tok[i][0] == 'k') s.kernel = number(tok[i], 1);
        else if (tok[i][0] == 's') s.stride = number(tok[i], 1);
        else if (tok[i][0] == 'p') s.pad = number(tok[i], 1);
        else throw bad();
      }
      out.push_back(s);
    } else if (kind == "relu") {
      if (tok.size() != 1) throw bad();
      out.push_back(LayerSpec::relu());
    } else if (kind == "pool") {
      if (tok.size() < 2 || tok.size() > 3) throw bad();
      const auto size = number(tok[1], 0);
      const auto stride = tok.size() == 3 ? number(tok[2], tok[2][0] == 's' ? 1 : 0) : size;
      out.push_back(LayerSpec::maxpool(size, stride));
    } else if (kind == "fc") {
      if (tok.size() != 2) throw bad();
      out.push_back(LayerSpec::fully_connected(number(tok[1], 0)));
    } else if (kind == "softmax") {
      if (tok.size() != 1) throw bad();
      out.push_back(LayerSpec::softmax_xent());
    } else {
      throw bad();
    }
  }
  if (out.empty()) throw ConfigError("config: empty layer list");
  return out;
}

namespace detail {

class IniReader {
 public:
  explicit IniReader(const boost::property_tree::ptree& pt) : pt_(pt) {}

  template <class V>
  void get(const std::string& key, V& into) {
    used_.insert(key);
    const auto node = pt_.get_optional<std::string>(key);
    if (!node) return;
    if constexpr (std::is_same_v<V, std::string>) {
      into = *node;
    } else if constexpr (std::is_same_v<V, bool>) {
      if (*node == "true" || *node == "1" || *node == "yes") into = true;
      else if (*node == "false" || *node == "0" || *node == "no") into = false;
      else throw ConfigError("config: '" + key + "' expects true or false");
    } else {
      const auto v = pt_.get_optional<V>(key);
      if (!v) throw ConfigError("config: '" + key + "' has invalid value '" + *node + "'");
      if constexpr (std::is_unsigned_v<V>)
        if (node->find('-') != std::string::npos)
          throw ConfigError("config: '" + key + "' must be nonnegative");
      into = *v;
    }
  }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    const auto v = pt_.get_optional<std::string>(key);
    return v ? std::optional<std::string>(*v) : std::nullopt;
  }

  /// Keys present in the file that were never requested.
  std::vector<std::string> unknown(const std::string& ratio_section) const {
    std::vector<std::string> out;
    for (const auto& [section, body] : pt_) {
      if (body.empty() && !body.data().empty()) {
        out.push_back(section);
        continue;
      }
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        if (used_.count(full)) continue;
        if (section == ratio_section && key.rfind("ratio_", 0) == 0) continue;
        out.push_back(full);
      }
    }
    return out;
  }

 private:
  const boost::property_tree::ptree& pt_;
  std::set<std::string> used_;
};

inline void read_train(IniReader& r, const std::string& s, TrainConfig& t) {
  r.get(s + ".base_lr", t.base_lr);
  r.get(s + ".momentum", t.momentum);
  r.get(s + ".weight_decay", t.weight_decay);
  r.get(s + ".batch_size", t.batch_size);
  r.get(s + ".max_iters", t.max_iters);
  std::string policy = to_string(t.lr_policy);
  r.get(s + ".lr_policy", policy);
  if (policy == "fixed") t.lr_policy = LrPolicy::fixed;
  else if (policy == "step") t.lr_policy = LrPolicy::step;
  else throw ConfigError("config: " + s + ".lr_policy must be fixed or step");
  r.get(s + ".lr_factor", t.lr_factor);
  r.get(s + ".lr_every", t.lr_every);
}

}  // namespace detail

/// Reads an INI file. Sections and keys are those printed by `print_config`; the
/// pruning and retraining optimizers inherit momentum and weight decay from [train]
/// unless overridden. Unknown keys are rejected.
inline RunConfig parse_config(std::istream& in, const std::string& origin = "config") {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  RunConfig c;
  detail::IniReader r(pt);
  r.get("run.seed", c.seed);
  r.get("run.out", c.out);

  std::string format = detail::to_string(c.data.format);
  r.get("data.format", format);
  if (format == "synthetic") c.data.format = DataFormat::synthetic;
  else if (format == "idx") c.data.format = DataFormat::idx;
  else if (format == "cifar10") c.data.format = DataFormat::cifar10;
  else throw ConfigError(origin + ": data.format must be synthetic, idx or cifar10");
  r.get("data.classes", c.data.classes);
  r.get("data.channels", c.data.blobs.dims.c);
  r.get("data.height", c.data.blobs.dims.h);
  r.get("data.width", c.data.blobs.dims.w);
  r.get("data.noise", c.data.blobs.noise);
  r.get("data.data_seed", c.data.blobs.seed);
  r.get("data.train", c.data.blobs.train);
  r.get("data.val", c.data.blobs.val);
  r.get("data.test", c.data.blobs.test);
  r.get("data.cifar_dir", c.data.cifar_dir);
  r.get("data.idx_train_images", c.data.idx_train_images);
  r.get("data.idx_train_labels", c.data.idx_train_labels);
  r.get("data.idx_test_images", c.data.idx_test_images);
  r.get("data.idx_test_labels", c.data.idx_test_labels);
  r.get("data.val_size", c.data.val_size);
  r.get("data.normalize", c.data.normalize);
  if (c.data.format == DataFormat::synthetic) c.data.blobs.classes = c.data.classes;

  r.get("model.preset", c.preset);
  r.get("model.layers", c.layers);

  detail::read_train(r, "train", c.train);
  c.prune.train.momentum = c.retrain.momentum = c.train.momentum;
  c.prune.train.weight_decay = c.retrain.weight_decay = c.train.weight_decay;
  c.prune.train.base_lr = c.train.base_lr;
  c.prune.train.batch_size = c.retrain.batch_size = c.train.batch_size;
  detail::read_train(r, "prune", c.prune.train);
  detail::read_train(r, "retrain", c.retrain);

  std::string kind = to_string(c.prune.kind);
  r.get("prune.kind", kind);
  c.prune.kind = parse_group_kind(kind);
  r.get("prune.ratio", c.prune.ratio);
  if (auto a = r.raw("prune.speed"); a && *a != "auto") {
    double v = 0.0;
    r.get("prune.speed", v);
    c.prune.speed = v;
  }
  r.get("prune.epsilon", c.prune.epsilon);
  r.get("prune.update_interval", c.prune.update_interval);
  r.get("prune.log_every", c.prune.log_every);
  if (auto sec = pt.get_child_optional("prune")) {
    for (const auto& [key, value] : *sec) {
      if (key.rfind("ratio_", 0) != 0) continue;
      double v = 0.0;
      r.get("prune." + key, v);
      c.prune.layer_ratio[key.substr(6)] = v;
    }
  }

  r.get("bench.batch", c.bench_batch);
  r.get("bench.repeats", c.bench_repeats);
  r.get("bench.warmup", c.bench_warmup);
  if (auto v = r.raw("theorem.lambdas")) c.theorem_lambdas = detail::parse_list(*v, "theorem.lambdas");
  if (auto v = r.raw("theorem.deltas")) c.theorem_deltas = detail::parse_list(*v, "theorem.deltas");

  const auto unknown = r.unknown("prune");
  if (!unknown.empty()) {
    std::string all;
    for (const auto& k : unknown) all += (all.empty() ? "" : ", ") + k;
    throw ConfigError(origin + ": unknown keys: " + all);
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return parse_config(in, path.string());
}

/// The network architecture the config describes.
inline Architecture config_architecture(const RunConfig& c) {
  Shape3 input;
  std::size_t classes = c.data.classes;
  switch (c.data.format) {
    case DataFormat::synthetic: input = c.data.blobs.dims; break;
    case DataFormat::cifar10: input = {3, 32, 32}; classes = 10; break;
    case DataFormat::idx: input = {1, 28, 28}; break;
  }
  if (!c.layers.empty()) return {input, parse_layers(c.layers)};
  return preset_architecture(c.preset, input, classes);
}

/// Pruning schedules for every non-exempt conv layer of `net`.
template <class T>
std::vector<PruneSchedule> config_schedules(const RunConfig& c, const Network<T>& net) {
  std::vector<PruneSchedule> out;
  std::set<std::string> names;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& l = net.layer(i);
    names.insert(l.name);
    if (l.spec.kind != LayerKind::conv || l.spec.prune_exempt) continue;
    PruneSchedule s;
    s.layer_id = i;
    const auto it = c.prune.layer_ratio.find(l.name);
    s.target_ratio = it == c.prune.layer_ratio.end() ? c.prune.ratio : it->second;
    s.speed = c.speed();
    s.epsilon = c.prune.epsilon;
    s.update_interval = c.prune.update_interval;
    s.kind = c.prune.kind;
    out.push_back(s);
  }
  for (const auto& [name, r] : c.prune.layer_ratio) {
    (void)r;
    if (!names.count(name)) throw ConfigError("config: prune.ratio_" + name + " names no layer");
    for (const auto& l : net.layers())
      if (l.name == name && (l.spec.kind != LayerKind::conv || l.spec.prune_exempt))
        throw ConfigError("config: prune.ratio_" + name + " names a layer that cannot be pruned");
  }
  return out;
}

/// Structural checks that need no data: optimizers, schedules and referenced files.
inline void validate_config(const RunConfig& c) {
  c.train.validate();
  c.prune.train.validate();
  c.retrain.validate();
  if (c.bench_repeats < 10) throw ConfigError("config: bench.repeats must be at least 10");
  if (c.bench_batch == 0) throw ConfigError("config: bench.batch must be positive");
  if (c.theorem_lambdas.empty()) throw ConfigError("config: theorem.lambdas is empty");
  for (double l : c.theorem_lambdas)
    if (!(l > 0.0)) throw ConfigError("config: theorem.lambdas must be positive");
  const auto net = Network<float>::build(config_architecture(c), c.seed);
  for (const auto& s : config_schedules(c, net)) {
    validate_schedule(s, make_groups(net, s.layer_id, s.kind).groups.size());
  }
  auto exists = [](const std::string& p, const std::string& key) {
    if (p.empty() || !std::filesystem::exists(p))
      throw ConfigError("config: " + key + " '" + p + "' does not exist");
  };
  switch (c.data.format) {
    case DataFormat::cifar10: exists(c.data.cifar_dir, "data.cifar_dir"); break;
    case DataFormat::idx:
      exists(c.data.idx_train_images, "data.idx_train_images");
      exists(c.data.idx_train_labels, "data.idx_train_labels");
      exists(c.data.idx_test_images, "data.idx_test_images");
      exists(c.data.idx_test_labels, "data.idx_test_labels");
      break;
    case DataFormat::synthetic:
      if (c.data.classes < 2) throw ConfigError("config: data.classes must be at least 2");
      if (c.data.blobs.train == 0) throw ConfigError("config: data.train must be positive");
      break;
  }
}

/// Every setting with its effective value, as a loadable INI file.
inline std::string print_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto train = [&](const std::string& name, const TrainConfig& t, const char* note) {
    os << "\n[" << name << "]\n";
    if (*note) os << "; " << note << '\n';
    os << "base_lr = " << t.base_lr << "\nmomentum = " << t.momentum
       << "\nweight_decay = " << t.weight_decay << "\nbatch_size = " << t.batch_size
       << "\nmax_iters = " << t.max_iters << "\nlr_policy = " << detail::to_string(t.lr_policy)
       << "\nlr_factor = " << t.lr_factor << "\nlr_every = " << t.lr_every << '\n';
  };
  os << "[run]\nseed = " << c.seed << "\nout = " << c.out << '\n';
  os << "\n[data]\n; synthetic | idx | cifar10\nformat = " << detail::to_string(c.data.format)
     << "\nclasses = " << c.data.classes << "\nchannels = " << c.data.blobs.dims.c
     << "\nheight = " << c.data.blobs.dims.h << "\nwidth = " << c.data.blobs.dims.w
     << "\nnoise = " << c.data.blobs.noise << "\ndata_seed = " << c.data.blobs.seed
     << "\ntrain = " << c.data.blobs.train << "\nval = " << c.data.blobs.val
     << "\ntest = " << c.data.blobs.test << "\ncifar_dir = " << c.data.cifar_dir
     << "\nidx_train_images = " << c.data.idx_train_images
     << "\nidx_train_labels = " << c.data.idx_train_labels
     << "\nidx_test_images = " << c.data.idx_test_images
     << "\nidx_test_labels = " << c.data.idx_test_labels << "\nval_size = " << c.data.val_size
     << "\nnormalize = " << (c.data.normalize ? "true" : "false") << '\n';
  os << "\n[model]\n; toy | convnet, or an inline list in `layers`\npreset = " << c.preset
     << "\nlayers = " << c.layers << '\n';
  train("train", c.train, "");
  train("prune", c.prune.train, "optimizer for the pruning phase; max_iters bounds it");
  os << "; row | column | channel\nkind = " << to_string(c.prune.kind) << "\nratio = " << c.prune.ratio
     << '\n';
  for (const auto& [name, r] : c.prune.layer_ratio) os << "ratio_" << name << " = " << r << '\n';
  os << "; A, the bound on |Δλ| per update; auto = weight_decay / 2\nspeed = ";
  if (c.prune.speed) os << *c.prune.speed; else os << "auto";
  os << "\nepsilon = " << c.prune.epsilon << "\nupdate_interval = " << c.prune.update_interval
     << "\nlog_every = " << c.prune.log_every << '\n';
  train("retrain", c.retrain, "masked retraining after the targets are met");
  os << "\n[bench]\nbatch = " << c.bench_batch << "\nrepeats = " << c.bench_repeats
     << "\nwarmup = " << c.bench_warmup << '\n';
  os << "\n[theorem]\nlambdas = " << detail::format_list(c.theorem_lambdas)
     << "\n; 0 means 1e-3 * lambda\ndeltas = " << detail::format_list(c.theorem_deltas) << '\n';
  return os.str();
}

/// Train/validation/test splits for the configured dataset, mean-subtracted with
/// the training split's channel means when `normalize` is set.
inline DataSplits load_dataset(const RunConfig& c, std::vector<float>* means_out = nullptr) {
  DataSplits s;
  switch (c.data.format) {
    case DataFormat::synthetic: {
      auto spec = c.data.blobs;
      spec.classes = c.data.classes;
      s = synthetic_blobs(spec);
      break;
    }
    case DataFormat::cifar10: s = load_cifar10(c.data.cifar_dir, c.data.val_size); break;
    case DataFormat::idx: {
      auto train = idx_dataset(parse_idx(read_file_bytes(c.data.idx_train_images), c.data.idx_train_images),
                               parse_idx(read_file_bytes(c.data.idx_train_labels), c.data.idx_train_labels),
                               c.data.classes, c.data.idx_train_images);
      if (c.data.val_size >= train.size())
        throw ConfigError("config: data.val_size leaves no training data");
      s.train = slice(train, 0, train.size() - c.data.val_size);
      s.val = slice(train, train.size() - c.data.val_size, train.size());
      s.test = idx_dataset(parse_idx(read_file_bytes(c.data.idx_test_images), c.data.idx_test_images),
                           parse_idx(read_file_bytes(c.data.idx_test_labels), c.data.idx_test_labels),
                           c.data.classes, c.data.idx_test_images);
      break;
    }
  }
  std::vector<float> means(s.train.images.shape().c, 0.0f);
  if (c.data.normalize) {
    means = channel_means(s.train);
    subtract_channel_means(s.train, means);
    if (s.val.size()) subtract_channel_means(s.val, means);
    if (s.test.size()) subtract_channel_means(s.test, means);
  }
  if (means_out) *means_out = means;
  return s;
}

}  // namespace increg
