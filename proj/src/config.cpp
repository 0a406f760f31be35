#include "dynkd/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dynkd/error.hpp"
#include "dynkd/nn/zoo.hpp"

namespace dynkd {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object, remembering which ones were consumed so
// leftovers can be reported as unknown fields.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return node_.contains(key); }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!node_.contains(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type (" + node_.at(key).dump() + ")");
    }
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!node_.contains(key) || node_.at(key).is_null()) return;
    T v{};
    read(key, v);
    out = v;
  }

  void read_path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(node_.contains(key) ? node_.at(key) : empty, field(key));
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    return node_.contains(key) ? &node_.at(key) : nullptr;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key.c_str()) + ": unknown field");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

std::pair<int, int> line_and_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

ExperimentConfig from_json(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "");

  {
    Section s = root.child("dataset");
    std::string name = to_string(c.dataset.name);
    s.read("name", name);
    try {
      c.dataset.name = parse_dataset_name(name);
    } catch (const ConfigError& e) {
      throw ConfigError("dataset.name: " + std::string(e.what()));
    }
    s.read_path("root", c.dataset.root);
    s.read_optional("subset_size", c.dataset.subset_size);
    s.read_optional("test_subset_size", c.dataset.test_subset_size);
    s.read("subset_seed", c.dataset.subset_seed);
    s.read("augment", c.dataset.augment);
    s.read("allow_download", c.dataset.allow_download);
    s.read("archive_sha256", c.dataset.archive_sha256);
    Section syn = s.child("synthetic");
    syn.read("num_classes", c.dataset.synthetic.num_classes);
    syn.read("samples_per_class", c.dataset.synthetic.samples_per_class);
    syn.read("test_samples_per_class", c.dataset.synthetic.test_samples_per_class);
    syn.read("seed", c.dataset.synthetic.seed);
    syn.finish();
    s.finish();
  }
  {
    Section s = root.child("models");
    s.read("teacher", c.models.teacher);
    s.read("student", c.models.student);
    s.read_path("teacher_checkpoint", c.models.teacher_checkpoint);
    s.read("allow_full_scale", c.models.allow_full_scale);
    s.finish();
  }
  // Without a schedule section the built-in defaults apply unchanged.
  if (root.has("schedule")) {
    Section s = root.child("schedule");
    s.read("beta_min", c.schedule.beta_min);
    s.read("beta_max", c.schedule.beta_max);
    s.read("time_shift_t0", c.schedule.time_shift_t0);
    std::string unit = "raw_epoch";
    s.read("time_unit", unit);
    try {
      c.schedule.time_unit = parse_time_unit(unit);
    } catch (const ConfigError& e) {
      throw ConfigError("schedule.time_unit: " + std::string(e.what()));
    }
    // The growth rate only has a default on the normalized time axis.
    if (!s.has("growth_rate_b") && c.schedule.time_unit == TimeUnit::raw_epoch) {
      throw ConfigError("schedule.growth_rate_b: required when time_unit is raw_epoch");
    }
    c.schedule.growth_rate_b = 5.0;
    s.read("growth_rate_b", c.schedule.growth_rate_b);
    s.finish();
  } else {
    root.child("schedule");
  }
  {
    Section s = root.child("losses");
    s.read("r", c.losses.r);
    s.read("tau", c.losses.tau);
    s.read("kd_tau_squared", c.losses.kd_tau_squared);
    s.read("second_order_grad_match", c.losses.second_order_grad_match);
    Section terms = s.child("terms");
    terms.read("wasserstein", c.losses.use_wasserstein);
    terms.read("grad_match", c.losses.use_grad_match);
    terms.read("distill", c.losses.use_distill);
    terms.finish();
    s.finish();
  }
  {
    Section s = root.child("trainer");
    std::string mode = to_string(c.trainer.mode);
    s.read("mode", mode);
    try {
      c.trainer.mode = parse_mode(mode);
    } catch (const ConfigError& e) {
      throw ConfigError("trainer.mode: " + std::string(e.what()));
    }
    s.read("epochs", c.trainer.epochs);
    s.read("batch_size", c.trainer.batch_size);
    s.read("seed", c.trainer.seed);
    s.read("constant_beta", c.trainer.constant_beta);
    s.read("log_batches", c.trainer.log_batches);
    s.read("threads", c.trainer.threads);
    Section o = s.child("optimizer");
    o.read("kind", c.trainer.optimizer.kind);
    o.read("learning_rate", c.trainer.optimizer.learning_rate);
    o.read("momentum", c.trainer.optimizer.momentum);
    o.read("weight_decay", c.trainer.optimizer.weight_decay);
    o.read("decay", c.trainer.optimizer.decay);
    o.finish();
    s.finish();
  }
  {
    Section s = root.child("sweep");
    if (const json* cells = s.raw("cells")) {
      if (!cells->is_array()) throw ConfigError("sweep.cells: expected an array");
      c.sweep.cells.clear();
      for (std::size_t i = 0; i < cells->size(); ++i) {
        Section cell((*cells)[i], "sweep.cells[" + std::to_string(i) + "]");
        SweepCell sc;
        cell.read("teacher", sc.teacher);
        cell.read("student", sc.student);
        cell.finish();
        c.sweep.cells.push_back(sc);
      }
    }
    s.read("seeds", c.sweep.seeds);
    if (const json* modes = s.raw("modes")) {
      if (!modes->is_array()) throw ConfigError("sweep.modes: expected an array");
      c.sweep.modes.clear();
      for (const auto& m : *modes) {
        try {
          c.sweep.modes.push_back(parse_mode(m.get<std::string>()));
        } catch (const std::exception& e) {
          throw ConfigError("sweep.modes: " + std::string(e.what()));
        }
      }
    }
    s.read("teacher_epochs", c.sweep.teacher_epochs);
    s.read("teacher_seed", c.sweep.teacher_seed);
    s.finish();
  }
  {
    Section s = root.child("report");
    s.read("strict", c.report.strict);
    s.finish();
  }
  root.finish();
  return c;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::gompertz_full:
      return "gompertz_full";
    case Mode::fixed_full:
      return "fixed_full";
    case Mode::hinton_kd:
      return "hinton_kd";
    case Mode::student_only:
      return "student_only";
  }
  return "?";
}

Mode parse_mode(const std::string& text) {
  for (Mode m : kAllModes) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown mode '" + text +
                    "' (expected gompertz_full, fixed_full, hinton_kd or student_only)");
}

DatasetSpec DatasetConfig::spec(Split split) const {
  DatasetSpec s;
  s.name = name;
  s.root = root;
  s.split = split;
  s.subset_size = split == Split::train ? subset_size : test_subset_size;
  s.subset_seed = subset_seed + (split == Split::test ? 1 : 0);
  s.synthetic = synthetic;
  s.allow_download = allow_download;
  s.archive_sha256 = archive_sha256;
  return s;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": syntax error: " + e.what());
  }
  return from_json(doc);
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  struct Parsed {
    std::vector<std::string> path;
    json value;
  };
  std::vector<Parsed> parsed;
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + item + "': expected key=value");
    }
    Parsed p;
    std::stringstream keys(item.substr(0, eq));
    for (std::string part; std::getline(keys, part, '.');) {
      if (part.empty()) throw ConfigError("override '" + item + "': empty key component");
      p.path.push_back(part);
    }
    const std::string text = item.substr(eq + 1);
    p.value = json::parse(text, nullptr, false);
    if (p.value.is_discarded()) p.value = text;
    parsed.push_back(std::move(p));
  }
  std::stable_sort(parsed.begin(), parsed.end(), [](const Parsed& a, const Parsed& b) {
    return a.path.size() < b.path.size();
  });
  for (const auto& p : parsed) {
    json* node = &doc;
    for (std::size_t i = 0; i + 1 < p.path.size(); ++i) {
      if (!node->is_object()) *node = json::object();
      node = &(*node)[p.path[i]];
    }
    if (!node->is_object()) *node = json::object();
    (*node)[p.path.back()] = p.value;
  }
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (overrides.empty()) return parse_config(text, path.string());
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error&) {
    return parse_config(text, path.string());  // rethrows with line diagnostics
  }
  apply_overrides(doc, overrides);
  return from_json(doc);
}

std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> v;
  auto need = [&v](bool ok, const std::string& what) {
    if (!ok) v.push_back(what);
  };
  for (const auto& s : validate(c.schedule)) v.push_back("schedule: " + s);

  need(c.losses.r >= 0.0 && c.losses.r <= 1.0, "losses.r in [0, 1]");
  need(c.losses.tau > 0.0, "losses.tau > 0");

  need(c.trainer.epochs >= 1, "trainer.epochs >= 1");
  need(c.trainer.batch_size >= 1, "trainer.batch_size >= 1");
  need(std::isfinite(c.trainer.constant_beta) && c.trainer.constant_beta >= 0.0,
       "trainer.constant_beta finite and >= 0");
  need(c.trainer.optimizer.kind == "sgd", "trainer.optimizer.kind is sgd");
  need(c.trainer.optimizer.learning_rate > 0.0, "trainer.optimizer.learning_rate > 0");
  need(c.trainer.optimizer.momentum >= 0.0 && c.trainer.optimizer.momentum < 1.0,
       "trainer.optimizer.momentum in [0, 1)");
  need(c.trainer.optimizer.weight_decay >= 0.0, "trainer.optimizer.weight_decay >= 0");
  need(c.trainer.optimizer.decay == "cosine" || c.trainer.optimizer.decay == "constant",
       "trainer.optimizer.decay is cosine or constant");
  need(c.trainer.threads >= 0, "trainer.threads >= 0");

  need(!c.dataset.subset_size || *c.dataset.subset_size >= 1, "dataset.subset_size >= 1");
  need(!c.dataset.test_subset_size || *c.dataset.test_subset_size >= 1,
       "dataset.test_subset_size >= 1");
  need(c.dataset.synthetic.num_classes >= 2, "dataset.synthetic.num_classes >= 2");
  need(c.dataset.synthetic.samples_per_class >= 1, "dataset.synthetic.samples_per_class >= 1");
  need(c.dataset.synthetic.test_samples_per_class >= 1,
       "dataset.synthetic.test_samples_per_class >= 1");
  need(!c.dataset.allow_download || !c.dataset.archive_sha256.empty(),
       "dataset.archive_sha256 set when allow_download is enabled");

  for (const auto* id : {&c.models.teacher, &c.models.student}) {
    try {
      const auto& entry = nn::zoo_entry(*id);
      need(entry.scale == nn::ZooScale::tiny || c.models.allow_full_scale,
           "models: '" + *id + "' requires models.allow_full_scale");
    } catch (const ConfigError& e) {
      v.push_back(std::string("models: ") + e.what());
    }
  }

  need(!c.sweep.cells.empty(), "sweep.cells not empty");
  need(!c.sweep.seeds.empty(), "sweep.seeds not empty");
  need(!c.sweep.modes.empty(), "sweep.modes not empty");
  need(c.sweep.teacher_epochs >= 1, "sweep.teacher_epochs >= 1");
  return v;
}

json to_json(const ExperimentConfig& c) {
  json doc;
  json& d = doc["dataset"];
  d["name"] = to_string(c.dataset.name);
  d["root"] = c.dataset.root.string();
  d["subset_size"] = c.dataset.subset_size ? json(*c.dataset.subset_size) : json(nullptr);
  d["test_subset_size"] =
      c.dataset.test_subset_size ? json(*c.dataset.test_subset_size) : json(nullptr);
  d["subset_seed"] = c.dataset.subset_seed;
  d["augment"] = c.dataset.augment;
  d["allow_download"] = c.dataset.allow_download;
  d["archive_sha256"] = c.dataset.archive_sha256;
  d["synthetic"] = {{"num_classes", c.dataset.synthetic.num_classes},
                    {"samples_per_class", c.dataset.synthetic.samples_per_class},
                    {"test_samples_per_class", c.dataset.synthetic.test_samples_per_class},
                    {"seed", c.dataset.synthetic.seed}};
  doc["models"] = {{"teacher", c.models.teacher},
                   {"student", c.models.student},
                   {"teacher_checkpoint", c.models.teacher_checkpoint.string()},
                   {"allow_full_scale", c.models.allow_full_scale}};
  doc["schedule"] = {{"beta_min", c.schedule.beta_min},
                     {"beta_max", c.schedule.beta_max},
                     {"growth_rate_b", c.schedule.growth_rate_b},
                     {"time_shift_t0", c.schedule.time_shift_t0},
                     {"time_unit", std::string(to_string(c.schedule.time_unit))}};
  doc["losses"] = {{"r", c.losses.r},
                   {"tau", c.losses.tau},
                   {"kd_tau_squared", c.losses.kd_tau_squared},
                   {"second_order_grad_match", c.losses.second_order_grad_match},
                   {"terms",
                    {{"wasserstein", c.losses.use_wasserstein},
                     {"grad_match", c.losses.use_grad_match},
                     {"distill", c.losses.use_distill}}}};
  doc["trainer"] = {{"mode", to_string(c.trainer.mode)},
                    {"epochs", c.trainer.epochs},
                    {"batch_size", c.trainer.batch_size},
                    {"seed", c.trainer.seed},
                    {"constant_beta", c.trainer.constant_beta},
                    {"log_batches", c.trainer.log_batches},
                    {"threads", c.trainer.threads},
                    {"optimizer",
                     {{"kind", c.trainer.optimizer.kind},
                      {"learning_rate", c.trainer.optimizer.learning_rate},
                      {"momentum", c.trainer.optimizer.momentum},
                      {"weight_decay", c.trainer.optimizer.weight_decay},
                      {"decay", c.trainer.optimizer.decay}}}};
  json cells = json::array();
  for (const auto& cell : c.sweep.cells) cells.push_back({{"teacher", cell.teacher}, {"student", cell.student}});
  json modes = json::array();
  for (Mode m : c.sweep.modes) modes.push_back(to_string(m));
  doc["sweep"] = {{"cells", cells},
                  {"seeds", c.sweep.seeds},
                  {"modes", modes},
                  {"teacher_epochs", c.sweep.teacher_epochs},
                  {"teacher_seed", c.sweep.teacher_seed}};
  doc["report"] = {{"strict", c.report.strict}};
  return doc;
}

}  // namespace dynkd
