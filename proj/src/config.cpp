#include "dspl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>


namespace dspl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v +
                                "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

// Shortest text that parses back to the same double.
std::string real_text(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true or false, got '" + v + "'");
}

std::string ddb_text(const std::set<int>& s) {
  if (s.empty()) return "none";
  std::string out;
  for (int p : s) out += (out.empty() ? "" : ",") + std::to_string(p);
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
Field size_field(const char* key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member, key](RunConfig& c, const std::string& v) {
            c.*member = static_cast<T>(to_u64(key, v));
          }};
}

Field real_field(const char* key, double RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return real_text(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = to_double(key, v); }};
}

// Nested members are reached through an accessor.
template <class Acc>
Field nested_size(const char* key, Acc acc) {
  return {key, [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); },
          [acc, key](RunConfig& c, const std::string& v) {
            acc(c) = static_cast<std::remove_reference_t<decltype(acc(c))>>(to_u64(key, v));
          }};
}

template <class Acc>
Field nested_real(const char* key, Acc acc) {
  return {key, [acc](const RunConfig& c) { return real_text(acc(const_cast<RunConfig&>(c))); },
          [acc, key](RunConfig& c, const std::string& v) { acc(c) = to_double(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"experiment", [](const RunConfig& c) { return c.experiment; },
                 [](RunConfig& c, const std::string& v) { c.experiment = v; }});
    f.push_back(size_field("seed", &RunConfig::seed));
    f.push_back({"corpus_dir", [](const RunConfig& c) { return c.corpus_dir; },
                 [](RunConfig& c, const std::string& v) { c.corpus_dir = v; }});
    f.push_back({"out_dir", [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& v) { c.out_dir = v; }});

    f.push_back(nested_size("image_size", [](RunConfig& c) -> std::size_t& { return c.phantom.height; }));
    f.push_back(size_field("train_scenes", &RunConfig::train_scenes));
    f.push_back(size_field("test_scenes", &RunConfig::test_scenes));
    f.push_back(nested_size("nodules_min", [](RunConfig& c) -> std::size_t& { return c.phantom.nodules_min; }));
    f.push_back(nested_size("nodules_max", [](RunConfig& c) -> std::size_t& { return c.phantom.nodules_max; }));
    f.push_back(nested_real("hard_fraction", [](RunConfig& c) -> double& { return c.phantom.hard_fraction; }));
    f.push_back(nested_real("tiny_fraction", [](RunConfig& c) -> double& { return c.phantom.tiny_fraction; }));
    f.push_back(nested_real("diameter_min", [](RunConfig& c) -> double& { return c.phantom.diameter_min; }));
    f.push_back(nested_real("diameter_max", [](RunConfig& c) -> double& { return c.phantom.diameter_max; }));
    f.push_back(nested_size("vessels", [](RunConfig& c) -> std::size_t& { return c.phantom.vessels; }));
    f.push_back(nested_real("noise", [](RunConfig& c) -> double& { return c.phantom.noise; }));
    f.push_back(size_field("folds", &RunConfig::folds));

    f.push_back(nested_size("levels", [](RunConfig& c) -> std::size_t& { return c.unet.levels; }));
    f.push_back(nested_size("base_channels", [](RunConfig& c) -> std::size_t& { return c.unet.base_channels; }));
    f.push_back(nested_size("growth", [](RunConfig& c) -> std::size_t& { return c.unet.growth; }));
    f.push_back({"ddb_positions", [](const RunConfig& c) { return ddb_text(c.unet.ddb_positions); },
                 [](RunConfig& c, const std::string& v) {
                   c.unet.ddb_positions = nn::parse_ddb_positions(v);
                 }});
    f.push_back(size_field("s1_max_epochs", &RunConfig::s1_max_epochs));
    f.push_back(size_field("s1_patience", &RunConfig::s1_patience));
    f.push_back(size_field("s1_batch", &RunConfig::s1_batch));
    f.push_back(size_field("s1_crop", &RunConfig::s1_crop));
    f.push_back(size_field("s1_crops_per_scene", &RunConfig::s1_crops_per_scene));
    f.push_back(real_field("s1_lr", &RunConfig::s1_lr));
    f.push_back(real_field("prob_threshold", &RunConfig::prob_threshold));
    f.push_back(size_field("top_n", &RunConfig::top_n));

    f.push_back(nested_size("patch", [](RunConfig& c) -> std::size_t& { return c.fpr.patch; }));
    f.push_back(nested_size("fpr_channels", [](RunConfig& c) -> std::size_t& { return c.fpr.channels; }));
    f.push_back(nested_size("fpr_growth", [](RunConfig& c) -> std::size_t& { return c.fpr.growth; }));
    f.push_back(size_field("s2_epochs", &RunConfig::s2_epochs));
    f.push_back(size_field("s2_batch", &RunConfig::s2_batch));
    f.push_back(real_field("s2_lr", &RunConfig::s2_lr));
    f.push_back(real_field("s2_lr_decay", &RunConfig::s2_lr_decay));
    f.push_back(real_field("s2_momentum", &RunConfig::s2_momentum));
    f.push_back(size_field("positive_jitter", &RunConfig::positive_jitter));
    f.push_back(size_field("random_negatives", &RunConfig::random_negatives));
    f.push_back({"weighting", [](const RunConfig& c) { return spl::weighting_name(c.weighting); },
                 [](RunConfig& c, const std::string& v) { c.weighting = spl::parse_weighting(v); }});
    f.push_back({"spl_lambda0", [](const RunConfig& c) { return c.spl.lambda0_text(); },
                 [](RunConfig& c, const std::string& v) { c.spl.set_lambda0(v); }});
    f.push_back(nested_real("spl_gamma", [](RunConfig& c) -> double& { return c.spl.gamma; }));
    f.push_back(nested_real("spl_q0", [](RunConfig& c) -> double& { return c.spl.q0; }));
    f.push_back(nested_real("spl_mu", [](RunConfig& c) -> double& { return c.spl.mu; }));
    f.push_back(nested_real("spl_q_min", [](RunConfig& c) -> double& { return c.spl.q_min; }));
    f.push_back({"spl_balance_classes",
                 [](const RunConfig& c) { return std::string(c.spl.balance_classes ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) { c.spl.balance_classes = to_bool("spl_balance_classes", v); }});
    f.push_back(real_field("label_noise", &RunConfig::label_noise));

    f.push_back(size_field("repeats", &RunConfig::repeats));
    f.push_back({"ablation_ddb",
                 [](const RunConfig& c) {
                   std::string out;
                   for (const auto& s : c.ablation_ddb) out += (out.empty() ? "" : ";") + ddb_text(s);
                   return out;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.ablation_ddb.clear();
                   std::stringstream ss(v);
                   std::string tok;
                   while (std::getline(ss, tok, ';')) {
                     c.ablation_ddb.push_back(nn::parse_ddb_positions(trim(tok)));
                   }
                 }});
    return f;
  }();
  return table;
}

}  // namespace

nn::BlockConfig RunConfig::default_unet() {
  nn::BlockConfig b;
  b.levels = 3;
  b.base_channels = 4;
  b.growth = 4;
  b.ddb_positions = {1, 2};
  return b;
}

phantom::PhantomConfig RunConfig::desk_phantom() {
  phantom::PhantomConfig p;
  p.noise = 0.1;
  p.vessels = 8;
  p.diameter_max = 10.0;
  return p;
}

void RunConfig::validate() const {
  phantom::PhantomConfig p = phantom;
  p.validate();
  if (phantom.height != phantom.width) throw std::invalid_argument("config: images must be square");
  unet.validate();
  const std::size_t factor = std::size_t{1} << unet.levels;
  if (s1_crop == 0 || s1_crop % factor || s1_crop > phantom.height || phantom.height % factor) {
    throw std::invalid_argument("config: s1_crop and image_size must be multiples of 2^levels "
                                "with s1_crop <= image_size");
  }
  if (train_scenes < folds || folds < 2) {
    throw std::invalid_argument("config: need 2 <= folds <= train_scenes");
  }
  if (test_scenes == 0) throw std::invalid_argument("config: test_scenes must be >= 1");
  if (s1_batch == 0 || s2_batch == 0 || s1_crops_per_scene == 0) {
    throw std::invalid_argument("config: batch sizes and crops per scene must be >= 1");
  }
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) {
    throw std::invalid_argument("config: prob_threshold must lie in (0,1)");
  }
  if (!(s1_lr > 0.0) || !(s2_lr > 0.0)) throw std::invalid_argument("config: learning rates must be > 0");
  if (!(s2_lr_decay > 0.0 && s2_lr_decay <= 1.0)) {
    throw std::invalid_argument("config: s2_lr_decay must lie in (0,1]");
  }
  if (!(s2_momentum >= 0.0 && s2_momentum < 1.0)) {
    throw std::invalid_argument("config: s2_momentum must lie in [0,1)");
  }
  if (!(label_noise >= 0.0 && label_noise < 0.5)) {
    throw std::invalid_argument("config: label_noise must lie in [0,0.5)");
  }
  if (repeats == 0) throw std::invalid_argument("config: repeats must be >= 1");
  if (ablation_ddb.empty()) throw std::invalid_argument("config: ablation_ddb is empty");
  for (const auto& s : ablation_ddb) {
    nn::BlockConfig b = unet;
    b.ddb_positions = s;
    b.validate();
  }
  spl.validate();
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << " = " << f.get(*this) << "\n";
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    }
    it->set(c, value);
  }
  c.phantom.width = c.phantom.height;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("config: cannot write " + path.string());
  os << to_text();
}

}  // namespace dspl
