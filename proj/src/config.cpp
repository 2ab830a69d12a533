#include "nuta/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace nuta {

namespace {
std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}
}  // namespace

KeyValues KeyValues::from_file(const std::string& path) {
  std::ifstream in(path);
  require<IoError>(in.good(), "config: cannot open ", path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str(), path);
}

KeyValues KeyValues::from_string(const std::string& text, const std::string& origin) {
  KeyValues kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    require<ConfigError>(eq != std::string::npos, origin, ":", lineno,
                         ": expected 'key = value', got '", line, "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    require<ConfigError>(!key.empty(), origin, ":", lineno, ": empty key");
    require<ConfigError>(!kv.values_.count(key), origin, ":", lineno, ": duplicate key '",
                         key, "'");
    kv.values_[key] = value;
  }
  return kv;
}

bool KeyValues::has(const std::string& key) const { return values_.count(key) > 0; }

std::string KeyValues::raw(const std::string& key) {
  auto it = values_.find(key);
  require<ConfigError>(it != values_.end(), origin_, ": missing required key '", key, "'");
  consumed_.insert(key);
  return it->second;
}

std::string KeyValues::get_str(const std::string& key) { return raw(key); }

std::string KeyValues::get_str(const std::string& key, const std::string& fallback) {
  if (!has(key)) return fallback;
  return raw(key);
}

int64_t KeyValues::get_int(const std::string& key) {
  std::string v = raw(key);
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    require<ConfigError>(pos == v.size(), origin_, ": key '", key, "': trailing text in '",
                         v, "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(cat(origin_, ": key '", key, "': cannot parse integer from '", v, "'"));
  }
}

int64_t KeyValues::get_int(const std::string& key, int64_t fallback) {
  if (!has(key)) return fallback;
  return get_int(key);
}

double KeyValues::get_double(const std::string& key) {
  std::string v = raw(key);
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    require<ConfigError>(pos == v.size(), origin_, ": key '", key, "': trailing text in '",
                         v, "'");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(cat(origin_, ": key '", key, "': cannot parse number from '", v, "'"));
  }
}

double KeyValues::get_double(const std::string& key, double fallback) {
  if (!has(key)) return fallback;
  return get_double(key);
}

bool KeyValues::get_bool(const std::string& key, bool fallback) {
  if (!has(key)) return fallback;
  std::string v = raw(key);
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(cat(origin_, ": key '", key, "': expected a boolean, got '", v, "'"));
}

std::vector<int64_t> KeyValues::get_int_list(const std::string& key,
                                             const std::vector<int64_t>& fallback) {
  if (!has(key)) return fallback;
  std::string v = raw(key);
  std::vector<int64_t> out;
  if (trim(v).empty()) return out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    try {
      size_t pos = 0;
      out.push_back(std::stoll(item, &pos));
      require<ConfigError>(pos == item.size(), origin_, ": key '", key,
                           "': trailing text in list item '", item, "'");
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      throw ConfigError(
          cat(origin_, ": key '", key, "': cannot parse list item '", item, "'"));
    }
  }
  return out;
}

void KeyValues::finish() const {
  for (const auto& [key, value] : values_) {
    require<ConfigError>(consumed_.count(key) > 0, origin_, ": unknown key '", key, "'");
  }
}

FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "nonlocal") return FusionKind::nonlocal;
  if (s == "sum") return FusionKind::sum;
  if (s == "concat") return FusionKind::concat;
  throw ConfigError(cat("fusion kind must be nonlocal|sum|concat, got '", s, "'"));
}

HeadInput parse_head_input(const std::string& s) {
  if (s == "both") return HeadInput::both;
  if (s == "uniform_only") return HeadInput::uniform_only;
  throw ConfigError(cat("head input must be both|uniform_only, got '", s, "'"));
}

const char* to_string(FusionKind k) {
  switch (k) {
    case FusionKind::nonlocal: return "nonlocal";
    case FusionKind::sum: return "sum";
    case FusionKind::concat: return "concat";
  }
  return "?";
}

const char* to_string(HeadInput h) {
  return h == HeadInput::both ? "both" : "uniform_only";
}

namespace {
BlockKind parse_block_kind(const std::string& s, const std::string& origin) {
  if (s == "basic") return BlockKind::basic;
  if (s == "bottleneck") return BlockKind::bottleneck;
  throw ConfigError(cat(origin, ": block kind must be basic|bottleneck, got '", s, "'"));
}

InflatePattern parse_inflate(const std::string& s, const std::string& origin) {
  if (s == "none") return InflatePattern::none;
  if (s == "alternating") return InflatePattern::alternating;
  if (s == "all") return InflatePattern::all;
  throw ConfigError(
      cat(origin, ": inflate pattern must be none|alternating|all, got '", s, "'"));
}
}  // namespace

NetworkConfig NetworkConfig::from_file(const std::string& path) {
  KeyValues kv = KeyValues::from_file(path);
  return from_keyvalues(kv);
}

NetworkConfig NetworkConfig::from_keyvalues(KeyValues& kv) {
  NetworkConfig c;
  c.classes = kv.get_int("classes", c.classes);
  c.input_channels = kv.get_int("input_channels", c.input_channels);
  c.input_frames = kv.get_int("input_frames", c.input_frames);
  c.input_size = kv.get_int("input_size", c.input_size);

  c.stem_channels = kv.get_int("stem_channels", c.stem_channels);
  c.stem_temporal_kernel = kv.get_int("stem_temporal_kernel", c.stem_temporal_kernel);
  c.stem_spatial_kernel = kv.get_int("stem_spatial_kernel", c.stem_spatial_kernel);
  c.stem_spatial_stride = kv.get_int("stem_spatial_stride", c.stem_spatial_stride);
  c.stem_temporal_stride = kv.get_int("stem_temporal_stride", c.stem_temporal_stride);
  c.stem_pool = kv.get_bool("stem_pool", c.stem_pool);

  int64_t num_stages = kv.get_int("num_stages", 4);
  require<ConfigError>(num_stages >= 1 && num_stages <= 4, kv.origin(),
                       ": num_stages must be in [1,4], got ", num_stages);
  for (int64_t i = 0; i < num_stages; ++i) {
    StageConfig sc;
    sc.index = 2 + i;
    std::string p = cat("stage", sc.index, "_");
    sc.blocks = kv.get_int(p + "blocks", 1);
    sc.channels = kv.get_int(p + "channels");
    sc.spatial_stride = kv.get_int(p + "spatial_stride", sc.index == 2 ? 1 : 2);
    sc.temporal_stride = kv.get_int(p + "temporal_stride", 1);
    sc.block = parse_block_kind(kv.get_str(p + "block", "basic"), kv.origin());
    sc.mid_channels = kv.get_int(p + "mid_channels", 0);
    if (sc.mid_channels == 0 && sc.block == BlockKind::bottleneck)
      sc.mid_channels = sc.channels / 4;
    sc.temporal_kernel = kv.get_int(p + "temporal_kernel", 3);
    sc.inflate = parse_inflate(kv.get_str(p + "inflate", "alternating"), kv.origin());
    c.stages.push_back(sc);
  }

  c.nuta_stages = kv.get_int_list("nuta_stages", {});
  c.nuta_heads = kv.get_int("nuta_heads", c.nuta_heads);
  c.nuta_groups = kv.get_int("nuta_groups", c.nuta_groups);
  c.fusion = parse_fusion_kind(kv.get_str("fusion", "concat"));
  c.head_input = parse_head_input(kv.get_str("head_input", "both"));
  c.dropout = kv.get_double("dropout", c.dropout);

  kv.finish();
  c.validate();
  return c;
}

void NetworkConfig::validate() const {
  require<ConfigError>(classes >= 2, "network config: classes must be >= 2");
  require<ConfigError>(input_channels >= 1, "network config: input_channels must be >= 1");
  require<ConfigError>(!stages.empty(), "network config: at least one stage required");
  require<ConfigError>(dropout >= 0.0 && dropout < 1.0,
                       "network config: dropout must be in [0,1)");
  for (const StageConfig& s : stages) {
    require<ConfigError>(s.blocks >= 1, "network config: stage", s.index,
                         "_blocks must be >= 1");
    require<ConfigError>(s.channels >= 1, "network config: stage", s.index,
                         "_channels must be >= 1");
    require<ConfigError>(s.spatial_stride == 1 || s.spatial_stride == 2,
                         "network config: stage", s.index, "_spatial_stride must be 1 or 2");
    require<ConfigError>(s.temporal_stride == 1 || s.temporal_stride == 2,
                         "network config: stage", s.index,
                         "_temporal_stride must be 1 or 2");
    require<ConfigError>(s.temporal_kernel == 1 || s.temporal_kernel == 3,
                         "network config: stage", s.index,
                         "_temporal_kernel must be 1 or 3");
    if (s.block == BlockKind::bottleneck)
      require<ConfigError>(s.mid_channels >= 1, "network config: stage", s.index,
                           "_mid_channels must be >= 1 for bottleneck blocks");
  }
  int64_t last_index = stages.back().index;
  int64_t prev = -1;
  for (int64_t idx : nuta_stages) {
    bool found = false;
    for (const StageConfig& s : stages) found = found || s.index == idx;
    require<ConfigError>(found, "network config: nuta_stages entry ", idx,
                         " is not a configured stage");
    require<ConfigError>(idx > prev, "network config: nuta_stages must be increasing");
    prev = idx;
  }
  if (!nuta_stages.empty()) {
    // The head consumes the aggregated feature of the final module, and every
    // later stage would otherwise run at a different timeline than the map
    // chain assumes; modules must therefore extend through the last stage.
    require<ConfigError>(nuta_stages.back() == last_index,
                         "network config: the last nuta stage must be the final stage ",
                         last_index);
    require<ConfigError>(nuta_heads >= 1, "network config: nuta_heads must be >= 1");
    require<ConfigError>(nuta_groups >= 1, "network config: nuta_groups must be >= 1");
    for (int64_t idx : nuta_stages) {
      for (const StageConfig& s : stages) {
        if (s.index != idx) continue;
        require<ConfigError>(s.channels % nuta_heads == 0, "network config: stage", idx,
                             "_channels must be divisible by nuta_heads");
        require<ConfigError>(s.channels % nuta_groups == 0, "network config: stage", idx,
                             "_channels must be divisible by nuta_groups");
      }
    }
  }
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  KeyValues kv = KeyValues::from_file(path);
  return from_keyvalues(kv);
}

TrainConfig TrainConfig::from_keyvalues(KeyValues& kv) {
  TrainConfig c;
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.warmup_epochs = kv.get_int("warmup_epochs", c.warmup_epochs);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.lr_drop_epochs = kv.get_int_list("lr_drop_epochs", c.lr_drop_epochs);
  c.lr_drop_factor = kv.get_double("lr_drop_factor", c.lr_drop_factor);
  c.clip_grad_norm = kv.get_double("clip_grad_norm", c.clip_grad_norm);
  c.augment_flip = kv.get_bool("augment_flip", c.augment_flip);
  c.augment_time_shift = kv.get_bool("augment_time_shift", c.augment_time_shift);
  c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(c.seed)));
  c.eval_batch_size = kv.get_int("eval_batch_size", c.eval_batch_size);
  kv.finish();
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  require<ConfigError>(epochs >= 1, "train config: epochs must be >= 1");
  require<ConfigError>(batch_size >= 1, "train config: batch_size must be >= 1");
  require<ConfigError>(eval_batch_size >= 1, "train config: eval_batch_size must be >= 1");
  require<ConfigError>(base_lr > 0.0, "train config: base_lr must be > 0");
  require<ConfigError>(momentum >= 0.0 && momentum < 1.0,
                       "train config: momentum must be in [0,1)");
  require<ConfigError>(weight_decay >= 0.0, "train config: weight_decay must be >= 0");
  require<ConfigError>(lr_drop_factor > 0.0, "train config: lr_drop_factor must be > 0");
  require<ConfigError>(warmup_epochs >= 0, "train config: warmup_epochs must be >= 0");
  require<ConfigError>(clip_grad_norm >= 0.0,
                       "train config: clip_grad_norm must be >= 0 (0 disables)");
  for (int64_t drop : lr_drop_epochs)
    require<ConfigError>(drop > warmup_epochs, "train config: lr drop at epoch ", drop,
                         " overlaps the ", warmup_epochs, "-epoch warmup ramp");
}

double TrainConfig::lr_at_epoch(int64_t epoch) const {
  if (epoch <= warmup_epochs)
    return base_lr * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
  double lr = base_lr;
  for (int64_t drop : lr_drop_epochs)
    if (epoch >= drop) lr *= lr_drop_factor;
  return lr;
}

}  // namespace nuta
