#include "cdon/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace cdon {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) out.push_back(trim(part));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: key '" + key + "' has malformed value '" + text + "'");
  }
  return v;
}

std::string fmt(real v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.has(key)) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    kv.values_[key] = value;
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int KeyValues::get_int(const std::string& key, int fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<int>(key, it->second);
}

real KeyValues::get_real(const std::string& key, real fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<real>(key, it->second);
}

bool KeyValues::get_bool(const std::string& key, bool fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<int> KeyValues::get_ints(const std::string& key, const std::vector<int>& fallback) {
  used_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  for (const std::string& part : split(it->second, ',')) out.push_back(parse_number<int>(key, part));
  return out;
}

void KeyValues::reject_unknown() const {
  std::string unknown;
  for (const auto& [key, value] : values_) {
    if (!used_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  }
  if (!unknown.empty()) throw ConfigError("config: unknown key(s): " + unknown);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void SceneConfig::validate() const {
  if (image_h < 16 || image_w < 16) throw ConfigError("scene: image must be at least 16x16");
  if (ped_min < 0 || ped_max < ped_min) throw ConfigError("scene: invalid pedestrian count range");
  if (height_min < 4 || height_max < height_min || height_max > image_h) {
    throw ConfigError("scene: invalid height range");
  }
  if (!(aspect_mean > 0) || aspect_jitter < 0 || aspect_jitter >= aspect_mean) {
    throw ConfigError("scene: invalid aspect ratio");
  }
  if (occluder_prob < 0 || occluder_prob > 1) throw ConfigError("scene: occluder_prob outside [0,1]");
  if (cover_min < 0 || cover_max < cover_min || cover_max >= 1) {
    throw ConfigError("scene: invalid occluder coverage range");
  }
  if (distractors < 0 || max_retries < 1) throw ConfigError("scene: invalid distractors/retries");
}

void TrainConfig::validate() const {
  if (widths.size() != 5) throw ConfigError("train: backbone needs exactly 5 block widths");
  for (int w : widths) {
    if (w < 1) throw ConfigError("train: block widths must be positive");
  }
  if (taps.empty()) throw ConfigError("train: at least one tap required");
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 1 || taps[i] > 5) throw ConfigError("train: taps must name blocks 1..5");
    if (i > 0 && taps[i] <= taps[i - 1]) throw ConfigError("train: taps must strictly increase");
  }
  if (squeeze_ratio < 1) throw ConfigError("train: squeeze_ratio must be >= 1");
  for (int t : taps) {
    if (widths[t - 1] % squeeze_ratio != 0 && squeeze_ratio <= widths[t - 1]) {
      throw ConfigError("train: squeeze_ratio " + std::to_string(squeeze_ratio) +
                        " does not divide block " + std::to_string(t) + " width");
    }
  }
  if (k < 1 || pooled < 1 || couple_width < 1) throw ConfigError("train: k, pooled, couple_width >= 1");
  if (!(gamma_off >= 0)) throw ConfigError("train: gamma_off must be >= 0");
  if (ohem_n < 1) throw ConfigError("train: ohem_n must be >= 1");
  if (!(base_lr > 0) || warmup_steps < 0 || !(warmup_lr > 0)) throw ConfigError("train: invalid lr");
  for (const auto& [step, factor] : lr_drops) {
    if (step < 0 || !(factor > 0)) throw ConfigError("train: invalid lr drop");
  }
  if (momentum < 0 || momentum >= 1 || weight_decay < 0 || grad_clip < 0) {
    throw ConfigError("train: invalid momentum / weight_decay / grad_clip");
  }
  if (rois_per_image < 1 || rpn_batch < 1) throw ConfigError("train: batch sizes must be >= 1");
  if (pos_fraction <= 0 || pos_fraction > 1) throw ConfigError("train: pos_fraction outside (0,1]");
  if (alpha < 0 || steps < 0) throw ConfigError("train: alpha and steps must be >= 0");
  if (!(anchor_ratio > 0) || !(anchor_min > 0) || anchor_max <= anchor_min || anchor_count < 2) {
    throw ConfigError("train: invalid anchor settings");
  }
  if (proposals < 1 || rpn_nms <= 0 || rpn_nms > 1 || det_nms <= 0 || det_nms > 1 || det_max < 1) {
    throw ConfigError("train: invalid proposal / detection settings");
  }
  if (!(init_std > 0) || checkpoint_every < 0) throw ConfigError("train: invalid init_std / checkpoint_every");
}

RunConfig RunConfig::parse(const std::string& text) {
  KeyValues kv = KeyValues::parse(text);
  RunConfig c;
  SceneConfig& s = c.scene;
  s.image_h = kv.get_int("image_h", s.image_h);
  s.image_w = kv.get_int("image_w", s.image_w);
  s.ped_min = kv.get_int("ped_min", s.ped_min);
  s.ped_max = kv.get_int("ped_max", s.ped_max);
  s.height_min = kv.get_int("height_min", s.height_min);
  s.height_max = kv.get_int("height_max", s.height_max);
  s.aspect_mean = kv.get_real("aspect_mean", s.aspect_mean);
  s.aspect_jitter = kv.get_real("aspect_jitter", s.aspect_jitter);
  s.occluder_prob = kv.get_real("occluder_prob", s.occluder_prob);
  s.cover_min = kv.get_real("cover_min", s.cover_min);
  s.cover_max = kv.get_real("cover_max", s.cover_max);
  s.distractors = kv.get_int("distractors", s.distractors);
  s.texture_seed = static_cast<std::uint64_t>(
      kv.get_int("texture_seed", static_cast<int>(s.texture_seed)));
  s.seed = static_cast<std::uint64_t>(kv.get_int("scene_seed", static_cast<int>(s.seed)));
  s.max_retries = kv.get_int("max_retries", s.max_retries);

  TrainConfig& t = c.train;
  t.widths = kv.get_ints("widths", t.widths);
  t.taps = kv.get_ints("taps", t.taps);
  t.gate_kind = parse_gate_kind(kv.get_string("gate_kind", to_string(t.gate_kind)));
  t.squeeze_ratio = kv.get_int("squeeze_ratio", t.squeeze_ratio);
  t.k = kv.get_int("k", t.k);
  t.gamma_off = kv.get_real("gamma_off", t.gamma_off);
  t.use_deformable = kv.get_bool("use_deformable", t.use_deformable);
  t.use_ohem = kv.get_bool("use_ohem", t.use_ohem);
  t.ohem_n = kv.get_int("ohem_n", t.ohem_n);
  t.base_lr = kv.get_real("base_lr", t.base_lr);
  t.warmup_steps = kv.get_int("warmup_steps", t.warmup_steps);
  t.warmup_lr = kv.get_real("warmup_lr", t.warmup_lr);
  if (kv.has("lr_drops")) {
    t.lr_drops.clear();
    const std::string text = kv.get_string("lr_drops", "");
    for (const std::string& item : split(text, ',')) {
      if (item.empty()) continue;
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("config: lr_drops expects step:factor items");
      t.lr_drops.emplace_back(parse_number<int>("lr_drops", trim(item.substr(0, colon))),
                              parse_number<real>("lr_drops", trim(item.substr(colon + 1))));
    }
  }
  t.momentum = kv.get_real("momentum", t.momentum);
  t.weight_decay = kv.get_real("weight_decay", t.weight_decay);
  t.grad_clip = kv.get_real("grad_clip", t.grad_clip);
  t.rois_per_image = kv.get_int("rois_per_image", t.rois_per_image);
  t.rpn_batch = kv.get_int("rpn_batch", t.rpn_batch);
  t.pos_fraction = kv.get_real("pos_fraction", t.pos_fraction);
  t.alpha = kv.get_real("alpha", t.alpha);
  t.steps = kv.get_int("steps", t.steps);
  t.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<int>(t.seed)));
  t.anchor_ratio = kv.get_real("anchor_ratio", t.anchor_ratio);
  t.anchor_min = kv.get_real("anchor_min", t.anchor_min);
  t.anchor_max = kv.get_real("anchor_max", t.anchor_max);
  t.anchor_count = kv.get_int("anchor_count", t.anchor_count);
  t.proposals = kv.get_int("proposals", t.proposals);
  t.rpn_nms = kv.get_real("rpn_nms", t.rpn_nms);
  t.couple_width = kv.get_int("couple_width", t.couple_width);
  t.pooled = kv.get_int("pooled", t.pooled);
  t.init_std = kv.get_real("init_std", t.init_std);
  t.det_nms = kv.get_real("det_nms", t.det_nms);
  t.det_max = kv.get_int("det_max", t.det_max);
  t.checkpoint_every = kv.get_int("checkpoint_every", t.checkpoint_every);

  c.train_scenes = kv.get_int("train_scenes", c.train_scenes);
  c.val_scenes = kv.get_int("val_scenes", c.val_scenes);
  c.val_first_index = kv.get_int("val_first_index", c.val_first_index);
  if (c.train_scenes < 1 || c.val_scenes < 1 || c.val_first_index < c.train_scenes) {
    throw ConfigError("config: invalid train/val scene ranges");
  }

  kv.reject_unknown();
  c.scene.validate();
  c.train.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  const SceneConfig& s = scene;
  o << "image_h = " << s.image_h << "\nimage_w = " << s.image_w << "\nped_min = " << s.ped_min
    << "\nped_max = " << s.ped_max << "\nheight_min = " << s.height_min
    << "\nheight_max = " << s.height_max << "\naspect_mean = " << fmt(s.aspect_mean)
    << "\naspect_jitter = " << fmt(s.aspect_jitter) << "\noccluder_prob = " << fmt(s.occluder_prob)
    << "\ncover_min = " << fmt(s.cover_min) << "\ncover_max = " << fmt(s.cover_max)
    << "\ndistractors = " << s.distractors << "\ntexture_seed = " << s.texture_seed
    << "\nscene_seed = " << s.seed << "\nmax_retries = " << s.max_retries << '\n';
  const TrainConfig& t = train;
  std::string drops;
  for (std::size_t i = 0; i < t.lr_drops.size(); ++i) {
    drops += (i ? "," : "") + std::to_string(t.lr_drops[i].first) + ":" + fmt(t.lr_drops[i].second);
  }
  o << "widths = " << fmt_ints(t.widths) << "\ntaps = " << fmt_ints(t.taps)
    << "\ngate_kind = " << to_string(t.gate_kind) << "\nsqueeze_ratio = " << t.squeeze_ratio
    << "\nk = " << t.k << "\ngamma_off = " << fmt(t.gamma_off)
    << "\nuse_deformable = " << (t.use_deformable ? "true" : "false")
    << "\nuse_ohem = " << (t.use_ohem ? "true" : "false") << "\nohem_n = " << t.ohem_n
    << "\nbase_lr = " << fmt(t.base_lr) << "\nwarmup_steps = " << t.warmup_steps
    << "\nwarmup_lr = " << fmt(t.warmup_lr) << "\nlr_drops = " << drops
    << "\nmomentum = " << fmt(t.momentum) << "\nweight_decay = " << fmt(t.weight_decay)
    << "\ngrad_clip = " << fmt(t.grad_clip) << "\nrois_per_image = " << t.rois_per_image
    << "\nrpn_batch = " << t.rpn_batch << "\npos_fraction = " << fmt(t.pos_fraction)
    << "\nalpha = " << fmt(t.alpha) << "\nsteps = " << t.steps << "\nseed = " << t.seed
    << "\nanchor_ratio = " << fmt(t.anchor_ratio) << "\nanchor_min = " << fmt(t.anchor_min)
    << "\nanchor_max = " << fmt(t.anchor_max) << "\nanchor_count = " << t.anchor_count
    << "\nproposals = " << t.proposals << "\nrpn_nms = " << fmt(t.rpn_nms)
    << "\ncouple_width = " << t.couple_width << "\npooled = " << t.pooled
    << "\ninit_std = " << fmt(t.init_std) << "\ndet_nms = " << fmt(t.det_nms)
    << "\ndet_max = " << t.det_max << "\ncheckpoint_every = " << t.checkpoint_every
    << "\ntrain_scenes = " << train_scenes << "\nval_scenes = " << val_scenes
    << "\nval_first_index = " << val_first_index << '\n';
  return o.str();
}

}  // namespace cdon
