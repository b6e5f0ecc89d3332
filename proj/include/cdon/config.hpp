#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cdon/common.hpp"
#include "cdon/gating.hpp"

namespace cdon {

/// Flat `key = value` document. Lines starting with '#' and blank lines are
/// skipped; trailing "# ..." comments are stripped. Duplicate keys are errors.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Typed reads; each marks the key as consumed. Malformed values throw
  /// ConfigError naming the key.
  std::string get_string(const std::string& key, const std::string& fallback);
  int get_int(const std::string& key, int fallback);
  real get_real(const std::string& key, real fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback);

  /// Throws ConfigError listing every key that no getter consumed.
  void reject_unknown() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);

/// Synthetic scene generator settings.
struct SceneConfig {
  int image_h = 128;
  int image_w = 160;
  int ped_min = 1;
  int ped_max = 3;
  int height_min = 40;
  int height_max = 110;
  real aspect_mean = real(0.41);
  real aspect_jitter = real(0.04);
  real occluder_prob = real(0.35);
  real cover_min = real(0.2);
  real cover_max = real(0.7);
  int distractors = 3;
  std::uint64_t texture_seed = 7;
  std::uint64_t seed = 1;
  int max_retries = 60;

  /// Throws ConfigError on empty or inverted ranges.
  void validate() const;
};

/// Network and optimisation settings.
struct TrainConfig {
  std::vector<int> widths = {16, 32, 64, 96, 96};
  /// 1-based backbone blocks feeding the gated sub-network.
  std::vector<int> taps = {1, 2, 3, 4, 5};
  GateKind gate_kind = GateKind::channel;
  int squeeze_ratio = 2;
  int k = 3;
  real gamma_off = real(0.1);
  bool use_deformable = true;
  bool use_ohem = false;
  int ohem_n = 300;

  real base_lr = real(1e-3);
  int warmup_steps = 0;
  real warmup_lr = real(1e-4);
  std::vector<std::pair<int, real>> lr_drops;
  real momentum = real(0.9);
  real weight_decay = real(5e-4);
  real grad_clip = 0;

  int rois_per_image = 256;
  int rpn_batch = 256;
  real pos_fraction = real(0.5);
  real alpha = 1;
  int steps = 500;
  std::uint64_t seed = 1;

  real anchor_ratio = real(0.41);
  real anchor_min = 32;
  real anchor_max = 512;
  int anchor_count = 9;
  int proposals = 300;
  real rpn_nms = real(0.7);
  int couple_width = 32;
  int pooled = 7;
  real init_std = real(0.01);
  real det_nms = real(0.5);
  int det_max = 100;
  int checkpoint_every = 0;

  /// Throws ConfigError on inconsistent widths, taps or ranges.
  void validate() const;
};

/// Scene and training keys share one namespace in a config file.
struct RunConfig {
  SceneConfig scene;
  TrainConfig train;
  /// Scene index ranges used by ablate and the acceptance run.
  int train_scenes = 50;
  int val_scenes = 50;
  int val_first_index = 100000;

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  /// Canonical text listing every key; parse(to_text()) reproduces the config.
  std::string to_text() const;
  std::uint64_t hash() const { return fnv1a64(to_text()); }
};

}  // namespace cdon
