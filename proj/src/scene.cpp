#include "cdon/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "cdon/parallel.hpp"

namespace cdon {

namespace {

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t hash4(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  return mix(mix(mix(mix(a) ^ b) ^ c) ^ d);
}

std::uint8_t clamp8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

struct Rgb {
  int r, g, b;
};

constexpr Rgb kShirts[] = {{200, 40, 40}, {40, 160, 60},  {40, 70, 200},
                           {220, 200, 40}, {180, 60, 200}, {240, 140, 30}};
constexpr int kShirtCount = sizeof(kShirts) / sizeof(kShirts[0]);

PixelRect clip(PixelRect r, int h, int w) {
  const int x1 = std::max(r.x, 0), y1 = std::max(r.y, 0);
  const int x2 = std::min(r.x + r.w, w), y2 = std::min(r.y + r.h, h);
  return {x1, y1, std::max(0, x2 - x1), std::max(0, y2 - y1)};
}

bool inside(const PixelRect& r, int y, int x) {
  return x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
}

}  // namespace

Box PixelRect::box() const {
  return {static_cast<real>(x), static_cast<real>(y), static_cast<real>(x + w),
          static_cast<real>(y + h)};
}

bool PixelRect::overlaps(const PixelRect& o) const {
  return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
}

std::string scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06d", index);
  return buf;
}

std::optional<SceneLayout> sample_layout(const SceneConfig& cfg, int index) {
  cfg.validate();
  std::mt19937_64 rng(hash4(cfg.seed, static_cast<std::uint64_t>(index), 0x5ce7e, 0));
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto unr = [&](real lo, real hi) { return std::uniform_real_distribution<real>(lo, hi)(rng); };
  const int H = cfg.image_h, W = cfg.image_w;

  SceneLayout layout;
  for (int d = 0; d < cfg.distractors; ++d) {
    PixelRect r;
    if (uni(0, 1) == 0) {
      r.w = uni(3, 8);
      r.h = uni(std::min(20, H), std::min(100, H));
    } else {
      r.w = uni(20, std::min(60, W));
      r.h = uni(10, std::min(40, H));
    }
    r.x = uni(0, W - r.w);
    r.y = uni(0, H - r.h);
    layout.distractors.push_back(r);
  }

  const int count = uni(cfg.ped_min, cfg.ped_max);
  for (int p = 0; p < count; ++p) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      PixelRect r;
      r.h = uni(cfg.height_min, cfg.height_max);
      const real aspect = cfg.aspect_mean + unr(-cfg.aspect_jitter, cfg.aspect_jitter);
      r.w = std::max(3, static_cast<int>(std::lround(r.h * aspect)));
      if (r.w > W) continue;
      r.x = uni(0, W - r.w);
      r.y = uni(0, H - r.h);
      const PixelRect padded{r.x - 2, r.y - 2, r.w + 4, r.h + 4};
      bool free = true;
      for (const PixelRect& o : layout.pedestrians) free = free && !padded.overlaps(o);
      if (!free) continue;
      layout.pedestrians.push_back(r);
      layout.palettes.push_back(uni(0, kShirtCount - 1));
      placed = true;
    }
    if (!placed) return std::nullopt;
  }

  for (const PixelRect& p : layout.pedestrians) {
    if (!(unr(0, 1) < cfg.occluder_prob)) continue;
    const real f = unr(cfg.cover_min, cfg.cover_max);
    const int mode = uni(0, 3);
    PixelRect o;
    if (mode <= 1) {
      const int ch = std::clamp(static_cast<int>(std::lround(f * p.h)), 1, p.h - 1);
      const int m1 = uni(0, 6), m2 = uni(0, 6);
      o = {p.x - m1, p.y + p.h - ch, p.w + m1 + m2, ch + uni(0, 4)};
    } else {
      const int cw = std::clamp(static_cast<int>(std::lround(f * p.w)), 1, p.w - 1);
      const int m = uni(0, 6), t = uni(0, 6), b = uni(0, 6);
      o = mode == 2 ? PixelRect{p.x - m, p.y - t, cw + m, p.h + t + b}
                    : PixelRect{p.x + p.w - cw, p.y - t, cw + m, p.h + t + b};
    }
    o = clip(o, H, W);
    if (o.w > 0 && o.h > 0) layout.occluders.push_back(o);
  }
  return layout;
}

Scene render_scene(const SceneConfig& cfg, const SceneLayout& layout, int index) {
  const int H = cfg.image_h, W = cfg.image_w;
  const auto idx = static_cast<std::uint64_t>(index);
  Scene scene;
  scene.image = Image8(H, W);
  Image8& img = scene.image;
  auto noise = [&](int y, int x, int amp) {
    const std::uint64_t h = hash4(cfg.texture_seed, idx, static_cast<std::uint64_t>(y),
                                  static_cast<std::uint64_t>(x));
    return static_cast<int>(h % static_cast<std::uint64_t>(2 * amp + 1)) - amp;
  };
  auto colour = [&](std::uint64_t salt, int lo, int hi) {
    return lo + static_cast<int>(hash4(cfg.texture_seed, idx, salt, 17) %
                                 static_cast<std::uint64_t>(hi - lo + 1));
  };

  const Rgb base{colour(1, 60, 160), colour(2, 60, 160), colour(3, 60, 160)};
  const real fx = real(0.05) + real(colour(4, 0, 100)) / 1000;
  const real fy = real(0.03) + real(colour(5, 0, 100)) / 1000;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int wave = static_cast<int>(25 * std::sin(fx * x + fy * y + colour(6, 0, 6)));
      const int n = noise(y, x, 12);
      img.set(y, x, clamp8(base.r + wave + n), clamp8(base.g + wave + n), clamp8(base.b + n));
    }
  }

  for (std::size_t d = 0; d < layout.distractors.size(); ++d) {
    const PixelRect r = clip(layout.distractors[d], H, W);
    const Rgb c{colour(100 + d * 3, 30, 230), colour(101 + d * 3, 30, 230),
                colour(102 + d * 3, 30, 230)};
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) {
        const int s = ((x + y) / 4) % 2 ? 20 : -20;
        const int n = noise(y, x, 8);
        img.set(y, x, clamp8(c.r + s + n), clamp8(c.g + s + n), clamp8(c.b + s + n));
      }
    }
  }

  for (std::size_t p = 0; p < layout.pedestrians.size(); ++p) {
    const PixelRect& r = layout.pedestrians[p];
    const Rgb shirt = kShirts[layout.palettes.at(p) % kShirtCount];
    for (int y = std::max(r.y, 0); y < std::min(r.y + r.h, H); ++y) {
      const real ry = static_cast<real>(y - r.y) / r.h;
      for (int x = std::max(r.x, 0); x < std::min(r.x + r.w, W); ++x) {
        const real rx = static_cast<real>(x - r.x) / r.w;
        const int n = noise(y, x, 6);
        Rgb c;
        if (ry < real(0.16)) {
          c = {225, 185, 150};
        } else if (ry < real(0.55)) {
          const bool stripe = ((y - r.y) / 3) % 2 == 1;
          c = stripe ? Rgb{shirt.r * 3 / 4, shirt.g * 3 / 4, shirt.b * 3 / 4} : shirt;
        } else {
          c = rx >= real(0.42) && rx < real(0.58) ? Rgb{95, 95, 115} : Rgb{45, 45, 65};
        }
        img.set(y, x, clamp8(c.r + n), clamp8(c.g + n), clamp8(c.b + n));
      }
    }
  }

  for (const PixelRect& o : layout.occluders) {
    const PixelRect r = clip(o, H, W);
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) {
        const int s = ((x / 6) + (y / 6)) % 2 ? 20 : -20;
        const int n = noise(y, x, 6);
        img.set(y, x, clamp8(130 + s + n), clamp8(110 + s + n), clamp8(90 + s + n));
      }
    }
  }

  ImageRecord& rec = scene.record;
  rec.image_id = scene_id(index);
  rec.file = "images/" + rec.image_id + ".ppm";
  rec.width = W;
  rec.height = H;
  for (const PixelRect& r : layout.pedestrians) {
    long uncovered = 0;
    int vx1 = W, vy1 = H, vx2 = -1, vy2 = -1;
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) {
        bool covered = false;
        for (const PixelRect& o : layout.occluders) covered = covered || inside(o, y, x);
        if (covered) continue;
        ++uncovered;
        vx1 = std::min(vx1, x);
        vy1 = std::min(vy1, y);
        vx2 = std::max(vx2, x);
        vy2 = std::max(vy2, y);
      }
    }
    Annotation a;
    a.full = r.box();
    if (uncovered > 0) {
      a.visible = {static_cast<real>(vx1), static_cast<real>(vy1), static_cast<real>(vx2 + 1),
                   static_cast<real>(vy2 + 1)};
    } else {
      a.visible = {a.full.x1, a.full.y1, a.full.x1, a.full.y1};
    }
    a.visibility = static_cast<real>(uncovered) / (static_cast<real>(r.w) * r.h);
    rec.objects.push_back(a);
  }
  return scene;
}

std::optional<Scene> gen_scene(const SceneConfig& cfg, int index) {
  const std::optional<SceneLayout> layout = sample_layout(cfg, index);
  if (!layout) {
    std::cerr << "warning: scene " << index << " skipped: placement failed after "
              << cfg.max_retries << " retries\n";
    return std::nullopt;
  }
  return render_scene(cfg, *layout, index);
}

std::vector<Sample> generate_dataset(const SceneConfig& cfg, int first_index, int count) {
  std::vector<std::optional<Scene>> scenes(static_cast<std::size_t>(std::max(count, 0)));
  parallel_for(scenes.size(), [&](std::size_t i) {
    scenes[i] = gen_scene(cfg, first_index + static_cast<int>(i));
  });
  std::vector<Sample> out;
  for (auto& s : scenes) {
    if (s) out.push_back({std::move(s->record), to_tensor(s->image)});
  }
  return out;
}

int write_dataset(const SceneConfig& cfg, const std::string& dir, int first_index, int count) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::vector<std::optional<ImageRecord>> records(static_cast<std::size_t>(std::max(count, 0)));
  parallel_for(records.size(), [&](std::size_t i) {
    std::optional<Scene> s = gen_scene(cfg, first_index + static_cast<int>(i));
    if (!s) return;
    write_ppm((fs::path(dir) / s->record.file).string(), s->image);
    records[i] = std::move(s->record);
  });
  std::vector<ImageRecord> kept;
  for (auto& r : records) {
    if (r) kept.push_back(std::move(*r));
  }
  std::ofstream out(fs::path(dir) / "annotations.jsonl");
  if (!out) throw FormatError("cannot write annotations under " + dir);
  write_annotations(out, kept);
  return static_cast<int>(kept.size());
}

std::vector<Sample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "annotations.jsonl");
  if (!in) throw FormatError("no annotations.jsonl under " + dir);
  std::vector<ImageRecord> records = read_annotations(in);
  std::vector<Sample> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const Image8 img = read_ppm((fs::path(dir) / records[i].file).string());
    if (img.height != records[i].height || img.width != records[i].width) {
      throw FormatError(records[i].file + ": size differs from annotation");
    }
    out[i] = {records[i], to_tensor(img)};
  });
  return out;
}

}  // namespace cdon
