#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uncd/errors.hpp"
#include "uncd/image.hpp"
#include "uncd/tensor.hpp"

namespace uncd {

// ---------------------------------------------------------------------------
// Procedural "urban scene" generation: textured background (class 2), road
// bands (class 1), rectangular/compound buildings (class 0).
// ---------------------------------------------------------------------------

struct SceneRecipe {
    struct Rect {
        std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
        std::size_t area() const { return (x1 - x0) * (y1 - y0); }
        bool intersects(const Rect& o) const {
            return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
        }
    };
    struct Blob {
        double cx = 0, cy = 0, rx = 1, ry = 1;
        std::array<int, 3> tint{0, 0, 0};
    };
    struct Road {
        bool horizontal = true;
        std::size_t pos = 0, width = 3;
        std::uint8_t shade = 130;
    };
    struct Building {
        std::vector<Rect> parts;
        std::array<std::uint8_t, 3> color{160, 80, 60};
        float shade_amp = 0.0f;
        Rect bounds() const {
            Rect b = parts.front();
            for (const auto& p : parts) {
                b.x0 = std::min(b.x0, p.x0);
                b.y0 = std::min(b.y0, p.y0);
                b.x1 = std::max(b.x1, p.x1);
                b.y1 = std::max(b.y1, p.y1);
            }
            return b;
        }
    };

    std::size_t size = 0;
    std::array<std::uint8_t, 3> bg_base{70, 100, 55};
    float grad_gx = 0.0f, grad_gy = 0.0f;  // shading gradient, intensity per pixel
    std::vector<Blob> blobs;
    std::vector<Road> roads;
    std::vector<Building> buildings;
    std::uint32_t speckle_seed = 0;
};

namespace detail {

inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v)); }

inline const std::array<std::array<std::uint8_t, 3>, 5>& roof_palette() {
    static const std::array<std::array<std::uint8_t, 3>, 5> p = {{
        {168, 82, 60},    // brick
        {185, 185, 190},  // light gray
        {95, 100, 115},   // slate
        {176, 146, 105},  // tan
        {140, 60, 55},    // dark brick
    }};
    return p;
}

template <typename Rng>
std::array<std::uint8_t, 3> jitter_color(const std::array<std::uint8_t, 3>& base, int amp, Rng& rng) {
    std::uniform_int_distribution<int> d(-amp, amp);
    return {clamp_u8(int(base[0]) + d(rng)), clamp_u8(int(base[1]) + d(rng)), clamp_u8(int(base[2]) + d(rng))};
}

/// Paints one building (parts, flat color, horizontal shade ramp, darker
/// 1-pixel border) onto an image+mask.
inline void paint_building(const SceneRecipe::Building& b, Image8& img, ClassMap& mask, std::mt19937& speckle) {
    std::uniform_int_distribution<int> sp(-4, 4);
    const auto bb = b.bounds();
    const double span = std::max<std::size_t>(1, bb.x1 - bb.x0);
    for (const auto& part : b.parts) {
        for (std::size_t y = part.y0; y < part.y1; ++y) {
            for (std::size_t x = part.x0; x < part.x1; ++x) {
                const double shade = b.shade_amp * (double(x - bb.x0) / span - 0.5);
                const int noise = sp(speckle);
                const bool border = (y == part.y0 || y + 1 == part.y1 || x == part.x0 || x + 1 == part.x1);
                for (std::size_t c = 0; c < 3; ++c) {
                    int v = int(b.color[c]) + int(shade * 20.0) + noise;
                    if (border) v = int(v * 0.72);
                    img.at(y, x, c) = clamp_u8(v);
                }
                mask.at(0, y, x) = 0;
            }
        }
    }
}

}  // namespace detail

template <typename Rng>
SceneRecipe sample_scene_recipe(Rng& rng, std::size_t size) {
    if (size < 32) throw ConfigError("generate_scene: size " + std::to_string(size) + " below minimum 32");
    SceneRecipe r;
    r.size = size;
    std::uniform_int_distribution<int> bg_r(55, 90), bg_g(85, 130), bg_b(40, 70);
    r.bg_base = {static_cast<std::uint8_t>(bg_r(rng)), static_cast<std::uint8_t>(bg_g(rng)),
                 static_cast<std::uint8_t>(bg_b(rng))};
    std::uniform_real_distribution<float> grad(-0.25f, 0.25f);
    r.grad_gx = grad(rng);
    r.grad_gy = grad(rng);
    r.speckle_seed = static_cast<std::uint32_t>(rng());

    std::uniform_int_distribution<int> nblobs(2, 6);
    std::uniform_real_distribution<double> upos(0.0, double(size));
    std::uniform_real_distribution<double> urad(double(size) / 16.0, double(size) / 5.0);
    std::uniform_int_distribution<int> tint(-30, -10);
    const int nb = nblobs(rng);
    for (int i = 0; i < nb; ++i) {
        SceneRecipe::Blob b;
        b.cx = upos(rng);
        b.cy = upos(rng);
        b.rx = urad(rng);
        b.ry = urad(rng);
        const int t = tint(rng);
        b.tint = {t / 2, t, t / 2};
        r.blobs.push_back(b);
    }

    std::uniform_int_distribution<int> nroads(1, 3);
    std::uniform_int_distribution<int> road_shade(115, 150);
    std::uniform_int_distribution<std::size_t> road_w(std::max<std::size_t>(3, size / 20), std::max<std::size_t>(4, size / 10));
    std::uniform_int_distribution<std::size_t> road_pos(0, size - 1);
    const int nr = nroads(rng);
    for (int i = 0; i < nr; ++i) {
        SceneRecipe::Road rd;
        rd.horizontal = (rng() & 1u) != 0;
        rd.width = road_w(rng);
        rd.pos = std::min(road_pos(rng), size - rd.width);
        rd.shade = static_cast<std::uint8_t>(road_shade(rng));
        r.roads.push_back(rd);
    }

    std::uniform_int_distribution<int> nbuild(2, 8);
    std::uniform_int_distribution<std::size_t> bdim(std::max<std::size_t>(4, size / 10), std::max<std::size_t>(6, size / 4));
    std::uniform_int_distribution<std::size_t> ppal(0, detail::roof_palette().size() - 1);
    std::uniform_real_distribution<float> shade_amp(0.0f, 1.0f);
    const int target_buildings = nbuild(rng);
    for (int i = 0; i < target_buildings; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
            std::size_t w = bdim(rng), h = bdim(rng);
            if (attempt > 30) {  // shrink under congestion
                w = std::max<std::size_t>(4, w / 2);
                h = std::max<std::size_t>(4, h / 2);
            }
            if (w + 2 >= size || h + 2 >= size) continue;
            std::uniform_int_distribution<std::size_t> px(1, size - w - 1), py(1, size - h - 1);
            SceneRecipe::Rect rect{px(rng), py(rng), 0, 0};
            rect.x1 = rect.x0 + w;
            rect.y1 = rect.y0 + h;
            SceneRecipe::Building b;
            b.parts.push_back(rect);
            if ((rng() % 100) < 40) {  // compound building: attach a second part
                const std::size_t w2 = std::max<std::size_t>(3, w / 2), h2 = std::max<std::size_t>(3, h / 2);
                SceneRecipe::Rect r2 = rect;
                r2.x0 = std::min(rect.x1 - 1, rect.x0 + w / 2);
                r2.x1 = std::min(size - 1, r2.x0 + w2);
                r2.y0 = rect.y1 > h2 ? rect.y1 - 1 : rect.y1;
                r2.y1 = std::min(size - 1, r2.y0 + h2);
                if (r2.x1 > r2.x0 && r2.y1 > r2.y0) b.parts.push_back(r2);
            }
            // padded non-overlap test against existing buildings
            auto grown = b.bounds();
            grown.x0 = grown.x0 > 0 ? grown.x0 - 1 : 0;
            grown.y0 = grown.y0 > 0 ? grown.y0 - 1 : 0;
            grown.x1 = std::min(size, grown.x1 + 1);
            grown.y1 = std::min(size, grown.y1 + 1);
            bool clash = false;
            for (const auto& other : r.buildings) {
                if (grown.intersects(other.bounds())) {
                    clash = true;
                    break;
                }
            }
            if (clash) continue;
            b.color = detail::jitter_color(detail::roof_palette()[ppal(rng)], 15, rng);
            b.shade_amp = shade_amp(rng);
            r.buildings.push_back(std::move(b));
            placed = true;
        }
    }
    return r;
}

/// Deterministic rasterization of a recipe; the class mask records painted
/// geometry exactly.
inline LabeledImage render_scene(const SceneRecipe& r) {
    const std::size_t size = r.size;
    LabeledImage out;
    out.image = Image8(size, size);
    out.mask = ClassMap(1, size, size);
    std::mt19937 speckle(r.speckle_seed);
    std::uniform_int_distribution<int> bg_sp(-12, 12);

    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const int grad = int(r.grad_gx * float(x) + r.grad_gy * float(y));
            int tint[3] = {0, 0, 0};
            for (const auto& b : r.blobs) {
                const double dx = (double(x) - b.cx) / b.rx;
                const double dy = (double(y) - b.cy) / b.ry;
                if (dx * dx + dy * dy <= 1.0) {
                    tint[0] += b.tint[0];
                    tint[1] += b.tint[1];
                    tint[2] += b.tint[2];
                }
            }
            const int noise = bg_sp(speckle);
            for (std::size_t c = 0; c < 3; ++c) {
                out.image.at(y, x, c) = detail::clamp_u8(int(r.bg_base[c]) + grad + tint[c] + noise);
            }
            out.mask.at(0, y, x) = 2;
        }
    }

    std::uniform_int_distribution<int> road_sp(-6, 6);
    for (const auto& rd : r.roads) {
        for (std::size_t a = 0; a < size; ++a) {
            for (std::size_t b = rd.pos; b < rd.pos + rd.width && b < size; ++b) {
                const std::size_t y = rd.horizontal ? b : a;
                const std::size_t x = rd.horizontal ? a : b;
                const int noise = road_sp(speckle);
                const bool lane_edge = (b == rd.pos || b + 1 == rd.pos + rd.width);
                for (std::size_t c = 0; c < 3; ++c) {
                    int v = int(rd.shade) + noise;
                    if (lane_edge) v -= 18;
                    out.image.at(y, x, c) = detail::clamp_u8(v);
                }
                out.mask.at(0, y, x) = 1;
            }
        }
    }

    for (const auto& b : r.buildings) detail::paint_building(b, out.image, out.mask, speckle);
    return out;
}

/// Procedural labeled scene; a pure function of (seed, size).
inline LabeledImage generate_scene(std::uint64_t seed, std::size_t size) {
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    return render_scene(sample_scene_recipe(rng, size));
}

// ---------------------------------------------------------------------------
// Change simulation
// ---------------------------------------------------------------------------

struct ChangePair {
    LabeledImage before;
    LabeledImage after;  // after.mask is the after-class ground truth
    BoolMask changed;    // deliberately edited pixels, exactly
};

struct ChangeOptions {
    bool texture_jitter = true;    // superficial foliage change outside the mask
    double removal_prob = 0.25;    // chance an edit removes an existing building
    double road_prob = 0.15;       // chance an insertion is an immutable surface
};

namespace detail {

/// 4-connected components of class-0 pixels.
inline std::vector<std::vector<std::size_t>> building_components(const ClassMap& mask) {
    const std::size_t h = mask.height, w = mask.width;
    std::vector<char> seen(h * w, 0);
    std::vector<std::vector<std::size_t>> comps;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (seen[start] || mask.v[start] != 0) continue;
        std::vector<std::size_t> comp;
        std::deque<std::size_t> queue{start};
        seen[start] = 1;
        while (!queue.empty()) {
            const std::size_t p = queue.front();
            queue.pop_front();
            comp.push_back(p);
            const std::size_t y = p / w, x = p % w;
            const std::size_t nbrs[4][2] = {{y, x + 1}, {y, x > 0 ? x - 1 : x}, {y + 1, x}, {y > 0 ? y - 1 : y, x}};
            for (const auto& nb : nbrs) {
                if (nb[0] >= h || nb[1] >= w) continue;
                const std::size_t q = nb[0] * w + nb[1];
                if (!seen[q] && mask.v[q] == 0) {
                    seen[q] = 1;
                    queue.push_back(q);
                }
            }
        }
        comps.push_back(std::move(comp));
    }
    return comps;
}

}  // namespace detail

/// Edits the scene (building/road insertions, building removals) until the
/// changed-pixel fraction lands within +-1% (absolute) of the target, then
/// optionally jitters background texture outside the mask in the after image.
inline ChangePair simulate_change(const LabeledImage& scene, double target_fraction, std::uint64_t seed,
                                  const ChangeOptions& opts = {}) {
    const std::size_t size = scene.image.height;
    if (scene.image.width != size) throw DimensionError("simulate_change: non-square scene");
    ChangePair pair;
    pair.before = scene;
    pair.after = scene;
    pair.changed = BoolMask(1, size, size);
    if (target_fraction == 0.0) return pair;
    if (!(target_fraction > 0.0 && target_fraction < 0.5))
        throw ConfigError("simulate_change: target_fraction must lie in (0, 0.5)");

    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    const std::size_t total = size * size;
    const auto target_px = static_cast<std::size_t>(std::llround(target_fraction * double(total)));
    const std::size_t slack = static_cast<std::size_t>(0.01 * double(total));
    const std::size_t lo = target_px > slack ? target_px - slack : 1;
    const std::size_t hi = target_px + slack;
    std::size_t current = 0;

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> ppal(0, detail::roof_palette().size() - 1);
    std::uniform_real_distribution<float> shade_amp(0.0f, 1.0f);
    std::mt19937 speckle(static_cast<std::uint32_t>(rng()));

    int attempts = 0;
    while (current < lo) {
        if (++attempts > 500)
            throw GenerationError("simulate_change: could not reach target fraction " +
                                  std::to_string(target_fraction) + " on a " + std::to_string(size) + "x" +
                                  std::to_string(size) + " image");
        const std::size_t budget = hi - current;
        const std::size_t deficit = target_px > current ? target_px - current : 1;

        // Building removal: repaint one whole component as background.
        if (u01(rng) < opts.removal_prob) {
            auto comps = detail::building_components(pair.after.mask);
            std::vector<std::size_t> fits;
            for (std::size_t i = 0; i < comps.size(); ++i) {
                if (!comps[i].empty() && comps[i].size() <= budget) fits.push_back(i);
            }
            if (!fits.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, fits.size() - 1);
                const auto& comp = comps[fits[pick(rng)]];
                std::uniform_int_distribution<int> bg_sp(-12, 12);
                for (const std::size_t p : comp) {
                    const std::size_t y = p / size, x = p % size;
                    const int noise = bg_sp(speckle);
                    for (std::size_t c = 0; c < 3; ++c) {
                        // greenish ground where the structure used to stand
                        const int base[3] = {72, 104, 58};
                        pair.after.image.at(y, x, c) = detail::clamp_u8(base[c] + noise);
                    }
                    pair.after.mask.at(0, y, x) = 2;
                    if (!pair.changed.v[p]) {
                        pair.changed.v[p] = 1;
                        ++current;
                    }
                }
                continue;
            }
        }

        // Insertion: a new building (or immutable surface) sized toward the
        // remaining deficit, placed off the already-edited region.
        const std::size_t want = std::min(deficit, budget);
        std::size_t w = static_cast<std::size_t>(std::lround(std::sqrt(double(want))));
        w = std::clamp<std::size_t>(w, 3, size - 2);
        std::size_t h = std::clamp<std::size_t>((want + w - 1) / w, 3, size - 2);
        while (w * h > budget && w > 3) --w;
        while (w * h > budget && h > 3) --h;
        if (w * h > budget) continue;

        bool placed = false;
        for (int tries = 0; tries < 100 && !placed; ++tries) {
            std::uniform_int_distribution<std::size_t> px(1, size - w - 1), py(1, size - h - 1);
            const std::size_t x0 = px(rng), y0 = py(rng);
            bool clash = false;
            for (std::size_t y = y0; y < y0 + h && !clash; ++y)
                for (std::size_t x = x0; x < x0 + w; ++x)
                    if (pair.changed.at(0, y, x)) {
                        clash = true;
                        break;
                    }
            if (clash) continue;
            const bool road_patch = u01(rng) < opts.road_prob;
            if (road_patch) {
                std::uniform_int_distribution<int> road_shade(115, 150);
                std::uniform_int_distribution<int> road_sp(-6, 6);
                const int shade = road_shade(rng);
                for (std::size_t y = y0; y < y0 + h; ++y)
                    for (std::size_t x = x0; x < x0 + w; ++x) {
                        const int noise = road_sp(speckle);
                        for (std::size_t c = 0; c < 3; ++c)
                            pair.after.image.at(y, x, c) = detail::clamp_u8(shade + noise);
                        pair.after.mask.at(0, y, x) = 1;
                        pair.changed.at(0, y, x) = 1;
                    }
            } else {
                SceneRecipe::Building b;
                b.parts.push_back({x0, y0, x0 + w, y0 + h});
                b.color = detail::jitter_color(detail::roof_palette()[ppal(rng)], 15, rng);
                b.shade_amp = shade_amp(rng);
                ClassMap scratch = pair.after.mask;
                detail::paint_building(b, pair.after.image, scratch, speckle);
                pair.after.mask = std::move(scratch);
            }
            for (std::size_t y = y0; y < y0 + h; ++y)
                for (std::size_t x = x0; x < x0 + w; ++x) pair.changed.at(0, y, x) = 1;
            current += w * h;
            placed = true;
        }
    }

    if (opts.texture_jitter) {
        // Superficial (irrelevant) foliage change: small per-pixel shifts on
        // unchanged background, capped well below plausible DI thresholds.
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::uniform_int_distribution<int> dj(-5, 5);
        for (std::size_t p = 0; p < total; ++p) {
            if (pair.changed.v[p] || pair.after.mask.v[p] != 2) continue;
            if (u(rng) < 0.25) {
                for (std::size_t c = 0; c < 3; ++c) {
                    pair.after.image.rgb[p * 3 + c] = detail::clamp_u8(int(pair.after.image.rgb[p * 3 + c]) + dj(rng));
                }
            }
        }
    }
    return pair;
}

// ---------------------------------------------------------------------------
// Noise, normalization, tiling
// ---------------------------------------------------------------------------

/// Adds zero-mean Gaussian noise with the given variance (squared 8-bit
/// intensity units), clamping to [0, 255] and rounding.
inline Image8 add_gaussian_noise(const Image8& img, double variance, std::uint64_t seed) {
    if (variance < 0) throw ConfigError("add_gaussian_noise: variance must be non-negative");
    if (variance == 0) return img;
    Image8 out = img;
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    std::normal_distribution<double> noise(0.0, std::sqrt(variance));
    for (auto& v : out.rgb) {
        v = detail::clamp_u8(static_cast<int>(std::lround(double(v) + noise(rng))));
    }
    return out;
}

/// Per-channel mean and standard deviation over every pixel of the dataset.
inline NormalizationStats compute_stats(const std::vector<Image8>& images) {
    if (images.empty()) throw DataError("compute_stats: empty dataset");
    double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    std::size_t count = 0;
    for (const auto& img : images) {
        for (std::size_t p = 0; p < img.pixels(); ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = img.rgb[p * 3 + c];
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        count += img.pixels();
    }
    NormalizationStats st;
    for (std::size_t c = 0; c < 3; ++c) {
        const double mean = sum[c] / double(count);
        const double var = sq[c] / double(count) - mean * mean;
        if (!(var > 0)) throw DataError("compute_stats: channel " + std::to_string(c) + " has zero variance");
        st.mean[c] = static_cast<float>(mean);
        st.stddev[c] = static_cast<float>(std::sqrt(var));
    }
    return st;
}

/// Maps raw pixels x to 0.5 + 0.5*(x - mean)/std per channel, so the training
/// distribution lands on mean 0.5, std 0.5.
inline Tensor<float> normalize(const Image8& img, const NormalizationStats& st) {
    Tensor<float> t(1, 3, img.height, img.width);
    for (std::size_t c = 0; c < 3; ++c) {
        float* dst = t.plane(0, c);
        for (std::size_t p = 0; p < img.pixels(); ++p) {
            dst[p] = 0.5f + 0.5f * ((float(img.rgb[p * 3 + c]) - st.mean[c]) / st.stddev[c]);
        }
    }
    return t;
}

/// Inverse of normalize, rounded and clamped to 8-bit.
inline Image8 denormalize(const Tensor<float>& t, const NormalizationStats& st) {
    if (t.batch() != 1 || t.channels() != 3)
        throw DimensionError("denormalize: tensor axes (N,C) must be (1,3), got " + shape_str(t.shape));
    Image8 img(t.height(), t.width());
    for (std::size_t c = 0; c < 3; ++c) {
        const float* src = t.plane(0, c);
        for (std::size_t p = 0; p < img.pixels(); ++p) {
            const float raw = (src[p] - 0.5f) / 0.5f * st.stddev[c] + st.mean[c];
            img.rgb[p * 3 + c] = detail::clamp_u8(static_cast<int>(std::lround(raw)));
        }
    }
    return img;
}

/// Non-overlapping grid tiling by default (stride = tile size); partial edge
/// tiles are discarded.
inline std::vector<Image8> tile(const Image8& img, std::size_t tile_size, std::size_t stride = 0) {
    if (tile_size == 0) throw ConfigError("tile: tile_size must be positive");
    if (stride == 0) stride = tile_size;
    std::vector<Image8> out;
    for (std::size_t y0 = 0; y0 + tile_size <= img.height; y0 += stride) {
        for (std::size_t x0 = 0; x0 + tile_size <= img.width; x0 += stride) {
            Image8 t(tile_size, tile_size);
            for (std::size_t y = 0; y < tile_size; ++y) {
                const auto* src = img.rgb.data() + ((y0 + y) * img.width + x0) * 3;
                std::copy(src, src + tile_size * 3, t.rgb.data() + y * tile_size * 3);
            }
            out.push_back(std::move(t));
        }
    }
    return out;
}

inline std::vector<ClassMap> tile(const ClassMap& m, std::size_t tile_size, std::size_t stride = 0) {
    if (tile_size == 0) throw ConfigError("tile: tile_size must be positive");
    if (stride == 0) stride = tile_size;
    std::vector<ClassMap> out;
    for (std::size_t y0 = 0; y0 + tile_size <= m.height; y0 += stride) {
        for (std::size_t x0 = 0; x0 + tile_size <= m.width; x0 += stride) {
            ClassMap t(1, tile_size, tile_size);
            for (std::size_t y = 0; y < tile_size; ++y) {
                const auto* src = m.v.data() + (y0 + y) * m.width + x0;
                std::copy(src, src + tile_size, t.v.data() + y * tile_size);
            }
            out.push_back(std::move(t));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest: one record per line, whitespace-separated fields
//   <image path> <mask path> [<pair-id> [<changed-mask path>]]
// A pair is two consecutive records sharing a pair-id (before, then after);
// the changed-mask sits on the after record. Pair-ids of the form
// <name>_f<fraction>_v<variance> carry the experiment cell.
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::string image, mask, pair_id, change_mask;
};

struct PairMeta {
    double fraction = 0.0;
    double variance = 0.0;
};

struct PairRecord {
    ManifestRecord before, after;
    PairMeta meta;
};

inline std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("read_manifest: cannot open " + path);
    std::vector<ManifestRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        ManifestRecord rec;
        if (!(ss >> rec.image >> rec.mask))
            throw FormatError("read_manifest: line " + std::to_string(lineno) + " needs at least 2 fields");
        ss >> rec.pair_id >> rec.change_mask;
        out.push_back(std::move(rec));
    }
    return out;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("write_manifest: cannot open " + path + " for writing");
    os << "# image mask [pair-id [change-mask]]\n";
    for (const auto& r : records) {
        os << r.image << " " << r.mask;
        if (!r.pair_id.empty()) os << " " << r.pair_id;
        if (!r.change_mask.empty()) os << " " << r.change_mask;
        os << "\n";
    }
    if (!os) throw IoError("write_manifest: write failed for " + path);
}

inline PairMeta parse_pair_meta(const std::string& pair_id) {
    PairMeta meta;
    std::size_t pos = 0;
    while (pos < pair_id.size()) {
        std::size_t next = pair_id.find('_', pos);
        if (next == std::string::npos) next = pair_id.size();
        const std::string tok = pair_id.substr(pos, next - pos);
        if (tok.size() > 1) {
            try {
                if (tok[0] == 'f') meta.fraction = std::stod(tok.substr(1));
                if (tok[0] == 'v') meta.variance = std::stod(tok.substr(1));
            } catch (const std::exception&) {
                // not a cell token; ignore
            }
        }
        pos = next + 1;
    }
    return meta;
}

/// Groups consecutive same-pair-id records into before/after pairs.
inline std::vector<PairRecord> pair_records(const std::vector<ManifestRecord>& records) {
    std::vector<PairRecord> out;
    for (std::size_t i = 0; i + 1 < records.size(); ++i) {
        if (records[i].pair_id.empty()) continue;
        if (records[i].pair_id == records[i + 1].pair_id) {
            PairRecord pr;
            pr.before = records[i];
            pr.after = records[i + 1];
            pr.meta = parse_pair_meta(records[i].pair_id);
            out.push_back(std::move(pr));
            ++i;
        }
    }
    return out;
}

}  // namespace uncd
