#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ssrl/data.hpp"
#include "ssrl/synthdata.hpp"

namespace fs = std::filesystem;

namespace ssrl {

namespace {

constexpr float kPi = 3.14159265358979323846f;

struct Color {
    float r, g, b;
};

Color random_color(Rng& rng, float min_sat = 0.35f) {
    // hue wheel with decent saturation so classes cannot key on gray levels
    float h = rng.uniform(0.0f, 6.0f);
    float s = rng.uniform(min_sat, 1.0f);
    float v = rng.uniform(0.35f, 1.0f);
    float c = v * s, x = c * (1.0f - std::abs(std::fmod(h, 2.0f) - 1.0f)), m = v - c;
    float r = 0, g = 0, b = 0;
    switch (int(h)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    return {r + m, g + m, b + m};
}

class Canvas {
public:
    Canvas(int side) : side_(side), img_(1, 3, side, side) {}

    void blend(int64_t y, int64_t x, const Color& c, float alpha) {
        if (y < 0 || y >= side_ || x < 0 || x >= side_ || alpha <= 0.0f) return;
        const int64_t hw = int64_t(side_) * side_;
        float* px = img_.data() + y * side_ + x;
        px[0] = px[0] * (1 - alpha) + c.r * alpha;
        px[hw] = px[hw] * (1 - alpha) + c.g * alpha;
        px[2 * hw] = px[2 * hw] * (1 - alpha) + c.b * alpha;
    }

    int side() const { return side_; }
    Tensor take() { return std::move(img_); }

private:
    int side_;
    Tensor img_;
};

void paint_background(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    // top-bright vertical gradient: the canonical-orientation cue
    float top_l = rng.uniform(0.55f, 0.9f);
    float bot_l = rng.uniform(0.08f, top_l - 0.25f);
    Color top = random_color(rng, 0.1f);
    Color bot = random_color(rng, 0.1f);
    float tilt = rng.uniform(-0.25f, 0.25f);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            float t = std::clamp((float(y) + tilt * float(x)) / float(S), 0.0f, 1.0f);
            float l = top_l * (1 - t) + bot_l * t;
            Color c{top.r * (1 - t) + bot.r * t, top.g * (1 - t) + bot.g * t,
                    top.b * (1 - t) + bot.b * t};
            float scale = l / std::max(0.2f, (c.r + c.g + c.b) / 3.0f);
            cv.blend(y, x, {c.r * scale, c.g * scale, c.b * scale}, 1.0f);
        }
    // soft color blobs
    int blobs = 2 + int(rng.uniform_int(3));
    for (int i = 0; i < blobs; ++i) {
        Color c = random_color(rng);
        float cx = rng.uniform(0.0f, float(S)), cy = rng.uniform(0.0f, float(S));
        float rad = rng.uniform(0.15f, 0.4f) * float(S);
        float amp = rng.uniform(0.08f, 0.22f);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                float d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (rad * rad);
                if (d2 < 4.0f) cv.blend(y, x, c, amp * std::exp(-d2));
            }
    }
}

void paint_clutter(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    int strokes = 5 + int(rng.uniform_int(6));
    for (int i = 0; i < strokes; ++i) {
        Color c = random_color(rng);
        float x = rng.uniform(0.0f, float(S)), y = rng.uniform(0.0f, float(S));
        float ang = rng.uniform(0.0f, 2 * kPi);
        float len = rng.uniform(0.03f, 0.1f) * float(S);
        float alpha = rng.uniform(0.4f, 0.85f);
        for (float t = 0; t < len; t += 0.5f) {
            int px = int(x + std::cos(ang) * t), py = int(y + std::sin(ang) * t);
            cv.blend(py, px, c, alpha);
            cv.blend(py, px + 1, c, alpha * 0.6f);
        }
    }
}

// class patterns -----------------------------------------------------------

void paint_grating(Canvas& cv, Rng& rng, float base_angle) {
    const int S = cv.side();
    float angle = base_angle + rng.uniform(-0.14f, 0.14f);
    float period = rng.uniform(0.09f, 0.2f) * float(S);
    float phase = rng.uniform(0.0f, 2 * kPi);
    float alpha = rng.uniform(0.45f, 0.7f);
    Color c = random_color(rng);
    float nx = std::sin(angle), ny = std::cos(angle);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            float g = std::sin(2 * kPi * (nx * float(x) + ny * float(y)) / period + phase);
            if (g > 0.15f) cv.blend(y, x, c, alpha * std::min(1.0f, (g - 0.15f) * 4));
        }
}

void paint_checker(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    float period = rng.uniform(0.1f, 0.22f) * float(S);
    float phase_x = rng.uniform(0.0f, 2 * kPi), phase_y = rng.uniform(0.0f, 2 * kPi);
    float alpha = rng.uniform(0.45f, 0.7f);
    Color c = random_color(rng);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            float g = std::sin(2 * kPi * float(x) / period + phase_x) *
                      std::sin(2 * kPi * float(y) / period + phase_y);
            if (g > 0.1f) cv.blend(y, x, c, alpha);
        }
}

void paint_rings(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    float cx = rng.uniform(0.3f, 0.7f) * float(S), cy = rng.uniform(0.3f, 0.7f) * float(S);
    float rad = rng.uniform(0.28f, 0.45f) * float(S);
    float period = rng.uniform(0.08f, 0.16f) * float(S);
    float alpha = rng.uniform(0.7f, 0.95f);
    Color c = random_color(rng);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            float r = std::hypot(float(x) - cx, float(y) - cy);
            if (r < rad && std::sin(2 * kPi * r / period) > 0.2f) cv.blend(y, x, c, alpha);
        }
}

void paint_spokes(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    float cx = rng.uniform(0.3f, 0.7f) * float(S), cy = rng.uniform(0.3f, 0.7f) * float(S);
    float rad = rng.uniform(0.28f, 0.45f) * float(S);
    int k = 5 + int(rng.uniform_int(4));
    float phase = rng.uniform(0.0f, 2 * kPi);
    float alpha = rng.uniform(0.7f, 0.95f);
    Color c = random_color(rng);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            float dx = float(x) - cx, dy = float(y) - cy;
            float r = std::hypot(dx, dy);
            if (r < 2.0f || r >= rad) continue;
            if (std::sin(float(k) * std::atan2(dy, dx) + phase) > 0.3f) cv.blend(y, x, c, alpha);
        }
}

void paint_disks(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    int n = 2 + int(rng.uniform_int(3));
    for (int i = 0; i < n; ++i) {
        float cx = rng.uniform(0.15f, 0.85f) * float(S), cy = rng.uniform(0.15f, 0.85f) * float(S);
        float rad = rng.uniform(0.08f, 0.17f) * float(S);
        float alpha = rng.uniform(0.75f, 0.95f);
        Color c = random_color(rng);
        for (int y = int(cy - rad) - 1; y <= int(cy + rad) + 1; ++y)
            for (int x = int(cx - rad) - 1; x <= int(cx + rad) + 1; ++x) {
                float d = std::hypot(float(x) - cx, float(y) - cy);
                if (d < rad) cv.blend(y, x, c, alpha);
            }
    }
}

void paint_wedges(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    int n = 2 + int(rng.uniform_int(2));
    for (int i = 0; i < n; ++i) {
        // apex up, slight lean
        float ax = rng.uniform(0.2f, 0.8f) * float(S), ay = rng.uniform(0.1f, 0.55f) * float(S);
        float h = rng.uniform(0.18f, 0.35f) * float(S);
        float halfw = rng.uniform(0.4f, 0.7f) * h;
        float lean = rng.uniform(-0.2f, 0.2f);
        float alpha = rng.uniform(0.75f, 0.95f);
        Color c = random_color(rng);
        for (int y = int(ay); y <= int(ay + h) && y < S; ++y) {
            float t = (float(y) - ay) / h;
            float cx = ax + lean * (float(y) - ay);
            float w = halfw * t;
            for (int x = int(cx - w); x <= int(cx + w); ++x) cv.blend(y, x, c, alpha);
        }
    }
}

void paint_crosses(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    int n = 2 + int(rng.uniform_int(2));
    for (int i = 0; i < n; ++i) {
        float cx = rng.uniform(0.15f, 0.85f) * float(S), cy = rng.uniform(0.15f, 0.85f) * float(S);
        float arm = rng.uniform(0.1f, 0.2f) * float(S);
        float thick = rng.uniform(0.18f, 0.3f) * arm;
        float alpha = rng.uniform(0.75f, 0.95f);
        Color c = random_color(rng);
        for (int y = int(cy - arm); y <= int(cy + arm); ++y)
            for (int x = int(cx - arm); x <= int(cx + arm); ++x) {
                float u = std::abs(float(x) - cx), v = std::abs(float(y) - cy);
                if ((u <= thick && v <= arm) || (v <= thick && u <= arm)) cv.blend(y, x, c, alpha);
            }
    }
}

void paint_corners(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    int n = 3 + int(rng.uniform_int(2));
    for (int i = 0; i < n; ++i) {
        // arms right and down from the corner point
        float cx = rng.uniform(0.1f, 0.7f) * float(S), cy = rng.uniform(0.1f, 0.7f) * float(S);
        float arm = rng.uniform(0.12f, 0.24f) * float(S);
        float thick = rng.uniform(0.15f, 0.25f) * arm;
        float alpha = rng.uniform(0.75f, 0.95f);
        Color c = random_color(rng);
        for (int y = int(cy); y <= int(cy + arm); ++y)
            for (int x = int(cx); x <= int(cx + arm); ++x) {
                float u = float(x) - cx, v = float(y) - cy;
                if ((v <= thick && u <= arm) || (u <= thick && v <= arm)) cv.blend(y, x, c, alpha);
            }
    }
}

void paint_noise(Canvas& cv, Rng& rng) {
    const int S = cv.side();
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            float a = rng.uniform(0.0f, 0.10f);
            float v = rng.uniform();
            cv.blend(y, x, {v, v, v}, a);
        }
}

}  // namespace

Tensor render_synth_image(int class_id, int side, uint64_t seed) {
    require(class_id >= 0 && class_id < kSynthClasses, "synth class out of range");
    Rng rng = Rng(seed).derive(uint64_t(class_id), 0x5e7a11);
    Canvas cv(side);
    paint_background(cv, rng);
    paint_clutter(cv, rng);
    switch (class_id) {
        case 0: paint_grating(cv, rng, 0.0f); break;            // horizontal stripes
        case 1: paint_grating(cv, rng, kPi / 4.0f); break;      // diagonal
        case 2: paint_grating(cv, rng, kPi / 2.0f); break;      // vertical
        case 3: paint_checker(cv, rng); break;
        case 4: paint_rings(cv, rng); break;
        case 5: paint_spokes(cv, rng); break;
        case 6: paint_disks(cv, rng); break;
        case 7: paint_wedges(cv, rng); break;
        case 8: paint_crosses(cv, rng); break;
        case 9: paint_corners(cv, rng); break;
    }
    paint_noise(cv, rng);
    return cv.take();
}

void generate_synth_dataset(const std::string& root, int side, int per_class_train,
                            int per_class_val, uint64_t seed) {
    require(side >= 8, "synth side too small");
    for (const auto& [split, per_class] :
         {std::pair{std::string("train"), per_class_train},
          std::pair{std::string("val"), per_class_val}}) {
        std::vector<std::string> classes;
        std::vector<int64_t> counts;
        for (int c = 0; c < kSynthClasses; ++c) {
            char cname[16];
            std::snprintf(cname, sizeof(cname), "class_%02d", c);
            fs::path dir = fs::path(root) / split / cname;
            fs::create_directories(dir);
            for (int i = 0; i < per_class; ++i) {
                uint64_t img_seed =
                    Rng(seed).derive(split == "train" ? 1 : 2, uint64_t(c), uint64_t(i)).state();
                Tensor img = render_synth_image(c, side, img_seed);
                char fname[24];
                std::snprintf(fname, sizeof(fname), "img_%05d.ppm", i);
                write_ppm((dir / fname).string(), img);
            }
            classes.push_back(cname);
            counts.push_back(per_class);
        }
        write_manifest((fs::path(root) / split).string(), classes, counts);
    }
}

}  // namespace ssrl
