#include "datagen.hpp"

#include <algorithm>
#include <cmath>

namespace cfmn {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kAnchorRadius = 0.38;  // keeps ink inside the inscribed circle
constexpr double kStrokeWidth = 0.035;  // half-thickness in unit coords

double dist_point_segment(double px, double py, const StrokeSegment& s) {
    const double vx = s.x1 - s.x0, vy = s.y1 - s.y0;
    const double wx = px - s.x0, wy = py - s.y0;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? (wx * vx + wy * vy) / len2 : 0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (s.x0 + t * vx), dy = py - (s.y0 + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

double dist_point_arc(double px, double py, const StrokeSegment& s) {
    const double dx = px - s.cx, dy = py - s.cy;
    const double r = std::sqrt(dx * dx + dy * dy);
    double theta = std::atan2(dy, dx);
    // normalize into [a0, a0 + 2pi)
    while (theta < s.a0) theta += 2 * kPi;
    if (theta <= s.a1) return std::abs(r - s.radius);
    const double ex0 = s.cx + s.radius * std::cos(s.a0), ey0 = s.cy + s.radius * std::sin(s.a0);
    const double ex1 = s.cx + s.radius * std::cos(s.a1), ey1 = s.cy + s.radius * std::sin(s.a1);
    const double d0 = std::hypot(px - ex0, py - ey0);
    const double d1 = std::hypot(px - ex1, py - ey1);
    return std::min(d0, d1);
}

// random point in the safe disc around the glyph center
void disc_point(Rng& rng, double max_r, double& x, double& y) {
    const double ang = rng.uniform(0, 2 * kPi);
    const double r = max_r * std::sqrt(rng.uniform());
    x = 0.5 + r * std::cos(ang);
    y = 0.5 + r * std::sin(ang);
}

}  // namespace

GlyphSpec make_glyph_spec(uint64_t class_seed) {
    GlyphSpec spec;
    spec.class_seed = class_seed;
    Rng rng(mix_u64(class_seed, 0x676c797068ULL));
    const int n = rng.uniform_int(3, 6);
    double px, py;
    disc_point(rng, kAnchorRadius, px, py);
    for (int i = 0; i < n; ++i) {
        StrokeSegment s;
        if (rng.uniform() < 0.35) {
            double cx, cy;
            disc_point(rng, kAnchorRadius * 0.7, cx, cy);
            const double to_center = std::hypot(cx - 0.5, cy - 0.5);
            const double max_radius = kAnchorRadius - to_center;
            if (max_radius > 0.05) {
                s.is_arc = true;
                s.cx = cx;
                s.cy = cy;
                s.radius = rng.uniform(0.05, max_radius);
                s.a0 = rng.uniform(0, 2 * kPi);
                s.a1 = s.a0 + rng.uniform(kPi / 3, 1.6 * kPi);
                spec.strokes.push_back(s);
                continue;
            }
        }
        double qx, qy;
        disc_point(rng, kAnchorRadius, qx, qy);
        s.x0 = px;
        s.y0 = py;
        s.x1 = qx;
        s.y1 = qy;
        spec.strokes.push_back(s);
        // chain about half the time for connected-looking glyphs
        if (rng.uniform() < 0.5) {
            px = qx;
            py = qy;
        } else {
            disc_point(rng, kAnchorRadius, px, py);
        }
    }
    return spec;
}

Tensor render_glyph(const GlyphSpec& spec, int size, const AffineJitter& jitter) {
    if (size < 4) throw ProtocolError("render_glyph: size must be >= 4");
    Tensor img({1, size, size}, real(1));
    const double aa = 1.0 / size;  // one-pixel soft edge
    const double cosr = std::cos(-jitter.rotate), sinr = std::sin(-jitter.rotate);
    const double inv_scale = 1.0 / jitter.scale;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            // pixel center in unit coords, then the inverse jitter transform
            double ux = (x + 0.5) / size - jitter.dx - 0.5;
            double uy = (y + 0.5) / size - jitter.dy - 0.5;
            const double rx = (cosr * ux - sinr * uy) * inv_scale + 0.5;
            const double ry = (sinr * ux + cosr * uy) * inv_scale + 0.5;
            double d = 1e9;
            for (const StrokeSegment& s : spec.strokes)
                d = std::min(d, s.is_arc ? dist_point_arc(rx, ry, s)
                                         : dist_point_segment(rx, ry, s));
            const double v = std::clamp((d - kStrokeWidth) / aa, 0.0, 1.0);
            img.at(0, y, x) = static_cast<real>(v);
        }
    }
    return img;
}

DatasetIndex gen_synthetic_glyphs(int num_classes, int per_class, int size, Rng& rng) {
    if (num_classes < 2) throw ProtocolError("gen_synthetic_glyphs: need at least 2 classes");
    if (per_class < 1) throw ProtocolError("gen_synthetic_glyphs: per_class must be >= 1");
    DatasetIndex index;
    for (int c = 0; c < num_classes; ++c) {
        char name[32];
        std::snprintf(name, sizeof(name), "glyph_%04d", c);
        index.classes.emplace_back(name);
        index.split_classes[0].push_back(c);
    }
    for (int c = 0; c < num_classes; ++c) {
        const GlyphSpec spec = make_glyph_spec(mix_u64(rng.seed(), static_cast<uint64_t>(c)));
        for (int i = 0; i < per_class; ++i) {
            Rng jr = rng.substream(mix_u64(static_cast<uint64_t>(c), static_cast<uint64_t>(i)));
            AffineJitter jit;
            jit.rotate = jr.uniform(-0.15, 0.15);
            jit.scale = jr.uniform(0.92, 1.08);
            jit.dx = jr.uniform(-0.03, 0.03);
            jit.dy = jr.uniform(-0.03, 0.03);
            DatasetItem item;
            item.image = render_glyph(spec, size, jit);
            item.labels = {c};
            item.source = index.classes[static_cast<size_t>(c)] + "#" + std::to_string(i);
            index.items.push_back(std::move(item));
        }
    }
    index.rebuild_by_class();
    index.validate();
    return index;
}

VariationKind variation_from_name(const std::string& name) {
    if (name == "location") return VariationKind::location;
    if (name == "size") return VariationKind::size;
    if (name == "rotation") return VariationKind::rotation;
    if (name == "all") return VariationKind::all;
    throw ConfigError("unknown variation kind '" + name +
                      "' (want location|size|rotation|all)");
}

const char* variation_name(VariationKind kind) {
    switch (kind) {
        case VariationKind::location: return "location";
        case VariationKind::size: return "size";
        case VariationKind::rotation: return "rotation";
        case VariationKind::all: return "all";
    }
    return "?";
}

Tensor place_on_canvas(const Tensor& img, int canvas, int ox, int oy) {
    const int c = img.extent(0), h = img.extent(1), w = img.extent(2);
    if (ox < 0 || oy < 0 || ox + w > canvas || oy + h > canvas)
        throw ProtocolError("place_on_canvas: " + std::to_string(w) + "x" + std::to_string(h) +
                            " at (" + std::to_string(ox) + "," + std::to_string(oy) +
                            ") leaves the " + std::to_string(canvas) + " canvas");
    Tensor out({c, canvas, canvas}, real(1));
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, oy + y, ox + x) = img.at(ch, y, x);
    return out;
}

Tensor resize_bilinear(const Tensor& img, int out_size) {
    const int c = img.extent(0), h = img.extent(1), w = img.extent(2);
    if (out_size < 1) throw ProtocolError("resize_bilinear: non-positive size");
    Tensor out({c, out_size, out_size});
    const double sy = static_cast<double>(h) / out_size;
    const double sx = static_cast<double>(w) / out_size;
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < out_size; ++y) {
            const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - y0;
            for (int x = 0; x < out_size; ++x) {
                const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - x0;
                const double v = (1 - wy) * ((1 - wx) * img.at(ch, y0, x0) +
                                             wx * img.at(ch, y0, x1)) +
                                 wy * ((1 - wx) * img.at(ch, y1, x0) + wx * img.at(ch, y1, x1));
                out.at(ch, y, x) = static_cast<real>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

Tensor rotate_about_center(const Tensor& img, double degrees) {
    const int c = img.extent(0), h = img.extent(1), w = img.extent(2);
    const double rad = degrees * kPi / 180.0;
    const double cosr = std::cos(rad), sinr = std::sin(rad);
    const double cyc = (h - 1) / 2.0, cxc = (w - 1) / 2.0;
    Tensor out({c, h, w}, real(1));
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                // inverse rotation back into the source
                const double dx = x - cxc, dy = y - cyc;
                const double sxf = cxc + cosr * dx + sinr * dy;
                const double syf = cyc - sinr * dx + cosr * dy;
                if (sxf < 0 || sxf > w - 1 || syf < 0 || syf > h - 1) continue;  // white fill
                const int x0 = static_cast<int>(sxf);
                const int x1 = std::min(x0 + 1, w - 1);
                const int y0 = static_cast<int>(syf);
                const int y1 = std::min(y0 + 1, h - 1);
                const double wx = sxf - x0, wy = syf - y0;
                const double v = (1 - wy) * ((1 - wx) * img.at(ch, y0, x0) +
                                             wx * img.at(ch, y0, x1)) +
                                 wy * ((1 - wx) * img.at(ch, y1, x0) + wx * img.at(ch, y1, x1));
                out.at(ch, y, x) = static_cast<real>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

Tensor make_variation(const Tensor& img, VariationKind kind, Rng& rng) {
    if (img.rank() != 3 || img.extent(1) != 28 || img.extent(2) != 28)
        throw ProtocolError("make_variation expects 28x28 input, got " + img.shape_str());
    constexpr int kCanvas = 56;
    switch (kind) {
        case VariationKind::location: {
            const int ox = rng.uniform_int(0, kCanvas - 28);
            const int oy = rng.uniform_int(0, kCanvas - 28);
            return place_on_canvas(img, kCanvas, ox, oy);
        }
        case VariationKind::size: {
            const int s = rng.uniform_int(20, 55);
            return place_on_canvas(resize_bilinear(img, s), kCanvas, (kCanvas - s) / 2,
                                   (kCanvas - s) / 2);
        }
        case VariationKind::rotation: {
            const double deg = rng.uniform(-45, 45);
            Tensor big = rotate_about_center(resize_bilinear(img, 50), deg);
            return place_on_canvas(big, kCanvas, (kCanvas - 50) / 2, (kCanvas - 50) / 2);
        }
        case VariationKind::all: {
            const int s = rng.uniform_int(20, 55);
            const double deg = rng.uniform(-45, 45);
            const int ox = rng.uniform_int(0, kCanvas - s);
            const int oy = rng.uniform_int(0, kCanvas - s);
            return place_on_canvas(rotate_about_center(resize_bilinear(img, s), deg), kCanvas,
                                   ox, oy);
        }
    }
    throw ConfigError("make_variation: bad kind");
}

DatasetIndex expand_variations(const DatasetIndex& index, VariationKind kind, int copies,
                               Rng& rng) {
    if (copies < 1) throw ProtocolError("expand_variations: copies must be >= 1");
    DatasetIndex out;
    out.classes = index.classes;
    out.split_classes = index.split_classes;
    out.multilabel = index.multilabel;
    out.items.reserve(index.items.size() * static_cast<size_t>(copies));
    for (size_t i = 0; i < index.items.size(); ++i) {
        for (int j = 0; j < copies; ++j) {
            Rng sub = rng.substream(mix_u64(static_cast<uint64_t>(i), static_cast<uint64_t>(j)));
            DatasetItem item;
            item.image = make_variation(index.items[i].image, kind, sub);
            item.labels = index.items[i].labels;
            item.source = index.items[i].source + "/" + variation_name(kind) + "#" +
                          std::to_string(j);
            out.items.push_back(std::move(item));
        }
    }
    out.rebuild_by_class();
    out.validate();
    return out;
}

Tensor rot90(const Tensor& img, int quarter_turns) {
    if (img.rank() != 3 || img.extent(1) != img.extent(2))
        throw ProtocolError("rot90 requires square images, got " + img.shape_str());
    const int c = img.extent(0), n = img.extent(1);
    Tensor cur = img;
    for (int t = 0; t < ((quarter_turns % 4) + 4) % 4; ++t) {
        Tensor next({c, n, n});
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) next.at(ch, y, x) = cur.at(ch, n - 1 - x, y);
        cur = std::move(next);
    }
    return cur;
}

DatasetIndex rotate90_augment(const DatasetIndex& index) {
    if (index.multilabel) throw ProtocolError("rotate90_augment expects a single-label index");
    for (const auto& item : index.items)
        if (item.image.extent(1) != item.image.extent(2))
            throw ProtocolError("rotate90_augment requires square images, got " +
                                item.image.shape_str());
    DatasetIndex out;
    const int n = static_cast<int>(index.classes.size());
    out.classes = index.classes;
    const char* suffix[3] = {"_r90", "_r180", "_r270"};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < n; ++c) out.classes.push_back(index.classes[static_cast<size_t>(c)] + suffix[r]);
    for (int s = 0; s < 3; ++s) {
        for (int c : index.split_classes[static_cast<size_t>(s)]) {
            out.split_classes[static_cast<size_t>(s)].push_back(c);
            for (int r = 0; r < 3; ++r)
                out.split_classes[static_cast<size_t>(s)].push_back(n * (r + 1) + c);
        }
    }
    out.items = index.items;
    for (int r = 0; r < 3; ++r) {
        for (const auto& item : index.items) {
            DatasetItem rotated;
            rotated.image = rot90(item.image, r + 1);
            rotated.labels = {n * (r + 1) + item.labels[0]};
            rotated.source = item.source + suffix[r];
            out.items.push_back(std::move(rotated));
        }
    }
    out.rebuild_by_class();
    out.validate();
    return out;
}

}  // namespace cfmn
