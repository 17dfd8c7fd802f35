#pragma once

#include "episodes.hpp"

namespace cfmn {

// Stroke program in unit-square coordinates. Anchors stay inside a disc
// around the center so later resizes/rotations cannot push ink off canvas.
struct StrokeSegment {
    bool is_arc = false;
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // line endpoints
    double cx = 0, cy = 0, radius = 0;      // arc geometry
    double a0 = 0, a1 = 0;                  // arc angle range, a1 > a0
};

struct GlyphSpec {
    uint64_t class_seed = 0;
    std::vector<StrokeSegment> strokes;
};

GlyphSpec make_glyph_spec(uint64_t class_seed);

struct AffineJitter {
    double rotate = 0;  // radians
    double scale = 1;
    double dx = 0, dy = 0;
};

// White background (exactly 1.0), dark strokes, values in [0,1].
// Deterministic for a given spec, size and jitter.
Tensor render_glyph(const GlyphSpec& spec, int size, const AffineJitter& jitter = {});

// Per-class stroke programs with per-image affine jitter; all classes land
// in the train split (reassign with with_split_counts).
DatasetIndex gen_synthetic_glyphs(int num_classes, int per_class, int size, Rng& rng);

enum class VariationKind { location, size, rotation, all };
VariationKind variation_from_name(const std::string& name);
const char* variation_name(VariationKind kind);

// deterministic primitives behind make_variation
Tensor place_on_canvas(const Tensor& img, int canvas, int ox, int oy);  // verbatim copy
Tensor resize_bilinear(const Tensor& img, int out_size);
Tensor rotate_about_center(const Tensor& img, double degrees);  // white fill

// One 28x28 glyph -> one 56x56 variation image:
//   location: placed verbatim at a random offset
//   size:     resized to [20,55], centered
//   rotation: resized to 50, rotated [-45,45] degrees, centered
//   all:      resized to [20,55], rotated [-45,45], random offset
Tensor make_variation(const Tensor& img, VariationKind kind, Rng& rng);

// `copies` variations per source image; labels preserved; the RNG substream
// is keyed by (image id, copy id) so regeneration is reproducible.
DatasetIndex expand_variations(const DatasetIndex& index, VariationKind kind, int copies,
                               Rng& rng);

// Exact pixel permutation; k quarter turns clockwise.
Tensor rot90(const Tensor& img, int quarter_turns);

// Each class spawns three rotated classes (90/180/270), quadrupling the
// vocabulary; rotated classes inherit their source's split.
DatasetIndex rotate90_augment(const DatasetIndex& index);

}  // namespace cfmn
