#pragma once

#include "model.hpp"

namespace cfmn {

struct PixelBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive, input-pixel coords
};

struct MarkPoint {
    int x = 0, y = 0;  // input-pixel coords
};

// Top-k correspondences of the last matching stage for one query position,
// plus everything needed to draw them on the input images.
struct AttentionExport {
    int stage = 0;  // block number of the last matching stage
    int h = 0, w = 0;
    int query_row = 0, query_col = 0;
    std::vector<Correspondence> topk;
    std::vector<PixelBox> rf_boxes;  // receptive field of each top-k position
    MarkPoint query_mark;            // cross on the query overlay
    std::vector<MarkPoint> support_marks;  // dots, rank order
};

// Runs extract_pair, captures the attention map of the last matching stage
// from that same forward pass, and (when out_dir is non-empty) writes
// attention.json plus query_overlay.ppm / support_overlay.ppm with the rank
// colors red, green, blue, yellow, purple. Uninitialized batch-norm
// statistics fall back to a train-mode forward on a scratch copy of the
// parameters.
AttentionExport export_attention(Model& m, const Tensor& query_img, const Tensor& support_img,
                                 int query_row, int query_col, int k,
                                 const std::string& out_dir);

std::string attention_to_json(const AttentionExport& e);
AttentionExport attention_from_json(const std::string& text);

}  // namespace cfmn
