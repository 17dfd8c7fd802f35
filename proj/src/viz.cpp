#include "viz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "image_io.hpp"

namespace cfmn {

using nlohmann::json;

namespace {

struct RfGeometry {
    double jump = 1;     // input pixels between adjacent grid cells
    double size = 1;     // receptive field extent
    double center0 = 0;  // input-pixel center of grid position (0,0)
};

// walk conv/pool arithmetic up to and including block `stage`
RfGeometry receptive_field(const CFMNConfig& cfg, int stage) {
    RfGeometry g;
    for (int b = 0; b < stage; ++b) {
        const ConvBlockSpec& spec = cfg.blocks[static_cast<size_t>(b)];
        g.size += (spec.kernel - 1) * g.jump;
        g.center0 += ((spec.kernel - 1) / 2.0 - spec.padding) * g.jump;
        if (spec.pool) {
            g.size += (spec.pool_window - 1) * g.jump;
            g.center0 += (spec.pool_window - 1) / 2.0 * g.jump;
            g.jump *= spec.pool_stride;
        }
    }
    return g;
}

Tensor to_rgb(const Tensor& img) {
    if (img.extent(0) == 3) return img;
    Tensor out({3, img.extent(1), img.extent(2)});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.extent(1); ++y)
            for (int x = 0; x < img.extent(2); ++x) out.at(c, y, x) = img.at(0, y, x);
    return out;
}

struct Rgb {
    real r, g, b;
};

// rank colors per Fig. 1: red, green, blue, yellow, purple
const Rgb kRankColors[5] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {0.5, 0, 0.5}};

void put_px(Tensor& img, int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img.extent(2) || y >= img.extent(1)) return;
    img.at(0, y, x) = c.r;
    img.at(1, y, x) = c.g;
    img.at(2, y, x) = c.b;
}

void draw_cross(Tensor& img, int cx, int cy, int arm, const Rgb& c) {
    for (int d = -arm; d <= arm; ++d) {
        put_px(img, cx + d, cy, c);
        put_px(img, cx, cy + d, c);
    }
}

void draw_dot(Tensor& img, int cx, int cy, int radius, const Rgb& c) {
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) put_px(img, cx + dx, cy + dy, c);
}

void draw_rect(Tensor& img, const PixelBox& b, const Rgb& c) {
    for (int x = b.x0; x <= b.x1; ++x) {
        put_px(img, x, b.y0, c);
        put_px(img, x, b.y1, c);
    }
    for (int y = b.y0; y <= b.y1; ++y) {
        put_px(img, b.x0, y, c);
        put_px(img, b.x1, y, c);
    }
}

}  // namespace

AttentionExport export_attention(Model& m, const Tensor& query_img, const Tensor& support_img,
                                 int query_row, int query_col, int k,
                                 const std::string& out_dir) {
    if (m.cfg.matching_stages.empty())
        throw ConfigError("export_attention: the model has no matching stages");
    const int stage = *std::max_element(m.cfg.matching_stages.begin(),
                                        m.cfg.matching_stages.end());

    bool ready = true;
    for (const auto& [block, state] : m.params.bn_all())
        if (!state.initialized) ready = false;

    std::map<int, AttentionMap> capture;
    if (ready) {
        extract_pair(m, query_img, support_img, BnMode::eval, &capture);
    } else {
        Model scratch = m;  // train-mode stats stay off the caller's model
        extract_pair(scratch, query_img, support_img, BnMode::train, &capture);
    }
    const AttentionMap& attn = capture.at(stage);

    if (query_row < 0 || query_row >= attn.h || query_col < 0 || query_col >= attn.w)
        throw ProtocolError("export_attention: query position (" + std::to_string(query_row) +
                            "," + std::to_string(query_col) + ") outside the " +
                            std::to_string(attn.h) + "x" + std::to_string(attn.w) +
                            " grid of the last matching stage");

    AttentionExport e;
    e.stage = stage;
    e.h = attn.h;
    e.w = attn.w;
    e.query_row = query_row;
    e.query_col = query_col;
    e.topk = top_k_correspondences(attn, query_row, query_col, k);

    const RfGeometry rf = receptive_field(m.cfg, stage);
    const int last = m.cfg.input_size - 1;
    auto center_of = [&](int row, int col) {
        return MarkPoint{
            static_cast<int>(std::lround(std::clamp(rf.center0 + col * rf.jump, 0.0,
                                                    static_cast<double>(last)))),
            static_cast<int>(std::lround(std::clamp(rf.center0 + row * rf.jump, 0.0,
                                                    static_cast<double>(last))))};
    };
    e.query_mark = center_of(query_row, query_col);
    for (const auto& c : e.topk) {
        e.support_marks.push_back(center_of(c.row, c.col));
        const double cx = rf.center0 + c.col * rf.jump;
        const double cy = rf.center0 + c.row * rf.jump;
        PixelBox box;
        box.x0 = static_cast<int>(std::clamp(std::floor(cx - rf.size / 2), 0.0,
                                             static_cast<double>(last)));
        box.x1 = static_cast<int>(std::clamp(std::ceil(cx + rf.size / 2), 0.0,
                                             static_cast<double>(last)));
        box.y0 = static_cast<int>(std::clamp(std::floor(cy - rf.size / 2), 0.0,
                                             static_cast<double>(last)));
        box.y1 = static_cast<int>(std::clamp(std::ceil(cy + rf.size / 2), 0.0,
                                             static_cast<double>(last)));
        e.rf_boxes.push_back(box);
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const int mark = std::max(1, static_cast<int>(std::lround(rf.jump / 2)));
        Tensor q_overlay = to_rgb(query_img);
        draw_cross(q_overlay, e.query_mark.x, e.query_mark.y, mark + 1, kRankColors[0]);
        Tensor s_overlay = to_rgb(support_img);
        for (size_t i = 0; i < e.topk.size(); ++i) {
            const Rgb& color = kRankColors[i % 5];
            draw_rect(s_overlay, e.rf_boxes[i], color);
            draw_dot(s_overlay, e.support_marks[i].x, e.support_marks[i].y,
                     std::max(1, mark / 2), color);
        }
        write_ppm((std::filesystem::path(out_dir) / "query_overlay.ppm").string(), q_overlay);
        write_ppm((std::filesystem::path(out_dir) / "support_overlay.ppm").string(), s_overlay);
        std::ofstream f(std::filesystem::path(out_dir) / "attention.json");
        if (!f) throw IoError("cannot write attention.json under " + out_dir);
        f << attention_to_json(e) << "\n";
    }
    return e;
}

std::string attention_to_json(const AttentionExport& e) {
    json j;
    j["stage"] = e.stage;
    j["h"] = e.h;
    j["w"] = e.w;
    j["query_pos"] = {e.query_row, e.query_col};
    json topk = json::array();
    for (size_t i = 0; i < e.topk.size(); ++i) {
        topk.push_back(json{{"pos", {e.topk[i].row, e.topk[i].col}},
                            {"weight", e.topk[i].weight},
                            {"rf_box",
                             {e.rf_boxes[i].x0, e.rf_boxes[i].y0, e.rf_boxes[i].x1,
                              e.rf_boxes[i].y1}}});
    }
    j["topk"] = topk;
    json marks = json::array();
    marks.push_back(json{{"kind", "query_cross"}, {"x", e.query_mark.x}, {"y", e.query_mark.y}});
    for (size_t i = 0; i < e.support_marks.size(); ++i)
        marks.push_back(json{{"kind", "support_dot"},
                             {"rank", static_cast<int>(i)},
                             {"x", e.support_marks[i].x},
                             {"y", e.support_marks[i].y}});
    j["marks"] = marks;
    return j.dump(2);
}

AttentionExport attention_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& ex) {
        throw ConfigError(std::string("attention record: bad JSON: ") + ex.what());
    }
    AttentionExport e;
    e.stage = j.at("stage").get<int>();
    e.h = j.at("h").get<int>();
    e.w = j.at("w").get<int>();
    e.query_row = j.at("query_pos")[0].get<int>();
    e.query_col = j.at("query_pos")[1].get<int>();
    for (const auto& jt : j.at("topk")) {
        Correspondence c;
        c.row = jt.at("pos")[0].get<int>();
        c.col = jt.at("pos")[1].get<int>();
        c.weight = jt.at("weight").get<real>();
        e.topk.push_back(c);
        const auto& b = jt.at("rf_box");
        e.rf_boxes.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
    }
    for (const auto& jm : j.at("marks")) {
        if (jm.at("kind") == "query_cross")
            e.query_mark = {jm.at("x").get<int>(), jm.at("y").get<int>()};
        else
            e.support_marks.push_back({jm.at("x").get<int>(), jm.at("y").get<int>()});
    }
    return e;
}

}  // namespace cfmn
