#include "episodes.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "image_io.hpp"

namespace cfmn {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split name: " + name);
}

void DatasetIndex::rebuild_by_class() {
    by_class.assign(classes.size(), {});
    for (size_t i = 0; i < items.size(); ++i)
        for (int c : items[i].labels) by_class[static_cast<size_t>(c)].push_back(static_cast<int>(i));
}

void DatasetIndex::validate() const {
    for (size_t s = 0; s < 3; ++s) {
        for (int c : split_classes[s])
            if (c < 0 || c >= static_cast<int>(classes.size()))
                throw ProtocolError("split lists unknown class id " + std::to_string(c));
    }
    for (size_t a = 0; a < 3; ++a) {
        for (size_t b = a + 1; b < 3; ++b) {
            std::set<int> sa(split_classes[a].begin(), split_classes[a].end());
            for (int c : split_classes[b])
                if (sa.count(c))
                    throw ProtocolError("class '" + classes[static_cast<size_t>(c)] +
                                        "' appears in both " + split_name(static_cast<Split>(a)) +
                                        " and " + split_name(static_cast<Split>(b)) + " splits");
        }
    }
    for (size_t i = 0; i < items.size(); ++i) {
        const auto& labels = items[i].labels;
        if (labels.empty()) throw ProtocolError("item " + std::to_string(i) + " has no labels");
        if (!multilabel && labels.size() != 1)
            throw ProtocolError("item " + std::to_string(i) + " of a single-label dataset has " +
                                std::to_string(labels.size()) + " labels");
        for (int c : labels)
            if (c < 0 || c >= static_cast<int>(classes.size()))
                throw ProtocolError("item " + std::to_string(i) + " labels unknown class id " +
                                    std::to_string(c));
        if (!std::is_sorted(labels.begin(), labels.end()) ||
            std::adjacent_find(labels.begin(), labels.end()) != labels.end())
            throw ProtocolError("item " + std::to_string(i) + " labels must be sorted and unique");
    }
}

int DatasetIndex::class_id(const std::string& name) const {
    auto it = std::find(classes.begin(), classes.end(), name);
    return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

namespace {

// partial Fisher-Yates draw of k distinct elements
std::vector<int> draw(const std::vector<int>& pool, int k, Rng& rng) {
    std::vector<int> work = pool;
    const int n = static_cast<int>(work.size());
    std::vector<int> out;
    out.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int j = rng.uniform_int(i, n - 1);
        std::swap(work[static_cast<size_t>(i)], work[static_cast<size_t>(j)]);
        out.push_back(work[static_cast<size_t>(i)]);
    }
    return out;
}

void require_classes(const DatasetIndex& index, Split split, int n_way) {
    const auto& classes = index.classes_of(split);
    if (static_cast<int>(classes.size()) < n_way)
        throw ProtocolError(std::string(split_name(split)) + " split has " +
                            std::to_string(classes.size()) + " classes, need " +
                            std::to_string(n_way));
}

}  // namespace

Episode sample_episode(const DatasetIndex& index, Split split, int n_way, int k_shot,
                       int queries_per_class, Rng& rng) {
    if (n_way < 1 || k_shot < 1 || queries_per_class < 1)
        throw ProtocolError("sample_episode: way/shot/queries must be positive");
    require_classes(index, split, n_way);
    Episode ep;
    ep.way = n_way;
    ep.shot = k_shot;
    ep.seed = rng.seed();
    ep.sampled_classes = draw(index.classes_of(split), n_way, rng);

    const int need = k_shot + queries_per_class;
    ep.targets = Tensor({n_way * queries_per_class, n_way});
    for (int slot = 0; slot < n_way; ++slot) {
        const int cls = ep.sampled_classes[static_cast<size_t>(slot)];
        const auto& pool = index.by_class[static_cast<size_t>(cls)];
        if (static_cast<int>(pool.size()) < need)
            throw ProtocolError("class '" + index.classes[static_cast<size_t>(cls)] + "' has " +
                                std::to_string(pool.size()) + " images, need " +
                                std::to_string(need) + " (K=" + std::to_string(k_shot) + " + Q=" +
                                std::to_string(queries_per_class) + ")");
        std::vector<int> picks = draw(pool, need, rng);
        for (int i = 0; i < k_shot; ++i) {
            ep.support_items.push_back(picks[static_cast<size_t>(i)]);
            ep.support_slots.push_back({slot});
        }
        for (int q = 0; q < queries_per_class; ++q) {
            ep.query_items.push_back(picks[static_cast<size_t>(k_shot + q)]);
            ep.targets.at(slot * queries_per_class + q, slot) = 1;
        }
    }
    return ep;
}

Episode sample_multilabel_episode(const DatasetIndex& index, Split split, int n_way, int k_shot,
                                  int queries_per_class, Rng& rng) {
    if (n_way < 1 || k_shot < 1 || queries_per_class < 1)
        throw ProtocolError("sample_multilabel_episode: way/shot/queries must be positive");
    require_classes(index, split, n_way);
    Episode ep;
    ep.way = n_way;
    ep.shot = k_shot;
    ep.seed = rng.seed();
    ep.sampled_classes = draw(index.classes_of(split), n_way, rng);

    std::set<int> taken;
    for (int slot = 0; slot < n_way; ++slot) {
        const int cls = ep.sampled_classes[static_cast<size_t>(slot)];
        std::vector<int> eligible;
        for (int item : index.by_class[static_cast<size_t>(cls)])
            if (!taken.count(item)) eligible.push_back(item);
        if (static_cast<int>(eligible.size()) < k_shot)
            throw ProtocolError("class '" + index.classes[static_cast<size_t>(cls)] + "' has " +
                                std::to_string(eligible.size()) +
                                " eligible support images, need " + std::to_string(k_shot));
        for (int item : draw(eligible, k_shot, rng)) {
            ep.support_items.push_back(item);
            taken.insert(item);
        }
    }
    // slot sets come from the full label sets, so a support sampled for one
    // class also backs every other sampled class it contains
    for (int item : ep.support_items) {
        std::vector<int> slots;
        for (int slot = 0; slot < n_way; ++slot)
            if (std::binary_search(index.items[static_cast<size_t>(item)].labels.begin(),
                                   index.items[static_cast<size_t>(item)].labels.end(),
                                   ep.sampled_classes[static_cast<size_t>(slot)]))
                slots.push_back(slot);
        ep.support_slots.push_back(std::move(slots));
    }

    std::vector<int> pool;
    {
        std::set<int> seen;
        for (int slot = 0; slot < n_way; ++slot)
            for (int item : index.by_class[static_cast<size_t>(ep.sampled_classes[static_cast<size_t>(slot)])])
                if (!taken.count(item) && seen.insert(item).second) pool.push_back(item);
        std::sort(pool.begin(), pool.end());
    }
    const int q_total = n_way * queries_per_class;
    if (static_cast<int>(pool.size()) < q_total)
        throw ProtocolError("only " + std::to_string(pool.size()) +
                            " eligible query images for the sampled classes, need " +
                            std::to_string(q_total));
    ep.query_items = draw(pool, q_total, rng);
    ep.targets = Tensor({q_total, n_way});
    for (int q = 0; q < q_total; ++q) {
        const auto& labels = index.items[static_cast<size_t>(ep.query_items[static_cast<size_t>(q)])].labels;
        for (int slot = 0; slot < n_way; ++slot)
            if (std::binary_search(labels.begin(), labels.end(),
                                   ep.sampled_classes[static_cast<size_t>(slot)]))
                ep.targets.at(q, slot) = 1;
    }
    return ep;
}

FsCocoSplit fs_coco_split() {
    FsCocoSplit s;
    s.train = {"toilet",        "teddy bear",    "bicycle",      "skis",
               "tennis racket", "snowboard",     "carrot",       "zebra",
               "keyboard",      "scissors",      "chair",        "couch",
               "boat",          "sheep",         "donut",        "tv",
               "backpack",      "bowl",          "microwave",    "bench",
               "book",          "elephant",      "orange",       "tie",
               "bird",          "knife",         "pizza",        "fork",
               "hair drier",    "frisbee",       "bottle",       "bus",
               "bear",          "toothbrush",    "spoon",        "giraffe",
               "sink",          "cell phone",    "refrigerator", "remote",
               "surfboard",     "cow",           "dining table", "hot dog",
               "baseball bat",  "skateboard",    "banana",       "person",
               "train",         "truck",         "parking meter", "suitcase",
               "cake",          "traffic light"};
    s.val = {"sandwich", "kite", "cup",  "stop sign",  "toaster", "dog",
             "bed",      "vase", "motorcycle", "handbag", "mouse"};
    s.test = {"laptop",   "horse",       "umbrella", "apple",          "clock",
              "car",      "broccoli",    "sports ball", "cat",         "baseball glove",
              "oven",     "potted plant", "wine glass", "airplane",    "fire hydrant"};
    return s;
}

namespace {

std::array<std::vector<int>, 3> splits_from_json(const json& j, const DatasetIndex& index,
                                                 const std::string& origin) {
    std::array<std::vector<int>, 3> out;
    for (int s = 0; s < 3; ++s) {
        const char* key = split_name(static_cast<Split>(s));
        if (!j.contains(key)) continue;
        for (const auto& name : j[key]) {
            const int id = index.class_id(name.get<std::string>());
            if (id < 0)
                throw ConfigError(origin + ": split lists unknown class '" +
                                  name.get<std::string>() + "'");
            out[static_cast<size_t>(s)].push_back(id);
        }
    }
    return out;
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": bad JSON: " + e.what());
    }
}

bool image_ext(const fs::path& p) {
    const std::string e = p.extension().string();
    return e == ".pgm" || e == ".ppm" || e == ".png";
}

}  // namespace

DatasetIndex load_dataset_dir(const std::string& root) {
    if (!fs::is_directory(root)) throw IoError(root + " is not a directory");
    DatasetIndex index;
    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw ProtocolError(root + " contains no class directories");

    for (const auto& dir : class_dirs) index.classes.push_back(dir.filename().string());
    for (size_t c = 0; c < class_dirs.size(); ++c) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[c]))
            if (entry.is_regular_file() && image_ext(entry.path())) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            DatasetItem item;
            item.image = read_image(f.string());
            item.labels = {static_cast<int>(c)};
            item.source = f.string();
            index.items.push_back(std::move(item));
        }
    }

    const fs::path split_file = fs::path(root) / "split.json";
    if (fs::exists(split_file)) {
        index.split_classes = splits_from_json(load_json_file(split_file.string()), index,
                                               split_file.string());
    } else {
        for (size_t c = 0; c < index.classes.size(); ++c)
            index.split_classes[0].push_back(static_cast<int>(c));
    }
    index.rebuild_by_class();
    index.validate();
    return index;
}

DatasetIndex load_multilabel_manifest(const std::string& manifest_path,
                                      const std::string& split_path) {
    const json j = load_json_file(manifest_path);
    DatasetIndex index;
    index.multilabel = true;
    if (!j.contains("classes") || !j.contains("images"))
        throw ConfigError(manifest_path + ": manifest needs 'classes' and 'images'");
    for (const auto& name : j["classes"]) index.classes.push_back(name.get<std::string>());
    const fs::path base = fs::path(manifest_path).parent_path();
    for (const auto& im : j["images"]) {
        DatasetItem item;
        const std::string rel = im.at("path").get<std::string>();
        const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
        item.image = read_image(p.string());
        for (const auto& label : im.at("labels")) {
            const int id = index.class_id(label.get<std::string>());
            if (id < 0)
                throw ConfigError(manifest_path + ": image '" + rel + "' has unknown label '" +
                                  label.get<std::string>() + "'");
            item.labels.push_back(id);
        }
        std::sort(item.labels.begin(), item.labels.end());
        item.labels.erase(std::unique(item.labels.begin(), item.labels.end()),
                          item.labels.end());
        item.source = p.string();
        index.items.push_back(std::move(item));
    }
    if (!split_path.empty()) {
        index.split_classes = splits_from_json(load_json_file(split_path), index, split_path);
    } else {
        for (size_t c = 0; c < index.classes.size(); ++c)
            index.split_classes[0].push_back(static_cast<int>(c));
    }
    index.rebuild_by_class();
    index.validate();
    return index;
}

void write_dataset_dir(const DatasetIndex& index, const std::string& root, bool also_png) {
    if (index.multilabel)
        throw ProtocolError("write_dataset_dir only supports single-label indices");
    fs::create_directories(root);
    std::vector<int> counter(index.classes.size(), 0);
    for (const auto& item : index.items) {
        const int c = item.labels[0];
        const fs::path dir = fs::path(root) / index.classes[static_cast<size_t>(c)];
        fs::create_directories(dir);
        char name[32];
        std::snprintf(name, sizeof(name), "img_%05d", counter[static_cast<size_t>(c)]++);
        const fs::path base = dir / name;
        if (item.image.extent(0) == 1)
            write_pgm(base.string() + ".pgm", item.image);
        else
            write_ppm(base.string() + ".ppm", item.image);
        if (also_png) write_png(base.string() + ".png", item.image);
    }
    json split;
    for (int s = 0; s < 3; ++s) {
        json names = json::array();
        for (int c : index.split_classes[static_cast<size_t>(s)])
            names.push_back(index.classes[static_cast<size_t>(c)]);
        split[split_name(static_cast<Split>(s))] = names;
    }
    std::ofstream f(fs::path(root) / "split.json");
    if (!f) throw IoError("cannot write split.json under " + root);
    f << split.dump(2) << "\n";
}

DatasetIndex with_split_counts(DatasetIndex index, int train, int val, int test) {
    const int total = train + val + test;
    if (train < 0 || val < 0 || test < 0 || total > static_cast<int>(index.classes.size()))
        throw ConfigError("split counts " + std::to_string(train) + "/" + std::to_string(val) +
                          "/" + std::to_string(test) + " exceed " +
                          std::to_string(index.classes.size()) + " classes");
    for (auto& s : index.split_classes) s.clear();
    int c = 0;
    for (int i = 0; i < train; ++i) index.split_classes[0].push_back(c++);
    for (int i = 0; i < val; ++i) index.split_classes[1].push_back(c++);
    for (int i = 0; i < test; ++i) index.split_classes[2].push_back(c++);
    index.validate();
    return index;
}

}  // namespace cfmn
