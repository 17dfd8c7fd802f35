#pragma once

#include <array>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace cfmn {

enum class Split { train = 0, val = 1, test = 2 };
const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct DatasetItem {
    Tensor image;             // [C x H x W]
    std::vector<int> labels;  // class ids, sorted; single-label items have one
    std::string source;       // file path or synthetic id
};

// Immutable after load. Train/val/test class sets are pairwise disjoint;
// validate() enforces that and runs at load time in every loader.
struct DatasetIndex {
    std::vector<std::string> classes;
    std::vector<DatasetItem> items;
    std::array<std::vector<int>, 3> split_classes;  // class ids per split

    std::vector<std::vector<int>> by_class;  // item ids containing each class
    bool multilabel = false;

    void rebuild_by_class();
    void validate() const;

    int class_id(const std::string& name) const;  // -1 if absent
    const std::vector<int>& classes_of(Split s) const {
        return split_classes[static_cast<size_t>(s)];
    }
};

// Support set plus queries for one N-way K-shot task. Item ids refer into
// the source index; query items never appear in the support set.
struct Episode {
    int way = 0;
    int shot = 0;
    std::vector<int> sampled_classes;             // global class ids per slot
    std::vector<int> support_items;
    std::vector<std::vector<int>> support_slots;  // slots each support carries
    std::vector<int> query_items;
    Tensor targets;                               // [Q x N], one-/multi-hot
    uint64_t seed = 0;
};

// N classes without replacement, then K supports + Q queries per class
// without replacement. Pure function of (index, arguments, rng seed).
Episode sample_episode(const DatasetIndex& index, Split split, int n_way, int k_shot,
                       int queries_per_class, Rng& rng);

// Supports are drawn per class from images containing it (keeping any other
// sampled labels they carry); queries come from the remaining images that
// contain at least one sampled class.
Episode sample_multilabel_episode(const DatasetIndex& index, Split split, int n_way, int k_shot,
                                  int queries_per_class, Rng& rng);

struct FsCocoSplit {
    std::vector<std::string> train;  // 54 classes
    std::vector<std::string> val;    // 11
    std::vector<std::string> test;   // 15
};
FsCocoSplit fs_coco_split();

// Directory layout root/<class_name>/<images>; optional root/split.json
// assigns class names to splits (default: everything in train).
DatasetIndex load_dataset_dir(const std::string& root);

// JSON manifest {"images": [{"path", "labels"}], "classes": [..]} plus a
// split file {"train": [names], "val": [...], "test": [...]}; empty
// split_path puts every class in train.
DatasetIndex load_multilabel_manifest(const std::string& manifest_path,
                                      const std::string& split_path);

// Writes root/<class>/<name>.pgm (single-label indices only) plus
// split.json; optionally PNG next to each PGM.
void write_dataset_dir(const DatasetIndex& index, const std::string& root, bool also_png);

// Reassigns split membership by class position: first `train` classes to
// train, next `val` to val, next `test` to test. Classes beyond the three
// counts are left out of every split.
DatasetIndex with_split_counts(DatasetIndex index, int train, int val, int test);

}  // namespace cfmn
