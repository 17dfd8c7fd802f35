/* C API of the CFMN few-shot recognition engine.
 *
 * All functions return CFMN_OK (0) or an error code; cfmn_last_error()
 * returns a message for the calling thread's most recent failure. Strings
 * returned through char** are heap-allocated JSON; release them with
 * cfmn_free_string().
 */
#ifndef CFMN_CFMN_H
#define CFMN_CFMN_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum cfmn_status {
    CFMN_OK = 0,
    CFMN_ERR_INVALID_ARG = 1,
    CFMN_ERR_DATA = 2,
    CFMN_ERR_CONFIG = 3,
    CFMN_ERR_IO = 4,
    CFMN_ERR_NUMERIC = 5,
    CFMN_ERR_INTERNAL = 6
};

typedef struct cfmn_dataset cfmn_dataset; /* opaque */
typedef struct cfmn_model cfmn_model;     /* opaque */

const char* cfmn_version(void);
const char* cfmn_last_error(void);
void cfmn_free_string(char* s);

/* ---- datasets ------------------------------------------------------- */

/* Synthetic glyph classes. split_spec is "train,val,test" class counts
 * (e.g. "20,10,10") or NULL to put every class in train. */
int cfmn_dataset_generate_glyphs(int num_classes, int per_class, int size,
                                 const char* split_spec, uint64_t seed, cfmn_dataset** out);

/* Directory layout root/<class>/<images> with optional split.json. */
int cfmn_dataset_load_dir(const char* root, cfmn_dataset** out);

/* Multi-label manifest JSON plus a split file; split_path may be NULL. */
int cfmn_dataset_load_manifest(const char* manifest_path, const char* split_path,
                               cfmn_dataset** out);

/* kind: "location" | "size" | "rotation" | "all". */
int cfmn_dataset_expand_variations(const cfmn_dataset* src, const char* kind, int copies,
                                   uint64_t seed, cfmn_dataset** out);

/* 90/180/270-degree class augmentation (quadruples the class count). */
int cfmn_dataset_rotate90(const cfmn_dataset* src, cfmn_dataset** out);

int cfmn_dataset_write_dir(const cfmn_dataset* ds, const char* root, int also_png);

/* {"classes": n, "items": n, "splits": {...}, "multilabel": bool} */
int cfmn_dataset_info(const cfmn_dataset* ds, char** json_out);

void cfmn_dataset_free(cfmn_dataset* ds);

/* ---- models --------------------------------------------------------- */

/* config_json may be NULL for the default 84x84x3 backbone. */
int cfmn_model_create(const char* config_json, uint64_t seed, cfmn_model** out);

/* Create from config and load weights from a CFMN1 checkpoint. */
int cfmn_model_load(const char* config_json, const char* ckpt_path, cfmn_model** out);

int cfmn_model_save(const cfmn_model* m, const char* ckpt_path);

int cfmn_model_config(const cfmn_model* m, char** json_out);

void cfmn_model_free(cfmn_model* m);

/* ---- operations ------------------------------------------------------ */

/* Episodic training; train_config_json fields mirror the TrainConfig
 * documented in the README. out_dir (optional) receives best.ckpt,
 * last.ckpt and train_log.jsonl. summary_json_out (optional) reports
 * {"best_val", "best_episode", "episodes_run"}. */
int cfmn_train(cfmn_model* m, const cfmn_dataset* data, const char* train_config_json,
               const char* out_dir, char** summary_json_out);

/* protocol_json: {"episodes", "repetitions", "queries_per_class", "way",
 * "shot", "threshold", "seed", "split", "workers"}; all optional. */
int cfmn_evaluate(cfmn_model* m, const cfmn_dataset* data, const char* protocol_json,
                  char** report_json_out);

int cfmn_evaluate_multilabel(cfmn_model* m, const cfmn_dataset* data, const char* protocol_json,
                             char** report_json_out);

/* Top-k correspondences of the last matching stage for one query position;
 * writes attention.json and overlay PPMs under out_dir when given. */
int cfmn_export_attention(cfmn_model* m, const char* query_image_path,
                          const char* support_image_path, int query_row, int query_col,
                          int top_k, const char* out_dir, char** record_json_out);

/* Finite-difference gradient battery over every differentiable op plus the
 * matching block; `rounds` independent seeds. The JSON carries per-op max
 * relative errors and "all_passed". */
int cfmn_grad_check(uint64_t seed, int rounds, double eps, double tol, char** table_json_out);

#ifdef __cplusplus
}
#endif

#endif /* CFMN_CFMN_H */
