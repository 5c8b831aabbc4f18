#include "mmformer.h"

#include <cstring>
#include <new>
#include <sstream>

#include "mmformer/eval.hpp"
#include "mmformer/gradcheck_suite.hpp"

struct mmf_experiment {
  mmf::ExperimentConfig config;
};
struct mmf_dataset {
  mmf::Dataset data;
};
struct mmf_model {
  mmf::ModelConfig model;
  mmf::TrainConfig train;
  mmf::TrainState state;
};
struct mmf_table {
  mmf::DscTable table;
};
struct mmf_ablation {
  std::vector<mmf::AblationResult> results;
  std::vector<mmf_table> tables;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
mmf_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return MMF_OK;
  } catch (const mmf::ConfigError& e) {
    g_last_error = e.what();
    return MMF_ERR_CONFIG;
  } catch (const mmf::ShapeError& e) {
    g_last_error = e.what();
    return MMF_ERR_SHAPE;
  } catch (const mmf::FormatError& e) {
    g_last_error = e.what();
    return MMF_ERR_FORMAT;
  } catch (const mmf::IoError& e) {
    g_last_error = e.what();
    return MMF_ERR_IO;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return MMF_ERR_IO;
  } catch (const mmf::NumericError& e) {
    g_last_error = e.what();
    return MMF_ERR_NUMERIC;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return MMF_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return MMF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MMF_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw std::invalid_argument(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  auto* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mmf::ReportFormat to_format(mmf_format f) {
  switch (f) {
    case MMF_FORMAT_CSV: return mmf::ReportFormat::csv;
    case MMF_FORMAT_MARKDOWN: return mmf::ReportFormat::markdown;
  }
  throw std::invalid_argument("unknown report format " + std::to_string(static_cast<int>(f)));
}

mmf::Variant to_variant(mmf_variant v) {
  switch (v) {
    case MMF_VARIANT_FULL: return mmf::Variant::full;
    case MMF_VARIANT_NO_INTRA: return mmf::Variant::no_intra;
    case MMF_VARIANT_NO_INTER: return mmf::Variant::no_inter;
    case MMF_VARIANT_NO_AUX: return mmf::Variant::no_aux;
  }
  throw std::invalid_argument("unknown variant " + std::to_string(static_cast<int>(v)));
}

mmf_variant from_variant(mmf::Variant v) { return static_cast<mmf_variant>(static_cast<int>(v)); }

}  // namespace

extern "C" {

const char* mmf_version(void) { return "0.1.0"; }

const char* mmf_last_error(void) { return g_last_error.c_str(); }

const char* mmf_status_name(mmf_status status) {
  switch (status) {
    case MMF_OK: return "ok";
    case MMF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MMF_ERR_CONFIG: return "config error";
    case MMF_ERR_SHAPE: return "shape error";
    case MMF_ERR_FORMAT: return "format error";
    case MMF_ERR_IO: return "i/o error";
    case MMF_ERR_NUMERIC: return "numeric error";
    case MMF_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void mmf_string_free(char* s) { delete[] s; }

// ---- experiments ----------------------------------------------------------

mmf_status mmf_experiment_load(const char* path, mmf_experiment** out) {
  return guarded([&] {
    require(out, "out");
    auto exp = std::make_unique<mmf_experiment>();
    if (path) exp->config = mmf::ExperimentConfig::load(path);
    else exp->config.validate();
    *out = exp.release();
  });
}

mmf_status mmf_experiment_apply(mmf_experiment* exp, const char* overrides) {
  return guarded([&] {
    require(exp, "experiment");
    require(overrides, "overrides");
    auto kv = mmf::KeyValues::parse(exp->config.to_text());
    const auto updates = mmf::KeyValues::parse(overrides);
    for (const auto& [k, v] : updates.raw()) {
      if (!kv.has(k)) throw mmf::ConfigError("unknown config key '" + k + "'");
      kv.set(k, v);
    }
    std::ostringstream os;
    for (const auto& [k, v] : kv.raw()) os << k << '=' << v << '\n';
    exp->config = mmf::ExperimentConfig::from_text(os.str());
  });
}

mmf_status mmf_experiment_set(mmf_experiment* exp, const char* key, const char* value) {
  if (!key || !value) return guarded([] { throw std::invalid_argument("key and value must not be NULL"); });
  return mmf_experiment_apply(exp, (std::string(key) + "=" + value).c_str());
}

mmf_status mmf_experiment_to_text(const mmf_experiment* exp, char** out) {
  return guarded([&] {
    require(exp, "experiment");
    require(out, "out");
    *out = dup_string(exp->config.to_text());
  });
}

void mmf_experiment_free(mmf_experiment* exp) { delete exp; }

// ---- datasets -------------------------------------------------------------

mmf_status mmf_dataset_generate(const mmf_experiment* exp, mmf_dataset** out) {
  return guarded([&] {
    require(exp, "experiment");
    require(out, "out");
    auto ds = std::make_unique<mmf_dataset>();
    ds->data = mmf::make_dataset(exp->config.samples, exp->config.data_seed, exp->config.phantom);
    *out = ds.release();
  });
}

mmf_status mmf_dataset_counts(const mmf_dataset* ds, size_t* n_train, size_t* n_val) {
  return guarded([&] {
    require(ds, "dataset");
    if (n_train) *n_train = ds->data.train.size();
    if (n_val) *n_val = ds->data.val.size();
  });
}

mmf_status mmf_dataset_save(const mmf_dataset* ds, const char* dir) {
  return guarded([&] {
    require(ds, "dataset");
    require(dir, "dir");
    const std::filesystem::path root(dir);
    for (const auto& [name, part] : {std::pair{"train", &ds->data.train}, std::pair{"val", &ds->data.val}}) {
      const auto sub = root / name;
      std::filesystem::create_directories(sub);
      for (std::size_t i = 0; i < part->size(); ++i) {
        const auto& s = (*part)[i];
        const std::vector<std::uint32_t> ext{static_cast<std::uint32_t>(s.extents[0]),
                                             static_cast<std::uint32_t>(s.extents[1]),
                                             static_cast<std::uint32_t>(s.extents[2])};
        const auto stem = std::to_string(i) + "_";
        for (auto m : mmf::kModalities)
          mmf::save_volume(sub / (stem + std::string(mmf::modality_key(m)) + ".mmfv"),
                           s.volumes[static_cast<std::size_t>(m)], ext);
        mmf::save_volume(sub / (stem + "label.mmfv"), s.labels, ext);
      }
    }
  });
}

void mmf_dataset_free(mmf_dataset* ds) { delete ds; }

// ---- models ---------------------------------------------------------------

mmf_status mmf_train(const mmf_experiment* exp, const mmf_dataset* ds, mmf_variant variant,
                     const char* checkpoint_path, mmf_epoch_callback cb, void* user, mmf_model** out) {
  return guarded([&] {
    require(exp, "experiment");
    require(ds, "dataset");
    require(out, "out");
    const auto v = to_variant(variant);
    auto m = std::make_unique<mmf_model>();
    m->model = mmf::apply_variant(exp->config.model, v);
    m->train = exp->config.train;
    m->state = mmf::init_train_state(m->model, m->train);
    const std::string label(mmf::variant_key(v));
    std::function<void(const mmf::EpochLog&)> on_epoch;
    if (cb) on_epoch = [&](const mmf::EpochLog& l) { cb(label.c_str(), l.epoch, l.mean_loss, user); };
    const std::filesystem::path ck = checkpoint_path ? checkpoint_path : "";
    mmf::train_loop(m->state, ds->data.train, m->model, m->train, ck, on_epoch);
    if (!ck.empty()) mmf::save_checkpoint(ck, m->model, m->train, m->state);
    *out = m.release();
  });
}

mmf_status mmf_model_load(const char* checkpoint_path, const mmf_experiment* exp, mmf_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    auto ck = mmf::load_checkpoint(checkpoint_path, exp ? &exp->config.model : nullptr);
    auto m = std::make_unique<mmf_model>();
    m->model = ck.model;
    m->train = ck.train;
    m->state = std::move(ck.state);
    *out = m.release();
  });
}

mmf_status mmf_model_save(const mmf_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    mmf::save_checkpoint(checkpoint_path, model->model, model->train, model->state);
  });
}

mmf_status mmf_model_info(const mmf_model* model, int64_t* parameters, int* epochs, double* final_loss) {
  return guarded([&] {
    require(model, "model");
    if (parameters) *parameters = model->state.params.element_count();
    if (epochs) *epochs = model->state.epoch;
    if (final_loss) *final_loss = model->state.loss_history.empty() ? 0.0 : model->state.loss_history.back();
  });
}

void mmf_model_free(mmf_model* model) { delete model; }

// ---- evaluation -----------------------------------------------------------

mmf_status mmf_evaluate(const mmf_model* model, const mmf_dataset* ds, const uint8_t* mask_bits, size_t count,
                        mmf_table** out) {
  return guarded([&] {
    require(model, "model");
    require(ds, "dataset");
    require(out, "out");
    std::vector<mmf::ModalityMask> masks;
    if (mask_bits)
      for (size_t i = 0; i < count; ++i) {
        if (mask_bits[i] == 0 || mask_bits[i] > 15)
          throw std::invalid_argument("mask bits must lie in [1, 15], got " + std::to_string(mask_bits[i]));
        masks.push_back(mmf::ModalityMask::from_bits(mask_bits[i]));
      }
    auto t = std::make_unique<mmf_table>();
    t->table = mmf::evaluate_subsets(model->state.params, ds->data.val, model->model, masks);
    *out = t.release();
  });
}

mmf_status mmf_table_rows(const mmf_table* t, size_t* rows) {
  return guarded([&] {
    require(t, "table");
    require(rows, "rows");
    *rows = t->table.rows.size();
  });
}

mmf_status mmf_table_row(const mmf_table* t, size_t i, uint8_t* mask_bits, double* et, double* tc, double* wt) {
  return guarded([&] {
    require(t, "table");
    if (i >= t->table.rows.size())
      throw std::invalid_argument("row " + std::to_string(i) + " out of range (" +
                                  std::to_string(t->table.rows.size()) + " rows)");
    const auto& r = t->table.rows[i];
    if (mask_bits) *mask_bits = r.mask.bits();
    if (et) *et = r.dsc.et;
    if (tc) *tc = r.dsc.tc;
    if (wt) *wt = r.dsc.wt;
  });
}

mmf_status mmf_table_format(const mmf_table* t, mmf_format format, char** out) {
  return guarded([&] {
    require(t, "table");
    require(out, "out");
    *out = dup_string(mmf::format_report(t->table, to_format(format)));
  });
}

mmf_status mmf_table_summary(const mmf_table* t, mmf_format format, char** out) {
  return guarded([&] {
    require(t, "table");
    require(out, "out");
    *out = dup_string(mmf::format_summary(mmf::aggregate_by_missing_count(t->table), to_format(format)));
  });
}

mmf_status mmf_table_parse_csv(const char* text, mmf_table** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    auto t = std::make_unique<mmf_table>();
    t->table = mmf::parse_report_csv(text);
    *out = t.release();
  });
}

void mmf_table_free(mmf_table* t) { delete t; }

mmf_status mmf_parse_mask(const char* csv, uint8_t* mask_bits) {
  return guarded([&] {
    require(csv, "csv");
    require(mask_bits, "mask_bits");
    const auto m = mmf::ModalityMask::parse(csv);
    if (!m.any()) throw mmf::ConfigError("modality list is empty");
    *mask_bits = m.bits();
  });
}

mmf_status mmf_parse_variant(const char* key, mmf_variant* out) {
  return guarded([&] {
    require(key, "key");
    require(out, "out");
    *out = from_variant(mmf::parse_variant(key));
  });
}

// ---- ablation -------------------------------------------------------------

mmf_status mmf_ablate(const mmf_experiment* exp, const mmf_dataset* ds, const mmf_variant* variants, size_t count,
                      mmf_epoch_callback cb, void* user, mmf_ablation** out) {
  return guarded([&] {
    require(exp, "experiment");
    require(ds, "dataset");
    require(out, "out");
    std::vector<mmf::Variant> vs;
    if (variants)
      for (size_t i = 0; i < count; ++i) vs.push_back(to_variant(variants[i]));
    if (vs.empty()) vs.assign(mmf::kVariants.begin(), mmf::kVariants.end());
    std::function<void(mmf::Variant, const mmf::EpochLog&)> on_epoch;
    if (cb)
      on_epoch = [&](mmf::Variant v, const mmf::EpochLog& l) {
        cb(std::string(mmf::variant_key(v)).c_str(), l.epoch, l.mean_loss, user);
      };
    auto a = std::make_unique<mmf_ablation>();
    a->results = mmf::run_ablation(ds->data, exp->config.model, exp->config.train, vs, on_epoch);
    for (const auto& r : a->results) a->tables.push_back({r.table});
    *out = a.release();
  });
}

mmf_status mmf_ablation_format(const mmf_ablation* a, mmf_format format, char** out) {
  return guarded([&] {
    require(a, "ablation");
    require(out, "out");
    *out = dup_string(mmf::format_ablation(a->results, to_format(format)));
  });
}

mmf_status mmf_ablation_count(const mmf_ablation* a, size_t* count) {
  return guarded([&] {
    require(a, "ablation");
    require(count, "count");
    *count = a->tables.size();
  });
}

mmf_status mmf_ablation_table(const mmf_ablation* a, size_t i, const mmf_table** table) {
  return guarded([&] {
    require(a, "ablation");
    require(table, "table");
    if (i >= a->tables.size()) throw std::invalid_argument("ablation index out of range");
    *table = &a->tables[i];
  });
}

void mmf_ablation_free(mmf_ablation* a) { delete a; }

// ---- gradient checks ------------------------------------------------------

mmf_status mmf_gradcheck(mmf_gradcheck_callback cb, void* user, int* all_passed) {
  return guarded([&] {
    require(all_passed, "all_passed");
    std::function<void(const mmf::GradCheckEntry&)> on_entry;
    if (cb)
      on_entry = [&](const mmf::GradCheckEntry& e) {
        cb(e.name.c_str(), e.max_rel_error, e.tolerance, e.passed ? 1 : 0, user);
      };
    const auto entries = mmf::run_gradcheck_suite(on_entry);
    int ok = 1;
    for (const auto& e : entries) ok &= e.passed ? 1 : 0;
    *all_passed = ok;
  });
}

}  // extern "C"
