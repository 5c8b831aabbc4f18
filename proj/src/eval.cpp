#include "mmformer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace mmf {
namespace {

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("report value '" + s + "' is not a number");
  }
  if (used != s.size()) throw FormatError("report value '" + s + "' is not a number");
  return v;
}

// Markdown rows use filled/open circles for present/absent modalities.
constexpr const char* kPresent = "●";
constexpr const char* kAbsent = "○";

}  // namespace

std::array<ModalityMask, kNumSubsets> enumerate_subsets() {
  std::array<ModalityMask, kNumSubsets> out;
  std::size_t n = 0;
  for (int size = 1; size <= kNumModalities; ++size) {
    // Lexicographic combinations of `size` indices out of 4.
    std::vector<int> idx(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (;;) {
      ModalityMask m;
      for (int i : idx) m.set(kModalities[static_cast<std::size_t>(i)], true);
      out[n++] = m;
      int i = size - 1;
      while (i >= 0 && idx[static_cast<std::size_t>(i)] == kNumModalities - size + i) --i;
      if (i < 0) break;
      ++idx[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < size; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return out;
}

RegionDsc DscTable::average() const {
  RegionDsc a;
  if (rows.empty()) return a;
  for (const auto& r : rows) {
    a.et += r.dsc.et;
    a.tc += r.dsc.tc;
    a.wt += r.dsc.wt;
  }
  const auto n = static_cast<double>(rows.size());
  a.et /= n;
  a.tc /= n;
  a.wt /= n;
  return a;
}

bool DscTable::is_full_sweep() const {
  const auto subsets = enumerate_subsets();
  if (rows.size() != subsets.size()) return false;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!(rows[i].mask == subsets[i])) return false;
  return true;
}

DscTable evaluate_subsets(const ModelParams& params, const std::vector<Sample>& samples, const ModelConfig& model,
                          const std::vector<ModalityMask>& masks) {
  if (samples.empty()) throw ConfigError("evaluation set is empty");
  model.validate();
  std::vector<ModalityMask> sweep = masks;
  if (sweep.empty()) {
    const auto all = enumerate_subsets();
    sweep.assign(all.begin(), all.end());
  }
  for (const auto& m : sweep)
    if (!m.any()) throw ConfigError("cannot evaluate with every modality missing");

  DscTable table;
  table.rows.reserve(sweep.size());
  for (const auto& m : sweep) table.rows.push_back({m, {}});

  for (const auto& raw : samples) {
    for (auto e : raw.extents)
      if (e != model.extent)
        throw ShapeError("sample extent " + std::to_string(e) + " does not match model extent " +
                         std::to_string(model.extent));
    Sample s = raw;
    normalize_sample(s);
    const auto volumes = s.volume_tensors();
    const auto target = s.regions();
    // Each modality is encoded once; masks only select which features are used.
    std::array<ModalityFeatures<float>, kNumModalities> encoded;
    for (auto id : kModalities)
      encoded[static_cast<std::size_t>(id)] = encode_modality(volumes[static_cast<std::size_t>(id)], params, model, id);
    for (auto& row : table.rows) {
      const auto out = forward_from_features(encoded, row.mask, params, model);
      const auto d = region_dsc(out.main_logits, target);
      row.dsc.et += d.et;
      row.dsc.tc += d.tc;
      row.dsc.wt += d.wt;
    }
  }
  const auto n = static_cast<double>(samples.size());
  for (auto& row : table.rows) {
    row.dsc.et /= n;
    row.dsc.tc /= n;
    row.dsc.wt /= n;
  }
  return table;
}

MissingCountSummary aggregate_by_missing_count(const DscTable& table) {
  if (!table.is_full_sweep())
    throw ConfigError("missing-count aggregation needs all 15 subsets in canonical order, got " +
                      std::to_string(table.rows.size()) + " rows");
  MissingCountSummary s;
  for (const auto& r : table.rows) {
    const auto k = static_cast<std::size_t>(kNumModalities - r.mask.count());
    s.mean[k].et += r.dsc.et;
    s.mean[k].tc += r.dsc.tc;
    s.mean[k].wt += r.dsc.wt;
    ++s.group_size[k];
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const double n = s.group_size[k];
    s.mean[k].et /= n;
    s.mean[k].tc /= n;
    s.mean[k].wt /= n;
  }
  return s;
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::full: return "mmFormer";
    case Variant::no_intra: return "w/o IntraTrans";
    case Variant::no_inter: return "w/o InterTrans";
    case Variant::no_aux: return "w/o Aux. Reg.";
  }
  return "?";
}

std::string_view variant_key(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_intra: return "no-intra";
    case Variant::no_inter: return "no-inter";
    case Variant::no_aux: return "no-aux";
  }
  return "?";
}

Variant parse_variant(std::string_view key) {
  for (auto v : kVariants)
    if (key == variant_key(v)) return v;
  throw ConfigError("unknown variant '" + std::string(key) + "' (full, no-intra, no-inter, no-aux)");
}

ModelConfig apply_variant(ModelConfig base, Variant v) {
  base.use_intra = base.use_inter = base.use_aux = true;
  switch (v) {
    case Variant::full: break;
    case Variant::no_intra: base.use_intra = false; break;
    case Variant::no_inter: base.use_inter = false; break;
    case Variant::no_aux: base.use_aux = false; break;
  }
  return base;
}

std::vector<AblationResult> run_ablation(const Dataset& data, const ModelConfig& base, const TrainConfig& train,
                                         const std::vector<Variant>& variants,
                                         const std::function<void(Variant, const EpochLog&)>& on_epoch) {
  if (data.train.empty() || data.val.empty()) throw ConfigError("ablation needs non-empty train and val sets");
  std::vector<AblationResult> out;
  for (auto v : variants) {
    const auto model = apply_variant(base, v);
    auto state = init_train_state(model, train);
    std::function<void(const EpochLog&)> cb;
    if (on_epoch) cb = [&](const EpochLog& l) { on_epoch(v, l); };
    train_loop(state, data.train, model, train, {}, cb);
    AblationResult r;
    r.variant = v;
    r.parameters = static_cast<std::int64_t>(state.params.element_count());
    r.final_loss = state.loss_history.empty() ? 0.0 : state.loss_history.back();
    if (!std::isfinite(r.final_loss)) throw NumericError("variant " + std::string(variant_key(v)) + " diverged");
    r.table = evaluate_subsets(state.params, data.val, model);
    r.table.label = std::string(variant_label(v));
    out.push_back(std::move(r));
  }
  return out;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "markdown" || name == "md") return ReportFormat::markdown;
  throw ConfigError("unknown report format '" + std::string(name) + "' (csv, markdown)");
}

std::string format_report(const DscTable& table, ReportFormat format) {
  std::ostringstream os;
  const auto avg = table.average();
  if (format == ReportFormat::csv) {
    os << "FLAIR,T1c,T1,T2,ET,TC,WT\n";
    for (const auto& r : table.rows) {
      for (auto id : kModalities) os << (r.mask[id] ? 1 : 0) << ',';
      os << fixed2(r.dsc.et) << ',' << fixed2(r.dsc.tc) << ',' << fixed2(r.dsc.wt) << '\n';
    }
    os << "Average,,,," << fixed2(avg.et) << ',' << fixed2(avg.tc) << ',' << fixed2(avg.wt) << '\n';
    return os.str();
  }
  if (!table.label.empty()) os << "### " << table.label << "\n\n";
  os << "| FLAIR | T1c | T1 | T2 | ET | TC | WT |\n"
     << "|:-:|:-:|:-:|:-:|--:|--:|--:|\n";
  for (const auto& r : table.rows) {
    os << '|';
    for (auto id : kModalities) os << ' ' << (r.mask[id] ? kPresent : kAbsent) << " |";
    os << ' ' << fixed2(r.dsc.et) << " | " << fixed2(r.dsc.tc) << " | " << fixed2(r.dsc.wt) << " |\n";
  }
  os << "| Average | | | | " << fixed2(avg.et) << " | " << fixed2(avg.tc) << " | " << fixed2(avg.wt) << " |\n";
  return os.str();
}

std::string format_summary(const MissingCountSummary& s, ReportFormat format) {
  std::ostringstream os;
  const std::array<std::pair<const char*, double RegionDsc::*>, 3> regions = {
      {{"Enhancing", &RegionDsc::et}, {"Core", &RegionDsc::tc}, {"Whole", &RegionDsc::wt}}};
  if (format == ReportFormat::csv) {
    os << "region,0,1,2,3\n";
    for (const auto& [name, field] : regions) {
      os << name;
      for (const auto& m : s.mean) os << ',' << fixed2(m.*field);
      os << '\n';
    }
    return os.str();
  }
  os << "| Region | 0 missing | 1 missing | 2 missing | 3 missing |\n|---|--:|--:|--:|--:|\n";
  for (const auto& [name, field] : regions) {
    os << "| " << name;
    for (const auto& m : s.mean) os << " | " << fixed2(m.*field);
    os << " |\n";
  }
  return os.str();
}

std::string format_ablation(const std::vector<AblationResult>& results, ReportFormat format) {
  std::ostringstream os;
  if (format == ReportFormat::csv) {
    os << "method,ET,TC,WT,parameters,final_loss\n";
    for (const auto& r : results) {
      const auto a = r.table.average();
      os << variant_label(r.variant) << ',' << fixed2(a.et) << ',' << fixed2(a.tc) << ',' << fixed2(a.wt) << ','
         << r.parameters << ',' << std::setprecision(6) << r.final_loss << '\n';
    }
    return os.str();
  }
  os << "| Method | Enhancing | Core | Whole |\n|---|--:|--:|--:|\n";
  for (const auto& r : results) {
    const auto a = r.table.average();
    os << "| " << variant_label(r.variant) << " | " << fixed2(a.et) << " | " << fixed2(a.tc) << " | "
       << fixed2(a.wt) << " |\n";
  }
  return os.str();
}

DscTable parse_report_csv(std::string_view text) {
  auto lines = split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != "FLAIR,T1c,T1,T2,ET,TC,WT") throw FormatError("report CSV header missing");
  DscTable t;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i], ',');
    if (cells.size() != 7) throw FormatError("report CSV line " + std::to_string(i + 1) + " has " +
                                             std::to_string(cells.size()) + " fields");
    if (cells[0] == "Average") continue;
    DscRow r;
    for (std::size_t m = 0; m < 4; ++m) {
      if (cells[m] != "0" && cells[m] != "1")
        throw FormatError("report CSV line " + std::to_string(i + 1) + ": modality flag must be 0 or 1");
      r.mask.set(kModalities[m], cells[m] == "1");
    }
    if (!r.mask.any()) throw FormatError("report CSV line " + std::to_string(i + 1) + ": empty modality set");
    r.dsc = {parse_number(cells[4]), parse_number(cells[5]), parse_number(cells[6])};
    t.rows.push_back(r);
  }
  return t;
}

// ---- experiment config ----------------------------------------------------

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  phantom.validate();
  if (phantom.extent != model.extent)
    throw ConfigError("phantom extent " + std::to_string(phantom.extent) + " must equal model extent " +
                      std::to_string(model.extent));
  if (samples < 2) throw ConfigError("samples must be at least 2 (one train, one validation)");
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "# model\n" << model.to_text() << "# training\n" << train.to_text() << "# data\n"
     << "samples=" << samples << '\n'
     << "data_seed=" << data_seed << '\n'
     << "min_tumors=" << phantom.min_tumors << '\n'
     << "max_tumors=" << phantom.max_tumors << '\n'
     << "noise_std=" << format_double(phantom.noise_std) << '\n'
     << "texture_amplitude=" << format_double(phantom.texture_amplitude) << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::from_text(std::string_view text) {
  auto kv = KeyValues::parse(text);
  ExperimentConfig c;
  c.model = ModelConfig::from_key_values(kv);
  c.train = TrainConfig::from_key_values(kv);
  c.samples = static_cast<int>(kv.take_int("samples", c.samples));
  c.data_seed = kv.take_u64("data_seed", c.data_seed);
  c.phantom.min_tumors = static_cast<int>(kv.take_int("min_tumors", c.phantom.min_tumors));
  c.phantom.max_tumors = static_cast<int>(kv.take_int("max_tumors", c.phantom.max_tumors));
  c.phantom.noise_std = kv.take_double("noise_std", c.phantom.noise_std);
  c.phantom.texture_amplitude = kv.take_double("texture_amplitude", c.phantom.texture_amplitude);
  c.phantom.extent = c.model.extent;
  kv.require_all_consumed();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  auto kv = KeyValues::load(path);  // reports IoError / parse errors with the path
  std::ostringstream os;
  for (const auto& [k, v] : kv.raw()) os << k << '=' << v << '\n';
  return from_text(os.str());
}

}  // namespace mmf
