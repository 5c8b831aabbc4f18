#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmformer.h"

namespace fs = std::filesystem;

namespace {

// Failure of a C API call, carrying its status and message.
struct ApiError : std::runtime_error {
  mmf_status status;
  ApiError(mmf_status s, const std::string& context)
      : std::runtime_error(context + ": " + mmf_status_name(s) + ": " + mmf_last_error()), status(s) {}
};

void check(mmf_status s, const char* context) {
  if (s != MMF_OK) throw ApiError(s, context);
}

// Owning wrappers for the opaque handles.
template <typename H, void (*Free)(H*)>
struct Handle {
  H* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
  H** out() { return &p; }
  H* get() const { return p; }
};
using Experiment = Handle<mmf_experiment, mmf_experiment_free>;
using DatasetH = Handle<mmf_dataset, mmf_dataset_free>;
using Model = Handle<mmf_model, mmf_model_free>;
using Table = Handle<mmf_table, mmf_table_free>;
using Ablation = Handle<mmf_ablation, mmf_ablation_free>;

std::string take(char* s) {
  std::string out(s ? s : "");
  mmf_string_free(s);
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  std::string mask;
  std::string format = "markdown";
  std::optional<int> extent;
  std::optional<int> epochs;
  std::string variant = "full";
};

mmf_format report_format(const std::string& f) { return f == "csv" ? MMF_FORMAT_CSV : MMF_FORMAT_MARKDOWN; }
std::string report_ext(const std::string& f) { return f == "csv" ? ".csv" : ".md"; }

// Loads the config file (or defaults) and applies command-line overrides.
void load_experiment(Experiment& exp, const Options& o, const char* seed_key) {
  check(mmf_experiment_load(o.config.empty() ? nullptr : o.config.c_str(), exp.out()), "loading config");
  std::ostringstream ov;
  if (o.seed) ov << seed_key << '=' << *o.seed << '\n';
  if (o.extent) ov << "extent=" << *o.extent << '\n';
  if (o.epochs) ov << "epochs=" << *o.epochs << '\n';
  check(mmf_experiment_apply(exp.get(), ov.str().c_str()), "applying command-line overrides");
}

std::string experiment_text(const Experiment& exp) {
  char* text = nullptr;
  check(mmf_experiment_to_text(exp.get(), &text), "serialising config");
  return take(text);
}

void log_config(const char* command, const std::string& text) {
  std::cerr << "# mmformer " << mmf_version() << ' ' << command << '\n' << text << std::flush;
}

void print_epoch(const char* label, int epoch, double loss, void*) {
  std::fprintf(stderr, "[%s] epoch %d  mean loss %.6f\n", label, epoch, loss);
}

void print_gradcheck(const char* name, double err, double tol, int passed, void*) {
  std::printf("%-36s rel err %.3e  tol %.0e  %s\n", name, err, tol, passed ? "ok" : "FAIL");
  std::fflush(stdout);
}

int cmd_synth(const Options& o) {
  Experiment exp;
  load_experiment(exp, o, "data_seed");
  const auto text = experiment_text(exp);
  log_config("synth", text);
  DatasetH ds;
  check(mmf_dataset_generate(exp.get(), ds.out()), "generating phantoms");
  check(mmf_dataset_save(ds.get(), o.out.c_str()), "writing volumes");
  write_file(fs::path(o.out) / "config.txt", text);
  size_t n_train = 0, n_val = 0;
  check(mmf_dataset_counts(ds.get(), &n_train, &n_val), "counting samples");
  std::cout << "wrote " << n_train << " training and " << n_val << " validation phantoms to " << o.out << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  Experiment exp;
  load_experiment(exp, o, "seed");
  mmf_variant variant{};
  check(mmf_parse_variant(o.variant.c_str(), &variant), "parsing --variant");
  const auto text = experiment_text(exp);
  log_config("train", text + "variant=" + o.variant + "\n");
  DatasetH ds;
  check(mmf_dataset_generate(exp.get(), ds.out()), "generating phantoms");
  fs::create_directories(o.out);
  write_file(fs::path(o.out) / "config.txt", text);
  const auto ck = (fs::path(o.out) / "checkpoint.mmf").string();
  Model model;
  check(mmf_train(exp.get(), ds.get(), variant, ck.c_str(), print_epoch, nullptr, model.out()), "training");
  int64_t params = 0;
  int epochs = 0;
  double loss = 0;
  check(mmf_model_info(model.get(), &params, &epochs, &loss), "reading model info");
  std::cout << "trained " << params << " parameters for " << epochs << " epochs, final loss " << loss
            << "; checkpoint " << ck << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const fs::path dir(o.out);
  Options eo = o;
  if (eo.config.empty()) eo.config = (dir / "config.txt").string();
  Experiment exp;
  load_experiment(exp, eo, "seed");
  log_config("eval", experiment_text(exp));
  Model model;
  const auto ck = (dir / "checkpoint.mmf").string();
  check(mmf_model_load(ck.c_str(), nullptr, model.out()), "loading checkpoint");
  DatasetH ds;
  check(mmf_dataset_generate(exp.get(), ds.out()), "generating phantoms");
  std::vector<uint8_t> masks;
  if (!o.mask.empty()) {
    uint8_t bits = 0;
    check(mmf_parse_mask(o.mask.c_str(), &bits), "parsing --mask");
    masks.push_back(bits);
  }
  Table table;
  check(mmf_evaluate(model.get(), ds.get(), masks.empty() ? nullptr : masks.data(), masks.size(), table.out()),
        "evaluating");
  char* text = nullptr;
  check(mmf_table_format(table.get(), report_format(o.format), &text), "formatting report");
  const auto report = take(text);
  std::cout << report;
  // The CSV copy is what `report` reads back.
  char* csv = nullptr;
  check(mmf_table_format(table.get(), MMF_FORMAT_CSV, &csv), "formatting report");
  const std::string stem = masks.empty() ? "report" : "report_" + std::to_string(masks[0]);
  write_file(dir / (stem + ".csv"), take(csv));
  if (o.format != "csv") write_file(dir / (stem + report_ext(o.format)), report);
  return 0;
}

int cmd_ablate(const Options& o) {
  Experiment exp;
  load_experiment(exp, o, "seed");
  const auto text = experiment_text(exp);
  log_config("ablate", text);
  DatasetH ds;
  check(mmf_dataset_generate(exp.get(), ds.out()), "generating phantoms");
  Ablation ab;
  check(mmf_ablate(exp.get(), ds.get(), nullptr, 0, print_epoch, nullptr, ab.out()), "ablation");
  char* summary = nullptr;
  check(mmf_ablation_format(ab.get(), report_format(o.format), &summary), "formatting ablation");
  const auto report = take(summary);
  std::cout << report;
  const fs::path dir(o.out);
  write_file(dir / "config.txt", text);
  write_file(dir / ("ablation" + report_ext(o.format)), report);
  size_t n = 0;
  check(mmf_ablation_count(ab.get(), &n), "counting variants");
  const char* keys[] = {"full", "no-intra", "no-inter", "no-aux"};
  for (size_t i = 0; i < n && i < 4; ++i) {
    const mmf_table* t = nullptr;
    check(mmf_ablation_table(ab.get(), i, &t), "reading variant table");
    char* csv = nullptr;
    check(mmf_table_format(t, MMF_FORMAT_CSV, &csv), "formatting variant table");
    write_file(dir / (std::string("report_") + keys[i] + ".csv"), take(csv));
  }
  return 0;
}

int cmd_gradcheck() {
  int all = 0;
  check(mmf_gradcheck(print_gradcheck, nullptr, &all), "gradient check");
  std::cout << (all ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return all ? 0 : 1;
}

int cmd_report(const Options& o) {
  const fs::path dir(o.out);
  Table table;
  check(mmf_table_parse_csv(read_file(dir / "report.csv").c_str(), table.out()), "parsing report.csv");
  char* text = nullptr;
  check(mmf_table_format(table.get(), report_format(o.format), &text), "formatting report");
  std::string out = take(text);
  size_t rows = 0;
  check(mmf_table_rows(table.get(), &rows), "counting rows");
  if (rows == 15) {
    char* summary = nullptr;
    check(mmf_table_summary(table.get(), report_format(o.format), &summary), "missing-count summary");
    const auto s = take(summary);
    out += "\n" + s;
    write_file(dir / ("summary" + report_ext(o.format)), s);
  }
  std::cout << out;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmformer: multimodal brain-tumour segmentation with missing modalities"};
  app.require_subcommand(1);
  Options o;

  const std::vector<std::string> formats{"csv", "markdown"};
  const std::vector<std::string> variants{"full", "no-intra", "no-inter", "no-aux"};
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--extent", o.extent, "Volume extent override")->check(CLI::PositiveNumber);
  };

  auto* synth = app.add_subcommand("synth", "Generate synthetic phantoms and write them as volume files");
  add_common(synth);

  auto* train = app.add_subcommand("train", "Train a model and write <out>/checkpoint.mmf");
  add_common(train);
  train->add_option("--epochs", o.epochs, "Epoch count override")->check(CLI::NonNegativeNumber);
  train->add_option("--variant", o.variant, "Model variant")->check(CLI::IsMember(variants))->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Evaluate <out>/checkpoint.mmf on every modality subset");
  eval->add_option("--config", o.config, "Experiment config (default: <out>/config.txt)")->check(CLI::ExistingFile);
  eval->add_option("--out", o.out, "Run directory")->capture_default_str();
  eval->add_option("--mask", o.mask, "Evaluate one subset only, e.g. FLAIR,T2");
  eval->add_option("--format", o.format, "Report format")->check(CLI::IsMember(formats))->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the four ablation variants");
  add_common(ablate);
  ablate->add_option("--epochs", o.epochs, "Epoch count override")->check(CLI::NonNegativeNumber);
  ablate->add_option("--format", o.format, "Report format")->check(CLI::IsMember(formats))->capture_default_str();

  auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");

  auto* report = app.add_subcommand("report", "Render <out>/report.csv with the missing-count summary");
  report->add_option("--out", o.out, "Run directory")->capture_default_str();
  report->add_option("--format", o.format, "Report format")->check(CLI::IsMember(formats))->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*gradcheck) return cmd_gradcheck();
    if (*report) return cmd_report(o);
  } catch (const ApiError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
