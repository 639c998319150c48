/*
 * Copyright (C) 2026 The dtformer authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line front end. Talks to the library only through the C API.

#include "dtformer/dtformer.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  std::string code;
  std::string message;
  int exit_code = 1;
};

[[noreturn]] void usage_error(const std::string& message) { throw Failure{"usage", message, 2}; }

void check(dtf_status s)
{
  if (s != DTF_OK) throw Failure{dtf_status_name(s), dtf_last_error(), 1};
}

struct VolumeDel {
  void operator()(dtf_volume* v) const { dtf_volume_free(v); }
};
struct SchemeDel {
  void operator()(dtf_scheme* s) const { dtf_scheme_free(s); }
};
struct ModelDel {
  void operator()(dtf_model* m) const { dtf_model_free(m); }
};
struct DatasetDel {
  void operator()(dtf_dataset* d) const { dtf_dataset_free(d); }
};
using Volume = std::unique_ptr<dtf_volume, VolumeDel>;
using Scheme = std::unique_ptr<dtf_scheme, SchemeDel>;
using Model = std::unique_ptr<dtf_model, ModelDel>;
using Dataset = std::unique_ptr<dtf_dataset, DatasetDel>;

/// Owns a string allocated by the library.
struct LibString {
  char* p = nullptr;
  ~LibString() { dtf_free_string(p); }
  std::string str() const { return p ? p : ""; }
};

Volume load_volume(const std::string& path)
{
  dtf_volume* v = nullptr;
  check(dtf_volume_load(path.c_str(), &v));
  return Volume(v);
}

Model load_model(const std::string& path)
{
  dtf_model* m = nullptr;
  check(dtf_model_load(path.c_str(), &m));
  return Model(m);
}

json model_info(const dtf_model* m)
{
  LibString s;
  check(dtf_model_info(m, &s.p));
  return json::parse(s.str());
}

void write_text_atomic(const fs::path& path, const std::string& text)
{
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Failure{"io", "cannot write " + path.string()};
    out << text;
    if (!out.flush()) throw Failure{"io", "cannot write " + path.string()};
  }
  fs::rename(tmp, path);
}

std::string strip_volume_suffix(std::string p)
{
  for (const char* s : {".raw", ".json"})
    if (p.size() > std::strlen(s) && p.compare(p.size() - std::strlen(s), std::strlen(s), s) == 0)
      return p.substr(0, p.size() - std::strlen(s));
  return p;
}

double parse_snr(const std::string& text)
{
  if (text == "inf" || text == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || std::isnan(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    usage_error("bad SNR value '" + text + "' (a number in dB or inf)");
  }
}

json snr_json(double v) { return std::isinf(v) ? json("inf") : json(v); }

std::vector<std::string> split_list(const std::string& text)
{
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

/// Everything a command records in its manifest.
struct Record {
  std::string out;
  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();
  std::vector<std::string> outputs;

  void volume_output(const std::string& base)
  {
    outputs.push_back(base + ".raw");
    outputs.push_back(base + ".json");
  }
};

struct SchemeOptions {
  std::string preset;
  std::string bvec, bval;
  double bvalue = 1000.0;

  void add(CLI::App* app)
  {
    app->add_option("--scheme", preset, "Built-in gradient scheme (skare6)");
    app->add_option("--bvec", bvec, "FSL bvec file");
    app->add_option("--bval", bval, "FSL bval file");
    app->add_option("--bvalue", bvalue, "b-value for the built-in scheme, s/mm^2");
  }

  Scheme load(Record& rec) const
  {
    dtf_scheme* s = nullptr;
    if (!bvec.empty() || !bval.empty()) {
      if (bvec.empty() || bval.empty()) usage_error("--bvec and --bval must be given together");
      if (!preset.empty()) usage_error("use either --scheme or --bvec/--bval, not both");
      check(dtf_scheme_load_fsl(bvec.c_str(), bval.c_str(), &s));
      rec.inputs["bvec"] = bvec;
      rec.inputs["bval"] = bval;
      rec.config["scheme"] = "fsl";
    } else {
      const std::string name = preset.empty() ? "skare6" : preset;
      if (name != "skare6") usage_error("unknown scheme preset '" + name + "' (skare6)");
      check(dtf_scheme_skare6(bvalue, &s));
      rec.config["scheme"] = name;
      rec.config["bvalue"] = bvalue;
    }
    return Scheme(s);
  }
};

struct ModelOptions {
  std::size_t patch = 5, width = 64, head_width = 64, heads = 2, modules = 2, inference_stride = 1;
  std::string attention = "softmax";
  bool no_stabilizers = false;

  void add(CLI::App* app)
  {
    app->add_option("--patch", patch, "Patch side L in voxels");
    app->add_option("--width", width, "Embedding width d");
    app->add_option("--head-width", head_width, "Per-head width d_h");
    app->add_option("--heads", heads, "Attention heads n_h");
    app->add_option("--modules", modules, "Attention modules per stack N_Tr");
    app->add_option("--attention", attention, "softmax | literal");
    app->add_flag("--no-stabilizers", no_stabilizers, "Drop residual connections and layer normalization");
    app->add_option("--inference-stride", inference_stride, "Patch stride used when predicting volumes");
  }

  json to_json() const
  {
    return {{"patch", patch},       {"width", width},
            {"head_width", head_width}, {"heads", heads},
            {"modules", modules},   {"attention", attention},
            {"stabilizers", !no_stabilizers}, {"inference_stride", inference_stride}};
  }
};

void print_metrics_table(const json& reports)
{
  std::cout << std::left << std::setw(12) << "method" << std::setw(14) << "region" << std::right << std::setw(14)
            << "tensor(x1000)" << std::setw(12) << "MD(x1000)" << std::setw(10) << "FA" << std::setw(12)
            << "angle(deg)" << '\n';
  auto row = [](const std::string& method, const std::string& region, const json& m) {
    std::cout << std::left << std::setw(12) << method << std::setw(14) << region << std::right << std::fixed
              << std::setprecision(4) << std::setw(14) << m["tensor_error"].get<double>() * 1000 << std::setw(12)
              << m["md_error"].get<double>() * 1000 << std::setw(10) << m["fa_error"].get<double>() << std::setw(12)
              << std::setprecision(2) << m["angle_error_deg"].get<double>() << '\n';
  };
  for (const auto& r : reports) {
    row(r["method"], "all", r["overall"]);
    for (const auto& g : r["regions"]) row(r["method"], g["name"], g);
  }
}

std::string default_out(const std::string& name)
{
  const char* env = std::getenv("DTFORMER_OUT");
  const fs::path dir = env && *env ? fs::path(env) : fs::path("dtformer-out");
  return (dir / name).string();
}

/// Parses and runs one command line (without the program name).
int run(std::vector<std::string> args);

int run(std::vector<std::string> args)
{
  CLI::App app{"Diffusion tensor estimation with classical fitters and patch transformers", "dtformer"};
  app.set_version_flag("--version", std::string(dtf_version()));
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads; 0 uses every core, 1 is bit-reproducible");

  Record rec;
  std::string command;
  std::string out;
  std::function<void()> action;

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic tensor phantom");
  std::vector<std::size_t> ph_dims{32, 32, 32};
  std::uint64_t ph_seed = 0;
  std::string ph_model = "curved-tract";
  double ph_length = 8.0, ph_s0 = 1000.0;
  phantom->add_option("--dims", ph_dims, "Grid size x,y,z")->delimiter(',')->expected(3);
  phantom->add_option("--seed", ph_seed, "Random seed");
  phantom->add_option("--model", ph_model, "curved-tract | layered");
  phantom->add_option("--length-scale", ph_length, "Smoothness of the random fields, voxels");
  phantom->add_option("--s0", ph_s0, "Non-weighted signal amplitude");
  phantom->add_option("--out", out, "Output directory");
  phantom->callback([&] {
    command = "phantom";
    action = [&] {
      rec.config = {{"dims", ph_dims}, {"seed", ph_seed}, {"model", ph_model}, {"length_scale", ph_length},
                    {"s0_amplitude", ph_s0}};
      rec.seeds["phantom"] = ph_seed;
      dtf_volume *t = nullptr, *l = nullptr, *s = nullptr;
      check(dtf_phantom_generate(rec.config.dump().c_str(), &t, &l, &s));
      Volume tensors(t), labels(l), s0(s);
      fs::create_directories(rec.out);
      const std::pair<const char*, dtf_volume*> items[] = {
          {"tensors", tensors.get()}, {"labels", labels.get()}, {"s0", s0.get()}};
      for (const auto& [name, vol] : items) {
        const std::string base = (fs::path(rec.out) / name).string();
        check(dtf_volume_save(vol, base.c_str(), ph_seed, (std::string("phantom ") + name).c_str()));
        rec.volume_output(base);
      }
    };
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Synthesize noiseless diffusion-weighted signals");
  std::string sy_tensors, sy_s0;
  SchemeOptions sy_scheme;
  synth->add_option("--tensors", sy_tensors, "Tensor volume")->required();
  synth->add_option("--s0", sy_s0, "s0 volume")->required();
  sy_scheme.add(synth);
  synth->add_option("--out", out, "Output volume base path");
  synth->callback([&] {
    command = "synth";
    action = [&] {
      Scheme scheme = sy_scheme.load(rec);
      rec.inputs["tensors"] = sy_tensors;
      rec.inputs["s0"] = sy_s0;
      Volume t = load_volume(sy_tensors), s = load_volume(sy_s0);
      dtf_volume* d = nullptr;
      check(dtf_synthesize(t.get(), s.get(), scheme.get(), &d));
      Volume dwi(d);
      const std::string base = strip_volume_suffix(rec.out);
      check(dtf_volume_save(dwi.get(), base.c_str(), 0, "noiseless signals"));
      rec.volume_output(base);
      check(dtf_scheme_save_fsl(scheme.get(), (base + ".bvec").c_str(), (base + ".bval").c_str()));
      rec.outputs.push_back(base + ".bvec");
      rec.outputs.push_back(base + ".bval");
    };
  });

  // noise
  auto* noise = app.add_subcommand("noise", "Add Rician noise");
  std::string no_in, no_snr = "20";
  std::uint64_t no_seed = 0;
  double no_reference = 0.0;
  std::size_t no_channel = 0;
  noise->add_option("--in", no_in, "Signal volume")->required();
  noise->add_option("--snr", no_snr, "SNR in dB, or inf");
  noise->add_option("--seed", no_seed, "Noise seed");
  noise->add_option("--reference", no_reference, "Reference amplitude; 0 uses the mean of --reference-channel");
  noise->add_option("--reference-channel", no_channel, "Channel whose positive mean is the reference");
  noise->add_option("--out", out, "Output volume base path");
  noise->callback([&] {
    command = "noise";
    action = [&] {
      const double snr = parse_snr(no_snr);
      rec.inputs["in"] = no_in;
      rec.config = {{"snr_db", snr_json(snr)}, {"reference", no_reference}, {"reference_channel", no_channel}};
      rec.seeds["noise"] = no_seed;
      Volume in = load_volume(no_in);
      dtf_volume* o = nullptr;
      check(dtf_add_noise(in.get(), snr, no_reference, no_channel, no_seed, &o));
      Volume noisy(o);
      const std::string base = strip_volume_suffix(rec.out);
      check(dtf_volume_save(noisy.get(), base.c_str(), no_seed, ("rician noise at " + no_snr + " dB").c_str()));
      rec.volume_output(base);
    };
  });

  // fit
  auto* fit = app.add_subcommand("fit", "Estimate a tensor volume");
  std::string fi_dwi, fi_method, fi_ckpt, fi_mask;
  std::size_t fi_stride = 0;
  SchemeOptions fi_scheme;
  fit->add_option("--dwi", fi_dwi, "Diffusion-weighted volume")->required();
  fi_scheme.add(fit);
  fit->add_option("--method", fi_method, "ols | cwlls | cnls | model-s | model-st")->required();
  fit->add_option("--checkpoint", fi_ckpt, "Trained model for learned methods");
  fit->add_option("--mask", fi_mask, "Label volume; voxels labelled 0 are zeroed");
  fit->add_option("--stride", fi_stride, "Inference patch stride; 0 uses the checkpoint setting");
  fit->add_option("--out", out, "Output volume base path");
  fit->callback([&] {
    command = "fit";
    const bool learned = fi_method == "model-s" || fi_method == "model-st";
    if (learned && fi_ckpt.empty()) usage_error("--method " + fi_method + " requires --checkpoint");
    if (!learned && !fi_ckpt.empty()) usage_error("--checkpoint only applies to model-s and model-st");
    action = [&, learned] {
      Scheme scheme = fi_scheme.load(rec);
      rec.inputs["dwi"] = fi_dwi;
      rec.config["method"] = fi_method;
      rec.config["stride"] = fi_stride;
      Model model;
      if (learned) {
        rec.inputs["checkpoint"] = fi_ckpt;
        model = load_model(fi_ckpt);
        rec.config["model"] = model_info(model.get());
      }
      Volume dwi = load_volume(fi_dwi);
      Volume mask;
      if (!fi_mask.empty()) {
        rec.inputs["mask"] = fi_mask;
        mask = load_volume(fi_mask);
      }
      dtf_volume* o = nullptr;
      check(dtf_fit(dwi.get(), scheme.get(), fi_method.c_str(), model.get(), mask.get(), fi_stride, &o));
      Volume tensors(o);
      const std::string base = strip_volume_suffix(rec.out);
      check(dtf_volume_save(tensors.get(), base.c_str(), 0, (fi_method + " tensors").c_str()));
      rec.volume_output(base);
    };
  });

  // train
  auto* train = app.add_subcommand("train", "Train Model S or Model ST");
  std::string tr_stage = "s", tr_frozen;
  ModelOptions tr_model;
  SchemeOptions tr_scheme;
  std::size_t tr_phantoms = 8;
  std::vector<std::size_t> tr_dims{32, 32, 32};
  std::uint64_t tr_data_seed = 100;
  std::string tr_snr = "15,20,30,50", tr_labels = "ground-truth", tr_region = "curved-tract";
  std::size_t tr_dense = 30;
  std::vector<std::string> tr_dwi, tr_ref, tr_label_vols;
  std::size_t tr_batch = 10, tr_patience = 2, tr_epochs = 50;
  double tr_lr = 1e-4, tr_decay = 0.9, tr_val = 0.2;
  std::uint64_t tr_seed = 0;
  train->add_option("--stage", tr_stage, "s | st")->check(CLI::IsMember({"s", "st"}));
  train->add_option("--frozen", tr_frozen, "Model S checkpoint kept fixed while training Model ST");
  tr_model.add(train);
  tr_scheme.add(train);
  train->add_option("--phantoms", tr_phantoms, "Synthetic phantoms in the training set");
  train->add_option("--phantom-dims", tr_dims, "Synthetic phantom grid x,y,z")->delimiter(',')->expected(3);
  train->add_option("--data-seed", tr_data_seed, "Seed of the synthetic phantoms");
  train->add_option("--train-snr", tr_snr, "Comma-separated SNR levels cycled over phantoms (dB or inf)");
  train->add_option("--labels", tr_labels, "ground-truth | dense-fit");
  train->add_option("--dense-directions", tr_dense, "Directions of the dense scheme for dense-fit labels");
  train->add_option("--region-model", tr_region, "curved-tract | layered");
  train->add_option("--dwi", tr_dwi, "Training signal volume (repeatable; replaces synthetic data)");
  train->add_option("--tensors", tr_ref, "Reference tensors for each --dwi");
  train->add_option("--label-volume", tr_label_vols, "Label volume for each --dwi");
  train->add_option("--batch-size", tr_batch, "Patches per optimizer step");
  train->add_option("--lr", tr_lr, "Initial learning rate");
  train->add_option("--lr-decay", tr_decay, "Factor applied after every epoch without improvement");
  train->add_option("--patience", tr_patience, "Stalled epochs before stopping");
  train->add_option("--max-epochs", tr_epochs, "Epoch limit");
  train->add_option("--seed", tr_seed, "Initialization, shuffling and split seed");
  train->add_option("--val-fraction", tr_val, "Share of phantoms held out for validation");
  train->add_option("--out", out, "Checkpoint path");
  train->callback([&] {
    command = "train";
    if (tr_stage == "st" && tr_frozen.empty()) usage_error("--stage st requires --frozen <model-s checkpoint>");
    if (tr_stage == "s" && !tr_frozen.empty()) usage_error("--frozen only applies to --stage st");
    if (tr_ref.size() != tr_dwi.size()) usage_error("give one --tensors per --dwi");
    if (!tr_label_vols.empty() && tr_label_vols.size() != tr_dwi.size())
      usage_error("give one --label-volume per --dwi or none");
    action = [&] {
      Scheme scheme = tr_scheme.load(rec);
      Model frozen;
      json model_cfg = tr_model.to_json();
      if (tr_stage == "st") {
        rec.inputs["frozen"] = tr_frozen;
        frozen = load_model(tr_frozen);
        const json info = model_info(frozen.get());
        if (info["kind"] != "s") usage_error(tr_frozen + " is not a Model S checkpoint");
        model_cfg = info["config"];
        rec.config["frozen_hash"] = info["hash"];
      }
      rec.config["model"] = model_cfg;
      dtf_dataset* d = nullptr;
      check(dtf_dataset_create(model_cfg.dump().c_str(), &d));
      Dataset ds(d);
      if (tr_dwi.empty()) {
        json spec{{"phantoms", tr_phantoms}, {"dims", tr_dims},         {"seed", tr_data_seed},
                  {"model", tr_region},      {"labels", tr_labels},     {"dense_directions", tr_dense},
                  {"snr_db", json::array()}};
        for (const auto& s : split_list(tr_snr)) spec["snr_db"].push_back(snr_json(parse_snr(s)));
        rec.config["data"] = spec;
        rec.seeds["data"] = tr_data_seed;
        check(dtf_dataset_add_synthetic(ds.get(), spec.dump().c_str(), scheme.get()));
      } else {
        rec.inputs["dwi"] = tr_dwi;
        rec.inputs["tensors"] = tr_ref;
        rec.inputs["label_volumes"] = tr_label_vols;
        for (std::size_t i = 0; i < tr_dwi.size(); ++i) {
          Volume dwi = load_volume(tr_dwi[i]), ref = load_volume(tr_ref[i]);
          Volume lab = tr_label_vols.empty() ? Volume() : load_volume(tr_label_vols[i]);
          check(dtf_dataset_add_volume(ds.get(), dwi.get(), scheme.get(), ref.get(), lab.get()));
        }
      }
      const json tc{{"batch_size", tr_batch},   {"initial_lr", tr_lr}, {"lr_decay", tr_decay},
                    {"early_stop_patience", tr_patience}, {"max_epochs", tr_epochs}, {"seed", tr_seed},
                    {"validation_fraction", tr_val}};
      rec.config["train"] = tc;
      rec.config["patches"] = dtf_dataset_size(ds.get());
      rec.seeds["train"] = tr_seed;
      dtf_model* m = nullptr;
      LibString log;
      check(dtf_train(ds.get(), tr_stage.c_str(), frozen.get(), tc.dump().c_str(), &m, &log.p));
      Model model(m);
      if (frozen && dtf_model_stage_one_hash(frozen.get()) != dtf_model_stage_one_hash(model.get()))
        throw Failure{"internal", "the frozen Model S changed during training"};
      const json meta{{"seed", tr_seed}, {"train", tc}, {"data", rec.config.value("data", json::object())}};
      if (fs::path(rec.out).has_parent_path()) fs::create_directories(fs::path(rec.out).parent_path());
      check(dtf_model_save(model.get(), rec.out.c_str(), meta.dump().c_str()));
      rec.outputs.push_back(rec.out);
      write_text_atomic(rec.out + ".log.jsonl", log.str());
      rec.outputs.push_back(rec.out + ".log.jsonl");

      std::istringstream lines(log.str());
      std::string line;
      while (std::getline(lines, line)) {
        const json j = json::parse(line);
        if (j.contains("epoch"))
          std::cout << "epoch " << j["epoch"] << "  train " << j["train_loss"].get<double>() << "  validation "
                    << j["validation_loss"].get<double>() << "  lr " << j["lr"].get<double>() << '\n';
        else
          std::cout << "stop: " << j["stop_reason"].get<std::string>() << ", best epoch " << j["best_epoch"] << '\n';
      }
    };
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compare a tensor volume with a reference");
  std::string ev_pred, ev_ref, ev_labels, ev_method = "prediction";
  evaluate->add_option("--pred", ev_pred, "Estimated tensors")->required();
  evaluate->add_option("--ref", ev_ref, "Reference tensors")->required();
  evaluate->add_option("--labels", ev_labels, "Label volume for the mask and per-region numbers");
  evaluate->add_option("--method", ev_method, "Name recorded in the report");
  evaluate->add_option("--out", out, "Report base path (.json and .csv)");
  evaluate->callback([&] {
    command = "evaluate";
    action = [&] {
      rec.inputs = {{"pred", ev_pred}, {"ref", ev_ref}, {"labels", ev_labels}};
      rec.config["method"] = ev_method;
      Volume p = load_volume(ev_pred), r = load_volume(ev_ref);
      Volume l = ev_labels.empty() ? Volume() : load_volume(ev_labels);
      LibString js, csv;
      check(dtf_compare(p.get(), r.get(), l.get(), ev_method.c_str(), &js.p, &csv.p));
      write_text_atomic(rec.out + ".json", js.str() + "\n");
      write_text_atomic(rec.out + ".csv", csv.str());
      rec.outputs = {rec.out + ".json", rec.out + ".csv"};
      print_metrics_table(json::array({json::parse(js.str())}));
    };
  });

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Noise sweep on a phantom");
  std::string sw_phantom, sw_tensors, sw_labels, sw_s0, sw_snr = "50,30,20,15", sw_methods = "cwlls";
  std::string sw_ckpt_s, sw_ckpt_st;
  std::size_t sw_repeats = 5, sw_stride = 0;
  std::uint64_t sw_seed = 0;
  bool sw_no_clean = false;
  SchemeOptions sw_scheme;
  sweep->add_option("--phantom", sw_phantom, "Directory written by the phantom command");
  sweep->add_option("--tensors", sw_tensors, "Ground-truth tensors (instead of --phantom)");
  sweep->add_option("--labels", sw_labels, "Label volume (instead of --phantom)");
  sweep->add_option("--s0", sw_s0, "s0 volume (instead of --phantom)");
  sw_scheme.add(sweep);
  sweep->add_option("--snr", sw_snr, "Comma-separated SNR levels in dB");
  sweep->add_option("--repeats", sw_repeats, "Noise realizations per level");
  sweep->add_option("--seed", sw_seed, "Noise seed");
  sweep->add_option("--methods", sw_methods, "Comma-separated methods");
  sweep->add_option("--checkpoint-s", sw_ckpt_s, "Model S checkpoint");
  sweep->add_option("--checkpoint-st", sw_ckpt_st, "Model ST checkpoint");
  sweep->add_option("--stride", sw_stride, "Inference patch stride; 0 uses the checkpoint setting");
  sweep->add_flag("--no-clean", sw_no_clean, "Skip the column without added noise");
  sweep->add_option("--out", out, "Report base path (.json and .csv)");
  sweep->callback([&] {
    command = "sweep";
    if (!sw_phantom.empty()) {
      if (!sw_tensors.empty() || !sw_labels.empty() || !sw_s0.empty())
        usage_error("use either --phantom or --tensors/--labels/--s0");
      sw_tensors = (fs::path(sw_phantom) / "tensors").string();
      sw_labels = (fs::path(sw_phantom) / "labels").string();
      sw_s0 = (fs::path(sw_phantom) / "s0").string();
    }
    if (sw_tensors.empty() || sw_labels.empty() || sw_s0.empty())
      usage_error("sweep needs --phantom or all of --tensors, --labels and --s0");
    const auto methods = split_list(sw_methods);
    for (const auto& m : methods) {
      if (m == "model-s" && sw_ckpt_s.empty()) usage_error("method model-s requires --checkpoint-s");
      if (m == "model-st" && sw_ckpt_st.empty()) usage_error("method model-st requires --checkpoint-st");
    }
    action = [&, methods] {
      Scheme scheme = sw_scheme.load(rec);
      json cfg{{"snr_db", json::array()},        {"repetitions", sw_repeats}, {"seed", sw_seed},
               {"include_clean", !sw_no_clean}, {"methods", methods},       {"inference_stride", sw_stride}};
      for (const auto& s : split_list(sw_snr)) cfg["snr_db"].push_back(parse_snr(s));
      rec.config.update(cfg);
      rec.seeds["noise"] = sw_seed;
      rec.inputs = {{"tensors", sw_tensors}, {"labels", sw_labels}, {"s0", sw_s0}};
      Model ms, mst;
      if (!sw_ckpt_s.empty()) {
        rec.inputs["checkpoint_s"] = sw_ckpt_s;
        ms = load_model(sw_ckpt_s);
      }
      if (!sw_ckpt_st.empty()) {
        rec.inputs["checkpoint_st"] = sw_ckpt_st;
        mst = load_model(sw_ckpt_st);
      }
      Volume t = load_volume(sw_tensors), l = load_volume(sw_labels), s = load_volume(sw_s0);
      LibString js, csv;
      check(dtf_sweep(t.get(), l.get(), s.get(), scheme.get(), cfg.dump().c_str(), ms.get(), mst.get(), &js.p,
                      &csv.p));
      write_text_atomic(rec.out + ".json", js.str() + "\n");
      write_text_atomic(rec.out + ".csv", csv.str());
      rec.outputs = {rec.out + ".json", rec.out + ".csv"};
      const json res = json::parse(js.str());
      for (const auto& e : res["means"]) {
        std::cout << "SNR " << (e["snr_db"].is_string() ? e["snr_db"].get<std::string>() : e["snr_db"].dump())
                  << " dB\n";
        print_metrics_table(json::array({e["report"]}));
      }
    };
  });

  // bland-altman
  auto* ba = app.add_subcommand("bland-altman", "Bland-Altman data for FA or MD");
  std::string ba_pred, ba_ref, ba_labels, ba_map = "fa";
  ba->add_option("--pred", ba_pred, "Estimated tensors")->required();
  ba->add_option("--ref", ba_ref, "Reference tensors")->required();
  ba->add_option("--labels", ba_labels, "Label volume used as mask");
  ba->add_option("--map", ba_map, "fa | md")->check(CLI::IsMember({"fa", "md"}));
  ba->add_option("--out", out, "Output base path (.csv and .json)");
  ba->callback([&] {
    command = "bland-altman";
    action = [&] {
      rec.inputs = {{"pred", ba_pred}, {"ref", ba_ref}, {"labels", ba_labels}};
      rec.config["map"] = ba_map;
      Volume p = load_volume(ba_pred), r = load_volume(ba_ref);
      Volume l = ba_labels.empty() ? Volume() : load_volume(ba_labels);
      LibString csv, summary;
      check(dtf_bland_altman(p.get(), r.get(), l.get(), ba_map.c_str(), &csv.p, &summary.p));
      write_text_atomic(rec.out + ".csv", csv.str());
      write_text_atomic(rec.out + ".json", summary.str() + "\n");
      rec.outputs = {rec.out + ".csv", rec.out + ".json"};
      std::cout << summary.str() << '\n';
    };
  });

  // info
  auto* info = app.add_subcommand("info", "Describe a checkpoint");
  std::string in_ckpt;
  info->add_option("checkpoint", in_ckpt, "Checkpoint path")->required();
  info->callback([&] {
    command = "info";
    action = [&] {
      Model m = load_model(in_ckpt);
      std::cout << model_info(m.get()).dump(2) << '\n';
    };
  });

  // rerun
  auto* rerun = app.add_subcommand("rerun", "Repeat a command from its manifest");
  std::string re_manifest;
  rerun->add_option("manifest", re_manifest, "Manifest written by an earlier run")->required();
  rerun->callback([&] { command = "rerun"; });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    usage_error(e.what());
  }

  if (command == "rerun") {
    std::ifstream in(re_manifest);
    if (!in) throw Failure{"io", "cannot read manifest " + re_manifest};
    json m;
    try {
      m = json::parse(in);
    } catch (const json::exception& e) {
      throw Failure{"format", "bad manifest " + re_manifest + ": " + e.what()};
    }
    if (!m.contains("argv")) throw Failure{"format", re_manifest + " has no argv record"};
    std::vector<std::string> again{"--threads", std::to_string(app.count("--threads") ? threads : 1)};
    for (const auto& a : m["argv"]) again.push_back(a.get<std::string>());
    return run(again);
  }

  dtf_set_threads(threads);
  const auto start = std::chrono::steady_clock::now();
  const bool writes = command != "info";
  if (writes) {
    if (out.empty()) {
      static const std::map<std::string, std::string> names{
          {"phantom", "phantom"},         {"synth", "dwi"},         {"noise", "dwi_noisy"},
          {"fit", "tensors"},             {"train", "model.ckpt"},  {"evaluate", "report"},
          {"sweep", "sweep"},             {"bland-altman", "bland_altman"}};
      out = default_out(names.at(command));
    }
    rec.out = out;
  }
  action();
  if (!writes) return 0;

  for (const auto& o : rec.outputs)
    if (!fs::exists(o) || fs::file_size(o) == 0) throw Failure{"io", "output " + o + " was not written"};

  // Record the command without the thread count and with the resolved
  // output path so a rerun writes the same files.
  json argv = json::array();
  bool has_out = false;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--threads") {
      ++i;
      continue;
    }
    if (args[i].rfind("--threads=", 0) == 0) continue;
    if (args[i] == "--out" || args[i].rfind("--out=", 0) == 0) has_out = true;
    argv.push_back(args[i]);
  }
  if (!has_out) {
    argv.push_back("--out");
    argv.push_back(rec.out);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const json manifest{{"tool", "dtformer"},
                      {"version", dtf_version()},
                      {"command", command},
                      {"argv", argv},
                      {"config", rec.config},
                      {"seeds", rec.seeds},
                      {"inputs", rec.inputs},
                      {"outputs", rec.outputs},
                      {"threads", threads},
                      {"duration_s", seconds}};
  const std::string manifest_path = (fs::path(rec.out).string()) + ".manifest.json";
  write_text_atomic(manifest_path, manifest.dump(2) + "\n");
  std::cerr << "manifest: " << manifest_path << '\n';
  return 0;
}

std::string escape(const std::string& s)
{
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

} // namespace

int main(int argc, char** argv)
{
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const Failure& f) {
    std::cerr << "error: code=" << f.code << " message=\"" << escape(f.message) << "\"\n";
    return f.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: code=internal message=\"" << escape(e.what()) << "\"\n";
    return 1;
  }
}
