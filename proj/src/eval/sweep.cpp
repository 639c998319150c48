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

#include "dtformer/eval/sweep.hpp"

#include "dtformer/errors.hpp"
#include "dtformer/nn/predict.hpp"
#include "dtformer/random.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace dtf::eval {

Method parse_method(std::string_view name)
{
  if (name == "ols") return Method::Ols;
  if (name == "cwlls") return Method::Cwlls;
  if (name == "cnls") return Method::Cnls;
  if (name == "model-s") return Method::ModelS;
  if (name == "model-st") return Method::ModelST;
  throw Error(ErrorCode::InvalidArgument,
              "unknown method '" + std::string(name) + "' (ols|cwlls|cnls|model-s|model-st)");
}

const char* method_name(Method m) noexcept
{
  switch (m) {
  case Method::Ols: return "ols";
  case Method::Cwlls: return "cwlls";
  case Method::Cnls: return "cnls";
  case Method::ModelS: return "model-s";
  case Method::ModelST: return "model-st";
  }
  return "?";
}

bool is_learned(Method m) noexcept { return m == Method::ModelS || m == Method::ModelST; }

Volume4D estimate_tensors(Method method, const Volume4D& dwi, const GradientScheme& scheme, const Volume4D* mask,
                          const Estimators& est)
{
  if (dwi.channels() != scheme.size())
    throw ShapeError("estimate", "volume has " + std::to_string(dwi.channels()) + " channels, scheme has " +
                                     std::to_string(scheme.size()) + " entries");
  switch (method) {
  case Method::Ols: return fit_volume(dwi, scheme, FitMethod::Ols, est.cnls);
  case Method::Cwlls: return fit_volume(dwi, scheme, FitMethod::Cwlls, est.cnls);
  case Method::Cnls: return fit_volume(dwi, scheme, FitMethod::Cnls, est.cnls);
  case Method::ModelS:
  case Method::ModelST: {
    const nn::Model* m = method == Method::ModelS ? est.model_s : est.model_st;
    if (!m) throw Error(ErrorCode::MissingCheckpoint, std::string(method_name(method)) + " needs a trained checkpoint");
    const nn::ModelKind want = method == Method::ModelS ? nn::ModelKind::S : nn::ModelKind::ST;
    if (m->kind() != want)
      throw Error(ErrorCode::InvalidArgument, std::string("checkpoint holds a Model ") +
                                                  (m->kind() == nn::ModelKind::S ? "S" : "ST") + ", expected " +
                                                  (want == nn::ModelKind::S ? "S" : "ST"));
    return nn::predict_volume(*m, nn::normalize_signals(dwi, scheme, m->config()), mask, est.inference_stride);
  }
  }
  throw Error(ErrorCode::Internal, "unhandled method");
}

void SweepConfig::validate() const
{
  if (snr_db.empty() && !include_clean) throw Error(ErrorCode::InvalidArgument, "sweep has no noise levels");
  std::set<double> seen;
  for (double s : snr_db) {
    if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "sweep SNR levels must be finite");
    if (!seen.insert(s).second) throw Error(ErrorCode::InvalidArgument, "sweep SNR levels must be distinct");
  }
  if (repetitions < 1) throw Error(ErrorCode::InvalidArgument, "sweep needs at least one repetition");
  if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "sweep needs at least one method");
}

const MetricsReport& SweepResult::mean(double snr_db, Method m) const
{
  for (const auto& e : means)
    if ((e.snr_db == snr_db || (std::isinf(e.snr_db) && std::isinf(snr_db))) && e.report.method == method_name(m))
      return e.report;
  throw Error(ErrorCode::InvalidArgument, "sweep has no entry for that SNR and method");
}

namespace {

nlohmann::json snr_json(double s)
{
  if (std::isinf(s)) return "inf";
  return s;
}

std::string snr_text(double s)
{
  if (std::isinf(s)) return "inf";
  std::ostringstream o;
  o << s;
  return o.str();
}

MetricSet mean_metrics(const std::vector<const MetricSet*>& sets)
{
  MetricSet m;
  const double k = static_cast<double>(sets.size());
  for (const auto* s : sets) {
    m.tensor_error += s->tensor_error / k;
    m.md_error += s->md_error / k;
    m.fa_error += s->fa_error / k;
    m.angle_error_deg += s->angle_error_deg / k;
  }
  m.voxels = sets.front()->voxels;
  m.angle_voxels = sets.front()->angle_voxels;
  return m;
}

} // namespace

nlohmann::json SweepResult::to_json() const
{
  nlohmann::json j{{"entries", nlohmann::json::array()}, {"means", nlohmann::json::array()}};
  for (const auto& e : entries)
    j["entries"].push_back({{"snr_db", snr_json(e.snr_db)}, {"repetition", e.repetition}, {"report", e.report.to_json()}});
  for (const auto& e : means) j["means"].push_back({{"snr_db", snr_json(e.snr_db)}, {"report", e.report.to_json()}});
  return j;
}

std::string SweepResult::to_csv() const
{
  std::ostringstream out;
  out << "snr_db,repetition,method,region,metric,value\n";
  auto emit = [&out](const SweepEntry& e, const std::string& rep) {
    const std::string body = reports_to_csv({e.report});
    std::istringstream lines(body);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) out << snr_text(e.snr_db) << ',' << rep << ',' << line << '\n';
  };
  for (const auto& e : entries) emit(e, std::to_string(e.repetition));
  for (const auto& e : means) emit(e, "mean");
  return out.str();
}

SweepResult noise_sweep(const Phantom& phantom, const GradientScheme& scheme, const SweepConfig& cfg,
                        const Estimators& est)
{
  cfg.validate();
  for (Method m : cfg.methods)
    if ((m == Method::ModelS && !est.model_s) || (m == Method::ModelST && !est.model_st))
      throw Error(ErrorCode::MissingCheckpoint, std::string(method_name(m)) + " needs a trained checkpoint");

  const Volume4D clean = synthesize_dwi(phantom.tensors, phantom.s0, scheme);
  const Volume4D mask = nn::foreground_mask(phantom.labels);
  const double ref = reference_amplitude(phantom.s0);

  std::vector<double> levels;
  if (cfg.include_clean) levels.push_back(std::numeric_limits<double>::infinity());
  levels.insert(levels.end(), cfg.snr_db.begin(), cfg.snr_db.end());

  SweepResult result;
  for (double snr : levels) {
    const std::size_t reps = std::isinf(snr) ? 1 : cfg.repetitions;
    for (std::size_t r = 0; r < reps; ++r) {
      const NoiseSpec noise{snr, ref, cfg.seed + 0x9e3779b97f4a7c15ull * (r + 1)};
      const Volume4D dwi = add_rician_noise(clean, noise);
      for (Method m : cfg.methods) {
        const Volume4D pred = estimate_tensors(m, dwi, scheme, &mask, est);
        result.entries.push_back(
            {snr, static_cast<int>(r), compare_volumes(pred, phantom.tensors, &mask, &phantom.labels, method_name(m))});
      }
    }
  }

  for (double snr : levels)
    for (Method m : cfg.methods) {
      std::vector<const SweepEntry*> group;
      for (const auto& e : result.entries)
        if ((e.snr_db == snr || (std::isinf(e.snr_db) && std::isinf(snr))) && e.report.method == method_name(m))
          group.push_back(&e);
      SweepEntry mean{snr, -1, group.front()->report};
      std::vector<const MetricSet*> overall;
      for (const auto* e : group) overall.push_back(&e->report.overall);
      mean.report.overall = mean_metrics(overall);
      for (std::size_t k = 0; k < mean.report.regions.size(); ++k) {
        std::vector<const MetricSet*> reg;
        for (const auto* e : group) reg.push_back(&e->report.regions[k].metrics);
        mean.report.regions[k].metrics = mean_metrics(reg);
      }
      result.means.push_back(std::move(mean));
    }
  return result;
}

} // namespace dtf::eval
