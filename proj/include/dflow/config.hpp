#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dflow/density_guidance.hpp"
#include "dflow/gaussian_mixture.hpp"
#include "dflow/integrators.hpp"
#include "dflow/math.hpp"
#include "dflow/schedules.hpp"
#include "dflow/stochastic_guidance.hpp"
#include "dflow/types.hpp"

namespace dflow {

using nlohmann::json;

/// {"kind": "vp"|"ve"|"fm", "T": 1.0, "lsnr_max": 10, "lsnr_min": -10}
inline NoiseSchedule schedule_from_json(const json& j) {
  try {
    const std::string kind = j.value("kind", "vp");
    const double T = j.value("T", 1.0);
    const double lmax = j.value("lsnr_max", 10.0);
    const double lmin = j.value("lsnr_min", -10.0);
    if (kind == "vp") return NoiseSchedule::vp(T, lmax, lmin);
    if (kind == "ve") return NoiseSchedule::ve(T, lmax, lmin);
    if (kind == "fm") return NoiseSchedule::fm(T, lmax, lmin);
    throw ConfigError("schedule: unknown kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
}

inline json schedule_to_json(const NoiseSchedule& s) {
  return {{"kind", to_string(s.kind())},
          {"T", s.horizon()},
          {"lsnr_max", s.lsnr_max()},
          {"lsnr_min", s.lsnr_min()}};
}

/// Either {"preset": "appC3"|"eqm2d"} or
/// {"weights": [...], "means": [[...], ...], "s2": 0.005}.
inline GaussianMixture mixture_from_json(const json& j) {
  try {
    if (j.contains("preset")) {
      const std::string p = j["preset"].get<std::string>();
      if (p == "appC3") return GaussianMixture::app_c3();
      if (p == "eqm2d") return GaussianMixture::eqm2d();
      throw ConfigError("mixture: unknown preset '" + p + "'");
    }
    const auto wj = j.at("weights");
    const auto mj = j.at("means");
    Vector w(wj.size());
    for (size_t i = 0; i < wj.size(); ++i) w[static_cast<Eigen::Index>(i)] = wj[i].get<double>();
    if (mj.empty()) throw ConfigError("mixture: empty means");
    const size_t d = mj[0].size();
    Matrix m(mj.size(), d);
    for (size_t k = 0; k < mj.size(); ++k) {
      if (mj[k].size() != d) throw ConfigError("mixture: ragged means");
      for (size_t i = 0; i < d; ++i)
        m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = mj[k][i].get<double>();
    }
    return GaussianMixture(std::move(w), std::move(m), j.at("s2").get<double>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mixture: ") + e.what());
  }
}

/// {"steps": 4096, "spacing": "lsnr"|"time", "t_end": 1e-3}
inline TimeGrid grid_from_json(const json& j, const NoiseSchedule& schedule) {
  try {
    const int steps = j.value("steps", 4096);
    const std::string spacing = j.value("spacing", "lsnr");
    const double t_end = j.value("t_end", 1e-3 * schedule.horizon());
    if (spacing != "lsnr" && spacing != "time")
      throw ConfigError("grid: spacing must be 'lsnr' or 'time'");
    return TimeGrid::sampling(schedule, steps, t_end,
                              spacing == "lsnr" ? Spacing::LogSnr : Spacing::Time);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
}

/// [{"lsnr_lo": -10, "lsnr_hi": -4, "r": 0.2}, ...]
inline NoiseWindowPolicy noise_policy_from_json(const json& j) {
  try {
    std::vector<NoiseWindowPolicy::Window> ws;
    for (const auto& wj : j)
      ws.push_back({wj.at("lsnr_lo").get<double>(), wj.at("lsnr_hi").get<double>(),
                    wj.at("r").get<double>()});
    return NoiseWindowPolicy(std::move(ws));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("noise windows: ") + e.what());
  }
}

inline uint64_t config_hash(const json& config) { return fnv1a_hash(config.dump()); }

/// Writes a run manifest next to the artifacts: the config, its hash and the
/// wall time. Every artifact of a run embeds the same config.
class RunManifest {
 public:
  RunManifest(std::string command, json config)
      : command_(std::move(command)), config_(std::move(config)),
        start_(std::chrono::steady_clock::now()) {}

  void add_output(const std::filesystem::path& p) { outputs_.push_back(p.string()); }

  void write(const std::filesystem::path& path) const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json j = {{"command", command_},
              {"config", config_},
              {"config_hash", config_hash(config_)},
              {"wall_time_s", wall},
              {"outputs", outputs_}};
    std::ofstream os(path);
    os << j.dump(2) << '\n';
  }

  const json& config() const { return config_; }

 private:
  std::string command_;
  json config_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

/// First line of every CSV artifact: the config that produced it.
inline void write_csv_config_header(std::ostream& os, const json& config) {
  os << "# config " << config.dump() << '\n';
}

/// JSON summary of a trajectory: final state, final tracked log-density and
/// the integrator settings that produced it.
inline json trajectory_summary(const DensityTrajectory& tr) {
  const Vector x = tr.final_state();
  json j = {{"t_end", tr.times.back()},
            {"x_end", std::vector<double>(x.data(), x.data() + x.size())},
            {"tracked_log_p", tr.final_log_density()},
            {"integrator", tr.integrator},
            {"steps", tr.times.size() - 1}};
  if (tr.seed != 0) j["seed"] = tr.seed;
  if (!tr.guidance.empty()) j["guidance"] = tr.guidance;
  return j;
}

}  // namespace dflow
