#include "seis/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "seis/errors.hpp"
#include "seis/rng.hpp"
#include "seis/tensor_io.hpp"

namespace seis {

using nlohmann::json;

// ---------------------------------------------------------------------------
// geometry / config

AcquisitionGeometry AcquisitionGeometry::regular(int n_samples, int n_traces,
                                                 double dt, double first_offset,
                                                 double offset_step) {
  AcquisitionGeometry g;
  g.n_samples = n_samples;
  g.n_traces = n_traces;
  g.dt = dt;
  g.offsets.resize(static_cast<std::size_t>(n_traces));
  for (int j = 0; j < n_traces; ++j)
    g.offsets[static_cast<std::size_t>(j)] = first_offset + offset_step * j;
  return g;
}

void AcquisitionGeometry::validate() const {
  if (n_samples < 2 || n_traces < 1) throw std::invalid_argument("geometry: degenerate panel size");
  if (!(dt > 0.0)) throw std::invalid_argument("geometry: dt must be positive");
  if (offsets.size() != static_cast<std::size_t>(n_traces))
    throw std::invalid_argument("geometry: offsets length must equal n_traces");
  for (std::size_t j = 1; j < offsets.size(); ++j)
    if (!(offsets[j] > offsets[j - 1]))
      throw std::invalid_argument("geometry: offsets must be strictly increasing");
}

GeneratorConfig GeneratorConfig::desk() {
  GeneratorConfig cfg;
  cfg.n_lines = 200;
  cfg.geometry = AcquisitionGeometry::regular(128, 32, 0.004, 50.0, 25.0);
  cfg.t0_min = 0.08;
  cfg.t0_max = 0.42;
  cfg.t0_drift_max = 0.03;
  return cfg;
}

GeneratorConfig GeneratorConfig::paper() { return GeneratorConfig{}; }

void GeneratorConfig::validate() const {
  geometry.validate();
  if (n_lines < 1) throw std::invalid_argument("config: n_lines must be >= 1");
  if (cdps_per_line < 2) throw std::invalid_argument("config: cdps_per_line must be >= 2");
  if (primaries_min < 0 || primaries_max < primaries_min)
    throw std::invalid_argument("config: bad primary event count range");
  if (multiples_min < 0 || multiples_max < multiples_min)
    throw std::invalid_argument("config: bad multiple event count range");
  if (!(t0_min > 0.0) || !(t0_max > t0_min))
    throw std::invalid_argument("config: bad t0 range");
  if (!(amp_min > 0.0) || !(amp_max >= amp_min))
    throw std::invalid_argument("config: bad amplitude range");
  if (!(v_primary_min > 0.0) || !(v_primary_max >= v_primary_min))
    throw std::invalid_argument("config: bad velocity range");
  if (!(nmo_error_max >= 0.0 && nmo_error_max < 0.5))
    throw std::invalid_argument("config: bad nmo_error_max");
  if (!(multiple_vel_factor_min > 0.0) ||
      !(multiple_vel_factor_max >= multiple_vel_factor_min) ||
      !(multiple_vel_factor_max < 1.0))
    throw std::invalid_argument("config: multiple velocity factors must lie in (0,1)");
  // Keeps multiples strictly under-corrected relative to their picked velocity.
  if (!(multiple_vel_factor_max < 1.0 - nmo_error_max))
    throw std::invalid_argument("config: multiple_vel_factor_max must stay below "
                                "1 - nmo_error_max");
  if (!(t0_drift_max >= 0.0) || !(t0_step_cap > 0.0))
    throw std::invalid_argument("config: bad lateral drift settings");
  if (!(amp_drift_max >= 0.0 && amp_drift_max < 1.0))
    throw std::invalid_argument("config: amp_drift_max must lie in [0,1)");
  if (!(vel_drift_max >= 0.0 && vel_drift_max < 0.5))
    throw std::invalid_argument("config: bad vel_drift_max");
  if (!(ricker_peak_hz > 0.0)) throw std::invalid_argument("config: bad wavelet frequency");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("config: train_fraction must lie in (0,1)");
}

std::string generator_config_to_json(const GeneratorConfig& c) {
  json j;
  j["n_lines"] = c.n_lines;
  j["cdps_per_line"] = c.cdps_per_line;
  j["geometry"] = {{"n_samples", c.geometry.n_samples},
                   {"n_traces", c.geometry.n_traces},
                   {"dt", c.geometry.dt},
                   {"offsets", c.geometry.offsets}};
  j["primaries_min"] = c.primaries_min;
  j["primaries_max"] = c.primaries_max;
  j["multiples_min"] = c.multiples_min;
  j["multiples_max"] = c.multiples_max;
  j["t0_min"] = c.t0_min;
  j["t0_max"] = c.t0_max;
  j["amp_min"] = c.amp_min;
  j["amp_max"] = c.amp_max;
  j["v_primary_min"] = c.v_primary_min;
  j["v_primary_max"] = c.v_primary_max;
  j["nmo_error_max"] = c.nmo_error_max;
  j["multiple_vel_factor_min"] = c.multiple_vel_factor_min;
  j["multiple_vel_factor_max"] = c.multiple_vel_factor_max;
  j["t0_drift_max"] = c.t0_drift_max;
  j["t0_step_cap"] = c.t0_step_cap;
  j["amp_drift_max"] = c.amp_drift_max;
  j["vel_drift_max"] = c.vel_drift_max;
  j["ricker_peak_hz"] = c.ricker_peak_hz;
  j["seed"] = c.seed;
  j["train_fraction"] = c.train_fraction;
  j["debug_events"] = c.debug_events;
  return j.dump(2);
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  json j = json::parse(text);
  GeneratorConfig c;
  c.n_lines = j.at("n_lines").get<int>();
  c.cdps_per_line = j.at("cdps_per_line").get<int>();
  const json& g = j.at("geometry");
  c.geometry.n_samples = g.at("n_samples").get<int>();
  c.geometry.n_traces = g.at("n_traces").get<int>();
  c.geometry.dt = g.at("dt").get<double>();
  c.geometry.offsets = g.at("offsets").get<std::vector<double>>();
  c.primaries_min = j.at("primaries_min").get<int>();
  c.primaries_max = j.at("primaries_max").get<int>();
  c.multiples_min = j.at("multiples_min").get<int>();
  c.multiples_max = j.at("multiples_max").get<int>();
  c.t0_min = j.at("t0_min").get<double>();
  c.t0_max = j.at("t0_max").get<double>();
  c.amp_min = j.at("amp_min").get<double>();
  c.amp_max = j.at("amp_max").get<double>();
  c.v_primary_min = j.at("v_primary_min").get<double>();
  c.v_primary_max = j.at("v_primary_max").get<double>();
  c.nmo_error_max = j.at("nmo_error_max").get<double>();
  c.multiple_vel_factor_min = j.at("multiple_vel_factor_min").get<double>();
  c.multiple_vel_factor_max = j.at("multiple_vel_factor_max").get<double>();
  c.t0_drift_max = j.at("t0_drift_max").get<double>();
  c.t0_step_cap = j.at("t0_step_cap").get<double>();
  c.amp_drift_max = j.at("amp_drift_max").get<double>();
  c.vel_drift_max = j.at("vel_drift_max").get<double>();
  c.ricker_peak_hz = j.at("ricker_peak_hz").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.debug_events = j.value("debug_events", false);
  return c;
}

// ---------------------------------------------------------------------------
// wavelet

double ricker_value(double peak_freq, double t) {
  const double a = std::numbers::pi * peak_freq * t;
  const double a2 = a * a;
  return (1.0 - 2.0 * a2) * std::exp(-a2);
}

std::vector<double> ricker_wavelet(double peak_freq, double dt, int half_length) {
  if (!(peak_freq > 0.0)) throw std::invalid_argument("ricker: peak_freq must be positive");
  if (half_length < 1) throw std::invalid_argument("ricker: half_length must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(2 * half_length + 1));
  for (int i = -half_length; i <= half_length; ++i)
    w[static_cast<std::size_t>(i + half_length)] = ricker_value(peak_freq, i * dt);
  return w;
}

double ricker_halfwidth(double peak_freq) {
  // exp(-pi^2 f^2 t^2) = 1e-10  =>  t = sqrt(ln 1e10) / (pi f)
  return std::sqrt(std::log(1e10)) / (std::numbers::pi * peak_freq);
}

// ---------------------------------------------------------------------------
// event synthesis and NMO

Tensor synth_event_panel(const EventFamily& e, int m, const AcquisitionGeometry& g,
                         double peak_hz) {
  const std::size_t mi = static_cast<std::size_t>(m);
  if (mi >= e.t0.size()) throw std::invalid_argument("synth_event_panel: bad CDP index");
  const double t0 = e.t0[mi], amp = e.amp[mi], v = e.v_true[mi];
  if (!(t0 > 0.0)) throw std::invalid_argument("synth_event_panel: t0 must be positive");
  if (std::isfinite(v) && !(v > 0.0))
    throw std::invalid_argument("synth_event_panel: velocity must be positive");

  const int H = g.n_samples, W = g.n_traces;
  Tensor panel({static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
  if (amp == 0.0) return panel;

  const double half = ricker_halfwidth(peak_hz);
  for (int j = 0; j < W; ++j) {
    const double x = g.offsets[static_cast<std::size_t>(j)];
    const double th = std::isfinite(v) ? std::sqrt(t0 * t0 + (x / v) * (x / v)) : t0;
    const int i_lo = std::max(0, static_cast<int>(std::ceil((th - half) / g.dt)));
    const int i_hi = std::min(H - 1, static_cast<int>(std::floor((th + half) / g.dt)));
    for (int i = i_lo; i <= i_hi; ++i)
      panel.at2(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +=
          amp * ricker_value(peak_hz, i * g.dt - th);
  }
  return panel;
}

Tensor nmo_correct(const Tensor& panel, double v_nmo, const AcquisitionGeometry& g) {
  if (!(v_nmo > 0.0)) throw std::invalid_argument("nmo_correct: v_nmo must be positive");
  const std::size_t H = static_cast<std::size_t>(g.n_samples);
  const std::size_t W = static_cast<std::size_t>(g.n_traces);
  if (panel.ndim() != 2 || panel.dim(0) != H || panel.dim(1) != W)
    throw std::invalid_argument("nmo_correct: panel shape does not match geometry");

  Tensor out({H, W});
  for (std::size_t j = 0; j < W; ++j) {
    const double x = g.offsets[j];
    if (x == 0.0) {
      for (std::size_t i = 0; i < H; ++i) out.at2(i, j) = panel.at2(i, j);
      continue;
    }
    const double xv2 = (x / v_nmo) * (x / v_nmo);
    for (std::size_t i = 0; i < H; ++i) {
      const double t0i = static_cast<double>(i) * g.dt;
      const double kf = std::sqrt(t0i * t0i + xv2) / g.dt;
      const std::size_t k0 = static_cast<std::size_t>(kf);
      if (k0 + 1 < H) {
        const double frac = kf - static_cast<double>(k0);
        out.at2(i, j) = panel.at2(k0, j) * (1.0 - frac) + panel.at2(k0 + 1, j) * frac;
      } else if (k0 < H) {
        const double frac = kf - static_cast<double>(k0);
        out.at2(i, j) = panel.at2(k0, j) * (1.0 - frac);
      }
      // beyond the record: stays 0
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// line generation

namespace {

/// Smooth lateral profile over M positions: quadratic in the normalized
/// position, scaled to a random magnitude within [0.25, 1] * max_abs, then
/// rescaled if any per-step change exceeds step_cap.
std::vector<double> smooth_profile(Rng& rng, int M, double max_abs,
                                   double step_cap = std::numeric_limits<double>::infinity()) {
  const double c0 = rng.uniform(-1.0, 1.0);
  const double c1 = rng.uniform(-1.0, 1.0);
  const double c2 = rng.uniform(-1.0, 1.0);
  const double target = max_abs * rng.uniform(0.25, 1.0);
  std::vector<double> v(static_cast<std::size_t>(M));
  double raw_max = 0.0;
  for (int m = 0; m < M; ++m) {
    const double xi = static_cast<double>(m) / static_cast<double>(M - 1) - 0.5;
    v[static_cast<std::size_t>(m)] = 0.5 * c0 + c1 * xi + c2 * (xi * xi - 1.0 / 12.0);
    raw_max = std::max(raw_max, std::fabs(v[static_cast<std::size_t>(m)]));
  }
  double scale = raw_max > 1e-12 ? target / raw_max : 0.0;
  double step_max = 0.0;
  for (int m = 0; m + 1 < M; ++m)
    step_max = std::max(step_max, std::fabs(v[static_cast<std::size_t>(m) + 1] -
                                            v[static_cast<std::size_t>(m)]) * scale);
  if (step_max > step_cap) scale *= step_cap / step_max;
  for (double& x : v) x *= scale;
  return v;
}

EventFamily draw_event(Rng& rng, const GeneratorConfig& cfg, EventKind kind,
                       const std::vector<double>& eps_profile) {
  const int M = cfg.cdps_per_line;
  EventFamily e;
  e.kind = kind;
  e.t0.resize(static_cast<std::size_t>(M));
  e.amp.resize(static_cast<std::size_t>(M));
  e.v_true.resize(static_cast<std::size_t>(M));
  e.v_nmo.resize(static_cast<std::size_t>(M));

  const double t0c = rng.uniform(cfg.t0_min, cfg.t0_max);
  const std::vector<double> t0_drift = smooth_profile(rng, M, cfg.t0_drift_max, cfg.t0_step_cap);

  // Velocity trend increases with event time, as picked velocities do.
  const double tn = (t0c - cfg.t0_min) / (cfg.t0_max - cfg.t0_min);
  const double v_trend_c =
      (cfg.v_primary_min + (cfg.v_primary_max - cfg.v_primary_min) * tn) *
      rng.uniform(0.95, 1.05);
  const std::vector<double> v_drift = smooth_profile(rng, M, cfg.vel_drift_max);

  const double ampc = rng.uniform(cfg.amp_min, cfg.amp_max) * rng.sign();
  const std::vector<double> amp_drift = smooth_profile(rng, M, cfg.amp_drift_max);

  const double mult_factor =
      kind == EventKind::multiple
          ? rng.uniform(cfg.multiple_vel_factor_min, cfg.multiple_vel_factor_max)
          : 1.0;

  for (int m = 0; m < M; ++m) {
    const std::size_t mi = static_cast<std::size_t>(m);
    e.t0[mi] = std::max(0.5 * cfg.t0_min, t0c + t0_drift[mi]);
    e.amp[mi] = ampc * (1.0 + amp_drift[mi]);
    const double v_picked = v_trend_c * (1.0 + v_drift[mi]);
    e.v_nmo[mi] = v_picked * (1.0 + eps_profile[mi]);
    e.v_true[mi] = v_picked * mult_factor;  // primaries: moveout equals pick
  }
  return e;
}

}  // namespace

SeismicLine generate_line(const GeneratorConfig& cfg, int line_id) {
  cfg.validate();
  const int M = cfg.cdps_per_line;
  const std::size_t H = static_cast<std::size_t>(cfg.geometry.n_samples);
  const std::size_t W = static_cast<std::size_t>(cfg.geometry.n_traces);

  SeismicLine line;
  line.line_id = line_id;
  line.seed = mix_seed(cfg.seed, 0x6c696e65ull /* "line" */, static_cast<std::uint64_t>(line_id));
  Rng rng(line.seed);

  const std::vector<double> eps_profile = smooth_profile(rng, M, cfg.nmo_error_max);
  const int n_pri = static_cast<int>(rng.range(cfg.primaries_min, cfg.primaries_max));
  const int n_mul = static_cast<int>(rng.range(cfg.multiples_min, cfg.multiples_max));
  for (int i = 0; i < n_pri; ++i)
    line.events.push_back(draw_event(rng, cfg, EventKind::primary, eps_profile));
  for (int i = 0; i < n_mul; ++i)
    line.events.push_back(draw_event(rng, cfg, EventKind::multiple, eps_profile));

  line.labels = Tensor({static_cast<std::size_t>(M), H, W});
  line.multiples = Tensor({static_cast<std::size_t>(M), H, W});
  line.gathers = Tensor({static_cast<std::size_t>(M), H, W});

  const std::size_t panel_n = H * W;
  for (int m = 0; m < M; ++m) {
    double* lp = line.labels.data() + static_cast<std::size_t>(m) * panel_n;
    double* mp = line.multiples.data() + static_cast<std::size_t>(m) * panel_n;
    for (const EventFamily& e : line.events) {
      const Tensor raw = synth_event_panel(e, m, cfg.geometry, cfg.ricker_peak_hz);
      const Tensor corrected =
          nmo_correct(raw, e.v_nmo[static_cast<std::size_t>(m)], cfg.geometry);
      double* dst = e.kind == EventKind::primary ? lp : mp;
      for (std::size_t i = 0; i < panel_n; ++i) dst[i] += corrected[i];
    }
    double* gp = line.gathers.data() + static_cast<std::size_t>(m) * panel_n;
    for (std::size_t i = 0; i < panel_n; ++i) gp[i] = lp[i] + mp[i];
  }
  return line;
}

void build_dataset(const GeneratorConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory: " + dir.string());

  const std::size_t N = static_cast<std::size_t>(cfg.n_lines);
  const std::size_t M = static_cast<std::size_t>(cfg.cdps_per_line);
  const std::size_t H = static_cast<std::size_t>(cfg.geometry.n_samples);
  const std::size_t W = static_cast<std::size_t>(cfg.geometry.n_traces);

  TensorFileWriter gathers(dir / "gathers.bin", {N, M, H, W});
  TensorFileWriter labels(dir / "labels.bin", {N, M, H, W});

  json events_echo = json::array();
  for (int li = 0; li < cfg.n_lines; ++li) {
    SeismicLine line = generate_line(cfg, li);
    gathers.append(line.gathers);
    labels.append(line.labels);
    if (cfg.debug_events) {
      json evs = json::array();
      for (const EventFamily& e : line.events)
        evs.push_back({{"kind", e.kind == EventKind::primary ? "primary" : "multiple"},
                       {"t0", e.t0},
                       {"amp", e.amp},
                       {"v_true", e.v_true},
                       {"v_nmo", e.v_nmo}});
      events_echo.push_back(std::move(evs));
    }
  }
  gathers.finish();
  labels.finish();

  const int train_count =
      static_cast<int>(std::llround(cfg.n_lines * cfg.train_fraction));
  json manifest;
  manifest["version"] = 1;
  manifest["kind"] = "seisicl-dataset";
  manifest["n_lines"] = cfg.n_lines;
  manifest["cdps_per_line"] = cfg.cdps_per_line;
  manifest["height"] = cfg.geometry.n_samples;
  manifest["width"] = cfg.geometry.n_traces;
  manifest["master_seed"] = cfg.seed;
  manifest["train_count"] = train_count;
  manifest["eval_count"] = cfg.n_lines - train_count;
  manifest["config"] = json::parse(generator_config_to_json(cfg));
  if (cfg.debug_events) manifest["events"] = std::move(events_echo);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  out.flush();
  if (!out) throw IoError("manifest write failed");
}

}  // namespace seis
