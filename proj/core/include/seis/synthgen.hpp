#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seis/tensor.hpp"

namespace seis {

/// Recording layout of one gather: H time samples by W offset traces.
struct AcquisitionGeometry {
  int n_samples = 256;           // H
  int n_traces = 64;             // W
  double dt = 0.004;             // seconds per sample
  std::vector<double> offsets;   // meters, strictly increasing, size n_traces

  static AcquisitionGeometry regular(int n_samples, int n_traces, double dt,
                                     double first_offset, double offset_step);
  double record_length() const { return n_samples * dt; }
  void validate() const;
};

enum class EventKind { primary, multiple };

/// One reflection event tracked across the M CDP positions of a line. All
/// profiles vary smoothly with position; multiples keep v_true strictly
/// below v_nmo so residual moveout survives the correction.
struct EventFamily {
  EventKind kind = EventKind::primary;
  std::vector<double> t0;      // zero-offset times per CDP (s)
  std::vector<double> amp;     // amplitudes per CDP
  std::vector<double> v_true;  // hyperbolic moveout velocities (m/s)
  std::vector<double> v_nmo;   // correction velocities (m/s)
};

/// M spatially related gathers plus labels. gathers == labels + multiples
/// holds elementwise and bit-exactly by construction.
struct SeismicLine {
  Tensor gathers;    // [M,H,W] primaries + multiples, NMO-corrected
  Tensor labels;     // [M,H,W] primaries only
  Tensor multiples;  // [M,H,W]
  int line_id = 0;
  std::uint64_t seed = 0;
  std::vector<EventFamily> events;  // drawn event records, kept for diagnostics
};

struct GeneratorConfig {
  int n_lines = 15000;
  int cdps_per_line = 21;  // M
  AcquisitionGeometry geometry = AcquisitionGeometry::regular(256, 64, 0.004, 50.0, 25.0);

  int primaries_min = 4, primaries_max = 10;
  int multiples_min = 2, multiples_max = 6;
  double t0_min = 0.1, t0_max = 0.9;          // zero-offset time range (s)
  double amp_min = 0.3, amp_max = 1.0;        // magnitudes; sign is random
  double v_primary_min = 1500.0, v_primary_max = 3000.0;  // increases with t0
  double nmo_error_max = 0.05;                // |eps| bound on correction error
  double multiple_vel_factor_min = 0.75, multiple_vel_factor_max = 0.9;

  double t0_drift_max = 0.04;   // max lateral t0 excursion (s)
  double t0_step_cap = 0.01;    // smoothness cap per CDP step (s)
  double amp_drift_max = 0.3;   // relative lateral amplitude variation
  double vel_drift_max = 0.03;  // relative lateral velocity variation

  double ricker_peak_hz = 25.0;
  std::uint64_t seed = 42;
  double train_fraction = 0.85;
  bool debug_events = false;  // echo event records into the manifest

  /// 200 lines of 21 x 128 x 32, sized so that generate/train/eval cycles
  /// finish on a laptop CPU.
  static GeneratorConfig desk();
  /// 15,000 lines of 21 x 256 x 64.
  static GeneratorConfig paper();

  void validate() const;
};

std::string generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const std::string& text);

/// Ricker value (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2).
double ricker_value(double peak_freq, double t);

/// Symmetric sampled Ricker wavelet of length 2*half_length + 1 with peak
/// value 1 at the center sample.
std::vector<double> ricker_wavelet(double peak_freq, double dt, int half_length);

/// Time beyond which the wavelet envelope falls below 1e-10 of its peak;
/// events are truncated there during synthesis.
double ricker_halfwidth(double peak_freq);

/// Synthesizes one event of family `e` at CDP position m: per trace, the
/// wavelet is evaluated analytically on the sample grid centered at the
/// hyperbolic arrival sqrt(t0^2 + (x / v_true)^2). A non-finite v_true
/// places a flat event at t0. Arrivals beyond the record are truncated
/// silently.
Tensor synth_event_panel(const EventFamily& e, int m, const AcquisitionGeometry& g,
                         double peak_hz);

/// NMO correction: out(t0, x) = in(sqrt(t0^2 + (x / v_nmo)^2), x) with
/// linear interpolation between samples; reads past the record give 0. The
/// zero-offset trace is copied unchanged.
Tensor nmo_correct(const Tensor& panel, double v_nmo, const AcquisitionGeometry& g);

/// Draws event families with smooth lateral profiles and assembles the M
/// NMO-corrected panels. Pure function of (config, line_id).
SeismicLine generate_line(const GeneratorConfig& cfg, int line_id);

/// Writes manifest.json, gathers.bin and labels.bin ([N,M,H,W] tensor files)
/// under `dir`, streaming line by line. Deterministic given cfg.seed;
/// partial files are removed on failure.
void build_dataset(const GeneratorConfig& cfg, const std::filesystem::path& dir);

}  // namespace seis
