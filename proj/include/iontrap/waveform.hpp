#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "iontrap/control.hpp"
#include "iontrap/error.hpp"

namespace iontrap {

inline constexpr double default_update_rate = 50e6;  // Hz

/// Sampled multi-channel voltages. Sample k sits at t = k / update_rate.
class Waveform {
 public:
  Waveform() = default;

  Waveform(std::vector<std::string> ids, double update_rate, std::vector<std::vector<double>> channels)
      : ids_(std::move(ids)), rate_(update_rate), channels_(std::move(channels)) {
    if (!(rate_ > 0.0) || !std::isfinite(rate_)) throw Error(ErrorKind::InvalidArgument, "update rate must be positive");
    if (ids_.size() != channels_.size()) throw Error(ErrorKind::DimensionMismatch, "one id per channel");
    for (const auto& c : channels_) {
      if (c.size() != channels_.front().size())
        throw Error(ErrorKind::DimensionMismatch, "all channels must have the same length");
      for (double v : c)
        if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "waveform samples must be finite");
    }
  }

  std::size_t channel_count() const { return channels_.size(); }
  std::size_t length() const { return channels_.empty() ? 0 : channels_.front().size(); }
  double update_rate() const { return rate_; }
  double duration() const { return static_cast<double>(length()) / rate_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& channel(std::size_t k) const { return channels_.at(k); }
  const std::vector<std::vector<double>>& channels() const { return channels_; }
  double time(std::size_t k) const { return static_cast<double>(k) / rate_; }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t k = 0; k < ids_.size(); ++k)
      if (ids_[k] == id) return k;
    throw Error(ErrorKind::UnknownKind, "no waveform channel '" + id + "'");
  }

  bool operator==(const Waveform& o) const = default;

 private:
  std::vector<std::string> ids_;
  double rate_ = default_update_rate;
  std::vector<std::vector<double>> channels_;
};

enum class RampShape { Linear, Smoothstep, Sine };

inline const char* to_string(RampShape s) {
  switch (s) {
    case RampShape::Linear: return "linear";
    case RampShape::Smoothstep: return "smoothstep";
    case RampShape::Sine: return "sine";
  }
  return "?";
}

inline RampShape parse_ramp_shape(const std::string& s) {
  if (s == "linear" || s == "LINEAR") return RampShape::Linear;
  if (s == "smoothstep" || s == "SMOOTHSTEP") return RampShape::Smoothstep;
  if (s == "sine" || s == "SINE") return RampShape::Sine;
  throw Error(ErrorKind::UnknownKind, "unknown ramp shape '" + s + "'");
}

/// Progress profile on [0, 1] with f(0) = 0 and f(1) = 1 exactly.
inline double ramp_profile(RampShape shape, double s) {
  switch (shape) {
    case RampShape::Linear: return s;
    case RampShape::Smoothstep: return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
    case RampShape::Sine: return s >= 1.0 ? 1.0 : 0.5 * (1.0 - std::cos(std::numbers::pi * s));
  }
  return s;
}

inline std::vector<std::string> default_channel_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < n; ++k) ids.push_back("ch" + std::to_string(k));
  return ids;
}

inline std::size_t sample_count(double duration, double update_rate) {
  if (!(duration >= 0.0) || !(update_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "need duration >= 0 and rate > 0");
  return static_cast<std::size_t>(std::llround(duration * update_rate));
}

/// Constant output of one control set.
inline Waveform make_static(const ControlSet& set, double duration, double update_rate = default_update_rate,
                            std::vector<std::string> ids = {}) {
  const Eigen::VectorXd v = set.volts();
  if (ids.empty()) ids = default_channel_ids(static_cast<std::size_t>(v.size()));
  const std::size_t n = sample_count(duration, update_rate);
  std::vector<std::vector<double>> ch;
  for (Eigen::Index k = 0; k < v.size(); ++k) ch.emplace_back(n, v[k]);
  return Waveform(std::move(ids), update_rate, std::move(ch));
}

/// Interpolates U_A v_A -> U_B v_B. The first sample equals set A and the last
/// sample equals set B exactly.
inline Waveform make_ramp(const ControlSet& a, const ControlSet& b, double t_ramp, RampShape shape,
                          double update_rate = default_update_rate, std::vector<std::string> ids = {}) {
  const Eigen::VectorXd va = a.volts(), vb = b.volts();
  if (va.size() != vb.size()) throw Error(ErrorKind::DimensionMismatch, "ramp endpoints differ in electrode count");
  if (!(t_ramp > 0.0)) throw Error(ErrorKind::InvalidArgument, "ramp duration must be positive");
  const std::size_t n = sample_count(t_ramp, update_rate);
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "ramp shorter than two samples");
  if (ids.empty()) ids = default_channel_ids(static_cast<std::size_t>(va.size()));
  std::vector<std::vector<double>> ch(static_cast<std::size_t>(va.size()), std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const double f = ramp_profile(shape, static_cast<double>(k) / static_cast<double>(n - 1));
    // a + f (b - a) keeps equal endpoints exactly constant
    for (Eigen::Index c = 0; c < va.size(); ++c)
      ch[static_cast<std::size_t>(c)][k] = k + 1 == n ? vb[c] : va[c] + f * (vb[c] - va[c]);
  }
  return Waveform(std::move(ids), update_rate, std::move(ch));
}

/// Adds amp sin(omega_exc t) to one channel for samples with t in [t_start, t_start + t_window).
inline Waveform add_tone(const Waveform& wf, const std::string& channel_id, double omega_exc, double amp,
                         double t_start, double t_window) {
  if (!(omega_exc >= 0.0) || omega_exc >= std::numbers::pi * wf.update_rate())
    throw Error(ErrorKind::InvalidArgument, "tone frequency violates the Nyquist limit of the update rate");
  if (!(t_window >= 0.0) || !(t_start >= 0.0)) throw Error(ErrorKind::InvalidArgument, "tone window must be non-negative");
  const std::size_t c = wf.index_of(channel_id);
  const std::size_t k0 = sample_count(t_start, wf.update_rate());
  const std::size_t k1 = k0 + sample_count(t_window, wf.update_rate());
  if (k1 > wf.length()) throw Error(ErrorKind::InvalidArgument, "tone window extends past the waveform");
  auto ch = wf.channels();
  if (amp != 0.0)
    for (std::size_t k = k0; k < k1; ++k) ch[c][k] += amp * std::sin(omega_exc * wf.time(k));
  return Waveform(wf.ids(), wf.update_rate(), std::move(ch));
}

/// Plays b after a; channel ids and rates must match.
inline Waveform concatenate(const Waveform& a, const Waveform& b) {
  if (a.ids() != b.ids() || a.update_rate() != b.update_rate())
    throw Error(ErrorKind::DimensionMismatch, "waveforms differ in channels or update rate");
  auto ch = a.channels();
  for (std::size_t c = 0; c < ch.size(); ++c) ch[c].insert(ch[c].end(), b.channel(c).begin(), b.channel(c).end());
  return Waveform(a.ids(), a.update_rate(), std::move(ch));
}

/// Sum over channels of v_hat-weighted samples; recovers U(t) when every
/// sample is a multiple of one unit control vector.
inline std::vector<double> project_amplitude(const Waveform& wf, const Eigen::VectorXd& v_hat) {
  if (static_cast<std::size_t>(v_hat.size()) != wf.channel_count())
    throw Error(ErrorKind::DimensionMismatch, "projection vector does not match channel count");
  std::vector<double> u(wf.length(), 0.0);
  for (std::size_t c = 0; c < wf.channel_count(); ++c)
    for (std::size_t k = 0; k < wf.length(); ++k) u[k] += v_hat[static_cast<Eigen::Index>(c)] * wf.channel(c)[k];
  return u;
}

// ---------------------------------------------------------------------------
// Binary format, little-endian:
//   0  char[8]  "IONWAVE1"
//   8  u32      channel count
//  12  u32      reserved (0)
//  16  u64      samples per channel
//  24  f64      update rate, Hz
//  32  f64[len][channels], sample-major

inline constexpr char waveform_magic[8] = {'I', 'O', 'N', 'W', 'A', 'V', 'E', '1'};
inline constexpr std::size_t waveform_header_bytes = 32;

inline std::size_t waveform_file_size(std::size_t channels, std::size_t length) {
  return waveform_header_bytes + 8 * channels * length;
}

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_waveform(const Waveform& wf) {
  std::string out(waveform_magic, 8);
  detail::put_le(out, wf.channel_count(), 4);
  detail::put_le(out, 0, 4);
  detail::put_le(out, wf.length(), 8);
  detail::put_le(out, std::bit_cast<std::uint64_t>(wf.update_rate()), 8);
  out.reserve(waveform_file_size(wf.channel_count(), wf.length()));
  for (std::size_t k = 0; k < wf.length(); ++k)
    for (std::size_t c = 0; c < wf.channel_count(); ++c) detail::put_le(out, std::bit_cast<std::uint64_t>(wf.channel(c)[k]), 8);
  return out;
}

inline Waveform decode_waveform(const std::string& bytes, std::vector<std::string> ids = {}) {
  if (bytes.size() < waveform_header_bytes || std::memcmp(bytes.data(), waveform_magic, 8) != 0)
    throw Error(ErrorKind::Schema, "not a waveform file");
  const std::size_t nch = detail::get_le(bytes, 8, 4);
  const std::size_t len = detail::get_le(bytes, 16, 8);
  const double rate = std::bit_cast<double>(detail::get_le(bytes, 24, 8));
  if (nch != 0 && len > (bytes.size() / 8) / nch) throw Error(ErrorKind::Schema, "waveform header length is implausible");
  if (bytes.size() != waveform_file_size(nch, len)) throw Error(ErrorKind::Schema, "waveform file size does not match its header");
  if (ids.empty()) ids = default_channel_ids(nch);
  std::vector<std::vector<double>> ch(nch, std::vector<double>(len));
  std::size_t at = waveform_header_bytes;
  for (std::size_t k = 0; k < len; ++k)
    for (std::size_t c = 0; c < nch; ++c, at += 8) ch[c][k] = std::bit_cast<double>(detail::get_le(bytes, at, 8));
  return Waveform(std::move(ids), rate, std::move(ch));
}

inline void export_waveform(const Waveform& wf, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  const std::string bytes = encode_waveform(wf);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
}

inline Waveform import_waveform(const std::string& path, std::vector<std::string> ids = {}) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_waveform(ss.str(), std::move(ids));
}

/// CSV: header "t_s,<id>,..." then one row per sample, 17 significant digits.
inline std::string waveform_csv(const Waveform& wf) {
  std::ostringstream os;
  os << std::setprecision(17) << "t_s";
  for (const auto& id : wf.ids()) os << ',' << id;
  os << '\n';
  for (std::size_t k = 0; k < wf.length(); ++k) {
    os << wf.time(k);
    for (std::size_t c = 0; c < wf.channel_count(); ++c) os << ',' << wf.channel(c)[k];
    os << '\n';
  }
  return os.str();
}

}  // namespace iontrap
