#pragma once

// Synthetic two-view X-ray records: a background re-assembled from 16 patches
// of a bundled source region, with a rendered catheter superimposed, plus an
// analytic force label derived from the catheter parameters.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hnet/dataset.hpp"
#include "hnet/errors.hpp"
#include "hnet/rng.hpp"
#include "hnet/tensor.hpp"

namespace hnet {

/// Grayscale intensity plane.
using Plane = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Difficulty { smooth, mixed };

inline const char* to_string(Difficulty d) { return d == Difficulty::smooth ? "smooth" : "mixed"; }

inline Difficulty parse_difficulty(const std::string& s) {
  if (s == "smooth") return Difficulty::smooth;
  if (s == "mixed") return Difficulty::mixed;
  throw ConfigError("difficulty must be 'smooth' or 'mixed', got '" + s + "'");
}

struct SynthConfig {
  Difficulty difficulty = Difficulty::smooth;
  std::size_t height = 64;
  std::size_t width = 64;
  double catheter_intensity = 0.15;
  std::size_t grid_cells = 16;
  std::uint64_t seed = 0;

  std::size_t grid_side() const {
    return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(grid_cells))));
  }

  void validate() const {
    const std::size_t s = grid_side();
    if (grid_cells == 0 || s * s != grid_cells) throw ConfigError("grid_cells must be a perfect square");
    if (height == 0 || width == 0 || height % s != 0 || width % s != 0)
      throw ConfigError("image size must be divisible by the grid side " + std::to_string(s));
    if (!(catheter_intensity >= 0.0 && catheter_intensity <= 1.0))
      throw ConfigError("catheter_intensity must lie in [0, 1]");
  }
};

/// Catheter state shared by both views. Ranges: kappa in [-1, 1],
/// depth in [1, 2], tip_angle in [-0.1, 0.1] rad.
struct SimCatheterParams {
  double kappa_a = 0.0, kappa_b = 0.0;
  double tip_angle = 0.0;
  double depth = 1.5;

  void validate() const {
    const auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!in(kappa_a, -1, 1) || !in(kappa_b, -1, 1)) throw ConfigError("curvature must lie in [-1, 1]");
    if (!in(depth, 1, 2)) throw ConfigError("insertion depth must lie in [1, 2]");
    if (!in(tip_angle, -0.1, 0.1)) throw ConfigError("tip angle must lie in [-0.1, 0.1]");
  }

  static SimCatheterParams sample(Rng& rng) {
    SimCatheterParams p;
    p.kappa_a = rng.uniform(-1.0, 1.0);
    p.kappa_b = rng.uniform(-1.0, 1.0);
    p.tip_angle = rng.uniform(-0.05, 0.05);
    p.depth = rng.uniform(1.0, 2.0);
    return p;
  }
};

inline constexpr double kForceLateral = 0.15;  // N per unit curvature
inline constexpr double kForceAxial = 0.05;    // N per unit depth and squared curvature

inline std::array<double, 3> analytic_force(const SimCatheterParams& p) {
  return {kForceLateral * p.kappa_a, kForceLateral * p.kappa_b,
          kForceAxial * p.depth * (p.kappa_a * p.kappa_a + p.kappa_b * p.kappa_b)};
}

/// Row-major side x side split. Region dims must be divisible by `side`.
inline std::vector<Plane> patchify(const Plane& region, std::size_t cells = 16) {
  const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(cells))));
  if (side <= 0 || static_cast<std::size_t>(side * side) != cells)
    throw ConfigError("patchify: cell count must be a perfect square");
  if (region.rows() % side != 0 || region.cols() % side != 0)
    throw ShapeError("patchify: region " + std::to_string(region.rows()) + "x" + std::to_string(region.cols()) +
                     " is not divisible into a " + std::to_string(side) + "x" + std::to_string(side) + " grid");
  const Eigen::Index ph = region.rows() / side, pw = region.cols() / side;
  std::vector<Plane> out;
  for (Eigen::Index r = 0; r < side; ++r)
    for (Eigen::Index c = 0; c < side; ++c) out.emplace_back(region.block(r * ph, c * pw, ph, pw));
  return out;
}

/// Inverse of patchify for patches given in row-major grid order.
inline Plane assemble(const std::vector<Plane>& patches) {
  const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(patches.size()))));
  if (patches.empty() || static_cast<std::size_t>(side * side) != patches.size())
    throw ShapeError("assemble: patch count must be a perfect square");
  const Eigen::Index ph = patches[0].rows(), pw = patches[0].cols();
  for (const auto& p : patches)
    if (p.rows() != ph || p.cols() != pw) throw ShapeError("assemble: patches have unequal dimensions");
  Plane out(ph * side, pw * side);
  for (Eigen::Index i = 0; i < side * side; ++i)
    out.block((i / side) * ph, (i % side) * pw, ph, pw) = patches[static_cast<std::size_t>(i)];
  return out;
}

/// Fills every grid cell with a patch drawn uniformly with replacement.
inline Plane compose_background(const std::vector<Plane>& patches, Rng& rng) {
  std::vector<Plane> chosen;
  chosen.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) chosen.push_back(patches[rng.below(patches.size())]);
  return assemble(chosen);
}

/// mask = 1 pixels take `intensity`; the plane is replicated to 3 channels.
inline Tensor<float> superimpose(const Plane& mask, const Plane& background, double intensity) {
  if (mask.rows() != background.rows() || mask.cols() != background.cols())
    throw ShapeError("superimpose: mask and background dimensions differ");
  const auto h = static_cast<std::size_t>(background.rows()), w = static_cast<std::size_t>(background.cols());
  Tensor<float> out(Shape{1, h, w, 3});
  const float cath = static_cast<float>(intensity);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto yy = static_cast<Eigen::Index>(y), xx = static_cast<Eigen::Index>(x);
      const float v = mask(yy, xx) >= 0.5f ? cath : background(yy, xx);
      for (std::size_t c = 0; c < 3; ++c) out.at(0, y, x, c) = v;
    }
  return out;
}

/// Bundled source texture, 2h x 2w, fixed per difficulty. Smooth mode is a
/// bright low-variance field; mixed mode adds dark and bright blobs.
inline Plane background_source(Difficulty d, std::size_t h, std::size_t w) {
  const auto H = static_cast<Eigen::Index>(2 * h), W = static_cast<Eigen::Index>(2 * w);
  Rng rng(d == Difficulty::smooth ? 0x5A00D7 : 0x3117ED);
  constexpr double kTwoPi = 6.283185307179586;
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.0, kTwoPi), rng.uniform(0.02, 0.04)});
  Plane src(H, W);
  for (Eigen::Index y = 0; y < H; ++y)
    for (Eigen::Index x = 0; x < W; ++x) {
      double v = 0.72;
      for (const auto& wv : waves)
        v += wv.amp * std::sin(kTwoPi * (wv.fy * static_cast<double>(y) / static_cast<double>(H) +
                                         wv.fx * static_cast<double>(x) / static_cast<double>(W)) +
                               wv.phase);
      src(y, x) = static_cast<float>(v);
    }
  if (d == Difficulty::mixed) {
    const std::size_t blobs = 40;
    const double side = static_cast<double>(std::min(h, w));
    for (std::size_t b = 0; b < blobs; ++b) {
      const double cy = rng.uniform(0.0, static_cast<double>(H)), cx = rng.uniform(0.0, static_cast<double>(W));
      const double radius = rng.uniform(side / 16.0, side / 5.0);
      const double amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 0.4);
      for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index x = 0; x < W; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          src(y, x) += static_cast<float>(amp * std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius)));
        }
    }
  }
  return src.cwiseMax(0.0f).cwiseMin(1.0f);
}

/// One view's background: a random h x w crop of the source, patchified and
/// recomposed.
inline Plane sample_background(const Plane& source, const SynthConfig& cfg, Rng& rng) {
  const auto h = static_cast<Eigen::Index>(cfg.height), w = static_cast<Eigen::Index>(cfg.width);
  const auto oy = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(source.rows() - h + 1)));
  const auto ox = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(source.cols() - w + 1)));
  const Plane region = source.block(oy, ox, h, w);
  return compose_background(patchify(region, cfg.grid_cells), rng);
}

/// Catheter mask for one view: a quadratic curve entering at the top centre,
/// reaching down to a depth-dependent length and bending sideways by kappa,
/// rotated by tip_angle about the entry point and thickened to radius
/// max(1, h/32).
inline Plane render_catheter(double kappa, double depth, double tip_angle, std::size_t h, std::size_t w) {
  Plane mask = Plane::Zero(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
  const double H = static_cast<double>(h), W = static_cast<double>(w);
  const double radius = std::max(1.0, H / 32.0);
  const double length = H * (0.3 + 0.3 * (depth - 1.0));
  const double bend = 0.25 * W;
  const double x0 = 0.5 * (W - 1.0), y0 = 0.0;
  const double ca = std::cos(tip_angle), sa = std::sin(tip_angle);
  const std::size_t steps = 4 * h;
  const auto r2 = radius * radius;
  for (std::size_t s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    const double ly = t * length, lx = kappa * bend * t * t;
    const double py = y0 + ca * ly - sa * lx, px = x0 + sa * ly + ca * lx;
    const auto ylo = static_cast<long>(std::floor(py - radius)), yhi = static_cast<long>(std::ceil(py + radius));
    const auto xlo = static_cast<long>(std::floor(px - radius)), xhi = static_cast<long>(std::ceil(px + radius));
    for (long y = std::max(0L, ylo); y <= std::min(static_cast<long>(h) - 1, yhi); ++y)
      for (long x = std::max(0L, xlo); x <= std::min(static_cast<long>(w) - 1, xhi); ++x) {
        const double dy = static_cast<double>(y) - py, dx = static_cast<double>(x) - px;
        if (dy * dy + dx * dx <= r2) mask(y, x) = 1.0f;
      }
  }
  return mask;
}

inline Tensor<float> plane_to_mask(const Plane& m) {
  const auto h = static_cast<std::size_t>(m.rows()), w = static_cast<std::size_t>(m.cols());
  Tensor<float> t(Shape{1, h, w, 1});
  for (std::size_t i = 0; i < h * w; ++i) t[i] = m.data()[i];
  return t;
}

/// Renders both views over freshly composed backgrounds drawn from `source`.
inline DatasetRecord simulate_record(const SimCatheterParams& p, const SynthConfig& cfg, const Plane& source,
                                     Rng& rng, std::string id = "sample") {
  p.validate();
  cfg.validate();
  DatasetRecord r;
  r.id = std::move(id);
  const Plane mask_a = render_catheter(p.kappa_a, p.depth, p.tip_angle, cfg.height, cfg.width);
  const Plane mask_b = render_catheter(p.kappa_b, p.depth, p.tip_angle, cfg.height, cfg.width);
  const Plane bg_a = sample_background(source, cfg, rng);
  const Plane bg_b = sample_background(source, cfg, rng);
  r.view_a = superimpose(mask_a, bg_a, cfg.catheter_intensity);
  r.view_b = superimpose(mask_b, bg_b, cfg.catheter_intensity);
  r.mask_a = plane_to_mask(mask_a);
  r.mask_b = plane_to_mask(mask_b);
  r.force = analytic_force(p);
  return r;
}

inline std::string record_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "r%06zu", index);
  return buf;
}

/// Record i depends only on (cfg.seed, i).
inline DatasetRecord generate_record(const SynthConfig& cfg, const Plane& source, std::size_t index) {
  Rng rng(derive_seed(cfg.seed, index));
  const SimCatheterParams p = SimCatheterParams::sample(rng);
  return simulate_record(p, cfg, source, rng, record_id(index));
}

inline std::vector<DatasetRecord> generate_records(const SynthConfig& cfg, std::size_t count) {
  cfg.validate();
  const Plane source = background_source(cfg.difficulty, cfg.height, cfg.width);
  std::vector<DatasetRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_record(cfg, source, i));
  return out;
}

/// Externally supplied foreground: masks for both views and a measured force.
struct ForegroundRecord {
  std::string id;
  Plane mask_a, mask_b;
  std::array<double, 3> force{};
};

/// Converts external mask+force records into synthetic X-ray records by
/// compositing each mask over a recomposed background.
inline std::vector<DatasetRecord> import_foregrounds(const std::vector<ForegroundRecord>& fg, const SynthConfig& cfg) {
  cfg.validate();
  const Plane source = background_source(cfg.difficulty, cfg.height, cfg.width);
  std::vector<DatasetRecord> out;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const auto& f = fg[i];
    for (const Plane* m : {&f.mask_a, &f.mask_b})
      if (static_cast<std::size_t>(m->rows()) != cfg.height || static_cast<std::size_t>(m->cols()) != cfg.width)
        throw ShapeError("import_foregrounds: record '" + f.id + "' mask size does not match the configured image size");
    Rng rng(derive_seed(cfg.seed, i));
    DatasetRecord r;
    r.id = f.id;
    r.view_a = superimpose(f.mask_a, sample_background(source, cfg, rng), cfg.catheter_intensity);
    r.view_b = superimpose(f.mask_b, sample_background(source, cfg, rng), cfg.catheter_intensity);
    r.mask_a = plane_to_mask(f.mask_a);
    r.mask_b = plane_to_mask(f.mask_b);
    r.force = f.force;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace hnet
