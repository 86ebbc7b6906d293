#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssdesc/binary_io.hpp"
#include "ssdesc/error.hpp"
#include "ssdesc/filters.hpp"
#include "ssdesc/homography.hpp"
#include "ssdesc/image.hpp"
#include "ssdesc/keypoints.hpp"
#include "ssdesc/model.hpp"
#include "ssdesc/parallel.hpp"
#include "ssdesc/rng.hpp"
#include "ssdesc/warp.hpp"

namespace ssdesc {

inline constexpr int kPatchHalf = static_cast<int>(kPatchSize) / 2;
inline constexpr std::size_t kPatchPixels = kPatchSize * kPatchSize;

/// Row-major size x size window whose top-left is round(center) - size/2.
inline std::vector<float> crop_patch(const GrayImage& img, Point2 center, int size = static_cast<int>(kPatchSize)) {
  const int left = static_cast<int>(std::lround(center.x)) - size / 2;
  const int top = static_cast<int>(std::lround(center.y)) - size / 2;
  if (left < 0 || top < 0 || left + size > img.width() || top + size > img.height()) {
    throw BorderError("crop window at (" + std::to_string(left) + ", " + std::to_string(top) + ") of side " +
                      std::to_string(size) + " leaves the " + std::to_string(img.width()) + "x" +
                      std::to_string(img.height()) + " image");
  }
  std::vector<float> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const auto row = img.row(top + y);
    std::copy_n(row.begin() + left, size, out.begin() + static_cast<std::size_t>(y) * size);
  }
  return out;
}

/// Warps `frame` by H and crops 128x128 around H(kp). Only the crop window of
/// the warped frame is evaluated; the result is identical to warping the whole
/// frame first. Returns nullopt when H(kp) is within 64 px of the border or
/// the window contains fill pixels.
inline std::optional<std::vector<float>> make_positive(const GrayImage& frame, const KeyPoint& kp, const Homography& h) {
  Point2 q;
  try {
    q = apply_homography(h, kp.location());
  } catch (const SingularProjectionError&) {
    return std::nullopt;
  }
  if (!(q.x >= kPatchHalf && q.x < frame.width() - kPatchHalf && q.y >= kPatchHalf &&
        q.y < frame.height() - kPatchHalf)) {
    return std::nullopt;
  }
  const double left = static_cast<double>(std::lround(q.x) - kPatchHalf);
  const double top = static_cast<double>(std::lround(q.y) - kPatchHalf);
  auto warped = warp(frame, h, static_cast<int>(kPatchSize), static_cast<int>(kPatchSize), {left, top});
  if (!warped.mask.all_valid()) return std::nullopt;
  const auto px = warped.image.pixels();
  return std::vector<float>(px.begin(), px.end());
}

inline std::vector<std::uint8_t> quantize_patch(std::span<const float> patch) {
  std::vector<std::uint8_t> out(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i) out[i] = quantize_u8(patch[i]);
  return out;
}

inline std::vector<float> dequantize_patch(std::span<const std::uint8_t> patch) {
  std::vector<float> out(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i) out[i] = dequantize_u8(patch[i]);
  return out;
}

/// Anchor and positive stored as 8-bit patches, plus the transform that made the positive.
struct PatchPair {
  std::vector<std::uint8_t> anchor;
  std::vector<std::uint8_t> positive;
  std::uint32_t frame_id = 0;
  KeyPoint kp;
  Homography h;

  friend bool operator==(const PatchPair&, const PatchPair&) = default;
};

struct PairDataset {
  std::vector<PatchPair> pairs;
  /// `key = value` snapshot of the generation settings.
  std::string provenance;
};

struct GenerationConfig {
  bool use_clahe = true;
  ClaheParams clahe;
  HarrisParams harris{.max_n = 5000};
  int max_keypoints = 200;  ///< per frame, after border filtering
  int transforms_per_keypoint = 2;
  int margin = kPatchHalf;
  TransformRanges ranges;  ///< `center` is replaced by the key-point
  std::uint64_t seed = 1;

  std::string describe() const {
    auto num = [](double v) { return detail::format_double(v); };
    std::string angles, scales;
    for (double a : ranges.angles_deg) angles += (angles.empty() ? "" : ",") + num(a);
    for (double s : ranges.scales) scales += (scales.empty() ? "" : ",") + num(s);
    return "angles_deg = " + angles + "\nclahe = " + (use_clahe ? "true" : "false") +
           "\nclahe_clip = " + num(clahe.clip_limit) + "\nclahe_tiles = " + std::to_string(clahe.tiles_x) + "x" +
           std::to_string(clahe.tiles_y) + "\nharris_k = " + num(harris.k) +
           "\nharris_nms_radius = " + std::to_string(harris.nms_radius) +
           "\nharris_relative_threshold = " + num(harris.relative_threshold) + "\nmargin = " + std::to_string(margin) +
           "\nmax_keypoints = " + std::to_string(max_keypoints) + "\nmax_translation = " + num(ranges.max_translation) +
           "\nper_kp = " + std::to_string(transforms_per_keypoint) + "\nscales = " + scales +
           "\nseed = " + std::to_string(seed) + "\n";
  }
};

struct GenerationStats {
  std::size_t kept_keypoints = 0;
  std::size_t rejected = 0;
  std::size_t pairs = 0;
};

/// Grayscale frame -> CLAHE (optional) -> the frame every patch is cut from.
inline GrayImage prepare_frame(const GrayImage& frame, const GenerationConfig& cfg) {
  return cfg.use_clahe ? clahe(frame, cfg.clahe) : frame;
}

/// Border-filtered Harris detections, strongest first, capped at max_keypoints.
inline std::vector<KeyPoint> training_keypoints(const GrayImage& prepared, const GenerationConfig& cfg) {
  auto kps = filter_border(detect_harris(prepared, cfg.harris), prepared.width(), prepared.height(), cfg.margin);
  if (static_cast<int>(kps.size()) > cfg.max_keypoints) kps.resize(static_cast<std::size_t>(std::max(0, cfg.max_keypoints)));
  return kps;
}

/// Builds anchor/positive pairs from every frame. Frame i uses its own random
/// stream derived from the seed, so the result is a deterministic function of
/// (frames, cfg) regardless of `threads`.
inline PairDataset generate_pairs(const std::vector<GrayImage>& frames, const GenerationConfig& cfg,
                                  GenerationStats* stats = nullptr, int threads = 1) {
  if (frames.empty()) throw DataError("pair generation needs at least one frame");
  if (cfg.transforms_per_keypoint < 1) throw ParameterError("transforms per key-point must be >= 1");
  struct FrameOutput {
    std::vector<PatchPair> pairs;
    std::size_t kept = 0, rejected = 0;
  };
  std::vector<FrameOutput> per_frame(frames.size());
  parallel_for(frames.size(), threads, [&](std::size_t f) {
    const GrayImage prepared = prepare_frame(frames[f], cfg);
    const auto kps = training_keypoints(prepared, cfg);
    Rng rng = derive_rng(cfg.seed, f);
    FrameOutput& out = per_frame[f];
    out.kept = kps.size();
    for (const KeyPoint& kp : kps) {
      const auto anchor = quantize_patch(crop_patch(prepared, kp.location()));
      std::vector<Homography> used;
      for (int t = 0; t < cfg.transforms_per_keypoint; ++t) {
        Homography h;
        for (int attempt = 0; attempt < 64; ++attempt) {
          TransformRanges r = cfg.ranges;
          r.center = kp.location();
          do {
            r.rotation = coin(rng);
            r.scale = coin(rng);
            r.translation = coin(rng);
          } while (!r.rotation && !r.scale && !r.translation);
          h = random_homography(rng, r);
          if (std::find(used.begin(), used.end(), h) == used.end()) break;
        }
        if (std::find(used.begin(), used.end(), h) != used.end()) {
          ++out.rejected;
          continue;
        }
        used.push_back(h);
        auto positive = make_positive(prepared, kp, h);
        if (!positive) {
          ++out.rejected;
          continue;
        }
        out.pairs.push_back({anchor, quantize_patch(*positive), static_cast<std::uint32_t>(f), kp, h});
      }
    }
  });
  PairDataset ds;
  ds.provenance = cfg.describe();
  GenerationStats s;
  for (auto& fo : per_frame) {
    s.kept_keypoints += fo.kept;
    s.rejected += fo.rejected;
    for (auto& p : fo.pairs) ds.pairs.push_back(std::move(p));
  }
  s.pairs = ds.pairs.size();
  if (stats) *stats = s;
  if (ds.pairs.empty()) throw DataError("pair generation produced an empty dataset");
  return ds;
}

// Archive: "SSLPAIR1" | u32 count | per pair: u32 frame_id, f32 x, y, response, scale,
// f64 H[9] row-major, u8 anchor[128*128], u8 positive[128*128] | u32 CRC32.
inline constexpr std::string_view kPairMagic = "SSLPAIR1";
inline constexpr std::size_t kPairHeaderBytes = 8 + 4;
inline constexpr std::size_t kPairRecordBytes = 4 + 4 * 4 + 9 * 8 + 2 * kPatchPixels;

inline std::vector<std::uint8_t> serialize_dataset(const PairDataset& ds) {
  ByteWriter w;
  w.str(kPairMagic);
  w.u32(static_cast<std::uint32_t>(ds.pairs.size()));
  for (const auto& p : ds.pairs) {
    if (p.anchor.size() != kPatchPixels || p.positive.size() != kPatchPixels) {
      throw ShapeError("pair patches must be 128x128");
    }
    w.u32(p.frame_id);
    w.f32(static_cast<float>(p.kp.x));
    w.f32(static_cast<float>(p.kp.y));
    w.f32(static_cast<float>(p.kp.response));
    w.f32(static_cast<float>(p.kp.scale));
    for (double v : p.h.row_major()) w.f64(v);
    w.bytes(p.anchor.data(), p.anchor.size());
    w.bytes(p.positive.data(), p.positive.size());
  }
  w.crc_trailer();
  return std::move(w).take();
}

inline PairDataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kPairMagic.size() || r.str(kPairMagic.size()) != kPairMagic) {
    throw FormatError("not a pair archive (bad magic)");
  }
  const std::uint32_t count = r.u32();
  PairDataset ds;
  ds.pairs.reserve(std::min<std::size_t>(count, r.remaining() / kPairRecordBytes + 1));
  for (std::uint32_t i = 0; i < count; ++i) {
    PatchPair p;
    p.frame_id = r.u32();
    p.kp.x = r.f32();
    p.kp.y = r.f32();
    p.kp.response = r.f32();
    p.kp.scale = r.f32();
    const std::size_t h_at = r.offset();
    std::array<double, 9> h{};
    for (double& v : h) v = r.f64();
    const auto a = r.view(kPatchPixels);
    const auto b = r.view(kPatchPixels);
    try {
      p.h = Homography::from_row_major(h);
    } catch (const NumericalError& e) {
      throw CorruptionError(std::string("invalid homography: ") + e.what(), h_at);
    }
    p.anchor.assign(a.begin(), a.end());
    p.positive.assign(b.begin(), b.end());
    ds.pairs.push_back(std::move(p));
  }
  if (r.remaining() != 4) {
    if (r.remaining() < 4) throw CorruptionError("pair archive truncated before checksum", r.offset());
    throw CorruptionError("trailing bytes after pair records", r.offset());
  }
  ByteReader::verify_crc_trailer(bytes, "pair archive");
  return ds;
}

/// Writes the archive and, when provenance is set, `<path>.provenance` beside it.
inline void save_dataset(const PairDataset& ds, const std::string& path) {
  write_binary_file(path, serialize_dataset(ds));
  if (!ds.provenance.empty()) {
    const std::vector<std::uint8_t> text(ds.provenance.begin(), ds.provenance.end());
    write_binary_file(path + ".provenance", text);
  }
}

inline PairDataset load_dataset(const std::string& path) {
  const auto bytes = read_binary_file(path);
  PairDataset ds = deserialize_dataset(bytes);
  std::ifstream prov(path + ".provenance", std::ios::binary);
  if (prov) ds.provenance.assign(std::istreambuf_iterator<char>(prov), std::istreambuf_iterator<char>());
  return ds;
}

}  // namespace ssdesc
