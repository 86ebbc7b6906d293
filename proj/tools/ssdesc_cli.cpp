// ssdesc: command-line front end for the descriptor toolkit.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ssdesc.hpp"

namespace fs = std::filesystem;
using namespace ssdesc;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct GlobalOptions {
  std::uint64_t seed = 1;
  int threads = 1;
  bool deterministic = false;
  bool verbose = false;

  int workers() const { return deterministic ? 1 : std::max(1, threads); }
};

void log_line(const GlobalOptions& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << "\n";
}

fs::path output_dir_of(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
}

// Paths are reduced to file names so identical runs in different directories
// produce identical provenance files.
void write_provenance(const fs::path& dir, const std::string& command, const GlobalOptions& g,
                      const std::string& settings) {
  ensure_dir(dir);
  const fs::path file = dir / (command + ".provenance.txt");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write '" + file.string() + "'");
  out << "tool = ssdesc " << SSDESC_VERSION << "\ncommand = " << command << "\nseed = " << g.seed
      << "\ndeterministic = " << (g.deterministic ? "true" : "false") << "\n"
      << settings;
}

std::string name_of(const std::string& path) { return fs::path(path).filename().string(); }

std::vector<fs::path> list_frames(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("frame directory '" + dir + "' does not exist");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".pgm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no .png or .pgm frames in '" + dir + "'");
  return out;
}

std::vector<GrayImage> load_frames(const std::string& dir) {
  std::vector<GrayImage> frames;
  for (const auto& p : list_frames(dir)) frames.push_back(load_image(p.string()));
  return frames;
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  int w = 0, h = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    w = std::stoi(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    h = std::stoi(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw ParameterError("size must look like WIDTHxHEIGHT, got '" + s + "'");
  }
  if (w < 32 || h < 32) throw ParameterError("frame size must be at least 32x32");
  return {w, h};
}

struct PipelineFlags {
  bool no_clahe = false;
  int max_kp = 200;
  bool mutual = false;
  std::optional<double> max_dist;
  double pe = kDefaultProjectionError;

  void add(CLI::App* app, bool matching) {
    app->add_flag("--no-clahe", no_clahe, "Skip CLAHE before detection");
    app->add_option("--max-kp", max_kp, "Key-points per frame after border filtering")->capture_default_str();
    if (matching) {
      app->add_flag("--mutual", mutual, "Keep only mutual nearest neighbours");
      app->add_option("--max-dist", max_dist, "Drop matches farther than this descriptor distance");
    }
  }

  PipelineConfig config() const {
    PipelineConfig c;
    c.use_clahe = !no_clahe;
    c.harris.max_n = max_kp;
    c.match.mutual = mutual;
    c.match.max_distance = max_dist;
    c.pe = pe;
    return c;
  }

  std::string describe() const {
    return "clahe = " + std::string(no_clahe ? "false" : "true") + "\nmax_kp = " + std::to_string(max_kp) +
           "\nmutual = " + (mutual ? "true" : "false") +
           "\nmax_dist = " + (max_dist ? detail::format_double(*max_dist) : std::string("none")) + "\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised patch descriptors: data synthesis, training, matching, evaluation and mosaicing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(SSDESC_VERSION));
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Random seed")->envname("SSDESC_SEED")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->envname("SSDESC_THREADS")->capture_default_str();
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, byte-reproducible outputs")
      ->envname("SSDESC_DETERMINISTIC");
  app.add_flag("-v,--verbose", g.verbose, "Progress on stderr")->envname("SSDESC_VERBOSE");
  app.fallthrough();

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Write procedural grayscale frames as PNG");
  int synth_n = 20;
  std::string synth_size = "720x576", synth_out;
  synth->add_option("--frames", synth_n, "Number of frames")->capture_default_str();
  synth->add_option("--size", synth_size, "WIDTHxHEIGHT")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // gen-pairs
  auto* gen = app.add_subcommand("gen-pairs", "Build the anchor/positive patch archive from frames");
  std::string gen_frames, gen_out;
  int gen_per_kp = 2, gen_max_kp = 200;
  bool gen_no_clahe = false;
  gen->add_option("--frames", gen_frames, "Frame directory")->required();
  gen->add_option("--out", gen_out, "Pair archive path")->required();
  gen->add_option("--per-kp", gen_per_kp, "Random transforms per key-point")->capture_default_str();
  gen->add_option("--max-kp", gen_max_kp, "Key-points per frame")->capture_default_str();
  gen->add_flag("--no-clahe", gen_no_clahe, "Skip CLAHE");

  // train
  auto* tr = app.add_subcommand("train", "Train the descriptor network on a pair archive");
  std::string tr_pairs, tr_config, tr_out, tr_log;
  std::optional<int> tr_epochs;
  std::optional<std::string> tr_loss;
  tr->add_option("--pairs", tr_pairs, "Pair archive")->required();
  tr->add_option("--config", tr_config, "key = value training config");
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--log", tr_log, "CSV log path (default: <out>.log.csv)");
  tr->add_option("--epochs", tr_epochs, "Override the configured epoch count");
  tr->add_option("--loss", tr_loss, "Override the loss: hardnet|triplet|adaptive");

  // match
  auto* mt = app.add_subcommand("match", "Detect, describe and match two images");
  std::string mt_a, mt_b, mt_model, mt_out, mt_kp1, mt_kp2;
  PipelineFlags mt_flags;
  mt->add_option("--image1", mt_a, "Source image")->required();
  mt->add_option("--image2", mt_b, "Target image")->required();
  mt->add_option("--model", mt_model, "Checkpoint")->required();
  mt->add_option("--out", mt_out, "Match CSV; kept key-points go to <out>.kp1.csv and <out>.kp2.csv")->required();
  mt->add_option("--kp1", mt_kp1, "External key-points for image1 (CSV)");
  mt->add_option("--kp2", mt_kp2, "External key-points for image2 (CSV)");
  mt_flags.add(mt, true);

  // eval
  auto* ev = app.add_subcommand("eval", "Score a match CSV against a ground-truth homography");
  std::string ev_matches, ev_kp1, ev_kp2, ev_h, ev_out, ev_pr;
  double ev_pe = kDefaultProjectionError;
  ev->add_option("--matches", ev_matches, "Match CSV")->required();
  ev->add_option("--kp1", ev_kp1, "Source key-point CSV")->required();
  ev->add_option("--kp2", ev_kp2, "Target key-point CSV")->required();
  ev->add_option("--homography", ev_h, "Ground-truth homography file (first matrix, source -> target)");
  ev->add_option("--pe", ev_pe, "Projection error threshold in pixels")->capture_default_str();
  ev->add_option("--out", ev_out, "Report CSV")->required();
  ev->add_option("--pr", ev_pr, "Precision/recall curve CSV");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Viewpoint, scale or blur robustness sweep");
  std::string sw_frames, sw_model, sw_mode = "scale", sw_out;
  double sw_shift = 15.0;
  PipelineFlags sw_flags;
  sw->add_option("--frames", sw_frames, "Frame directory")->required();
  sw->add_option("--model", sw_model, "Checkpoint")->required();
  sw->add_option("--mode", sw_mode, "viewpoint|scale|blur")->capture_default_str();
  sw->add_option("--max-shift", sw_shift, "Corner perturbation for viewpoint mode, px")->capture_default_str();
  sw->add_option("--out", sw_out, "Sweep CSV")->required();
  sw_flags.add(sw, true);

  // mosaic
  auto* mo = app.add_subcommand("mosaic", "Register consecutive frames and compose a panorama");
  std::string mo_frames, mo_model, mo_out, mo_blend = "feather", mo_pairwise;
  std::size_t mo_ref = 0;
  int mo_iters = 2000;
  double mo_inlier = 3.0;
  PipelineFlags mo_flags;
  mo->add_option("--frames", mo_frames, "Frame directory (sorted by name)")->required();
  mo->add_option("--model", mo_model, "Checkpoint (not needed with --pairwise)");
  mo->add_option("--pairwise", mo_pairwise, "Known frame k -> k+1 homographies; skips registration");
  mo->add_option("--out", mo_out, "Panorama PNG; global homographies go to <out>.homographies.txt")->required();
  mo->add_option("--reference", mo_ref, "Reference frame index")->capture_default_str();
  mo->add_option("--blend", mo_blend, "feather|overwrite")->capture_default_str();
  mo->add_option("--iters", mo_iters, "RANSAC iterations")->capture_default_str();
  mo->add_option("--inlier-px", mo_inlier, "RANSAC inlier threshold, px")->capture_default_str();
  mo_flags.add(mo, true);

  // plot
  auto* pl = app.add_subcommand("plot", "Render a sweep or PR CSV as an SVG line chart");
  std::string pl_csv, pl_out, pl_title;
  pl->add_option("--csv", pl_csv, "Input CSV")->required();
  pl->add_option("--out", pl_out, "SVG path")->required();
  pl->add_option("--title", pl_title, "Chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) {
      if (synth_n < 1) throw ParameterError("frames must be >= 1");
      SynthParams p;
      std::tie(p.width, p.height) = parse_size(synth_size);
      const fs::path dir(synth_out);
      ensure_dir(dir);
      const auto frames = synth_frames(synth_n, p, g.seed);
      for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04zu.png", i);
        save_png(frames[i], (dir / name).string());
      }
      write_provenance(dir, "synth-data", g, "frames = " + std::to_string(synth_n) + "\nsize = " + synth_size + "\n");
      std::cout << "wrote " << frames.size() << " frames to " << dir.string() << "\n";
    } else if (gen->parsed()) {
      const auto frames = load_frames(gen_frames);
      GenerationConfig cfg;
      cfg.use_clahe = !gen_no_clahe;
      cfg.max_keypoints = gen_max_kp;
      cfg.transforms_per_keypoint = gen_per_kp;
      cfg.seed = g.seed;
      GenerationStats stats;
      const auto ds = generate_pairs(frames, cfg, &stats, g.workers());
      ensure_dir(output_dir_of(gen_out));
      save_dataset(ds, gen_out);
      write_provenance(output_dir_of(gen_out), "gen-pairs", g,
                       "frames_dir = " + name_of(gen_frames) + "\nframes = " + std::to_string(frames.size()) + "\n" +
                           cfg.describe());
      std::cout << "pairs " << stats.pairs << " rejected " << stats.rejected << " keypoints " << stats.kept_keypoints
                << "\n";
    } else if (tr->parsed()) {
      const auto ds = load_dataset(tr_pairs);
      KeyValueConfig kv = tr_config.empty() ? KeyValueConfig{} : KeyValueConfig::load(tr_config);
      if (!kv.has("seed")) kv.set("seed", std::to_string(g.seed));
      if (tr_epochs) kv.set("epochs", std::to_string(*tr_epochs));
      if (tr_loss) kv.set("loss", *tr_loss);
      TrainConfig cfg = TrainConfig::from_config(kv);
      cfg.deterministic = cfg.deterministic || g.deterministic;
      cfg.checkpoint_path = tr_out;
      cfg.log_path = tr_log.empty() ? tr_out + ".log.csv" : tr_log;
      ensure_dir(output_dir_of(tr_out));
      ensure_dir(output_dir_of(cfg.log_path));
      write_provenance(output_dir_of(tr_out), "train", g, "pairs = " + name_of(tr_pairs) + "\n" + cfg.describe());
      const auto result = train(ds, cfg, [&](const TrainLogRecord& r) {
        if (g.verbose) std::cerr << format_log_record(r) << "\n";
      });
      const auto& last = result.log.empty() ? TrainLogRecord{} : result.log.back();
      std::cout << "trained " << cfg.epochs << " epochs on " << result.split.train.size() << " pairs; val precision "
                << last.val_precision << " matching score " << last.val_matching_score << "\n";
    } else if (mt->parsed()) {
      const auto net = load_checkpoint(mt_model);
      const PipelineConfig cfg = mt_flags.config();
      auto run = [&](const std::string& img_path, const std::string& kp_path) {
        const GrayImage img = load_image(img_path);
        if (kp_path.empty()) return detect_and_describe(img, net, cfg);
        return describe(prepare_frame(img, cfg), read_keypoints(kp_path), net, cfg.margin);
      };
      const auto a = run(mt_a, mt_kp1), b = run(mt_b, mt_kp2);
      const auto matches = match_nn(a.descriptors, b.descriptors, cfg.match);
      ensure_dir(output_dir_of(mt_out));
      write_matches(mt_out, matches);
      write_keypoints(mt_out + ".kp1.csv", a.keypoints);
      write_keypoints(mt_out + ".kp2.csv", b.keypoints);
      write_provenance(output_dir_of(mt_out), "match", g,
                       "image1 = " + name_of(mt_a) + "\nimage2 = " + name_of(mt_b) + "\nmodel = " + name_of(mt_model) +
                           "\n" + mt_flags.describe());
      std::cout << "matches " << matches.size() << " (" << a.size() << " x " << b.size() << " key-points)\n";
    } else if (ev->parsed()) {
      if (!(ev_pe >= 0.0)) throw ParameterError("pe must be >= 0");
      const auto matches = read_matches(ev_matches);
      const auto k1 = read_keypoints(ev_kp1), k2 = read_keypoints(ev_kp2);
      Homography h;
      if (!ev_h.empty()) {
        const auto hs = read_homographies(ev_h);
        if (hs.empty()) throw DataError("no homography in '" + ev_h + "'");
        h = hs.front();
      }
      for (const auto& m : matches) {
        if (m.i >= k1.size() || m.j >= k2.size()) {
          throw DataError("match (" + std::to_string(m.i) + ", " + std::to_string(m.j) + ") indexes past the key-point lists");
        }
      }
      const ScoringContext ctx(k1, k2, h, ev_pe);
      const EvalReport rep = ctx.score(matches);
      ensure_dir(output_dir_of(ev_out));
      write_eval_report(ev_out, rep);
      if (!ev_pr.empty()) write_pr_curve(ev_pr, pr_curve(matches, ctx));
      write_provenance(output_dir_of(ev_out), "eval", g,
                       "matches = " + name_of(ev_matches) + "\npe = " + detail::format_double(ev_pe) + "\n");
      std::cout << "precision " << rep.precision << " recall " << rep.recall << " matching_score " << rep.matching_score
                << "\n";
    } else if (sw->parsed()) {
      const SweepMode mode = parse_sweep_mode(sw_mode);
      const auto frames = load_frames(sw_frames);
      const auto net = load_checkpoint(sw_model);
      SweepConfig cfg;
      cfg.pipeline = sw_flags.config();
      cfg.max_corner_shift = sw_shift;
      cfg.seed = g.seed;
      const auto rows = robustness_sweep(frames, net, mode, cfg, g.workers());
      ensure_dir(output_dir_of(sw_out));
      write_sweep_csv(sw_out, rows);
      write_provenance(output_dir_of(sw_out), "sweep", g,
                       "frames_dir = " + name_of(sw_frames) + "\nmodel = " + name_of(sw_model) + "\nmode = " + sw_mode +
                           "\nmax_shift = " + detail::format_double(sw_shift) + "\n" + sw_flags.describe());
      for (const auto& s : summarize_sweep(rows)) {
        std::cout << sw_mode << " " << s.condition << ": precision " << s.precision << " recall " << s.recall << "\n";
      }
    } else if (mo->parsed()) {
      const auto frames = load_frames(mo_frames);
      MosaicConfig cfg;
      cfg.pipeline = mo_flags.config();
      cfg.ransac = {mo_iters, mo_inlier, g.seed};
      cfg.reference = mo_ref;
      cfg.blend = parse_blend_mode(mo_blend);
      Panorama pano;
      if (!mo_pairwise.empty()) {
        pano = compose_panorama(frames, read_homographies(mo_pairwise), cfg.reference, cfg.blend);
      } else {
        if (mo_model.empty()) throw ParameterError("mosaic needs --model or --pairwise");
        pano = mosaic_frames(frames, load_checkpoint(mo_model), cfg, g.workers());
      }
      ensure_dir(output_dir_of(mo_out));
      save_image(pano.canvas, mo_out);
      write_homographies(mo_out + ".homographies.txt", pano.global);
      write_provenance(output_dir_of(mo_out), "mosaic", g,
                       "frames_dir = " + name_of(mo_frames) + "\nframes = " + std::to_string(frames.size()) +
                           "\nreference = " + std::to_string(mo_ref) + "\nblend = " + mo_blend +
                           "\niters = " + std::to_string(mo_iters) + "\ninlier_px = " + detail::format_double(mo_inlier) +
                           "\n" + mo_flags.describe());
      std::cout << "panorama " << pano.canvas.width() << "x" << pano.canvas.height() << ", overlap difference "
                << overlap_difference(frames, pano) << "\n";
    } else if (pl->parsed()) {
      const auto table = read_csv(pl_csv);
      const auto spec = plot_from_csv(table, pl_title.empty() ? name_of(pl_csv) : pl_title);
      ensure_dir(output_dir_of(pl_out));
      std::ofstream out(pl_out, std::ios::binary);
      if (!out) throw IoError("cannot write '" + pl_out + "'");
      out << render_svg(spec);
    }
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  log_line(g, "done");
  return kOk;
}
