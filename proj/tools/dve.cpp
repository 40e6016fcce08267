// dve: command-line front end for the dense visual embedding toolkit.

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dve/closed_set.hpp"
#include "dve/distillation.hpp"
#include "dve/error.hpp"
#include "dve/map3d.hpp"
#include "dve/service.hpp"
#include "dve/storage.hpp"

namespace fs = std::filesystem;
using namespace dve;

namespace {

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "gd" || s == "sgd") return OptimizerKind::gradient_descent;
  if (s == "adam") return OptimizerKind::adam;
  throw Error(ErrorCode::InvalidArgument, "optimizer must be gd or adam");
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

ReferenceSet references_from_bank(const EmbeddingBank& bank) {
  if (bank.entries.empty()) throw Error(ErrorCode::MissingReferences, "bank has no entries");
  std::vector<std::string> names;
  Matrix rows(bank.entries.size(), bank.dim);
  for (std::size_t i = 0; i < bank.entries.size(); ++i) {
    names.push_back(bank.entries[i].name);
    std::copy(bank.entries[i].vector.data().begin(), bank.entries[i].vector.data().end(), rows.row(i).begin());
  }
  return ReferenceSet::from_named_rows(names, rows);
}

TeacherVolume teacher_from_files(const fs::path& mask_path, const fs::path& segments_path, double alpha,
                                 std::size_t* dim_out = nullptr) {
  const auto mask = read_mask_map(mask_path);
  auto records = read_segment_records(segments_path);
  if (records.empty()) throw Error(ErrorCode::MissingSegment, "segment file is empty");
  refine_records(records, SuppressionConfig{alpha});
  const std::size_t dim = records.front().raw_embedding.dim();
  if (dim_out) *dim_out = dim;
  return assemble_teacher_volume(mask, records, dim);
}

std::vector<std::size_t> parse_dims(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense visual embedding toolkit"};
  app.require_subcommand(1);
  std::cout << std::setprecision(12);

  // teacher -------------------------------------------------------------------
  auto* teacher = app.add_subcommand("teacher", "Assemble a teacher volume from a mask and segment embeddings");
  std::string t_mask, t_segments, t_out;
  double t_alpha = kDefaultAlpha;
  teacher->add_option("--mask", t_mask)->required();
  teacher->add_option("--segments", t_segments)->required();
  teacher->add_option("--alpha", t_alpha, "context suppression strength")->capture_default_str();
  teacher->add_option("--out", t_out)->required();

  // train-student -------------------------------------------------------------
  auto* train = app.add_subcommand("train-student", "Distill teacher volumes into a per-pixel student");
  std::string ts_manifest, ts_out, ts_hidden, ts_optimizer = "adam";
  double ts_lr = 1e-2, ts_alpha = kDefaultAlpha, ts_decay = 0.0;
  std::size_t ts_iters = 500;
  std::uint64_t ts_seed = 0;
  train->add_option("--manifest", ts_manifest)->required();
  train->add_option("--out", ts_out)->required();
  train->add_option("--lr", ts_lr)->capture_default_str();
  train->add_option("--iters", ts_iters)->capture_default_str();
  train->add_option("--seed", ts_seed)->capture_default_str();
  train->add_option("--alpha", ts_alpha)->capture_default_str();
  train->add_option("--hidden", ts_hidden, "comma-separated hidden widths");
  train->add_option("--optimizer", ts_optimizer, "gd | adam")->capture_default_str();
  train->add_option("--weight-decay", ts_decay)->capture_default_str();

  // loss ----------------------------------------------------------------------
  auto* loss = app.add_subcommand("loss", "Cosine distillation loss of a prediction against a teacher volume");
  std::string l_pred, l_teacher, l_mask;
  loss->add_option("--pred", l_pred)->required();
  loss->add_option("--teacher", l_teacher)->required();
  loss->add_option("--mask", l_mask)->required();

  // segment -------------------------------------------------------------------
  auto* segment = app.add_subcommand("segment", "Closed-set segmentation of an embedding volume");
  std::string s_map, s_mode, s_refs, s_probe, s_out;
  segment->add_option("--map", s_map)->required();
  segment->add_option("--mode", s_mode)->required()->check(CLI::IsMember({"text", "mean", "probe"}));
  segment->add_option("--refs", s_refs, "bank JSON (text prompts or visual means)");
  segment->add_option("--probe", s_probe);
  segment->add_option("--out", s_out)->required();

  // visual-mean ---------------------------------------------------------------
  auto* vmean = app.add_subcommand("visual-mean", "Per-class mean segment embeddings as a reference bank");
  std::vector<std::string> vm_segments;
  std::size_t vm_classes = 0;
  double vm_alpha = kDefaultAlpha;
  bool vm_raw = false;
  std::string vm_out;
  vmean->add_option("--segments", vm_segments)->required();
  vmean->add_option("--classes", vm_classes)->required();
  vmean->add_option("--alpha", vm_alpha)->capture_default_str();
  vmean->add_flag("--raw", vm_raw, "average raw instead of context-suppressed embeddings");
  vmean->add_option("--out", vm_out)->required();

  // probe-train ---------------------------------------------------------------
  auto* ptrain = app.add_subcommand("probe-train", "Train a linear probe on labeled embedding volumes");
  std::string pt_manifest, pt_out, pt_optimizer = "gd";
  std::size_t pt_classes = 0, pt_iters = 100;
  double pt_lr = 1e-3;
  std::uint64_t pt_seed = 0;
  ptrain->add_option("--manifest", pt_manifest)->required();
  ptrain->add_option("--classes", pt_classes)->required();
  ptrain->add_option("--out", pt_out)->required();
  ptrain->add_option("--lr", pt_lr)->capture_default_str();
  ptrain->add_option("--iters", pt_iters)->capture_default_str();
  ptrain->add_option("--seed", pt_seed)->capture_default_str();
  ptrain->add_option("--optimizer", pt_optimizer, "gd | adam")->capture_default_str();

  // eval-miou -----------------------------------------------------------------
  auto* miou = app.add_subcommand("eval-miou", "Per-class IoU and mIoU of a label map");
  std::string m_pred, m_gt, m_exclude;
  std::size_t m_classes = 0;
  miou->add_option("--pred", m_pred)->required();
  miou->add_option("--gt", m_gt)->required();
  miou->add_option("--classes", m_classes)->required();
  miou->add_option("--exclude", m_exclude, "comma-separated class ids");

  // map-build / map-query / map-classify --------------------------------------
  auto* mbuild = app.add_subcommand("map-build", "Fuse posed embedding volumes into a 3D cell map");
  std::string mb_manifest, mb_out;
  double mb_cell = kDefaultCellSize;
  mbuild->add_option("--manifest", mb_manifest)->required();
  mbuild->add_option("--cell-size", mb_cell)->capture_default_str();
  mbuild->add_option("--out", mb_out)->required();

  auto* mquery = app.add_subcommand("map-query", "Rank map cells by cosine similarity to a bank entry");
  std::string mq_map, mq_name, mq_bank;
  std::size_t mq_top = kDefaultTopK;
  mquery->add_option("--map", mq_map)->required();
  mquery->add_option("--query-name", mq_name)->required();
  mquery->add_option("--bank", mq_bank)->required();
  mquery->add_option("--top", mq_top)->capture_default_str();

  auto* mclass = app.add_subcommand("map-classify", "Label every map cell with a linear probe");
  std::string mc_map, mc_probe, mc_out;
  mclass->add_option("--map", mc_map)->required();
  mclass->add_option("--probe", mc_probe)->required();
  mclass->add_option("--out", mc_out)->required();

  // heatmap / convert / info --------------------------------------------------
  auto* heat = app.add_subcommand("heatmap", "Export a prompt similarity map as 8-bit PGM");
  std::string h_map, h_bank, h_prompt, h_out;
  heat->add_option("--map", h_map)->required();
  heat->add_option("--bank", h_bank)->required();
  heat->add_option("--prompt", h_prompt)->required();
  heat->add_option("--out", h_out)->required();

  auto* convert = app.add_subcommand("convert", "Re-encode an embedding volume");
  std::string c_in, c_out, c_dtype = "f32";
  convert->add_option("--in", c_in)->required();
  convert->add_option("--out", c_out)->required();
  convert->add_option("--dtype", c_dtype)->check(CLI::IsMember({"f32", "f16"}))->capture_default_str();

  auto* info = app.add_subcommand("info", "Print the parsed header of a file");
  std::string i_path;
  info->add_option("file", i_path)->required();

  // serve ---------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "HTTP query service");
  int sv_port = 8080;
  std::string sv_host = "127.0.0.1", sv_bank, sv_probe, sv_map, sv_manifest, sv_refs;
  serve->add_option("--port", sv_port)->capture_default_str();
  serve->add_option("--host", sv_host)->capture_default_str();
  serve->add_option("--bank", sv_bank)->required();
  serve->add_option("--probe", sv_probe);
  serve->add_option("--map", sv_map);
  serve->add_option("--manifest", sv_manifest);
  serve->add_option("--references", sv_refs, "visual-mean reference bank");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*teacher) {
      const auto vol = teacher_from_files(t_mask, t_segments, t_alpha);
      write_volume(vol.embeddings, Dtype::f32, t_out);
      std::cout << "covered_pixels " << vol.covered << "\n";
      if (vol.empty()) std::cout << "warning: mask has no labeled pixel\n";
    } else if (*train) {
      std::vector<DistillSample> samples;
      std::size_t dim = 0;
      for (const auto& e : load_distill_manifest(ts_manifest)) {
        auto features = read_volume(e.features);
        auto vol = teacher_from_files(e.mask, e.segments, ts_alpha, &dim);
        samples.push_back({std::move(features), std::move(vol)});
      }
      if (samples.empty()) throw Error(ErrorCode::EmptyCoverage, "manifest lists no samples");
      std::vector<std::size_t> dims{samples.front().features.dim()};
      for (auto h : parse_dims(ts_hidden)) dims.push_back(h);
      dims.push_back(dim);
      TrainConfig cfg;
      cfg.learning_rate = ts_lr;
      cfg.iterations = ts_iters;
      cfg.seed = ts_seed;
      cfg.optimizer = parse_optimizer(ts_optimizer);
      cfg.weight_decay = ts_decay;
      const auto result = train_student(samples, cfg, init_student(dims, ts_seed));
      write_text(ts_out, dump_student(result.params));
      if (!result.loss_history.empty()) {
        std::cout << "initial_loss " << result.loss_history.front() << "\nfinal_loss " << result.loss_history.back()
                  << "\n";
      }
    } else if (*loss) {
      auto pred = read_volume(l_pred);
      auto teacher_map = read_volume(l_teacher);
      const auto mask = read_mask_map(l_mask);
      if (mask.height != teacher_map.height() || mask.width != teacher_map.width()) {
        throw Error(ErrorCode::DimMismatch, "mask and teacher differ in H x W");
      }
      TeacherVolume vol{std::move(teacher_map), std::vector<std::uint8_t>(mask.ids.size(), 0), 0};
      for (std::size_t p = 0; p < mask.ids.size(); ++p) {
        if (mask.ids[p] != 0) {
          vol.coverage[p] = 1;
          ++vol.covered;
        } else {
          std::fill(vol.embeddings.pixel(p).begin(), vol.embeddings.pixel(p).end(), 0.0);
        }
      }
      const auto report = cosine_distill_loss(pred, vol);
      std::cout << "loss " << report.loss << "\ncovered_pixels " << report.covered_pixels << "\n";
    } else if (*segment) {
      const auto map = read_volume(s_map);
      LabelMap labels;
      if (s_mode == "probe") {
        if (s_probe.empty()) throw Error(ErrorCode::MissingProbe, "--probe is required for probe mode");
        labels = probe_predict(map, load_probe(s_probe));
      } else {
        if (s_refs.empty()) throw Error(ErrorCode::MissingReferences, "--refs is required for text/mean mode");
        const auto result = classify_argmax(map, references_from_bank(load_embedding_bank(s_refs)));
        labels = result.labels;
        if (result.zero_pixels) std::cout << "zero_norm_pixels " << result.zero_pixels << "\n";
      }
      write_label_map(labels, s_out);
    } else if (*vmean) {
      std::vector<SegmentRecord> all;
      for (const auto& path : vm_segments) {
        auto records = read_segment_records(path);
        if (!vm_raw) refine_records(records, SuppressionConfig{vm_alpha});
        for (auto& r : records) all.push_back(std::move(r));
      }
      const auto refs = visual_mean_references(all, vm_classes, {},
                                               vm_raw ? EmbeddingSource::raw : EmbeddingSource::refined);
      EmbeddingBank bank{refs.dim(), {}};
      for (std::size_t c = 0; c < refs.classes(); ++c) {
        const auto row = refs.rows().row(c);
        bank.entries.push_back({refs.class_names()[c], EmbeddingVector({row.begin(), row.end()})});
      }
      write_text(vm_out, dump_embedding_bank(bank));
    } else if (*ptrain) {
      std::vector<LabeledSample> samples;
      for (const auto& e : load_probe_manifest(pt_manifest)) {
        samples.push_back({read_volume(e.embedding_map), read_label_map(e.labels)});
      }
      TrainConfig cfg = default_probe_config();
      cfg.learning_rate = pt_lr;
      cfg.iterations = pt_iters;
      cfg.seed = pt_seed;
      cfg.optimizer = parse_optimizer(pt_optimizer);
      const auto result = train_linear_probe(samples, pt_classes, cfg);
      write_text(pt_out, dump_probe(result.weights));
      if (!result.loss_history.empty()) {
        std::cout << "initial_loss " << result.loss_history.front() << "\nfinal_loss " << result.loss_history.back()
                  << "\n";
      }
    } else if (*miou) {
      std::vector<std::uint16_t> excluded;
      for (auto id : parse_dims(m_exclude)) excluded.push_back(static_cast<std::uint16_t>(id));
      const auto report = evaluate_miou(read_label_map(m_pred), read_label_map(m_gt), m_classes, excluded);
      for (const auto& c : report.per_class) {
        std::cout << "class " << c.class_id << " ";
        if (c.iou) {
          std::cout << *c.iou << "\n";
        } else {
          std::cout << "undefined\n";
        }
      }
      for (auto c : report.excluded_classes) std::cout << "class " << c << " excluded\n";
      std::cout << "mean " << report.mean_iou << "\n";
    } else if (*mbuild) {
      std::optional<MapBuilder> builder;
      std::size_t observations = 0;
      for (const auto& scan : load_scan_manifest(mb_manifest)) {
        const auto map = read_volume(scan.embedding_map);
        const auto depth = read_depth_image(scan.depth);
        if (depth.height != map.height() || depth.width != map.width()) {
          throw Error(ErrorCode::ShapeMismatch, "depth image and embedding map differ in H x W");
        }
        if (!builder) builder.emplace(mb_cell, map.dim());
        for (const auto& pt : backproject(depth, scan.intrinsics, scan.pose)) {
          builder->insert(pt.world, map.pixel(pt.pixel));
          ++observations;
        }
      }
      if (!builder) throw Error(ErrorCode::InvalidArgument, "scan manifest is empty");
      const auto frozen = map_freeze(*builder);
      write_map3d(frozen.map, mb_out);
      std::cout << "observations " << observations << "\ncells " << frozen.map.size() << "\nskipped "
                << builder->skipped() << "\ndropped_cells " << frozen.dropped.size() << "\n";
    } else if (*mquery) {
      const auto map = read_map3d(mq_map);
      const auto bank = load_embedding_bank(mq_bank);
      const auto hits = bank.find(mq_name);
      if (hits.empty()) throw Error(ErrorCode::NoEmbedderConfigured, "'" + mq_name + "' is not in the bank");
      const auto scores = map_query(map, hits.front()->vector.values());
      for (std::size_t i = 0; i < std::min(mq_top, scores.size()); ++i) {
        const auto& s = scores[i];
        std::cout << s.key.x << " " << s.key.y << " " << s.key.z << " " << s.similarity << "\n";
      }
    } else if (*mclass) {
      const auto labels = map_classify(read_map3d(mc_map), load_probe(mc_probe));
      std::ostringstream os;
      for (const auto& l : labels) os << l.key.x << " " << l.key.y << " " << l.key.z << " " << l.class_id << "\n";
      write_text(mc_out, os.str());
    } else if (*heat) {
      SessionState session;
      session.bank = load_embedding_bank(h_bank);
      session.volumes["image"] = LoadedVolume{read_volume(h_map), std::nullopt};
      session.embedder = EmbedderConfig::from_env();
      const auto r = query_image(session, "image", h_prompt);
      write_file(h_out, r.pgm);
      std::cout << "min " << r.stats.min << "\nmax " << r.stats.max << "\nmean " << r.stats.mean << "\n";
    } else if (*convert) {
      write_volume(read_volume(c_in), c_dtype == "f16" ? Dtype::f16 : Dtype::f32, c_out);
    } else if (*info) {
      std::cout << describe_file(i_path);
    } else if (*serve) {
      SessionState initial;
      initial.embedder = EmbedderConfig::from_env();
      QueryService service(std::move(initial));
      service.load("bank", sv_bank);
      if (!sv_probe.empty()) service.load("probe", sv_probe);
      if (!sv_map.empty()) service.load("map", sv_map);
      if (!sv_manifest.empty()) service.load("manifest", sv_manifest);
      if (!sv_refs.empty()) service.load("references", sv_refs);
      HttpFrontend http(service);
      const int port = http.bind(sv_host, sv_port);
      std::cout << "listening on " << sv_host << ":" << port << std::endl;
      http.listen();
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
