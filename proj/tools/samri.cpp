// samri: phantoms, preprocess, embed, train, eval and serve.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "samri/data_io.hpp"
#include "samri/embedding_bank.hpp"
#include "samri/error.hpp"
#include "samri/eval_report.hpp"
#include "samri/phantom.hpp"
#include "samri/preprocess.hpp"
#include "samri/service.hpp"
#include "samri/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace samri;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  return json::parse(in);
}

void save_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2) << "\n";
}

json config_json(const Globals& g) { return g.config.empty() ? json::object() : load_json(g.config); }

RunConfig run_config(const Globals& g) {
  RunConfig c = run_config_from_json(config_json(g));
  if (g.seed_set) c.sampler.seed = g.seed;
  return c;
}

PreprocessConfig preprocess_config(const json& j) {
  PreprocessConfig c;
  if (!j.contains("preprocess")) return c;
  const auto& p = j["preprocess"];
  c.trim_fraction_per_end = p.value("trim_fraction_per_end", c.trim_fraction_per_end);
  c.min_mask_pixels = p.value("min_mask_pixels", c.min_mask_pixels);
  c.target_size = p.value("target_size", c.target_size);
  c.split_components = p.value("split_components", c.split_components);
  return c;
}

SplitRatios split_ratios(const json& j) {
  SplitRatios r;
  if (!j.contains("split")) return r;
  r.train = j["split"].value("train", r.train);
  r.val = j["split"].value("val", r.val);
  r.test = j["split"].value("test", r.test);
  return r;
}

BankShape bank_shape(const ModelConfig& c) {
  return {static_cast<std::uint32_t>(c.embed_dim), static_cast<std::uint32_t>(c.grid()),
          static_cast<std::uint32_t>(c.grid())};
}

// ---- phantoms -------------------------------------------------------------------

// <out>/<dataset>/<patient>.nii, <patient>_seg.nii and <patient>_seg.json (label names).
int cmd_phantoms(const Globals& g, const fs::path& out, const std::vector<std::string>& datasets, std::size_t count) {
  std::uint64_t seed = g.seed * 1000003;
  for (const auto& ds : datasets) {
    const auto dir = out / ds;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < count; ++i) {
      PhantomSpec spec;
      spec.seed = seed++;
      const auto [vol, lab] = generate_phantom(spec);
      char name[32];
      std::snprintf(name, sizeof name, "p%04zu", i);
      write_file_bytes(dir / (std::string(name) + ".nii"), nifti::write(vol));
      write_file_bytes(dir / (std::string(name) + "_seg.nii"), nifti::write(to_volume(lab), nifti::Datatype::Int16));
      json names = json::object();
      for (const auto& [id, n] : lab.target_names) names[std::to_string(id)] = n;
      save_json(dir / (std::string(name) + "_seg.json"), names);
    }
    std::printf("%s: %zu phantoms\n", ds.c_str(), count);
  }
  return 0;
}

// ---- preprocess -----------------------------------------------------------------

int cmd_preprocess(const Globals& g, const fs::path& input, const fs::path& out) {
  const json cj = config_json(g);
  const auto pcfg = preprocess_config(cj);
  const auto ratios = split_ratios(cj);
  std::vector<CorpusEntry> entries;
  std::vector<fs::path> dataset_dirs;
  for (const auto& d : fs::directory_iterator(input))
    if (d.is_directory()) dataset_dirs.push_back(d.path());
  std::sort(dataset_dirs.begin(), dataset_dirs.end());
  for (const auto& dir : dataset_dirs) {
    const std::string ds = dir.filename().string();
    std::vector<std::string> patients;
    for (const auto& f : fs::directory_iterator(dir)) {
      const auto stem = f.path().stem().string();
      if (f.path().extension() == ".nii" && !stem.ends_with("_seg")) patients.push_back(stem);
    }
    std::sort(patients.begin(), patients.end());
    const auto split = split_patients(patients, ratios, g.seed);
    std::size_t n = 0;
    for (const auto& p : patients) {
      const auto vol = read_volume_bytes(read_file_bytes(dir / (p + ".nii")));
      std::map<std::uint16_t, std::string> names;
      const auto names_path = dir / (p + "_seg.json");
      if (fs::exists(names_path)) {
        const json nj = load_json(names_path);
        for (const auto& [k, v] : nj.items()) names[static_cast<std::uint16_t>(std::stoi(k))] = v;
      }
      const auto lab = to_label_volume(read_volume_bytes(read_file_bytes(dir / (p + "_seg.nii"))), names);
      for (auto& s : preprocess_volume(vol, lab, ds, p, pcfg)) {
        entries.push_back({std::move(s), split.of(p)});
        ++n;
      }
    }
    std::printf("%s: %zu patients, %zu samples\n", ds.c_str(), patients.size(), n);
  }
  write_corpus(out, entries);
  std::printf("manifest: %s\n", (out / "manifest.jsonl").string().c_str());
  return 0;
}

// ---- embed ----------------------------------------------------------------------

int cmd_embed(const Globals& g, const fs::path& corpus, const fs::path& out) {
  const auto cfg = run_config(g);
  const auto entries = read_corpus(corpus);
  SamModel model(cfg.model);
  std::map<std::string, const SliceSample*> by_key;
  for (const auto& e : entries) by_key.emplace(e.sample.key, &e.sample);
  std::vector<std::string> keys;
  for (const auto& [k, _] : by_key) keys.push_back(k);
  const auto st = precompute(
      out, keys, [&](const std::string& k) { return model.encode_image(by_key.at(k)->image); },
      bank_shape(cfg.model));
  std::printf("%zu keys: %zu encoded, %zu reused%s\n", st.requested, st.invocations, st.reused,
              st.rewritten ? "" : ", bank unchanged");
  return 0;
}

// ---- train ----------------------------------------------------------------------

int cmd_train(const Globals& g, const fs::path& corpus, const std::string& bank_path, const fs::path& out,
              const std::string& regime) {
  auto cfg = run_config(g);
  cfg.out_dir = out;
  const auto data = split_training_data(read_corpus(corpus), cfg.zero_shot_datasets);
  std::unique_ptr<EmbeddingBank> bank;
  if (!bank_path.empty()) {
    bank = std::make_unique<EmbeddingBank>(EmbeddingBank::open(bank_path));
    cfg.source = EmbeddingSource::Bank;
  } else {
    cfg.source = EmbeddingSource::OnTheFly;
  }
  std::vector<PromptRegime> regimes;
  if (regime == "both")
    regimes = {PromptRegime::BoxOnly, PromptRegime::BoxPoint};
  else
    regimes = {parse_regime(regime)};

  fs::create_directories(out);
  CheckpointSet slots;
  json summary{{"train_samples", data.train.size()},
               {"seen_val_samples", data.seen_val.size()},
               {"zs_val_samples", data.zs_val.size()},
               {"runs", json::array()}};
  for (const auto r : regimes) {
    auto rc = cfg;
    rc.regime = r;
    SamModel model(rc.model);
    const auto res = train(model, data, rc, bank.get(), &slots);
    const auto& last = res.history.back();
    std::printf("%s: %zu epochs, final train %.5f seen_val %.5f zs_val %.5f, %zu encoder runs, %.1fs\n",
                std::string(regime_name(r)).c_str(), res.history.size(), last.train_loss, last.seen_val, last.zs_val,
                res.encoder_invocations, res.wall_seconds);
    summary["runs"].push_back({{"regime", regime_name(r)},
                               {"wall_seconds", res.wall_seconds},
                               {"encoder_invocations", res.encoder_invocations},
                               {"times",
                                {{"data", res.times.data},
                                 {"encode", res.times.encode},
                                 {"decode", res.times.decode},
                                 {"backward", res.times.backward}}}});
  }
  summary["checkpoints"] = slots.to_json();
  save_json(out / "run.json", to_json(cfg));
  save_json(out / "summary.json", summary);
  return 0;
}

// ---- eval -----------------------------------------------------------------------

std::vector<EvalRecord> eval_checkpoint(const fs::path& ckpt, const std::vector<SliceSample>& samples,
                                        PromptRegime regime) {
  const auto loaded = load_checkpoint(ckpt);
  ModelPredictor p(*loaded.model, ckpt.stem().string());
  return evaluate(p, samples, regime);
}

int cmd_eval(const fs::path& ckpt, const fs::path& corpus, const std::string& split, const std::string& regime,
             const fs::path& out, const std::string& baseline) {
  const Split want = parse_split(split);
  std::vector<SliceSample> samples;
  for (auto& e : read_corpus(corpus))
    if (e.split == want) samples.push_back(std::move(e.sample));
  if (samples.empty()) throw Error(ErrorCode::InvalidArgument, "no samples in split " + split);
  const auto r = parse_regime(regime);
  const auto records = eval_checkpoint(ckpt, samples, r);
  std::vector<EvalRecord> base;
  if (!baseline.empty()) base = eval_checkpoint(baseline, samples, r);
  write_report(out, records, baseline.empty() ? nullptr : &base);
  double mean = 0;
  for (const auto& x : records) mean += x.dsc;
  std::printf("%zu records, mean DSC %.4f -> %s\n", records.size(), mean / static_cast<double>(records.size()),
              out.string().c_str());
  return 0;
}

// ---- serve ----------------------------------------------------------------------

int cmd_serve(const std::vector<std::string>& ckpts, std::string addr, bool debug) {
  if (addr.empty()) {
    const char* env = std::getenv("SAMRI_ADDR");
    addr = env && *env ? env : "127.0.0.1:8471";
  }
  const auto [host, port] = parse_address(addr);
  ServiceConfig sc;
  sc.debug = debug;
  SegmentationService svc(sc);
  if (ckpts.empty()) svc.add_checkpoint("toy", std::make_shared<SamModel>(ModelConfig{}));
  for (const auto& c : ckpts) {
    try {
      auto loaded = load_checkpoint(c);
      svc.add_checkpoint(fs::path(c).stem().string(), std::shared_ptr<const SamModel>(std::move(loaded.model)));
    } catch (const std::exception& e) {
      svc.record_load_failure(e.what());
      std::fprintf(stderr, "checkpoint %s: %s\n", c.c_str(), e.what());
    }
  }
  HttpServer server(svc);
  std::printf("listening on %s:%d\n", host.c_str(), port);
  std::fflush(stdout);
  server.run(host, port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAM-style MRI segmentation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Run configuration JSON")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for phantoms, patient splits and sampling");

  auto* ph = app.add_subcommand("phantoms", "Write synthetic NIfTI volumes and label maps");
  std::string ph_out;
  std::vector<std::string> ph_datasets{"phantom"};
  std::size_t ph_count = 10;
  ph->add_option("--out", ph_out, "Output directory")->required();
  ph->add_option("--datasets", ph_datasets, "Dataset names, one subdirectory each");
  ph->add_option("--count", ph_count, "Volumes per dataset");

  auto* pre = app.add_subcommand("preprocess", "Slice, filter and split volumes into a corpus");
  std::string pre_in, pre_out;
  pre->add_option("--input", pre_in, "Directory of dataset subdirectories")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", pre_out, "Corpus directory")->required();

  auto* emb = app.add_subcommand("embed", "Precompute the embedding bank");
  std::string emb_corpus, emb_out;
  emb->add_option("--corpus", emb_corpus, "Corpus manifest")->required()->check(CLI::ExistingFile);
  emb->add_option("--out", emb_out, "Bank file")->required();

  auto* tr = app.add_subcommand("train", "Fine-tune the mask decoder");
  std::string tr_corpus, tr_bank, tr_out, tr_regime = "both";
  tr->add_option("--corpus", tr_corpus, "Corpus manifest")->required()->check(CLI::ExistingFile);
  tr->add_option("--bank", tr_bank, "Embedding bank; omitted means on-the-fly encoding")->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--regime", tr_regime, "box, box_point or both");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_corpus, ev_split = "test", ev_regime = "box", ev_out, ev_base;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint snapshot")->required()->check(CLI::ExistingFile);
  ev->add_option("--corpus", ev_corpus, "Corpus manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split, "train, val or test");
  ev->add_option("--regime", ev_regime, "box or box_point");
  ev->add_option("--out", ev_out, "Report directory")->required();
  ev->add_option("--baseline", ev_base, "Second checkpoint for paired comparison")->check(CLI::ExistingFile);

  auto* sv = app.add_subcommand("serve", "Run the HTTP segmentation service");
  std::vector<std::string> sv_ckpts;
  std::string sv_addr;
  bool sv_debug = false;
  sv->add_option("--ckpt", sv_ckpts, "Checkpoint snapshots; none serves an untrained toy model");
  sv->add_option("--addr", sv_addr, "host:port, overrides SAMRI_ADDR");
  sv->add_flag("--debug", sv_debug, "Expose per-slice encoder counters at /v1/health");

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    if (*ph) return cmd_phantoms(g, ph_out, ph_datasets, ph_count);
    if (*pre) return cmd_preprocess(g, pre_in, pre_out);
    if (*emb) return cmd_embed(g, emb_corpus, emb_out);
    if (*tr) return cmd_train(g, tr_corpus, tr_bank, tr_out, tr_regime);
    if (*ev) return cmd_eval(ev_ckpt, ev_corpus, ev_split, ev_regime, ev_out, ev_base);
    if (*sv) return cmd_serve(sv_ckpts, sv_addr, sv_debug);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
