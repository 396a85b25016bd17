#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ccau/config.hpp"
#include "ccau/data.hpp"
#include "ccau/exports.hpp"
#include "ccau/fewshot.hpp"
#include "ccau/synth.hpp"
#include "ccau/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ccau;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
};

Config load_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config() : Config::parse_file(args.config_path);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  if (args.seed >= 0) {
    cfg.set("train", "seed", std::to_string(args.seed));
    cfg.set("synth", "seed", std::to_string(args.seed));
  }
  return cfg;
}

std::string run_root() {
  const char* env = std::getenv("CCAU_RUN_ROOT");
  return env ? env : "runs";
}

// rebuild a trainer in eval state from a run directory
struct LoadedRun {
  Config cfg;
  std::unique_ptr<data::DatasetCache> cache;
  std::unique_ptr<train::Trainer> trainer;
};

LoadedRun load_run(const std::string& run_dir) {
  LoadedRun r;
  r.cfg = Config::parse_file((fs::path(run_dir) / "config.snapshot.ini").string());
  const std::string data_dir = r.cfg.get_str("data", "path", "");
  auto parsed = schema::parse_annotations(data_dir);
  const auto& vocab = parsed.split.vocab;
  auto mcfg = encoders::ModelConfig::from_config(r.cfg, vocab.n_activity, vocab.n_atomic,
                                                 vocab.n_obj * vocab.n_rel);
  r.cache = std::make_unique<data::DatasetCache>(data_dir, mcfg);
  auto opts = train::TrainOptions::from_config(r.cfg);
  r.trainer = std::make_unique<train::Trainer>(opts, mcfg, *r.cache);
  train::load_checkpoint(r.trainer->model(), (fs::path(run_dir) / "checkpoint.bin").string());
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CCAU: cooperative compositional action understanding"};
  app.require_subcommand(1);

  CommonArgs common;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "config file (ini sections)");
    sub->add_option("--set", common.overrides, "override section.key=value")->take_all();
    sub->add_option("--seed", common.seed, "seed override for [train]/[synth]");
  };

  // synth
  std::string out_dir;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic benchmark dataset");
  add_common(synth_cmd);
  synth_cmd->add_option("--out", out_dir, "output dataset directory")->required();

  // validate
  std::string data_path;
  auto* validate_cmd = app.add_subcommand("validate", "parse + validate a dataset directory");
  validate_cmd->add_option("path", data_path, "dataset directory")->required();

  // train
  std::string train_data, train_out, regime_flag, modalities_flag;
  auto* train_cmd = app.add_subcommand("train", "run a training regime");
  add_common(train_cmd);
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "run directory (default under run root)");
  train_cmd->add_option("--regime", regime_flag, "SM|CT|SKD|CKD|SS|SS_SV");
  train_cmd->add_option("--modalities", modalities_flag, "comma list, e.g. ego_rgb,audio");

  // eval
  std::string eval_run, eval_split = "test1", eval_modality;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a finished run on one split");
  eval_cmd->add_option("--run", eval_run, "run directory")->required();
  eval_cmd->add_option("--split", eval_split, "train|test1|test2");
  eval_cmd->add_option("--modality", eval_modality, "restrict to one modality");

  // fewshot
  std::string fs_run;
  int64_t fs_novel = 0;
  auto* fs_cmd = app.add_subcommand("fewshot", "frozen-backbone few-shot protocol");
  add_common(fs_cmd);
  fs_cmd->add_option("--run", fs_run, "run directory (backbone)")->required();
  fs_cmd->add_option("--novel", fs_novel, "novel class count override");

  // export
  std::string ex_run, ex_kind, ex_split = "test1", ex_out, ex_modality = "ego_rgb", ex_other;
  auto* ex_cmd = app.add_subcommand("export", "export embeddings / attention / plots");
  ex_cmd->add_option("--run", ex_run, "run directory")->required();
  ex_cmd->add_option("--kind", ex_kind, "embeddings|attention|plots")->required();
  ex_cmd->add_option("--split", ex_split, "split to export");
  ex_cmd->add_option("--modality", ex_modality, "modality to export");
  ex_cmd->add_option("--pair", ex_other, "attention: the paired modality");
  ex_cmd->add_option("--out", ex_out, "output file/directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      Config cfg = load_config(common);
      synth::Generator gen(synth::SynthConfig::from_config(cfg));
      gen.generate_dataset(out_dir);
      std::cout << "dataset written to " << out_dir << "\n";
      return 0;
    }

    if (validate_cmd->parsed()) {
      auto parsed = schema::parse_annotations(data_path);
      json report;
      report["sequences"] = parsed.sequences.size();
      report["train"] = parsed.split.train.size();
      report["test1"] = parsed.split.test1.size();
      report["test2"] = parsed.split.test2.size();
      json issues = json::array();
      for (const auto& i : parsed.issues) {
        json ij;
        ij["sequence_id"] = i.sequence_id;
        ij["line"] = i.line;
        ij["message"] = i.message;
        issues.push_back(ij);
      }
      report["violations"] = issues;
      std::cout << report.dump(2) << "\n";
      return parsed.issues.empty() ? 0 : 1;
    }

    if (train_cmd->parsed()) {
      Config cfg = load_config(common);
      if (!regime_flag.empty()) cfg.set("train", "regime", regime_flag);
      if (!modalities_flag.empty()) cfg.set("train", "modalities", modalities_flag);
      if (train_out.empty()) {
        const std::string regime = cfg.get_str("train", "regime", "CT");
        train_out = (fs::path(run_root()) /
                     (regime + "-seed" + cfg.get_str("train", "seed", "0")))
                        .string();
      }
      auto res = train::run_training(cfg, train_data, train_out);
      std::cout << "run written to " << train_out << "\n";
      for (const auto& [key, em] : res.metrics)
        std::cout << key << ": acc1=" << em.acc1 << " acc3=" << em.acc3 << " map=" << em.map
                  << " n=" << em.n << "\n";
      return 0;
    }

    if (eval_cmd->parsed()) {
      LoadedRun run = load_run(eval_run);
      auto mods = run.trainer->options().modalities;
      if (!eval_modality.empty()) mods = {schema::modality_from_name(eval_modality)};
      json out = json::array();
      for (auto m : mods) {
        auto em = run.trainer->evaluate(m, run.cache->split_ids(eval_split));
        json rec;
        rec["regime"] = train::regime_name(run.trainer->options().regime);
        rec["modality"] = schema::modality_name(m);
        rec["split"] = eval_split;
        rec["acc1"] = em.acc1;
        rec["acc3"] = em.acc3;
        rec["map"] = em.map;
        rec["n"] = em.n;
        out.push_back(rec);
        std::ofstream f(fs::path(eval_run) /
                        ("eval_" + eval_split + "_" + schema::modality_name(m) + ".json"));
        f << rec.dump(2) << "\n";
      }
      std::cout << out.dump(2) << "\n";
      return 0;
    }

    if (fs_cmd->parsed()) {
      LoadedRun run = load_run(fs_run);
      eval::FewShotConfig fcfg;
      fcfg.novel_count = fs_novel > 0
                             ? fs_novel
                             : run.cfg.get_int("eval", "novel_count",
                                               std::max<int64_t>(2, run.cache->n_activity() / 5));
      fcfg.seed = static_cast<uint64_t>(run.cfg.get_int("eval", "fewshot_seed", 0));
      fcfg.probe_steps = run.cfg.get_int("eval", "probe_steps", fcfg.probe_steps);
      fcfg.probe_lr = run.cfg.get_double("eval", "probe_lr", fcfg.probe_lr);
      fcfg.modality = schema::modality_from_name(
          run.cfg.get_str("eval", "fewshot_modality", "ego_rgb"));
      auto rows = eval::few_shot_protocol(*run.trainer, *run.cache, fcfg);
      json out = json::array();
      for (const auto& r : rows) {
        json rec;
        rec["k"] = r.k;
        rec["atomic_map"] = r.atomic_map;
        rec["activity_acc"] = r.activity_acc;
        json sf = json::array();
        for (auto [cls, avail] : r.shortfalls) sf.push_back({{"class", cls}, {"available", avail}});
        rec["shortfalls"] = sf;
        out.push_back(rec);
      }
      std::cout << out.dump(2) << "\n";
      std::ofstream f(fs::path(fs_run) / "fewshot.json");
      f << out.dump(2) << "\n";
      return 0;
    }

    if (ex_cmd->parsed()) {
      LoadedRun run = load_run(ex_run);
      const auto ids = run.cache->split_ids(ex_split);
      const schema::Modality m = schema::modality_from_name(ex_modality);
      if (ex_kind == "embeddings") {
        eval::export_embeddings(*run.trainer, m, ids, *run.cache, ex_out);
      } else if (ex_kind == "plots") {
        const std::string tsv = ex_out + ".tsv";
        eval::export_embeddings(*run.trainer, m, ids, *run.cache, tsv);
        eval::export_projection_plot(tsv, ex_out);
      } else if (ex_kind == "attention") {
        if (ex_other.empty()) throw std::invalid_argument("attention export requires --pair");
        eval::export_attention_maps(*run.trainer, *run.cache, m,
                                    schema::modality_from_name(ex_other), ids, ex_out);
      } else {
        throw std::invalid_argument("unknown export kind: " + ex_kind);
      }
      std::cout << "exported " << ex_kind << " to " << ex_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
