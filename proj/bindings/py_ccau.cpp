#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ccau/config.hpp"
#include "ccau/data.hpp"
#include "ccau/exports.hpp"
#include "ccau/fewshot.hpp"
#include "ccau/losses.hpp"
#include "ccau/metrics.hpp"
#include "ccau/schema.hpp"
#include "ccau/synth.hpp"
#include "ccau/trainer.hpp"

namespace py = pybind11;
using namespace ccau;

namespace {

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const Arr& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

ag::Var to_var(const Arr& a, bool requires_grad = false) {
  ag::Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<size_t>(i)] = a.shape(i);
  return ag::leaf(shape, to_vec(a), requires_grad);
}

Config config_from_text(const std::string& text) { return Config::parse_string(text); }

py::dict metrics_to_dict(const train::EvalMetrics& em) {
  py::dict d;
  d["acc1"] = em.acc1;
  d["acc3"] = em.acc3;
  d["map"] = em.map;
  d["n"] = em.n;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ccau, m) {
  m.doc() = "multi-modal cooperative compositional action understanding core";

  // --- schema ops -----------------------------------------------------------
  m.def(
      "partition_blocks",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> video, int64_t stride,
         int64_t n_blocks, int64_t frames_per_block) {
        npy::Array arr;
        arr.shape.assign(video.shape(), video.shape() + video.ndim());
        arr.data.assign(video.data(), video.data() + video.size());
        auto part = schema::partition_blocks(arr, stride, n_blocks, frames_per_block);
        py::array_t<float> out(part.blocks.shape);
        std::copy(part.blocks.data.begin(), part.blocks.data.end(), out.mutable_data());
        return py::make_tuple(out, part.sample_indices);
      },
      py::arg("video"), py::arg("stride") = 3, py::arg("n_blocks") = 8,
      py::arg("frames_per_block") = 5);

  m.def(
      "log_mel_spectrogram",
      [](const Arr& waveform, double sample_rate, int64_t n_mels, double window_sec,
         double hop_sec, int64_t target_frames) {
        schema::LogMelParams p;
        p.n_mels = n_mels;
        p.window_sec = window_sec;
        p.hop_sec = hop_sec;
        p.target_frames = target_frames;
        auto spec = schema::log_mel_spectrogram(to_vec(waveform), sample_rate, p);
        py::array_t<double> out({spec.frames, spec.mels});
        std::copy(spec.values.begin(), spec.values.end(), out.mutable_data());
        return out;
      },
      py::arg("waveform"), py::arg("sample_rate"), py::arg("n_mels") = 64,
      py::arg("window_sec") = 0.025, py::arg("hop_sec") = 0.010, py::arg("target_frames") = 0);

  m.def(
      "atomic_multihot",
      [](const std::vector<std::tuple<int64_t, int64_t, int64_t>>& intervals, int64_t n_atomic,
         const std::vector<std::vector<int64_t>>& block_indices) {
        std::vector<schema::AtomicActionInterval> ivs;
        for (const auto& [cls, s, e] : intervals) ivs.push_back({cls, s, e});
        auto mh = schema::atomic_multihot(ivs, n_atomic, block_indices);
        py::array_t<double> per_block({mh.n_blocks, mh.n_atomic});
        std::copy(mh.per_block.begin(), mh.per_block.end(), per_block.mutable_data());
        py::array_t<double> seq(static_cast<py::ssize_t>(mh.n_atomic));
        std::copy(mh.sequence.begin(), mh.sequence.end(), seq.mutable_data());
        return py::make_tuple(per_block, seq);
      },
      py::arg("intervals"), py::arg("n_atomic"), py::arg("block_indices"));

  m.def("block_sample_indices", &schema::block_sample_indices, py::arg("total_frames"),
        py::arg("stride"), py::arg("n_blocks"), py::arg("frames_per_block"));

  m.def(
      "scene_graph_matrix",
      [](const std::vector<std::tuple<int64_t, int64_t, int64_t>>& pairs, int64_t n_obj,
         int64_t n_rel) {
        // pairs: (frame, object_category, relationship_category)
        std::vector<schema::SceneGraphFrame> frames;
        for (const auto& [f, obj, rel] : pairs) {
          schema::SceneGraphFrame g;
          g.frame_index = f;
          g.objects = {{0, obj, 0, 0, 1, 1}, {1, (obj + 1) % n_obj, 0, 0, 1, 1}};
          g.relationships = {{1, 0, rel}};
          frames.push_back(std::move(g));
        }
        auto v = schema::encode_scene_graph_matrix(frames, n_obj, n_rel);
        py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
        std::copy(v.begin(), v.end(), out.mutable_data());
        return out;
      },
      py::arg("pairs"), py::arg("n_obj"), py::arg("n_rel"));

  m.def("validate_dataset", [](const std::string& dir) {
    auto parsed = schema::parse_annotations(dir);
    py::dict d;
    d["sequences"] = parsed.sequences.size();
    d["train"] = parsed.split.train.size();
    d["test1"] = parsed.split.test1.size();
    d["test2"] = parsed.split.test2.size();
    py::list issues;
    for (const auto& i : parsed.issues) {
      py::dict ij;
      ij["sequence_id"] = i.sequence_id;
      ij["line"] = i.line;
      ij["message"] = i.message;
      issues.append(ij);
    }
    d["violations"] = issues;
    return d;
  });

  // --- synthetic benchmark ---------------------------------------------------
  m.def(
      "generate_dataset",
      [](const std::string& config_text, const std::string& out_dir) {
        synth::Generator gen(synth::SynthConfig::from_config(config_from_text(config_text)));
        gen.generate_dataset(out_dir);
      },
      py::arg("config_text"), py::arg("out_dir"));

  m.def(
      "bayes_oracle_accuracy",
      [](const std::string& config_text, const std::string& dataset_dir,
         const std::string& split) {
        auto cfg = synth::SynthConfig::from_config(config_from_text(config_text));
        auto parsed = schema::parse_annotations(dataset_dir);
        const auto& ids = split == "train"
                              ? parsed.split.train
                              : (split == "test1" ? parsed.split.test1 : parsed.split.test2);
        return synth::bayes_oracle_accuracy(cfg, dataset_dir, ids);
      },
      py::arg("config_text"), py::arg("dataset_dir"), py::arg("split"));

  // --- losses -------------------------------------------------------------------
  m.def(
      "alignment_nce_loss",
      [](const Arr& anchors, const Arr& candidates, bool normalize, double temperature) {
        losses::NceOptions o{normalize, temperature};
        return losses::alignment_nce_loss(to_var(anchors), to_var(candidates), o)->val[0];
      },
      py::arg("anchors"), py::arg("candidates"), py::arg("normalize") = false,
      py::arg("temperature") = 1.0);

  m.def(
      "multi_modal_alignment_loss",
      [](const std::vector<Arr>& embeddings, bool normalize, double temperature) {
        std::vector<ag::Var> vars;
        for (const auto& e : embeddings) vars.push_back(to_var(e));
        losses::NceOptions o{normalize, temperature};
        return losses::multi_modal_alignment_loss(vars, o)->val[0];
      },
      py::arg("embeddings"), py::arg("normalize") = false, py::arg("temperature") = 1.0);

  m.def(
      "attention_pool",
      [](const Arr& grid_cells, const Arr& logits, double tau) {
        std::vector<double> probs;
        ag::Var pooled = losses::attention_pool(to_var(grid_cells), to_var(logits), tau, &probs);
        py::array_t<double> pv(static_cast<py::ssize_t>(pooled->val.size()));
        std::copy(pooled->val.begin(), pooled->val.end(), pv.mutable_data());
        py::array_t<double> pp(static_cast<py::ssize_t>(probs.size()));
        std::copy(probs.begin(), probs.end(), pp.mutable_data());
        return py::make_tuple(pv, pp);
      },
      py::arg("grid_cells"), py::arg("logits"), py::arg("tau") = 1.0);

  m.def("compositional_loss", [](double lv, double la, double lambda) {
    return losses::compositional_loss(ag::scalar(lv), ag::scalar(la), lambda)->val[0];
  });

  m.def("uncertainty_weighted_loss", [](double lv, double la, double lsv, double lsa) {
    return losses::uncertainty_weighted_loss(ag::scalar(lv), ag::scalar(la),
                                             ag::leaf({1}, {lsv}, false),
                                             ag::leaf({1}, {lsa}, false))
        ->val[0];
  });

  m.def(
      "distillation_loss",
      [](const Arr& student, const Arr& teacher, const std::vector<int64_t>& labels, double alpha,
         double beta, double tau) {
        return losses::distillation_loss(to_var(student), to_vec(teacher), labels, alpha, beta,
                                         tau)
            ->val[0];
      },
      py::arg("student_logits"), py::arg("teacher_logits"), py::arg("labels"),
      py::arg("alpha") = 1.0, py::arg("beta") = 0.1, py::arg("tau") = 2.5);

  m.def(
      "predictive_contrastive_loss",
      [](const Arr& predicted, const Arr& actual, bool normalize, double temperature) {
        losses::NceOptions o{normalize, temperature};
        return losses::predictive_contrastive_loss(to_var(predicted), to_var(actual), o)->val[0];
      },
      py::arg("predicted"), py::arg("actual"), py::arg("normalize") = false,
      py::arg("temperature") = 1.0);

  // --- metrics ---------------------------------------------------------------------
  m.def(
      "topk_accuracy",
      [](const Arr& scores, const std::vector<int64_t>& labels, int64_t k) {
        if (scores.ndim() != 2) throw std::invalid_argument("scores must be 2-D");
        return eval::topk_accuracy(to_vec(scores), scores.shape(0), scores.shape(1), labels, k);
      },
      py::arg("scores"), py::arg("labels"), py::arg("k"));

  m.def(
      "support_weighted_map",
      [](const Arr& scores, const Arr& multi_hot) {
        if (scores.ndim() != 2) throw std::invalid_argument("scores must be 2-D");
        return eval::support_weighted_map(to_vec(scores), scores.shape(0), scores.shape(1),
                                          to_vec(multi_hot))
            .map;
      },
      py::arg("scores"), py::arg("multi_hot"));

  // --- training ------------------------------------------------------------------
  m.def(
      "run_training",
      [](const std::string& config_text, const std::string& data_dir,
         const std::string& out_dir) {
        auto res = train::run_training(config_from_text(config_text), data_dir, out_dir);
        py::dict d;
        for (const auto& [key, em] : res.metrics) d[py::str(key)] = metrics_to_dict(em);
        return d;
      },
      py::arg("config_text"), py::arg("data_dir"), py::arg("out_dir"));

  m.def(
      "evaluate_run",
      [](const std::string& run_dir, const std::string& split, const std::string& modality) {
        Config cfg = Config::parse_file(run_dir + "/config.snapshot.ini");
        const std::string data_dir = cfg.get_str("data", "path", "");
        auto parsed = schema::parse_annotations(data_dir);
        const auto& vocab = parsed.split.vocab;
        auto mcfg = encoders::ModelConfig::from_config(cfg, vocab.n_activity, vocab.n_atomic,
                                                       vocab.n_obj * vocab.n_rel);
        data::DatasetCache cache(data_dir, mcfg);
        auto opts = train::TrainOptions::from_config(cfg);
        train::Trainer trainer(opts, mcfg, cache);
        train::load_checkpoint(trainer.model(), run_dir + "/checkpoint.bin");
        auto em = trainer.evaluate(schema::modality_from_name(modality), cache.split_ids(split));
        return metrics_to_dict(em);
      },
      py::arg("run_dir"), py::arg("split"), py::arg("modality"));
}
