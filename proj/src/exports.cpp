#include "ccau/exports.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "ccau/npy.hpp"
#include "ccau/png.hpp"

namespace fs = std::filesystem;

namespace ccau::eval {

void export_embeddings(train::Trainer& trainer, Modality m, const std::vector<std::string>& ids,
                       data::DatasetCache& cache, const std::string& tsv_path) {
  const int64_t D = trainer.model().cfg.embed_dim;
  auto feats = trainer.sequence_features(m, ids);
  std::ofstream out(tsv_path);
  if (!out) throw std::runtime_error("cannot write " + tsv_path);
  out << "sequence_id\tactivity";
  for (int64_t d = 0; d < D; ++d) out << "\tf" << d;
  out << "\n";
  char buf[32];
  for (size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << "\t" << cache.get(ids[i], {}).activity;
    for (int64_t d = 0; d < D; ++d) {
      snprintf(buf, sizeof(buf), "%.9g", feats[i * static_cast<size_t>(D) + d]);
      out << "\t" << buf;
    }
    out << "\n";
  }
}

namespace {

struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<int64_t> labels;
  std::vector<double> feats;  // n x d
  int64_t d = 0;
};

EmbeddingTable read_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  EmbeddingTable t;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::getline(ls, tok, '\t');
    t.ids.push_back(tok);
    std::getline(ls, tok, '\t');
    t.labels.push_back(std::stoll(tok));
    int64_t d = 0;
    while (std::getline(ls, tok, '\t')) {
      t.feats.push_back(std::stod(tok));
      ++d;
    }
    if (t.d == 0) t.d = d;
    if (d != t.d) throw std::runtime_error("ragged embeddings tsv: " + path);
  }
  return t;
}

void class_color(int64_t cls, uint8_t* rgb) {
  const double h = std::fmod(0.11 + 0.618033988749895 * static_cast<double>(cls), 1.0) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double v = 220, s = 0.75;
  const double p = v * (1 - s), q = v * (1 - f * s), u = v * (1 - (1 - f) * s);
  double r = v, g = u, b = p;
  switch (i) {
    case 0: r = v; g = u; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = u; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = u; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
  }
  rgb[0] = static_cast<uint8_t>(r);
  rgb[1] = static_cast<uint8_t>(g);
  rgb[2] = static_cast<uint8_t>(b);
}

}  // namespace

void export_projection_plot(const std::string& tsv_path, const std::string& png_path) {
  EmbeddingTable t = read_tsv(tsv_path);
  const int64_t n = static_cast<int64_t>(t.ids.size());
  if (n < 2) throw std::runtime_error("projection plot needs at least 2 rows");

  using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<EMat> x(t.feats.data(), n, t.d);
  Eigen::RowVectorXd mu = x.colwise().mean();
  EMat centered = x.rowwise() - mu;
  EMat cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<EMat> es(cov);
  // top-2 principal directions (eigenvalues ascend)
  EMat proj(t.d, 2);
  proj.col(0) = es.eigenvectors().col(t.d - 1);
  proj.col(1) = es.eigenvectors().col(t.d >= 2 ? t.d - 2 : t.d - 1);
  EMat p2 = centered * proj;

  const int sz = 512, margin = 24;
  png::Image img(sz, sz);
  const double xmin = p2.col(0).minCoeff(), xmax = p2.col(0).maxCoeff();
  const double ymin = p2.col(1).minCoeff(), ymax = p2.col(1).maxCoeff();
  const double xs = xmax > xmin ? (sz - 2.0 * margin) / (xmax - xmin) : 1.0;
  const double ys = ymax > ymin ? (sz - 2.0 * margin) / (ymax - ymin) : 1.0;
  uint8_t rgb[3];
  for (int64_t i = 0; i < n; ++i) {
    const int px = margin + static_cast<int>((p2(i, 0) - xmin) * xs);
    const int py = sz - margin - static_cast<int>((p2(i, 1) - ymin) * ys);
    class_color(t.labels[static_cast<size_t>(i)], rgb);
    img.fill_rect(px - 2, py - 2, 5, 5, rgb[0], rgb[1], rgb[2]);
  }
  png::write(png_path, img);
}

void export_attention_maps(train::Trainer& trainer, data::DatasetCache& cache, Modality m,
                           Modality other, const std::vector<std::string>& ids,
                           const std::string& out_dir) {
  auto& model = trainer.model();
  if (model.attn_heads.empty() || !model.attn_heads.count(m) ||
      !model.attn_heads.at(m).count(other))
    throw std::invalid_argument("checkpoint was trained without attention for this pair");
  auto& stack = model.stack(m);
  const auto& head = model.attn_heads.at(m).at(other);
  const int64_t S = stack.cells(), gh = stack.grid_h(), gw = stack.grid_w();
  const int64_t N = model.cfg.n_blocks;

  fs::create_directories(out_dir);
  ag::NoGradGuard ng;
  Rng dummy(0);
  for (const auto& id : ids) {
    std::vector<const data::PreparedSequence*> batch{&cache.get(id, {m})};
    ag::Var x = cache.batch_inputs(batch, m);
    ag::Var z = stack.encode_blocks(x);
    auto ctx = stack.aggregate(z, N, 1, dummy, false);

    std::vector<double> maps(static_cast<size_t>(N * S));
    for (int64_t j = 0; j < N; ++j) {
      ag::Var logits = head.logits(ctx[static_cast<size_t>(j)]);
      auto p = ag::softmax_groups(logits->val, S, trainer.options().tau_att);
      std::copy(p.begin(), p.end(), maps.begin() + j * S);
    }
    npy::save_f64((fs::path(out_dir) / (id + ".attention.npy")).string(), {N, gh, gw}, maps);

    // montage: first frame of each block next to its upscaled map
    const int cell = 48;
    const auto& blk = batch[0]->blocks.at(m);
    const auto& bshape = batch[0]->block_shape.at(m);  // video: {3,K,H,W}
    const bool has_frames = bshape.size() == 4;
    const int64_t fh = has_frames ? bshape[2] : 0, fw = has_frames ? bshape[3] : 0;
    png::Image img(static_cast<int>(cell * (has_frames ? 2 : 1)), static_cast<int>(cell * N));
    for (int64_t j = 0; j < N; ++j) {
      int xoff = 0;
      if (has_frames) {
        const int64_t K = bshape[1];
        const double* block = blk.data() + j * 3 * K * fh * fw;
        for (int y = 0; y < cell; ++y) {
          for (int xp = 0; xp < cell; ++xp) {
            const int64_t sy = y * fh / cell, sx = xp * fw / cell;
            auto sample = [&](int64_t c) {
              const double v = block[(c * K + 0) * fh * fw + sy * fw + sx];
              return static_cast<uint8_t>(std::clamp((v + 1.0) * 127.5, 0.0, 255.0));
            };
            img.set(xp, static_cast<int>(j) * cell + y, sample(0), sample(1), sample(2));
          }
        }
        xoff = cell;
      }
      double pmax = 0.0;
      for (int64_t s = 0; s < S; ++s) pmax = std::max(pmax, maps[static_cast<size_t>(j * S + s)]);
      for (int y = 0; y < cell; ++y) {
        for (int xp = 0; xp < cell; ++xp) {
          const int64_t gy = y * gh / cell, gx = xp * gw / cell;
          const double p = maps[static_cast<size_t>(j * S + gy * gw + gx)];
          const auto v = static_cast<uint8_t>(std::clamp(p / std::max(pmax, 1e-12) * 255.0, 0.0, 255.0));
          img.set(xoff + xp, static_cast<int>(j) * cell + y, v, v, v);
        }
      }
    }
    png::write((fs::path(out_dir) / (id + ".attention.png")).string(), img);
  }
}

double mean_silhouette(const std::vector<double>& points2d, const std::vector<int64_t>& labels) {
  const int64_t n = static_cast<int64_t>(labels.size());
  if (static_cast<int64_t>(points2d.size()) != 2 * n)
    throw std::invalid_argument("mean_silhouette expects n x 2 points");
  auto dist = [&](int64_t i, int64_t j) {
    const double dx = points2d[2 * i] - points2d[2 * j];
    const double dy = points2d[2 * i + 1] - points2d[2 * j + 1];
    return std::sqrt(dx * dx + dy * dy);
  };
  std::map<int64_t, std::vector<int64_t>> clusters;
  for (int64_t i = 0; i < n; ++i) clusters[labels[static_cast<size_t>(i)]].push_back(i);
  double total = 0.0;
  int64_t counted = 0;
  for (int64_t i = 0; i < n; ++i) {
    const auto& own = clusters[labels[static_cast<size_t>(i)]];
    if (own.size() < 2) continue;
    double a = 0.0;
    for (int64_t j : own)
      if (j != i) a += dist(i, j);
    a /= static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [cls, members] : clusters) {
      if (cls == labels[static_cast<size_t>(i)]) continue;
      double m = 0.0;
      for (int64_t j : members) m += dist(i, j);
      b = std::min(b, m / static_cast<double>(members.size()));
    }
    if (std::isinf(b)) continue;
    total += (b - a) / std::max(a, b);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("mean_silhouette: need >= 2 clusters");
  return total / static_cast<double>(counted);
}

}  // namespace ccau::eval
