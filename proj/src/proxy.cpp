#include "sempred/proxy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace sempred {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kNormFloor = 1e-30;

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void affine(const std::vector<double>& v, const EncoderParams::Layer& L, const double* x, double* y) {
  const double* W = v.data() + L.w_off;
  const double* b = v.data() + L.b_off;
  for (int o = 0; o < L.out; ++o) y[o] = b[o] + dot(W + static_cast<std::size_t>(o) * L.in, x, L.in);
}

// Accumulates dW, db into grad and writes dL/dx into dx when requested.
void affine_backward(const std::vector<double>& v, const EncoderParams::Layer& L, const double* x,
                     const double* dy, std::vector<double>& grad, double* dx) {
  double* gW = grad.data() + L.w_off;
  double* gb = grad.data() + L.b_off;
  for (int o = 0; o < L.out; ++o) {
    const double g = dy[o];
    gb[o] += g;
    double* row = gW + static_cast<std::size_t>(o) * L.in;
    for (int i = 0; i < L.in; ++i) row[i] += g * x[i];
  }
  if (dx) {
    const double* W = v.data() + L.w_off;
    for (int i = 0; i < L.in; ++i) dx[i] = 0.0;
    for (int o = 0; o < L.out; ++o) {
      const double g = dy[o];
      const double* row = W + static_cast<std::size_t>(o) * L.in;
      for (int i = 0; i < L.in; ++i) dx[i] += g * row[i];
    }
  }
}

struct Cache {
  std::vector<double> x;             // input
  std::vector<double> a1, h1;        // encoder layer 1 pre/post rectifier
  std::vector<double> a2, h2;        // encoder layer 2
  std::vector<double> z;             // encoder output
  std::vector<double> q1, g1;        // projector layer 1
  std::vector<double> p;             // projector output
};

void forward_cache(const EncoderParams& P, std::span<const float> e, Cache& c) {
  const auto& enc = P.encoder_layers();
  const auto& proj = P.projector_layers();
  const auto& v = P.values();
  c.x.assign(e.begin(), e.end());
  c.a1.resize(enc[0].out);
  affine(v, enc[0], c.x.data(), c.a1.data());
  c.h1 = c.a1;
  for (auto& t : c.h1) t = t > 0.0 ? t : 0.0;
  c.a2.resize(enc[1].out);
  affine(v, enc[1], c.h1.data(), c.a2.data());
  c.h2 = c.a2;
  for (auto& t : c.h2) t = t > 0.0 ? t : 0.0;
  c.z.resize(enc[2].out);
  affine(v, enc[2], c.h2.data(), c.z.data());
  c.q1.resize(proj[0].out);
  affine(v, proj[0], c.z.data(), c.q1.data());
  c.g1 = c.q1;
  for (auto& t : c.g1) t = t > 0.0 ? t : 0.0;
  c.p.resize(proj[1].out);
  affine(v, proj[1], c.g1.data(), c.p.data());
}

// Backpropagates dL/d(projector output) through projector and encoder.
void backward_from_projector(const EncoderParams& P, const Cache& c, const std::vector<double>& gp,
                             std::vector<double>& grad) {
  const auto& enc = P.encoder_layers();
  const auto& proj = P.projector_layers();
  const auto& v = P.values();

  std::vector<double> dg1(proj[1].in);
  affine_backward(v, proj[1], c.g1.data(), gp.data(), grad, dg1.data());
  for (int i = 0; i < proj[0].out; ++i)
    if (c.q1[static_cast<std::size_t>(i)] <= 0.0) dg1[static_cast<std::size_t>(i)] = 0.0;

  std::vector<double> dz(proj[0].in);
  affine_backward(v, proj[0], c.z.data(), dg1.data(), grad, dz.data());

  std::vector<double> dh2(enc[2].in);
  affine_backward(v, enc[2], c.h2.data(), dz.data(), grad, dh2.data());
  for (int i = 0; i < enc[1].out; ++i)
    if (c.a2[static_cast<std::size_t>(i)] <= 0.0) dh2[static_cast<std::size_t>(i)] = 0.0;

  std::vector<double> dh1(enc[1].in);
  affine_backward(v, enc[1], c.h1.data(), dh2.data(), grad, dh1.data());
  for (int i = 0; i < enc[0].out; ++i)
    if (c.a1[static_cast<std::size_t>(i)] <= 0.0) dh1[static_cast<std::size_t>(i)] = 0.0;

  affine_backward(v, enc[0], c.x.data(), dh1.data(), grad, nullptr);
}

double vec_norm(const std::vector<double>& a) { return std::sqrt(dot(a.data(), a.data(), static_cast<int>(a.size()))); }

double cosine_checked(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  const double na = vec_norm(a), nb = vec_norm(b);
  if (na < kNormFloor || nb < kNormFloor)
    fail(ErrorCode::degenerate, std::string("degenerate latent (zero norm) in ") + what);
  return dot(a.data(), b.data(), static_cast<int>(a.size())) / (na * nb);
}

// ga += coeff * d cos(a,b)/da, gb += coeff * d cos(a,b)/db.
void add_cosine_grad(const std::vector<double>& a, const std::vector<double>& b, double coeff,
                     std::vector<double>& ga, std::vector<double>& gb) {
  const double na = vec_norm(a), nb = vec_norm(b);
  const double inv = 1.0 / (na * nb);
  const double s = dot(a.data(), b.data(), static_cast<int>(a.size())) * inv;
  const double ia2 = 1.0 / (na * na), ib2 = 1.0 / (nb * nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ga[i] += coeff * (b[i] * inv - s * a[i] * ia2);
    gb[i] += coeff * (a[i] * inv - s * b[i] * ib2);
  }
}

struct BatchForward {
  Cache query;
  std::vector<Cache> docs;
  bool has_query = false;
};

BatchForward forward_batch(const EncoderParams& params, const MiniBatch& batch, bool with_query) {
  BatchForward bf;
  bf.has_query = with_query;
  if (with_query) forward_cache(params, batch.query, bf.query);
  bf.docs.resize(batch.docs.size());
  for (std::size_t i = 0; i < batch.docs.size(); ++i) forward_cache(params, batch.docs[i], bf.docs[i]);
  return bf;
}

std::vector<int> class_indices(const MiniBatch& batch, bool positive) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < batch.labels.size(); ++i)
    if ((batch.labels[i] != 0) == positive) idx.push_back(static_cast<int>(i));
  return idx;
}

class Adam {
 public:
  Adam(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::vector<double>& w, const std::vector<double>& g) {
    ++t_;
    const double b1c = 1.0 - std::pow(kBeta1, t_);
    const double b2c = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g[i] * g[i];
      w[i] -= lr_ * (m_[i] / b1c) / (std::sqrt(v_[i] / b2c) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace

void TrainingConfig::validate() const {
  if (!(temperature > 0.0)) fail(ErrorCode::invalid_argument, "temperature must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::invalid_argument, "lambda must be in [0, 1]");
  if (!(learning_rate > 0.0)) fail(ErrorCode::invalid_argument, "learning_rate must be positive");
  if (epochs_phase1 < 0 || epochs_phase2 < 0) fail(ErrorCode::invalid_argument, "epoch counts must be >= 0");
  if (batch_size < 2) fail(ErrorCode::invalid_argument, "batch_size must be >= 2");
  if (!(rebalance_min_ratio > 0.0 && rebalance_min_ratio <= 0.5))
    fail(ErrorCode::invalid_argument, "rebalance_min_ratio must be in (0, 0.5]");
  if (!(noise_sigma_scale > 0.0)) fail(ErrorCode::invalid_argument, "noise_sigma_scale must be positive");
  if (hidden1 < 1 || hidden2 < 1 || latent_dim < 1 || projector_hidden < 1 || projector_dim < 1)
    fail(ErrorCode::invalid_argument, "layer widths must be positive");
}

EncoderParams EncoderParams::with_shapes(int input_dim, int h1, int h2, int latent, int proj_hidden, int proj_out) {
  EncoderParams p;
  const int enc_in[3] = {input_dim, h1, h2};
  const int enc_out[3] = {h1, h2, latent};
  std::size_t off = 0;
  for (int i = 0; i < 3; ++i) {
    p.encoder_[i] = {off, off + static_cast<std::size_t>(enc_in[i]) * enc_out[i], enc_in[i], enc_out[i]};
    off += static_cast<std::size_t>(enc_in[i]) * enc_out[i] + enc_out[i];
  }
  const int proj_in[2] = {latent, proj_hidden};
  const int proj_out_[2] = {proj_hidden, proj_out};
  for (int i = 0; i < 2; ++i) {
    p.projector_[i] = {off, off + static_cast<std::size_t>(proj_in[i]) * proj_out_[i], proj_in[i], proj_out_[i]};
    off += static_cast<std::size_t>(proj_in[i]) * proj_out_[i] + proj_out_[i];
  }
  p.values_.assign(off, 0.0);
  return p;
}

EncoderParams EncoderParams::init(int input_dim, const TrainingConfig& cfg, std::uint64_t seed) {
  if (input_dim < 1) fail(ErrorCode::invalid_argument, "input_dim must be positive");
  EncoderParams p = with_shapes(input_dim, cfg.hidden1, cfg.hidden2, cfg.latent_dim, cfg.projector_hidden,
                                cfg.projector_dim);
  Rng rng(seed);
  auto init_layer = [&](const Layer& L) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.in));
    for (std::size_t i = 0; i < static_cast<std::size_t>(L.in) * L.out; ++i)
      p.values_[L.w_off + i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < static_cast<std::size_t>(L.out); ++i)
      p.values_[L.b_off + i] = rng.uniform(-bound, bound);
  };
  for (const auto& L : p.encoder_) init_layer(L);
  for (const auto& L : p.projector_) init_layer(L);
  return p;
}

std::vector<double> encode(const EncoderParams& params, std::span<const float> e, bool use_projector) {
  if (static_cast<int>(e.size()) != params.input_dim())
    fail(ErrorCode::invalid_argument, "encode: input dimension " + std::to_string(e.size()) + " != " +
                                          std::to_string(params.input_dim()));
  Cache c;
  forward_cache(params, e, c);
  std::vector<double> out = use_projector ? c.p : c.z;
  for (double v : out)
    if (!std::isfinite(v)) fail(ErrorCode::internal, "encode produced a non-finite value");
  return out;
}

double decision_score(const EncoderParams& params, std::span<const float> e_q, std::span<const float> e_d) {
  const auto zq = encode(params, e_q, false);
  const auto zd = encode(params, e_d, false);
  const double c = cosine_checked(zq, zd, "decision_score");
  double s = 0.5 * (c + 1.0);
  if (s < 0.0) s = 0.0;
  if (s > 1.0) s = 1.0;
  return s;
}

void ScoreSet::add(std::string doc_id, double score) {
  if (index_.contains(doc_id)) fail(ErrorCode::invalid_argument, "duplicate doc_id in ScoreSet: " + doc_id);
  if (!(score >= 0.0 && score <= 1.0))
    fail(ErrorCode::invalid_argument, "score out of [0,1] for " + doc_id + ": " + std::to_string(score));
  index_.emplace(doc_id, ids_.size());
  ids_.push_back(std::move(doc_id));
  values_.push_back(score);
}

double ScoreSet::at(std::string_view doc_id) const {
  auto it = index_.find(std::string(doc_id));
  if (it == index_.end()) fail(ErrorCode::invalid_argument, "no score for doc_id: " + std::string(doc_id));
  return values_[it->second];
}

bool ScoreSet::contains(std::string_view doc_id) const { return index_.contains(std::string(doc_id)); }

void ScoreSet::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write scores: " + path.string());
  out << "doc_id,score\n";
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const std::string& id = ids_[i];
    if (id.find_first_of(",\"\n") != std::string::npos) {
      out << '"';
      for (char ch : id) {
        if (ch == '"') out << '"';
        out << ch;
      }
      out << '"';
    } else {
      out << id;
    }
    out << ',' << format_double(values_[i]) << '\n';
  }
  if (!out) fail(ErrorCode::io, "write failure: " + path.string());
}

ScoreSet ScoreSet::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open scores: " + path.string());
  ScoreSet out;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (first) {
      first = false;
      if (line != "doc_id,score") fail(ErrorCode::format, path.string() + ": unexpected header");
      continue;
    }
    if (line.empty()) continue;
    std::string id;
    std::size_t pos = 0;
    if (!line.empty() && line[0] == '"') {
      pos = 1;
      while (pos < line.size()) {
        if (line[pos] == '"') {
          if (pos + 1 < line.size() && line[pos + 1] == '"') {
            id += '"';
            pos += 2;
          } else {
            ++pos;
            break;
          }
        } else {
          id += line[pos++];
        }
      }
      if (pos >= line.size() || line[pos] != ',')
        fail(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": malformed quoted field");
      ++pos;
    } else {
      const auto comma = line.find(',');
      if (comma == std::string::npos)
        fail(ErrorCode::format, path.string() + ":" + std::to_string(lineno) + ": missing comma");
      id = line.substr(0, comma);
      pos = comma + 1;
    }
    out.add(id, std::stod(line.substr(pos)));
  }
  return out;
}

ScoreSet score_all(const EncoderParams& params, const Workload& workload, int n_threads) {
  workload.validate();
  const auto& store = workload.collection;
  const std::size_t n = store.size();
  std::vector<double> scores(n);

  const auto zq = encode(params, workload.query_embedding, false);
  const double nq = vec_norm(zq);
  if (nq < kNormFloor) fail(ErrorCode::degenerate, "degenerate latent (zero norm) for query");

  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  const unsigned workers =
      n_threads <= 0 ? hw : static_cast<unsigned>(n_threads);

  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::string first_error;
  ErrorCode first_code = ErrorCode::internal;

  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        const auto zd = encode(params, store.embedding(i), false);
        const double nd = vec_norm(zd);
        if (nd < kNormFloor)
          fail(ErrorCode::degenerate, "degenerate latent (zero norm) for doc_id: " + store.id(i));
        double s = 0.5 * (dot(zq.data(), zd.data(), static_cast<int>(zq.size())) / (nq * nd) + 1.0);
        if (s < 0.0) s = 0.0;
        if (s > 1.0) s = 1.0;
        scores[i] = s;
      } catch (const Error& e) {
        std::lock_guard<std::mutex> lk(err_mutex);
        if (first_error.empty()) {
          first_error = std::string(e.what()) + " (doc_id: " + store.id(i) + ")";
          first_code = e.code();
        }
        next.store(n);
        return;
      }
    }
  };

  if (workers <= 1 || n < 64) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (!first_error.empty()) fail(first_code, first_error);

  ScoreSet out;
  for (std::size_t i = 0; i < n; ++i) out.add(store.id(i), scores[i]);
  return out;
}

int MiniBatch::positives() const {
  int m = 0;
  for (auto l : labels) m += l != 0;
  return m;
}

int MiniBatch::negatives() const { return static_cast<int>(labels.size()) - positives(); }

void MiniBatch::validate(int dim) const {
  if (docs.size() != labels.size()) fail(ErrorCode::invalid_argument, "batch labels/docs size mismatch");
  if (docs.size() < 2) fail(ErrorCode::invalid_argument, "mini-batch needs at least 2 documents");
  if (static_cast<int>(query.size()) != dim) fail(ErrorCode::invalid_argument, "batch query dimension mismatch");
  for (const auto& d : docs)
    if (static_cast<int>(d.size()) != dim) fail(ErrorCode::invalid_argument, "batch doc dimension mismatch");
}

double qsim_from_similarities(std::span<const double> pos_sims, std::span<const double> neg_sims, double tau,
                              std::span<double> d_pos, std::span<double> d_neg) {
  if (pos_sims.empty() || neg_sims.empty())
    fail(ErrorCode::invalid_argument, "contrastive term needs at least one positive and one negative");
  if (!(tau > 0.0)) fail(ErrorCode::invalid_argument, "temperature must be positive");

  double m = -HUGE_VAL;
  for (double s : pos_sims) m = std::max(m, s / tau);
  for (double s : neg_sims) m = std::max(m, s / tau);

  double a = 0.0, b = 0.0;
  for (double s : pos_sims) a += std::exp(s / tau - m);
  for (double s : neg_sims) b += std::exp(s / tau - m);
  const double total = a + b;
  const double loss = std::log1p(b / a);

  for (std::size_t i = 0; i < pos_sims.size(); ++i) {
    const double e = std::exp(pos_sims[i] / tau - m);
    d_pos[i] = (e / total - e / a) / tau;
  }
  for (std::size_t j = 0; j < neg_sims.size(); ++j) {
    const double e = std::exp(neg_sims[j] / tau - m);
    d_neg[j] = (e / total) / tau;
  }
  return loss;
}

namespace {

// Shared one-anchor-vs-batch contrastive machinery used by qsim and both
// polar terms. Anchor may itself be a batch document (anchor_doc >= 0).
double anchor_contrast(const BatchForward& bf, const std::vector<int>& pos, const std::vector<int>& neg,
                       int anchor_doc, double tau, std::vector<std::vector<double>>& gp_docs,
                       std::vector<double>& gp_query) {
  const Cache& anchor = anchor_doc < 0 ? bf.query : bf.docs[static_cast<std::size_t>(anchor_doc)];

  std::vector<double> pos_sims(pos.size()), neg_sims(neg.size());
  for (std::size_t i = 0; i < pos.size(); ++i)
    pos_sims[i] = cosine_checked(anchor.p, bf.docs[static_cast<std::size_t>(pos[i])].p, "training similarity");
  for (std::size_t j = 0; j < neg.size(); ++j)
    neg_sims[j] = cosine_checked(anchor.p, bf.docs[static_cast<std::size_t>(neg[j])].p, "training similarity");

  std::vector<double> d_pos(pos.size()), d_neg(neg.size());
  const double loss = qsim_from_similarities(pos_sims, neg_sims, tau, d_pos, d_neg);

  auto& g_anchor = anchor_doc < 0 ? gp_query : gp_docs[static_cast<std::size_t>(anchor_doc)];
  for (std::size_t i = 0; i < pos.size(); ++i)
    add_cosine_grad(anchor.p, bf.docs[static_cast<std::size_t>(pos[i])].p, d_pos[i], g_anchor,
                    gp_docs[static_cast<std::size_t>(pos[i])]);
  for (std::size_t j = 0; j < neg.size(); ++j)
    add_cosine_grad(anchor.p, bf.docs[static_cast<std::size_t>(neg[j])].p, d_neg[j], g_anchor,
                    gp_docs[static_cast<std::size_t>(neg[j])]);
  return loss;
}

LossResult finish_backward(const EncoderParams& params, const BatchForward& bf,
                           const std::vector<std::vector<double>>& gp_docs, const std::vector<double>& gp_query,
                           double loss) {
  LossResult r;
  r.loss = loss;
  r.grad.assign(params.size(), 0.0);
  if (bf.has_query && !gp_query.empty()) backward_from_projector(params, bf.query, gp_query, r.grad);
  for (std::size_t i = 0; i < bf.docs.size(); ++i) backward_from_projector(params, bf.docs[i], gp_docs[i], r.grad);
  return r;
}

}  // namespace

LossResult loss_qsim(const EncoderParams& params, const MiniBatch& batch, double tau) {
  batch.validate(params.input_dim());
  const auto pos = class_indices(batch, true);
  const auto neg = class_indices(batch, false);
  if (pos.empty() || neg.empty())
    fail(ErrorCode::invalid_argument, "loss_qsim requires at least one positive and one negative");

  const BatchForward bf = forward_batch(params, batch, true);
  std::vector<std::vector<double>> gp_docs(batch.docs.size(),
                                           std::vector<double>(static_cast<std::size_t>(params.projector_dim()), 0.0));
  std::vector<double> gp_query(static_cast<std::size_t>(params.projector_dim()), 0.0);
  const double loss = anchor_contrast(bf, pos, neg, -1, tau, gp_docs, gp_query);
  return finish_backward(params, bf, gp_docs, gp_query, loss);
}

LossResult loss_supcon(const EncoderParams& params, const MiniBatch& batch, double tau) {
  batch.validate(params.input_dim());
  if (!(tau > 0.0)) fail(ErrorCode::invalid_argument, "temperature must be positive");
  const int n = static_cast<int>(batch.docs.size());

  const BatchForward bf = forward_batch(params, batch, false);

  // Pairwise similarities; coefficient matrix collects dL/d sim(i,j) from both
  // anchor roles before a single cosine-gradient pass per pair.
  std::vector<double> sim(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double s = cosine_checked(bf.docs[static_cast<std::size_t>(i)].p, bf.docs[static_cast<std::size_t>(j)].p,
                                      "training similarity");
      sim[static_cast<std::size_t>(i) * n + j] = s;
      sim[static_cast<std::size_t>(j) * n + i] = s;
    }

  std::vector<double> coef(static_cast<std::size_t>(n) * n, 0.0);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<int> same, other;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      (batch.labels[static_cast<std::size_t>(j)] == batch.labels[static_cast<std::size_t>(i)] ? same : other)
          .push_back(j);
    }
    if (same.empty()) continue;  // |U(i)| = 0 anchors contribute zero

    double m = -HUGE_VAL;
    for (int j = 0; j < n; ++j)
      if (j != i) m = std::max(m, sim[static_cast<std::size_t>(i) * n + j] / tau);
    double su = 0.0, so = 0.0;
    for (int j : same) su += std::exp(sim[static_cast<std::size_t>(i) * n + j] / tau - m);
    for (int j : other) so += std::exp(sim[static_cast<std::size_t>(i) * n + j] / tau - m);
    const double sa = su + so;
    const double inv_u = 1.0 / static_cast<double>(same.size());
    loss += inv_u * std::log1p(so / su);

    for (int j : same) {
      const double e = std::exp(sim[static_cast<std::size_t>(i) * n + j] / tau - m);
      coef[static_cast<std::size_t>(std::min(i, j)) * n + std::max(i, j)] += -inv_u * (e / su - e / sa) / tau;
    }
    for (int j : other) {
      const double e = std::exp(sim[static_cast<std::size_t>(i) * n + j] / tau - m);
      coef[static_cast<std::size_t>(std::min(i, j)) * n + std::max(i, j)] += inv_u * (e / sa) / tau;
    }
  }

  std::vector<std::vector<double>> gp_docs(batch.docs.size(),
                                           std::vector<double>(static_cast<std::size_t>(params.projector_dim()), 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double c = coef[static_cast<std::size_t>(i) * n + j];
      if (c != 0.0)
        add_cosine_grad(bf.docs[static_cast<std::size_t>(i)].p, bf.docs[static_cast<std::size_t>(j)].p, c,
                        gp_docs[static_cast<std::size_t>(i)], gp_docs[static_cast<std::size_t>(j)]);
    }
  return finish_backward(params, bf, gp_docs, {}, loss);
}

LossResult loss_polar_pinned(const EncoderParams& params, const MiniBatch& batch, double tau, int bellwether_pos,
                             int bellwether_neg) {
  batch.validate(params.input_dim());
  const auto pos = class_indices(batch, true);
  const auto neg = class_indices(batch, false);
  if (pos.empty() || neg.empty())
    fail(ErrorCode::invalid_argument, "loss_polar requires at least one positive and one negative");
  if (std::find(pos.begin(), pos.end(), bellwether_pos) == pos.end() ||
      std::find(neg.begin(), neg.end(), bellwether_neg) == neg.end())
    fail(ErrorCode::invalid_argument, "pinned bellwethers must be members of their classes");

  const BatchForward bf = forward_batch(params, batch, true);
  std::vector<std::vector<double>> gp_docs(batch.docs.size(),
                                           std::vector<double>(static_cast<std::size_t>(params.projector_dim()), 0.0));
  std::vector<double> gp_query;  // query receives no gradient from this loss

  double loss = anchor_contrast(bf, pos, neg, bellwether_pos, tau, gp_docs, gp_query);
  loss += anchor_contrast(bf, neg, pos, bellwether_neg, tau, gp_docs, gp_query);
  return finish_backward(params, bf, gp_docs, {}, loss);
}

PolarResult loss_polar(const EncoderParams& params, const MiniBatch& batch, double tau, bool bellwether_prose) {
  batch.validate(params.input_dim());
  const auto pos = class_indices(batch, true);
  const auto neg = class_indices(batch, false);
  if (pos.empty() || neg.empty())
    fail(ErrorCode::invalid_argument, "loss_polar requires at least one positive and one negative");

  const BatchForward bf = forward_batch(params, batch, true);

  // Bellwether selection on query similarities; constant for gradients. The
  // default follows the displayed argmin/argmax formulas; the prose flag
  // flips to closest positive / furthest negative.
  auto query_sim = [&](int i) {
    return cosine_checked(bf.query.p, bf.docs[static_cast<std::size_t>(i)].p, "bellwether similarity");
  };
  int bp = pos[0], bn = neg[0];
  double bp_sim = query_sim(bp), bn_sim = query_sim(bn);
  for (std::size_t k = 1; k < pos.size(); ++k) {
    const double s = query_sim(pos[k]);
    const bool better = bellwether_prose ? s > bp_sim : s < bp_sim;
    if (better) {
      bp = pos[k];
      bp_sim = s;
    }
  }
  for (std::size_t k = 1; k < neg.size(); ++k) {
    const double s = query_sim(neg[k]);
    const bool better = bellwether_prose ? s < bn_sim : s > bn_sim;
    if (better) {
      bn = neg[k];
      bn_sim = s;
    }
  }

  PolarResult r;
  static_cast<LossResult&>(r) = loss_polar_pinned(params, batch, tau, bp, bn);
  r.bellwether_pos = bp;
  r.bellwether_neg = bn;
  return r;
}

std::vector<LabeledEmbedding> rebalance(const std::vector<LabeledEmbedding>& train_embeddings,
                                        const TrainingConfig& config, std::uint64_t seed) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& e : train_embeddings) (e.label ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    fail(ErrorCode::degenerate, "rebalance: training sample has a single class (" + std::to_string(n_pos) +
                                    " positives, " + std::to_string(n_neg) + " negatives)");

  std::vector<LabeledEmbedding> out = train_embeddings;
  const std::size_t minority = std::min(n_pos, n_neg);
  const std::size_t majority = std::max(n_pos, n_neg);
  const double ratio = static_cast<double>(minority) / static_cast<double>(minority + majority);
  if (ratio >= config.rebalance_min_ratio) return out;

  const bool minority_label = n_pos < n_neg;
  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < train_embeddings.size(); ++i)
    if (train_embeddings[i].label == minority_label) sources.push_back(i);

  const std::size_t dim = train_embeddings.front().values.size();
  // Per-dimension sample standard deviation of the minority class; a single
  // minority example yields zero noise (verbatim copies).
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (auto i : sources)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += train_embeddings[i].values[d];
  for (auto& m : mean) m /= static_cast<double>(sources.size());
  if (sources.size() > 1) {
    for (auto i : sources)
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = train_embeddings[i].values[d] - mean[d];
        sd[d] += diff * diff;
      }
    for (auto& v : sd) v = std::sqrt(v / static_cast<double>(sources.size() - 1));
  }

  const double r = config.rebalance_min_ratio;
  const double needed = r * static_cast<double>(majority) / (1.0 - r) - static_cast<double>(minority);
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(needed)));

  Rng rng(seed);
  for (std::size_t j = 0; j < k; ++j) {
    const auto& src = train_embeddings[sources[j % sources.size()]];
    LabeledEmbedding copy;
    copy.label = minority_label;
    copy.values.resize(dim);
    for (std::size_t d = 0; d < dim; ++d)
      copy.values[d] = static_cast<float>(src.values[d] + config.noise_sigma_scale * sd[d] * rng.normal());
    out.push_back(std::move(copy));
  }
  return out;
}

EncoderParams train_proxy(const Workload& workload, const LabelSet& train_labels, const TrainingConfig& config) {
  config.validate();
  workload.validate();

  std::vector<LabeledEmbedding> labeled;
  labeled.reserve(train_labels.size());
  for (const auto& [id, label] : train_labels.entries()) {
    auto e = workload.collection.embedding_of(id);
    labeled.push_back({{e.begin(), e.end()}, label});
  }
  if (labeled.empty()) fail(ErrorCode::degenerate, "train_proxy: empty training label set");

  const auto data = rebalance(labeled, config, derive_seed(config.seed, 21));

  EncoderParams params = EncoderParams::init(workload.collection.dim(), config, derive_seed(config.seed, 22));
  Rng shuffle_rng(derive_seed(config.seed, 23));

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto run_phase = [&](int epochs, auto&& loss_fn) {
    Adam opt(params.size(), config.learning_rate);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        if (end - start < 2) continue;
        MiniBatch batch;
        batch.query = workload.query_embedding;
        batch.docs.reserve(end - start);
        batch.labels.reserve(end - start);
        for (std::size_t k = start; k < end; ++k) {
          batch.docs.push_back(data[order[k]].values);
          batch.labels.push_back(data[order[k]].label ? 1 : 0);
        }
        // Single-class batches carry no contrastive signal; skip them.
        const int m = batch.positives();
        if (m == 0 || m == static_cast<int>(batch.labels.size())) continue;
        LossResult r = loss_fn(batch);
        opt.step(params.values(), r.grad);
      }
    }
  };

  run_phase(config.epochs_phase1, [&](const MiniBatch& b) { return loss_qsim(params, b, config.temperature); });
  run_phase(config.epochs_phase2, [&](const MiniBatch& b) {
    LossResult sup = loss_supcon(params, b, config.temperature);
    PolarResult pol = loss_polar(params, b, config.temperature, config.bellwether_prose);
    LossResult joint;
    joint.loss = config.lambda * sup.loss + (1.0 - config.lambda) * pol.loss;
    joint.grad.resize(params.size());
    for (std::size_t i = 0; i < joint.grad.size(); ++i)
      joint.grad[i] = config.lambda * sup.grad[i] + (1.0 - config.lambda) * pol.grad[i];
    return joint;
  });

  return params;
}

void EncoderParams::save(const std::filesystem::path& manifest_path) const {
  std::filesystem::path payload_name = manifest_path.filename();
  payload_name.replace_extension(".f32");
  const auto payload_path = manifest_path.parent_path() / payload_name;

  std::vector<std::uint8_t> bytes(values_.size() * 4);
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto f = static_cast<float>(values_[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, sizeof u);
    bytes[i * 4] = static_cast<std::uint8_t>(u & 0xff);
    bytes[i * 4 + 1] = static_cast<std::uint8_t>((u >> 8) & 0xff);
    bytes[i * 4 + 2] = static_cast<std::uint8_t>((u >> 16) & 0xff);
    bytes[i * 4 + 3] = static_cast<std::uint8_t>((u >> 24) & 0xff);
  }
  {
    std::ofstream out(payload_path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write payload: " + payload_path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "write failure: " + payload_path.string());
  }

  ordered_json m;
  m["version"] = 1;
  m["input_dim"] = encoder_[0].in;
  m["hidden1"] = encoder_[0].out;
  m["hidden2"] = encoder_[1].out;
  m["latent_dim"] = encoder_[2].out;
  m["projector_hidden"] = projector_[0].out;
  m["projector_dim"] = projector_[1].out;
  m["count"] = values_.size();
  m["payload"] = payload_name.string();
  m["dtype"] = "f32le";
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write manifest: " + manifest_path.string());
  out << m.dump(2) << '\n';
  if (!out) fail(ErrorCode::io, "write failure: " + manifest_path.string());
}

EncoderParams EncoderParams::load(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorCode::io, "cannot open params manifest: " + manifest_path.string());
  ordered_json m = ordered_json::parse(in, nullptr, false);
  if (m.is_discarded()) fail(ErrorCode::format, "invalid JSON in " + manifest_path.string());
  for (const char* key :
       {"version", "input_dim", "hidden1", "hidden2", "latent_dim", "projector_hidden", "projector_dim", "count",
        "payload", "dtype"})
    if (!m.contains(key)) fail(ErrorCode::format, "params manifest missing field '" + std::string(key) + "'");
  if (m["dtype"].get<std::string>() != "f32le") fail(ErrorCode::format, "unsupported params dtype");

  EncoderParams p = with_shapes(m["input_dim"].get<int>(), m["hidden1"].get<int>(), m["hidden2"].get<int>(),
                                m["latent_dim"].get<int>(), m["projector_hidden"].get<int>(),
                                m["projector_dim"].get<int>());
  if (p.values_.size() != m["count"].get<std::size_t>())
    fail(ErrorCode::format, "params manifest count does not match shapes");

  const auto payload_path = manifest_path.parent_path() / m["payload"].get<std::string>();
  std::ifstream pin(payload_path, std::ios::binary);
  if (!pin) fail(ErrorCode::io, "cannot open params payload: " + payload_path.string());
  std::vector<std::uint8_t> bytes(p.values_.size() * 4);
  pin.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!pin || pin.gcount() != static_cast<std::streamsize>(bytes.size()))
    fail(ErrorCode::format, "params payload size mismatch: " + payload_path.string());
  char extra;
  if (pin.read(&extra, 1)) fail(ErrorCode::format, "params payload larger than manifest count");

  for (std::size_t i = 0; i < p.values_.size(); ++i) {
    std::uint32_t u = static_cast<std::uint32_t>(bytes[i * 4]) | (static_cast<std::uint32_t>(bytes[i * 4 + 1]) << 8) |
                      (static_cast<std::uint32_t>(bytes[i * 4 + 2]) << 16) |
                      (static_cast<std::uint32_t>(bytes[i * 4 + 3]) << 24);
    float f;
    std::memcpy(&f, &u, sizeof f);
    if (!std::isfinite(f)) fail(ErrorCode::format, "non-finite parameter value in payload");
    p.values_[i] = static_cast<double>(f);
  }
  return p;
}

}  // namespace sempred
