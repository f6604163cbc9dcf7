#include "miml/model.hpp"

#include <atomic>
#include <cmath>

#include "miml/errors.hpp"
#include "miml/rng.hpp"
#include "miml/technique.hpp"

namespace miml {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kProbFloor = 1e-12;

std::atomic<long> g_encoder_invocations{0};

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
  double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * phi;
}

Eigen::MatrixXd dropout_mask(std::size_t rows, std::size_t cols, double p, std::mt19937_64& rng) {
  Eigen::MatrixXd mask(rows, cols);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double scale = 1.0 / (1.0 - p);
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
      mask(r, c) = u(rng) < p ? 0.0 : scale;
    }
  }
  return mask;
}

// y = g .* (x - mu) / sigma + b, row-wise; fills xhat and inv_std.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                           const Eigen::MatrixXd& b, Eigen::MatrixXd* xhat,
                           Eigen::VectorXd* inv_std) {
  Eigen::Index n = x.rows(), d = x.cols();
  xhat->resize(n, d);
  inv_std->resize(n);
  Eigen::MatrixXd y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + kLnEps);
    (*inv_std)(i) = is;
    xhat->row(i) = (x.row(i).array() - mu) * is;
    y.row(i) = xhat->row(i).cwiseProduct(g.col(0).transpose()) + b.col(0).transpose();
  }
  return y;
}

// Backward of layer_norm; accumulates dg/db and returns dx.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_std, const Eigen::MatrixXd& g,
                                    Eigen::MatrixXd* dg, Eigen::MatrixXd* db) {
  Eigen::Index n = dy.rows(), d = dy.cols();
  Eigen::MatrixXd dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(g.col(0).transpose());
    double m1 = dxhat.mean();
    double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
    dg->col(0) += dy.row(i).cwiseProduct(xhat.row(i)).transpose();
    db->col(0) += dy.row(i).transpose();
  }
  return dx;
}

double safe_log(double p, bool strict, const char* what) {
  if (p <= 0.0) {
    if (strict) throw NumericError(std::string("zero probability on gold ") + what);
    p = kProbFloor;
  }
  return std::log(p);
}

}  // namespace

void ModelConfig::validate() const {
  if (dim <= 0) throw UsageError("model dim must be positive");
  if (layers < 0) throw UsageError("layer count must be >= 0");
  if (layers > 0 && (heads <= 0 || dim % heads != 0)) {
    throw UsageError("head count must divide the model dim");
  }
  if (vocab_size <= 0) throw UsageError("vocab size must be positive");
  if (window_size <= 0) throw UsageError("window size must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw UsageError("dropout must be in [0, 1)");
  if (lambda_train < 0.0 || lambda_train > 1.0 || lambda_eval < 0.0 || lambda_eval > 1.0) {
    throw UsageError("lambda values must be in [0, 1]");
  }
  if (head_mode == HeadMode::FlatAux && edge_counts.empty()) {
    throw UsageError("flat+aux head mode requires edge counts from a hierarchy");
  }
}

std::vector<TensorView> Parameters::tensors() {
  std::vector<TensorView> out;
  out.push_back({"embed", &embed});
  out.push_back({"pos", &pos});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& lp = layers[l];
    std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "wq", &lp.wq});
    out.push_back({p + "bq", &lp.bq});
    out.push_back({p + "wk", &lp.wk});
    out.push_back({p + "bk", &lp.bk});
    out.push_back({p + "wv", &lp.wv});
    out.push_back({p + "bv", &lp.bv});
    out.push_back({p + "wo", &lp.wo});
    out.push_back({p + "bo", &lp.bo});
    out.push_back({p + "ln1_g", &lp.ln1_g});
    out.push_back({p + "ln1_b", &lp.ln1_b});
    out.push_back({p + "w1", &lp.w1});
    out.push_back({p + "b1", &lp.b1});
    out.push_back({p + "w2", &lp.w2});
    out.push_back({p + "b2", &lp.b2});
    out.push_back({p + "ln2_g", &lp.ln2_g});
    out.push_back({p + "ln2_b", &lp.ln2_b});
  }
  out.push_back({"flat_head", &flat_head});
  for (std::size_t k = 0; k < aux_heads.size(); ++k) {
    out.push_back({"aux_head" + std::to_string(k), &aux_heads[k]});
  }
  return out;
}

std::vector<TensorView> Parameters::tensors() const {
  return const_cast<Parameters*>(this)->tensors();
}

Parameters Parameters::zeros_like() const {
  Parameters out = *this;
  for (auto& tv : out.tensors()) tv.tensor->setZero();
  return out;
}

bool Parameters::all_finite() const {
  for (const auto& tv : tensors()) {
    if (!tv.tensor->allFinite()) return false;
  }
  return true;
}

Parameters init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  int d = config.dim, f = config.effective_ff_dim();
  Parameters p;
  p.embed.resize(config.vocab_size, d);
  p.pos.resize(config.window_size, d);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& lp : p.layers) {
    lp.wq.resize(d, d); lp.wk.resize(d, d); lp.wv.resize(d, d); lp.wo.resize(d, d);
    lp.bq = Eigen::MatrixXd::Zero(d, 1);
    lp.bk = Eigen::MatrixXd::Zero(d, 1);
    lp.bv = Eigen::MatrixXd::Zero(d, 1);
    lp.bo = Eigen::MatrixXd::Zero(d, 1);
    lp.w1.resize(f, d);
    lp.b1 = Eigen::MatrixXd::Zero(f, 1);
    lp.w2.resize(d, f);
    lp.b2 = Eigen::MatrixXd::Zero(d, 1);
    lp.ln1_g = Eigen::MatrixXd::Ones(d, 1);
    lp.ln1_b = Eigen::MatrixXd::Zero(d, 1);
    lp.ln2_g = Eigen::MatrixXd::Ones(d, 1);
    lp.ln2_b = Eigen::MatrixXd::Zero(d, 1);
  }
  p.flat_head.resize(kNumTechniques, d);
  if (config.head_mode == ModelConfig::HeadMode::FlatAux) {
    for (int ck : config.edge_counts) p.aux_heads.emplace_back(ck, d);
  }

  auto rng = make_rng(seed, "init");
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  auto fill = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  fill(p.embed);
  fill(p.pos);
  for (auto& lp : p.layers) {
    fill(lp.wq); fill(lp.wk); fill(lp.wv); fill(lp.wo);
    fill(lp.w1); fill(lp.w2);
  }
  fill(p.flat_head);
  for (auto& h : p.aux_heads) fill(h);
  return p;
}

long encoder_invocation_count() { return g_encoder_invocations.load(); }
void reset_encoder_invocation_count() { g_encoder_invocations.store(0); }

Eigen::MatrixXd encode(const std::vector<int>& ids, const Parameters& params,
                       const ModelConfig& config, bool training, std::uint64_t dropout_seed,
                       EncodeCache* cache) {
  g_encoder_invocations.fetch_add(1, std::memory_order_relaxed);
  Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  if (n > config.window_size) throw DataError("sequence longer than the window size");
  int d = config.dim;

  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= config.vocab_size) {
      throw DataError("token id " + std::to_string(id) + " out of vocabulary range");
    }
    x.row(i) = params.embed.row(id) + params.pos.row(i);
  }

  bool drop = training && config.dropout > 0.0;
  std::mt19937_64 rng(derive_seed(dropout_seed, "dropout"));
  if (cache) {
    cache->ids = ids;
    cache->layers.clear();
  }
  if (drop) {
    Eigen::MatrixXd mask = dropout_mask(static_cast<std::size_t>(n), static_cast<std::size_t>(d),
                                        config.dropout, rng);
    x = x.cwiseProduct(mask);
    if (cache) cache->emb_mask = std::move(mask);
  }

  int h_count = config.heads;
  int dh = config.layers > 0 ? d / h_count : d;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (const auto& lp : params.layers) {
    LayerCache lc;
    lc.x_in = x;
    Eigen::MatrixXd a = layer_norm(x, lp.ln1_g, lp.ln1_b, &lc.ln1_xhat, &lc.ln1_inv_std);
    lc.q = a * lp.wq.transpose();
    lc.q.rowwise() += lp.bq.col(0).transpose();
    lc.k = a * lp.wk.transpose();
    lc.k.rowwise() += lp.bk.col(0).transpose();
    lc.v = a * lp.wv.transpose();
    lc.v.rowwise() += lp.bv.col(0).transpose();

    lc.ctx.resize(n, d);
    for (int head = 0; head < h_count; ++head) {
      auto qh = lc.q.middleCols(head * dh, dh);
      auto kh = lc.k.middleCols(head * dh, dh);
      auto vh = lc.v.middleCols(head * dh, dh);
      Eigen::MatrixXd scores = qh * kh.transpose() * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        double m = scores.row(i).maxCoeff();
        scores.row(i) = (scores.row(i).array() - m).exp();
        scores.row(i) /= scores.row(i).sum();
      }
      lc.ctx.middleCols(head * dh, dh) = scores * vh;
      lc.attn.push_back(std::move(scores));
    }
    Eigen::MatrixXd o = lc.ctx * lp.wo.transpose();
    o.rowwise() += lp.bo.col(0).transpose();
    if (drop) {
      lc.attn_mask = dropout_mask(static_cast<std::size_t>(n), static_cast<std::size_t>(d),
                                  config.dropout, rng);
      o = o.cwiseProduct(lc.attn_mask);
    }
    lc.x_mid = x + o;

    Eigen::MatrixXd b = layer_norm(lc.x_mid, lp.ln2_g, lp.ln2_b, &lc.ln2_xhat, &lc.ln2_inv_std);
    lc.ff_pre = b * lp.w1.transpose();
    lc.ff_pre.rowwise() += lp.b1.col(0).transpose();
    lc.ff_act = lc.ff_pre.unaryExpr([](double v) { return gelu(v); });
    Eigen::MatrixXd ff = lc.ff_act * lp.w2.transpose();
    ff.rowwise() += lp.b2.col(0).transpose();
    if (drop) {
      lc.ff_mask = dropout_mask(static_cast<std::size_t>(n), static_cast<std::size_t>(d),
                                config.dropout, rng);
      ff = ff.cwiseProduct(lc.ff_mask);
    }
    x = lc.x_mid + ff;
    if (cache) cache->layers.push_back(std::move(lc));
  }
  return x;
}

namespace {

// Backward through the encoder given d(loss)/d(hidden states).
void encode_backward(const Eigen::MatrixXd& dh_out, const EncodeCache& cache,
                     const Parameters& params, const ModelConfig& config, Gradients* grads) {
  Eigen::Index n = dh_out.rows();
  int d = config.dim;
  int h_count = config.heads;
  int dh_dim = config.layers > 0 ? d / h_count : d;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh_dim));

  Eigen::MatrixXd dx = dh_out;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams& lp = params.layers[l];
    const LayerCache& lc = cache.layers[l];
    LayerParams& gl = grads->layers[l];

    // Feed-forward branch.
    Eigen::MatrixXd dff = lc.ff_mask.size() > 0 ? dx.cwiseProduct(lc.ff_mask) : dx;
    Eigen::MatrixXd dact = dff * lp.w2;
    gl.w2 += dff.transpose() * lc.ff_act;
    gl.b2.col(0) += dff.colwise().sum().transpose();
    Eigen::MatrixXd dpre = dact.cwiseProduct(lc.ff_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    Eigen::MatrixXd b_in = lc.ln2_xhat;  // recompute LN2 output rows
    for (Eigen::Index i = 0; i < n; ++i) {
      b_in.row(i) = lc.ln2_xhat.row(i).cwiseProduct(lp.ln2_g.col(0).transpose()) +
                    lp.ln2_b.col(0).transpose();
    }
    Eigen::MatrixXd db_ln = dpre * lp.w1;
    gl.w1 += dpre.transpose() * b_in;
    gl.b1.col(0) += dpre.colwise().sum().transpose();
    Eigen::MatrixXd dx_mid =
        dx + layer_norm_backward(db_ln, lc.ln2_xhat, lc.ln2_inv_std, lp.ln2_g, &gl.ln2_g, &gl.ln2_b);

    // Attention branch.
    Eigen::MatrixXd do_ = lc.attn_mask.size() > 0 ? dx_mid.cwiseProduct(lc.attn_mask) : dx_mid;
    Eigen::MatrixXd dctx = do_ * lp.wo;
    gl.wo += do_.transpose() * lc.ctx;
    gl.bo.col(0) += do_.colwise().sum().transpose();

    Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(n, d);
    Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(n, d);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(n, d);
    for (int head = 0; head < h_count; ++head) {
      auto kh = lc.k.middleCols(head * dh_dim, dh_dim);
      auto qh = lc.q.middleCols(head * dh_dim, dh_dim);
      auto vh = lc.v.middleCols(head * dh_dim, dh_dim);
      const Eigen::MatrixXd& p = lc.attn[static_cast<std::size_t>(head)];
      Eigen::MatrixXd dch = dctx.middleCols(head * dh_dim, dh_dim);
      Eigen::MatrixXd dp = dch * vh.transpose();
      dv.middleCols(head * dh_dim, dh_dim) = p.transpose() * dch;
      Eigen::MatrixXd ds(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double dot = dp.row(i).cwiseProduct(p.row(i)).sum();
        ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
      }
      dq.middleCols(head * dh_dim, dh_dim) = ds * kh * scale;
      dk.middleCols(head * dh_dim, dh_dim) = ds.transpose() * qh * scale;
    }

    Eigen::MatrixXd a_in(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      a_in.row(i) = lc.ln1_xhat.row(i).cwiseProduct(lp.ln1_g.col(0).transpose()) +
                    lp.ln1_b.col(0).transpose();
    }
    Eigen::MatrixXd da = dq * lp.wq + dk * lp.wk + dv * lp.wv;
    gl.wq += dq.transpose() * a_in;
    gl.bq.col(0) += dq.colwise().sum().transpose();
    gl.wk += dk.transpose() * a_in;
    gl.bk.col(0) += dk.colwise().sum().transpose();
    gl.wv += dv.transpose() * a_in;
    gl.bv.col(0) += dv.colwise().sum().transpose();

    dx = dx_mid +
         layer_norm_backward(da, lc.ln1_xhat, lc.ln1_inv_std, lp.ln1_g, &gl.ln1_g, &gl.ln1_b);
  }

  if (cache.emb_mask.size() > 0) dx = dx.cwiseProduct(cache.emb_mask);
  for (Eigen::Index i = 0; i < n; ++i) {
    grads->embed.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
    grads->pos.row(i) += dx.row(i);
  }
}

}  // namespace

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

Eigen::VectorXd flat_distribution(const Eigen::VectorXd& h, const Parameters& params) {
  return softmax(params.flat_head * h);
}

Eigen::VectorXd aux_node_distribution(const Eigen::VectorXd& h, const Parameters& params, int k) {
  return softmax(params.aux_heads.at(static_cast<std::size_t>(k)) * h);
}

Eigen::VectorXd aux_leaf_distribution(const std::vector<Eigen::VectorXd>& node_dists,
                                      const HierarchyTree& tree) {
  const auto& leaves = tree.leaves();
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(leaves.size()));
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    LeafPath path = tree.path_to_leaf(leaves[li]);
    double log_p = 0.0;
    for (auto [node, edge] : path.steps) {
      int k = tree.classifier_index(node);
      double q = node_dists.at(static_cast<std::size_t>(k))(edge);
      log_p += std::log(std::max(q, kProbFloor));
    }
    int t = tree.technique_for_leaf(leaves[li]);
    Eigen::Index idx = t >= 0 ? t : static_cast<Eigen::Index>(li);
    p(idx) = std::exp(log_p);
  }
  return p;
}

Eigen::VectorXd combined_distribution(const Eigen::VectorXd& p_flat, const Eigen::VectorXd& p_aux,
                                      double lambda_eval) {
  if (lambda_eval < 0.0 || lambda_eval > 1.0) throw UsageError("lambda_eval must be in [0, 1]");
  if (lambda_eval == 0.0) return p_flat;
  if (lambda_eval == 1.0) return p_aux;
  return (1.0 - lambda_eval) * p_flat + lambda_eval * p_aux;
}

double flat_loss(const Eigen::VectorXd& p_flat, int technique, bool strict) {
  return -safe_log(p_flat(technique), strict, "label");
}

double aux_loss(const std::vector<Eigen::VectorXd>& node_dists, const LeafPath& path,
                const HierarchyTree& tree, bool strict) {
  double sum = 0.0;
  for (auto [node, edge] : path.steps) {
    int k = tree.classifier_index(node);
    sum += -safe_log(node_dists.at(static_cast<std::size_t>(k))(edge), strict, "path edge");
  }
  return sum / static_cast<double>(path.steps.size());
}

double overall_loss(double l_flat, double l_aux, double lambda_train) {
  if (lambda_train < 0.0 || lambda_train > 1.0) throw UsageError("lambda_train must be in [0, 1]");
  return (1.0 - lambda_train) * l_flat + lambda_train * l_aux;
}

std::vector<int> predict_labels(const Eigen::VectorXd& p, int count) {
  if (count < 1 || count > static_cast<int>(p.size())) {
    throw UsageError("predict_labels: count out of range");
  }
  std::vector<int> idx(static_cast<std::size_t>(p.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p(a) > p(b); });
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

ForwardResult forward_window(const std::vector<int>& ids, const std::vector<int>& bop_positions,
                             const Parameters& params, const ModelConfig& config,
                             const HierarchyTree& tree) {
  ForwardResult out;
  out.hidden = encode(ids, params, config);
  bool aux = config.head_mode == ModelConfig::HeadMode::FlatAux;
  for (int bop : bop_positions) {
    SpanForward sf;
    sf.h = out.hidden.row(bop).transpose();
    sf.p_flat = flat_distribution(sf.h, params);
    if (aux) {
      for (std::size_t k = 0; k < params.aux_heads.size(); ++k) {
        sf.p_nodes.push_back(aux_node_distribution(sf.h, params, static_cast<int>(k)));
      }
      sf.p_aux = aux_leaf_distribution(sf.p_nodes, tree);
      sf.p_ovr = combined_distribution(sf.p_flat, sf.p_aux, config.lambda_eval);
    } else {
      sf.p_ovr = sf.p_flat;
    }
    out.spans.push_back(std::move(sf));
  }
  return out;
}

namespace {

// Adds head-loss gradients for one span and returns (weighted) dh plus the
// unweighted l_ovr for that span.
double span_head_backward(const Eigen::VectorXd& h, int gold, const Parameters& params,
                          const ModelConfig& config, const HierarchyTree& tree, double weight,
                          Gradients* grads, Eigen::VectorXd* dh) {
  bool aux = config.head_mode == ModelConfig::HeadMode::FlatAux;
  double lt = aux ? config.lambda_train : 0.0;

  Eigen::VectorXd p_flat = flat_distribution(h, params);
  double l_flat = flat_loss(p_flat, gold, config.strict);
  double flat_coeff = weight * (1.0 - lt);
  if (flat_coeff != 0.0) {
    Eigen::VectorXd dlogits = p_flat;
    dlogits(gold) -= 1.0;
    dlogits *= flat_coeff;
    grads->flat_head += dlogits * h.transpose();
    *dh += params.flat_head.transpose() * dlogits;
  }

  double l_aux = 0.0;
  if (aux) {
    LeafPath path = tree.path_to_leaf(tree.leaf_for_technique(gold));
    double inv_len = 1.0 / static_cast<double>(path.steps.size());
    for (auto [node, edge] : path.steps) {
      int k = tree.classifier_index(node);
      Eigen::VectorXd p_k = aux_node_distribution(h, params, k);
      l_aux += -safe_log(p_k(edge), config.strict, "path edge") * inv_len;
      double aux_coeff = weight * lt * inv_len;
      if (aux_coeff != 0.0) {
        Eigen::VectorXd dlogits = p_k;
        dlogits(edge) -= 1.0;
        dlogits *= aux_coeff;
        grads->aux_heads[static_cast<std::size_t>(k)] += dlogits * h.transpose();
        *dh += params.aux_heads[static_cast<std::size_t>(k)].transpose() * dlogits;
      }
    }
  }
  return overall_loss(l_flat, l_aux, lt);
}

}  // namespace

double miml_backward(const std::vector<TrainingWindow>& batch, const Parameters& params,
                     const ModelConfig& config, const HierarchyTree& tree,
                     std::uint64_t dropout_seed, Gradients* grads) {
  long active = 0;
  for (const auto& w : batch) {
    if (!w.spans.empty()) ++active;
  }
  if (active == 0) throw UsageError("miml_backward: batch has no spans");

  double total_loss = 0.0;
  double window_weight = 1.0 / static_cast<double>(active);
  for (std::size_t wi = 0; wi < batch.size(); ++wi) {
    const TrainingWindow& w = batch[wi];
    if (w.spans.empty()) continue;
    EncodeCache cache;
    std::uint64_t seed = derive_seed(dropout_seed, "w" + std::to_string(wi));
    Eigen::MatrixXd hidden = encode(w.ids, params, config, true, seed, &cache);

    double span_weight = window_weight / static_cast<double>(w.spans.size());
    Eigen::MatrixXd dhidden = Eigen::MatrixXd::Zero(hidden.rows(), hidden.cols());
    double window_loss = 0.0;
    for (const auto& span : w.spans) {
      Eigen::VectorXd h = hidden.row(span.bop_pos).transpose();
      Eigen::VectorXd dh = Eigen::VectorXd::Zero(h.size());
      window_loss +=
          span_head_backward(h, span.technique, params, config, tree, span_weight, grads, &dh);
      dhidden.row(span.bop_pos) += dh.transpose();
    }
    total_loss += window_weight * (window_loss / static_cast<double>(w.spans.size()));
    encode_backward(dhidden, cache, params, config, grads);
  }
  if (!std::isfinite(total_loss) || !grads->all_finite()) {
    throw NumericError("non-finite loss or gradient");
  }
  return total_loss;
}

Eigen::VectorXd sigmoid_scores(const Eigen::VectorXd& h, const Parameters& params) {
  Eigen::VectorXd z = params.flat_head * h;
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

double single_instance_bce_loss(const Eigen::VectorXd& h, const Parameters& params,
                                const std::vector<int>& label_set) {
  Eigen::VectorXd z = params.flat_head * h;
  double loss = 0.0;
  for (int c = 0; c < kNumTechniques; ++c) {
    bool target = std::find(label_set.begin(), label_set.end(), c) != label_set.end();
    // Stable log(1 + exp(..)) form of BCE-with-logits.
    double zc = z(c);
    loss += std::max(zc, 0.0) - (target ? zc : 0.0) + std::log1p(std::exp(-std::abs(zc)));
  }
  return loss;
}

double single_instance_backward(const std::vector<TrainingWindow>& batch, const Parameters& params,
                                const ModelConfig& config, const HierarchyTree& tree,
                                std::uint64_t dropout_seed, Gradients* grads) {
  if (batch.empty()) throw UsageError("single_instance_backward: empty batch");
  bool aux = config.head_mode == ModelConfig::HeadMode::FlatAux;
  double lt = aux ? config.lambda_train : 0.0;
  double example_weight = 1.0 / static_cast<double>(batch.size());

  double total_loss = 0.0;
  for (std::size_t ei = 0; ei < batch.size(); ++ei) {
    const TrainingWindow& ex = batch[ei];
    if (ex.spans.size() != 1) {
      throw UsageError("single-instance examples carry exactly one span");
    }
    const TrainingSpan& span = ex.spans[0];
    EncodeCache cache;
    std::uint64_t seed = derive_seed(dropout_seed, "e" + std::to_string(ei));
    Eigen::MatrixXd hidden = encode(ex.ids, params, config, true, seed, &cache);
    Eigen::VectorXd h = hidden.row(span.bop_pos).transpose();
    Eigen::VectorXd dh = Eigen::VectorXd::Zero(h.size());

    double l_bce = single_instance_bce_loss(h, params, span.label_set);
    double bce_coeff = example_weight * (1.0 - lt);
    if (bce_coeff != 0.0) {
      Eigen::VectorXd sig = sigmoid_scores(h, params);
      for (int c = 0; c < kNumTechniques; ++c) {
        bool target = std::find(span.label_set.begin(), span.label_set.end(), c) !=
                      span.label_set.end();
        double dz = (sig(c) - (target ? 1.0 : 0.0)) * bce_coeff;
        grads->flat_head.row(c) += dz * h.transpose();
        dh += dz * params.flat_head.row(c).transpose();
      }
    }

    double l_aux = 0.0;
    if (aux) {
      LeafPath path = tree.path_to_leaf(tree.leaf_for_technique(span.technique));
      double inv_len = 1.0 / static_cast<double>(path.steps.size());
      for (auto [node, edge] : path.steps) {
        int k = tree.classifier_index(node);
        Eigen::VectorXd p_k = aux_node_distribution(h, params, k);
        l_aux += -safe_log(p_k(edge), config.strict, "path edge") * inv_len;
        double aux_coeff = example_weight * lt * inv_len;
        if (aux_coeff != 0.0) {
          Eigen::VectorXd dlogits = p_k;
          dlogits(edge) -= 1.0;
          dlogits *= aux_coeff;
          grads->aux_heads[static_cast<std::size_t>(k)] += dlogits * h.transpose();
          dh += params.aux_heads[static_cast<std::size_t>(k)].transpose() * dlogits;
        }
      }
    }
    total_loss += example_weight * overall_loss(l_bce, l_aux, lt);

    Eigen::MatrixXd dhidden = Eigen::MatrixXd::Zero(hidden.rows(), hidden.cols());
    dhidden.row(span.bop_pos) = dh.transpose();
    encode_backward(dhidden, cache, params, config, grads);
  }
  if (!std::isfinite(total_loss) || !grads->all_finite()) {
    throw NumericError("non-finite loss or gradient");
  }
  return total_loss;
}

}  // namespace miml
