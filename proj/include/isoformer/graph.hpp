// Eager reverse-mode autodiff over Eigen matrices. Each op computes its value
// immediately and records a closure that routes gradients to its parents;
// backward() replays closures in reverse creation order, which fixes the
// reduction order and keeps runs reproducible.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "isoformer/error.hpp"
#include "isoformer/matrix.hpp"
#include "isoformer/rng.hpp"

namespace isoformer {

template <typename Real>
class Graph {
 public:
  using NodeId = int;

  struct Node {
    Mat<Real> value;
    Mat<Real> grad;
    bool grad_ready = false;
    std::function<void(Graph&, NodeId)> backward;
  };

  const Mat<Real>& value(NodeId id) const { return nodes_[id].value; }
  const Mat<Real>& grad(NodeId id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  NodeId constant(Mat<Real> v) { return push(std::move(v), nullptr); }

  // Leaf bound to a parameter tensor; backward accumulates into t.grad.
  NodeId param(Tensor<Real>& t) {
    Tensor<Real>* tp = &t;
    return push(t.value, [tp](Graph& g, NodeId id) { tp->grad += g.nodes_[id].grad; });
  }

  // Embedding lookup. Rows of `emb` indexed by `ids`; absent ids get zero grad.
  NodeId gather_rows(Tensor<Real>& emb, const std::vector<int>& ids) {
    Mat<Real> out(static_cast<Index>(ids.size()), emb.value.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      require(ids[r] >= 0 && ids[r] < emb.value.rows(), Errc::id_out_of_range,
              "token id " + std::to_string(ids[r]) + " outside embedding table of " +
                  std::to_string(emb.value.rows()) + " rows");
      out.row(static_cast<Index>(r)) = emb.value.row(ids[r]);
    }
    Tensor<Real>* tp = &emb;
    std::vector<int> idx = ids;
    return push(std::move(out), [tp, idx](Graph& g, NodeId id) {
      const Mat<Real>& gr = g.nodes_[id].grad;
      for (std::size_t r = 0; r < idx.size(); ++r) tp->grad.row(idx[r]) += gr.row(static_cast<Index>(r));
    });
  }

  NodeId add(NodeId a, NodeId b) {
    check_same_shape(a, b, "add");
    return push(nodes_[a].value + nodes_[b].value, [a, b](Graph& g, NodeId id) {
      g.accumulate(a, g.nodes_[id].grad);
      g.accumulate(b, g.nodes_[id].grad);
    });
  }

  // Broadcast a 1 x d row (bias) over every row of `a`.
  NodeId add_rowvec(NodeId a, NodeId b) {
    require(nodes_[b].value.rows() == 1 && nodes_[b].value.cols() == nodes_[a].value.cols(),
            Errc::shape_mismatch, "add_rowvec operand shapes");
    Mat<Real> out = nodes_[a].value;
    out.rowwise() += nodes_[b].value.row(0);
    return push(std::move(out), [a, b](Graph& g, NodeId id) {
      g.accumulate(a, g.nodes_[id].grad);
      g.accumulate(b, g.nodes_[id].grad.colwise().sum());
    });
  }

  NodeId scale(NodeId a, Real c) {
    return push(Mat<Real>(nodes_[a].value * c), [a, c](Graph& g, NodeId id) {
      g.accumulate(a, Mat<Real>(g.nodes_[id].grad * c));
    });
  }

  NodeId matmul(NodeId a, NodeId b) {
    require(nodes_[a].value.cols() == nodes_[b].value.rows(), Errc::shape_mismatch, "matmul inner dims");
    return push(Mat<Real>(nodes_[a].value * nodes_[b].value), [a, b](Graph& g, NodeId id) {
      const Mat<Real>& gr = g.nodes_[id].grad;
      g.accumulate(a, Mat<Real>(gr * g.nodes_[b].value.transpose()));
      g.accumulate(b, Mat<Real>(g.nodes_[a].value.transpose() * gr));
    });
  }

  // a * b^T (attention logits).
  NodeId matmul_bt(NodeId a, NodeId b) {
    require(nodes_[a].value.cols() == nodes_[b].value.cols(), Errc::shape_mismatch, "matmul_bt inner dims");
    return push(Mat<Real>(nodes_[a].value * nodes_[b].value.transpose()), [a, b](Graph& g, NodeId id) {
      const Mat<Real>& gr = g.nodes_[id].grad;
      g.accumulate(a, Mat<Real>(gr * g.nodes_[b].value));
      g.accumulate(b, Mat<Real>(gr.transpose() * g.nodes_[a].value));
    });
  }

  // Row-wise layer norm with learned scale/offset (1 x d each).
  NodeId layer_norm(NodeId a, NodeId gamma, NodeId beta, Real eps = Real(1e-5)) {
    const Mat<Real>& x = nodes_[a].value;
    const Index rows = x.rows(), cols = x.cols();
    require(nodes_[gamma].value.cols() == cols && nodes_[beta].value.cols() == cols, Errc::shape_mismatch,
            "layer_norm scale/offset width");
    Mat<Real> xhat(rows, cols);
    Vec<Real> inv_std(rows);
    for (Index i = 0; i < rows; ++i) {
      const Real mu = x.row(i).mean();
      const Real var = (x.row(i).array() - mu).square().mean();
      inv_std(i) = Real(1) / std::sqrt(var + eps);
      xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
    }
    Mat<Real> out = xhat;
    out.array().rowwise() *= nodes_[gamma].value.row(0).array();
    out.rowwise() += nodes_[beta].value.row(0);
    return push(std::move(out), [a, gamma, beta, xhat, inv_std](Graph& g, NodeId id) {
      const Mat<Real>& gr = g.nodes_[id].grad;
      g.accumulate(beta, gr.colwise().sum());
      g.accumulate(gamma, (gr.array() * xhat.array()).colwise().sum().matrix());
      const auto& gvec = g.nodes_[gamma].value.row(0);
      Mat<Real> dxhat = gr;
      dxhat.array().rowwise() *= gvec.array();
      Mat<Real> dx(gr.rows(), gr.cols());
      for (Index i = 0; i < gr.rows(); ++i) {
        const Real m1 = dxhat.row(i).mean();
        const Real m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
        dx.row(i) = ((dxhat.row(i).array() - m1) - xhat.row(i).array() * m2) * inv_std(i);
      }
      g.accumulate(a, dx);
    });
  }

  // Row-wise softmax; when key_valid is given, invalid columns get -1e9 added
  // to their logit before normalization and end up with exactly zero weight.
  NodeId softmax_rows(NodeId a, const std::vector<char>* key_valid = nullptr) {
    Mat<Real> logits = nodes_[a].value;
    if (key_valid) {
      require(static_cast<Index>(key_valid->size()) == logits.cols(), Errc::shape_mismatch,
              "softmax key mask width");
      for (Index j = 0; j < logits.cols(); ++j)
        if (!(*key_valid)[static_cast<std::size_t>(j)]) logits.col(j).array() += Real(-1e9);
    }
    Mat<Real> y(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
      const Real mx = logits.row(i).maxCoeff();
      y.row(i) = (logits.row(i).array() - mx).exp();
      y.row(i) /= y.row(i).sum();
    }
    return push(std::move(y), [a](Graph& g, NodeId id) {
      const Mat<Real>& y2 = g.nodes_[id].value;
      const Mat<Real>& gr = g.nodes_[id].grad;
      Mat<Real> dx(y2.rows(), y2.cols());
      for (Index i = 0; i < y2.rows(); ++i) {
        const Real dot = (gr.row(i).array() * y2.row(i).array()).sum();
        dx.row(i) = (gr.row(i).array() - dot) * y2.row(i).array();
      }
      g.accumulate(a, dx);
    });
  }

  NodeId gelu(NodeId a) {
    const Mat<Real>& x = nodes_[a].value;
    const Real c = Real(0.7978845608028653558798921198687);  // sqrt(2/pi)
    const Real k = Real(0.044715);
    Mat<Real> out = (Real(0.5) * x.array() * (Real(1) + ((x.array() + k * x.array().cube()) * c).tanh())).matrix();
    return push(std::move(out), [a, c, k](Graph& g, NodeId id) {
      const Mat<Real>& x2 = g.nodes_[a].value;
      auto u = ((x2.array() + k * x2.array().cube()) * c).eval();
      auto t = u.tanh().eval();
      auto dgelu = (Real(0.5) * (Real(1) + t) +
                    Real(0.5) * x2.array() * (Real(1) - t.square()) * c * (Real(1) + Real(3) * k * x2.array().square()))
                       .eval();
      g.accumulate(a, Mat<Real>((g.nodes_[id].grad.array() * dgelu).matrix()));
    });
  }

  // Inverted dropout; active only when a non-null rng is supplied.
  NodeId dropout(NodeId a, Real rate, Rng* rng) {
    if (rng == nullptr || rate <= Real(0)) return a;
    const Mat<Real>& x = nodes_[a].value;
    Mat<Real> mask(x.rows(), x.cols());
    const Real keep_scale = Real(1) / (Real(1) - rate);
    for (Index i = 0; i < x.rows(); ++i)
      for (Index j = 0; j < x.cols(); ++j)
        mask(i, j) = rng->bernoulli(static_cast<double>(rate)) ? Real(0) : keep_scale;
    return push(Mat<Real>(x.cwiseProduct(mask)), [a, mask](Graph& g, NodeId id) {
      g.accumulate(a, Mat<Real>(g.nodes_[id].grad.cwiseProduct(mask)));
    });
  }

  NodeId concat_rows(const std::vector<NodeId>& parts) {
    require(!parts.empty(), Errc::shape_mismatch, "concat_rows of nothing");
    Index rows = 0;
    const Index cols = nodes_[parts[0]].value.cols();
    for (NodeId p : parts) {
      require(nodes_[p].value.cols() == cols, Errc::shape_mismatch, "concat_rows widths differ");
      rows += nodes_[p].value.rows();
    }
    Mat<Real> out(rows, cols);
    Index at = 0;
    for (NodeId p : parts) {
      out.middleRows(at, nodes_[p].value.rows()) = nodes_[p].value;
      at += nodes_[p].value.rows();
    }
    std::vector<NodeId> ps = parts;
    return push(std::move(out), [ps](Graph& g, NodeId id) {
      Index at2 = 0;
      for (NodeId p : ps) {
        const Index n = g.nodes_[p].value.rows();
        g.accumulate(p, Mat<Real>(g.nodes_[id].grad.middleRows(at2, n)));
        at2 += n;
      }
    });
  }

  NodeId slice_cols(NodeId a, Index c0, Index width) {
    require(c0 >= 0 && c0 + width <= nodes_[a].value.cols(), Errc::shape_mismatch, "slice_cols bounds");
    return push(Mat<Real>(nodes_[a].value.middleCols(c0, width)), [a, c0, width](Graph& g, NodeId id) {
      Mat<Real> da = Mat<Real>::Zero(g.nodes_[a].value.rows(), g.nodes_[a].value.cols());
      da.middleCols(c0, width) = g.nodes_[id].grad;
      g.accumulate(a, da);
    });
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    require(!parts.empty(), Errc::shape_mismatch, "concat_cols of nothing");
    const Index rows = nodes_[parts[0]].value.rows();
    Index cols = 0;
    for (NodeId p : parts) {
      require(nodes_[p].value.rows() == rows, Errc::shape_mismatch, "concat_cols heights differ");
      cols += nodes_[p].value.cols();
    }
    Mat<Real> out(rows, cols);
    Index at = 0;
    for (NodeId p : parts) {
      out.middleCols(at, nodes_[p].value.cols()) = nodes_[p].value;
      at += nodes_[p].value.cols();
    }
    std::vector<NodeId> ps = parts;
    return push(std::move(out), [ps](Graph& g, NodeId id) {
      Index at2 = 0;
      for (NodeId p : ps) {
        const Index n = g.nodes_[p].value.cols();
        g.accumulate(p, Mat<Real>(g.nodes_[id].grad.middleCols(at2, n)));
        at2 += n;
      }
    });
  }

  // Zero the rows where keep[i] is false; gradients through them are blocked.
  NodeId zero_rows(NodeId a, const std::vector<char>& keep) {
    require(static_cast<Index>(keep.size()) == nodes_[a].value.rows(), Errc::shape_mismatch, "zero_rows mask");
    Mat<Real> out = nodes_[a].value;
    for (Index i = 0; i < out.rows(); ++i)
      if (!keep[static_cast<std::size_t>(i)]) out.row(i).setZero();
    std::vector<char> kp = keep;
    return push(std::move(out), [a, kp](Graph& g, NodeId id) {
      Mat<Real> da = g.nodes_[id].grad;
      for (Index i = 0; i < da.rows(); ++i)
        if (!kp[static_cast<std::size_t>(i)]) da.row(i).setZero();
      g.accumulate(a, da);
    });
  }

  // Mean over rows (optionally only rows with keep[i] true) -> 1 x d.
  NodeId mean_rows(NodeId a, const std::vector<char>* keep = nullptr) {
    const Mat<Real>& x = nodes_[a].value;
    Index n = 0;
    Mat<Real> out = Mat<Real>::Zero(1, x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      if (keep && !(*keep)[static_cast<std::size_t>(i)]) continue;
      out.row(0) += x.row(i);
      ++n;
    }
    require(n > 0, Errc::shape_mismatch, "mean_rows over empty selection");
    out /= Real(n);
    std::vector<char> kp = keep ? *keep : std::vector<char>(static_cast<std::size_t>(x.rows()), 1);
    return push(std::move(out), [a, kp, n](Graph& g, NodeId id) {
      Mat<Real> da = Mat<Real>::Zero(g.nodes_[a].value.rows(), g.nodes_[a].value.cols());
      const Mat<Real> share = g.nodes_[id].grad / Real(n);
      for (Index i = 0; i < da.rows(); ++i)
        if (kp[static_cast<std::size_t>(i)]) da.row(i) = share.row(0);
      g.accumulate(a, da);
    });
  }

  // 1-D convolution over rows (positions) with zero same-padding. Weight node
  // w has shape (k*d_in) x d_out, tap-major; bias is 1 x d_out.
  NodeId conv1d_same(NodeId a, NodeId w, NodeId b, int k) {
    const Mat<Real>& x = nodes_[a].value;
    const Index d_in = x.cols();
    require(nodes_[w].value.rows() == Index(k) * d_in, Errc::shape_mismatch, "conv1d weight rows");
    const Index d_out = nodes_[w].value.cols();
    require(nodes_[b].value.rows() == 1 && nodes_[b].value.cols() == d_out, Errc::shape_mismatch, "conv1d bias");
    const int off = k / 2;
    Mat<Real> cols = Mat<Real>::Zero(x.rows(), Index(k) * d_in);
    for (Index p = 0; p < x.rows(); ++p)
      for (int j = 0; j < k; ++j) {
        const Index src = p + j - off;
        if (src >= 0 && src < x.rows()) cols.block(p, Index(j) * d_in, 1, d_in) = x.row(src);
      }
    Mat<Real> out = cols * nodes_[w].value;
    out.rowwise() += nodes_[b].value.row(0);
    return push(std::move(out), [a, w, b, k, off, d_in, cols](Graph& g, NodeId id) {
      const Mat<Real>& gr = g.nodes_[id].grad;
      g.accumulate(w, Mat<Real>(cols.transpose() * gr));
      g.accumulate(b, gr.colwise().sum());
      Mat<Real> dcols = gr * g.nodes_[w].value.transpose();
      Mat<Real> da = Mat<Real>::Zero(g.nodes_[a].value.rows(), d_in);
      for (Index p = 0; p < da.rows(); ++p)
        for (int j = 0; j < k; ++j) {
          const Index src = p + j - off;
          if (src >= 0 && src < da.rows()) da.row(src) += dcols.block(p, Index(j) * d_in, 1, d_in);
        }
      g.accumulate(a, da);
    });
  }

  // Adaptive mean pooling over rows: window i covers
  // [floor(i*L/n), ceil((i+1)*L/n)).
  NodeId adaptive_mean_pool_rows(NodeId a, Index n_out) {
    const Mat<Real>& x = nodes_[a].value;
    const Index L = x.rows();
    require(n_out >= 1 && L >= 1, Errc::shape_mismatch, "adaptive pool sizes");
    Mat<Real> out(n_out, x.cols());
    std::vector<std::pair<Index, Index>> windows(static_cast<std::size_t>(n_out));
    for (Index i = 0; i < n_out; ++i) {
      const Index s = (i * L) / n_out;
      const Index e = ((i + 1) * L + n_out - 1) / n_out;  // ceil
      windows[static_cast<std::size_t>(i)] = {s, e};
      out.row(i) = x.middleRows(s, e - s).colwise().mean();
    }
    return push(std::move(out), [a, windows](Graph& g, NodeId id) {
      Mat<Real> da = Mat<Real>::Zero(g.nodes_[a].value.rows(), g.nodes_[a].value.cols());
      for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto [s, e] = windows[i];
        da.middleRows(s, e - s).rowwise() += g.nodes_[id].grad.row(static_cast<Index>(i)) / Real(e - s);
      }
      g.accumulate(a, da);
    });
  }

  // Sum over tissues of squared error against a constant target -> 1 x 1.
  NodeId mse_sum(NodeId pred, const Vec<Real>& target) {
    const Mat<Real>& p = nodes_[pred].value;
    require(p.rows() == 1 && p.cols() == target.size(), Errc::shape_mismatch, "mse_sum target length");
    Mat<Real> diff = p - target.transpose();
    Mat<Real> out(1, 1);
    out(0, 0) = diff.array().square().sum();
    return push(std::move(out), [pred, diff](Graph& g, NodeId id) {
      g.accumulate(pred, Mat<Real>(Real(2) * g.nodes_[id].grad(0, 0) * diff));
    });
  }

  // Mean cross-entropy over the rows flagged in `at`; targets are class ids.
  NodeId cross_entropy_rows(NodeId logits, const std::vector<int>& targets, const std::vector<char>& at) {
    const Mat<Real>& z = nodes_[logits].value;
    require(static_cast<Index>(targets.size()) == z.rows() && at.size() == targets.size(), Errc::shape_mismatch,
            "cross_entropy row metadata");
    Index n = 0;
    Real loss = 0;
    Mat<Real> probs(z.rows(), z.cols());
    for (Index i = 0; i < z.rows(); ++i) {
      if (!at[static_cast<std::size_t>(i)]) continue;
      const Real mx = z.row(i).maxCoeff();
      auto ex = (z.row(i).array() - mx).exp().eval();
      const Real denom = ex.sum();
      probs.row(i) = ex / denom;
      loss += std::log(denom) + mx - z(i, targets[static_cast<std::size_t>(i)]);
      ++n;
    }
    require(n > 0, Errc::shape_mismatch, "cross_entropy over zero rows");
    Mat<Real> out(1, 1);
    out(0, 0) = loss / Real(n);
    std::vector<int> tg = targets;
    std::vector<char> sel = at;
    return push(std::move(out), [logits, tg, sel, probs, n](Graph& g, NodeId id) {
      const Real s = g.nodes_[id].grad(0, 0) / Real(n);
      Mat<Real> dz = Mat<Real>::Zero(probs.rows(), probs.cols());
      for (Index i = 0; i < probs.rows(); ++i) {
        if (!sel[static_cast<std::size_t>(i)]) continue;
        dz.row(i) = probs.row(i) * s;
        dz(i, tg[static_cast<std::size_t>(i)]) -= s;
      }
      g.accumulate(logits, dz);
    });
  }

  void accumulate(NodeId id, const Mat<Real>& g) {
    Node& n = nodes_[id];
    if (!n.grad_ready) {
      n.grad = g;
      n.grad_ready = true;
    } else {
      n.grad += g;
    }
  }

  // Seed the root with `seed_grad` and propagate to parameters.
  void backward(NodeId root, const Mat<Real>& seed_grad) {
    require(seed_grad.rows() == nodes_[root].value.rows() && seed_grad.cols() == nodes_[root].value.cols(),
            Errc::shape_mismatch, "backward seed shape");
    accumulate(root, seed_grad);
    for (NodeId id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad_ready && n.backward) n.backward(*this, id);
    }
  }

  void backward_scalar(NodeId root, Real seed = Real(1)) {
    Mat<Real> s(1, 1);
    s(0, 0) = seed;
    backward(root, s);
  }

 private:
  NodeId push(Mat<Real> v, std::function<void(Graph&, NodeId)> bw) {
    nodes_.push_back(Node{std::move(v), {}, false, std::move(bw)});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void check_same_shape(NodeId a, NodeId b, const char* what) {
    require(nodes_[a].value.rows() == nodes_[b].value.rows() && nodes_[a].value.cols() == nodes_[b].value.cols(),
            Errc::shape_mismatch, std::string(what) + " operand shapes");
  }

  std::vector<Node> nodes_;
};

}  // namespace isoformer
