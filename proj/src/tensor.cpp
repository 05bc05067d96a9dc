#include "molbuild/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "molbuild/rng.hpp"

namespace molbuild {

namespace {

using DataPtr = std::shared_ptr<TensorData>;

bool tracks(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

// out grad, or nullptr when nothing flowed into it
const std::vector<double>* upstream(const DataPtr& out) { return out->grad.empty() ? nullptr : &out->grad; }

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative tensor shape");
  Tensor t;
  t.d_ = std::make_shared<TensorData>();
  t.d_->rows = rows;
  t.d_->cols = cols;
  t.d_->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(int rows, int cols, std::vector<double> values, bool requires_grad) {
  if (values.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("tensor value count does not match shape");
  Tensor t = zeros(0, 0, requires_grad);
  t.d_->rows = rows;
  t.d_->cols = cols;
  t.d_->value = std::move(values);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() on a non-scalar tensor");
  return d_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (d_->grad.empty()) return std::vector<double>(d_->value.size(), 0.0);
  return d_->grad;
}

Tensor Tensor::clone() const {
  return from(rows(), cols(), values(), requires_grad());
}

void Tape::backward(const Tensor& loss) {
  if (!record_) throw std::logic_error("backward on a non-recording tape");
  if (loss.size() != 1) throw std::invalid_argument("backward needs a scalar loss");
  if (!loss.requires_grad()) return;
  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  nodes_.clear();
}

void Tape::note_kinks(const std::vector<double>& pre) {
  for (double x : pre) kinks_ = (kinks_ ^ (x > 0.0 ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL)) * 0x100000001b3ULL;
}

// ---- ops ------------------------------------------------------------------

namespace {

// C (n x m) += A (n x k) * B (k x m)
void gemm_nn(const double* __restrict A, const double* __restrict B, double* __restrict C, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    double* __restrict crow = C + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double x = A[static_cast<std::size_t>(i) * k + p];
      if (x == 0.0) continue;
      const double* __restrict brow = B + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += x * brow[j];
    }
  }
}

// C (n x k) += G (n x m) * B^T, B is k x m
void gemm_nt(const double* __restrict G, const double* __restrict B, double* __restrict C, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* __restrict grow = G + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double* __restrict brow = B + static_cast<std::size_t>(p) * m;
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += grow[j] * brow[j];
      C[static_cast<std::size_t>(i) * k + p] += s;
    }
  }
}

// C (k x m) += A^T * G, A is n x k, G is n x m
void gemm_tn(const double* __restrict A, const double* __restrict G, double* __restrict C, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* __restrict grow = G + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double x = A[static_cast<std::size_t>(i) * k + p];
      if (x == 0.0) continue;
      double* __restrict crow = C + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) crow[j] += x * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  const int n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::zeros(n, m, tracks(tape, {&a, &b}));
  gemm_nn(a.values().data(), b.values().data(), out.values().data(), n, k, m);
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), bd = b.shared(), od = out.shared(), n, k, m] {
      const auto* g = upstream(od);
      if (!g) return;
      if (ad->requires_grad) gemm_nt(g->data(), bd->value.data(), ad->grad_buffer().data(), n, k, m);
      if (bd->requires_grad) gemm_tn(ad->value.data(), g->data(), bd->grad_buffer().data(), n, k, m);
    });
  }
  return out;
}

namespace {

template <class F, class DA, class DB>
Tensor binary_elementwise(Tape& tape, const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.rows(), a.cols(), tracks(tape, {&a, &b}));
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = f(a.values()[i], b.values()[i]);
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), bd = b.shared(), od = out.shared(), da, db] {
      const auto* g = upstream(od);
      if (!g) return;
      if (ad->requires_grad) {
        auto& ga = ad->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * da(ad->value[i], bd->value[i]);
      }
      if (bd->requires_grad) {
        auto& gb = bd->grad_buffer();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*g)[i] * db(ad->value[i], bd->value[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      tape, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor add_row(Tape& tape, const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) throw std::invalid_argument("add_row: bias shape");
  const int n = a.rows(), m = a.cols();
  Tensor out = Tensor::zeros(n, m, tracks(tape, {&a, &bias}));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(i, j) = a.at(i, j) + bias.at(0, j);
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), bd = bias.shared(), od = out.shared(), n, m] {
      const auto* g = upstream(od);
      if (!g) return;
      if (ad->requires_grad) {
        auto& ga = ad->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i];
      }
      if (bd->requires_grad) {
        auto& gb = bd->grad_buffer();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gb[j] += (*g)[i * m + j];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.rows(), a.cols(), tracks(tape, {&a}));
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] * s;
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), od = out.shared(), s] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& ga = ad->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * s;
    });
  }
  return out;
}

Tensor scale_by(Tape& tape, const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw std::invalid_argument("scale_by: factor must be 1x1");
  const double f = s.item();
  Tensor out = Tensor::zeros(a.rows(), a.cols(), tracks(tape, {&a, &s}));
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] * f;
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), sd = s.shared(), od = out.shared()] {
      const auto* g = upstream(od);
      if (!g) return;
      const double f = sd->value[0];
      if (ad->requires_grad) {
        auto& ga = ad->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*g)[i] * f;
      }
      if (sd->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g->size(); ++i) acc += (*g)[i] * ad->value[i];
        sd->grad_buffer()[0] += acc;
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
  tape.note_kinks(a.values());
  Tensor out = Tensor::zeros(a.rows(), a.cols(), tracks(tape, {&a}));
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), od = out.shared()] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& ga = ad->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i)
        if (ad->value[i] > 0.0) ga[i] += (*g)[i];
    });
  }
  return out;
}

Tensor log(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.rows(), a.cols(), tracks(tape, {&a}));
  for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = std::log(a.values()[i]);
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), od = out.shared()] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& ga = ad->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i)
        if ((*g)[i] != 0.0) ga[i] += (*g)[i] / ad->value[i];
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  const int n = a.rows(), m = a.cols();
  Tensor out = Tensor::zeros(m, n, tracks(tape, {&a}));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(j, i) = a.at(i, j);
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), od = out.shared(), n, m] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& ga = ad->grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) ga[i * m + j] += (*g)[j * n + i];
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  Tensor out = Tensor::from(1, 1, {s}, tracks(tape, {&a}));
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), od = out.shared()] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& ga = ad->grad_buffer();
      for (auto& x : ga) x += (*g)[0];
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

Tensor pick(Tape& tape, const Tensor& a, int row, int col) {
  if (row < 0 || row >= a.rows() || col < 0 || col >= a.cols()) throw std::out_of_range("pick index");
  Tensor out = Tensor::from(1, 1, {a.at(row, col)}, tracks(tape, {&a}));
  if (out.requires_grad()) {
    const std::size_t idx = static_cast<std::size_t>(row) * a.cols() + col;
    tape.push([ad = a.shared(), od = out.shared(), idx] {
      const auto* g = upstream(od);
      if (!g) return;
      ad->grad_buffer()[idx] += (*g)[0];
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& table, const std::vector<int>& rows) {
  const int m = table.cols();
  for (int r : rows)
    if (r < 0 || r >= table.rows()) throw std::out_of_range("gather_rows index");
  Tensor out = Tensor::zeros(static_cast<int>(rows.size()), m, tracks(tape, {&table}));
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(rows[i]) * m, m,
                out.values().begin() + static_cast<std::ptrdiff_t>(i) * m);
  if (out.requires_grad()) {
    tape.push([td = table.shared(), od = out.shared(), rows, m] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& gt = td->grad_buffer();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < m; ++j) gt[rows[i] * m + j] += (*g)[i * m + j];
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& a, int begin, int end) {
  if (begin < 0 || end > a.cols() || begin >= end) throw std::out_of_range("slice_cols range");
  const int n = a.rows(), m = a.cols(), w = end - begin;
  Tensor out = Tensor::zeros(n, w, tracks(tape, {&a}));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out.at(i, j) = a.at(i, begin + j);
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), od = out.shared(), n, m, w, begin] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& ga = ad->grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) ga[i * m + begin + j] += (*g)[i * w + j];
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  const int n = parts[0].rows();
  int m = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
    m += p.cols();
    track = track || tracks(tape, {&p});
  }
  Tensor out = Tensor::zeros(n, m, track);
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  if (track) {
    std::vector<DataPtr> ins;
    for (const auto& p : parts) ins.push_back(p.shared());
    tape.push([ins, od = out.shared(), n, m] {
      const auto* g = upstream(od);
      if (!g) return;
      int off = 0;
      for (const auto& pd : ins) {
        if (pd->requires_grad) {
          auto& gp = pd->grad_buffer();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < pd->cols; ++j) gp[i * pd->cols + j] += (*g)[i * m + off + j];
        }
        off += pd->cols;
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  const int m = parts[0].cols();
  int n = 0;
  bool track = false;
  for (const auto& p : parts) {
    if (p.cols() != m) throw std::invalid_argument("concat_rows: column mismatch");
    n += p.rows();
    track = track || tracks(tape, {&p});
  }
  Tensor out = Tensor::zeros(n, m, track);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  if (track) {
    std::vector<DataPtr> ins;
    for (const auto& p : parts) ins.push_back(p.shared());
    tape.push([ins, od = out.shared()] {
      const auto* g = upstream(od);
      if (!g) return;
      std::size_t off = 0;
      for (const auto& pd : ins) {
        if (pd->requires_grad) {
          auto& gp = pd->grad_buffer();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += (*g)[off + i];
        }
        off += pd->value.size();
      }
    });
  }
  return out;
}

Tensor gather_grid(Tape& tape, const Tensor& table, int row, const std::vector<int>& index, int n) {
  if (index.size() != static_cast<std::size_t>(n) * n) throw std::invalid_argument("gather_grid: index size");
  if (row < 0 || row >= table.rows()) throw std::out_of_range("gather_grid row");
  const int m = table.cols();
  Tensor out = Tensor::zeros(n, n, tracks(tape, {&table}));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= m) throw std::out_of_range("gather_grid index");
    out.values()[i] = table.at(row, index[i]);
  }
  if (out.requires_grad()) {
    tape.push([td = table.shared(), od = out.shared(), index, row, m] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& gt = td->grad_buffer();
      for (std::size_t i = 0; i < index.size(); ++i) gt[row * m + index[i]] += (*g)[i];
    });
  }
  return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& a) {
  const int n = a.rows(), m = a.cols();
  Tensor out = Tensor::zeros(n, m, tracks(tape, {&a}));
  for (int i = 0; i < n; ++i) {
    double mx = kNegInf;
    for (int j = 0; j < m; ++j) mx = std::max(mx, a.at(i, j));
    double z = 0.0;
    for (int j = 0; j < m; ++j) z += (out.at(i, j) = std::exp(a.at(i, j) - mx));
    for (int j = 0; j < m; ++j) out.at(i, j) /= z;
  }
  if (out.requires_grad()) {
    tape.push([ad = a.shared(), od = out.shared(), n, m] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& ga = ad->grad_buffer();
      for (int i = 0; i < n; ++i) {
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += (*g)[i * m + j] * od->value[i * m + j];
        for (int j = 0; j < m; ++j) ga[i * m + j] += od->value[i * m + j] * ((*g)[i * m + j] - dot);
      }
    });
  }
  return out;
}

namespace {

struct MaskedStats {
  double max = kNegInf;
  double lse = 0.0;  // log sum exp over legal entries
};

MaskedStats masked_stats(const Tensor& logits, const std::vector<bool>& mask) {
  if (logits.rows() != 1) throw std::invalid_argument("masked softmax expects a row vector");
  if (mask.size() != logits.size()) throw std::invalid_argument("mask size does not match logits");
  MaskedStats s;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) s.max = std::max(s.max, logits.values()[j]);
  if (s.max == kNegInf) throw NumericError("masked softmax over a row with no legal entry");
  double z = 0.0;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) z += std::exp(logits.values()[j] - s.max);
  s.lse = s.max + std::log(z);
  return s;
}

}  // namespace

Tensor masked_softmax(Tape& tape, const Tensor& logits, const std::vector<bool>& mask) {
  auto st = masked_stats(logits, mask);
  Tensor out = Tensor::zeros(1, logits.cols(), tracks(tape, {&logits}));
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) out.values()[j] = std::exp(logits.values()[j] - st.lse);
  if (out.requires_grad()) {
    tape.push([ld = logits.shared(), od = out.shared(), mask] {
      const auto* g = upstream(od);
      if (!g) return;
      double dot = 0.0;
      for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j]) dot += (*g)[j] * od->value[j];
      auto& gl = ld->grad_buffer();
      for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j]) gl[j] += od->value[j] * ((*g)[j] - dot);
    });
  }
  return out;
}

Tensor masked_log_softmax(Tape& tape, const Tensor& logits, const std::vector<bool>& mask) {
  auto st = masked_stats(logits, mask);
  Tensor out = Tensor::zeros(1, logits.cols(), tracks(tape, {&logits}));
  for (std::size_t j = 0; j < mask.size(); ++j)
    out.values()[j] = mask[j] ? logits.values()[j] - st.lse : kNegInf;
  if (out.requires_grad()) {
    tape.push([ld = logits.shared(), od = out.shared(), mask] {
      const auto* g = upstream(od);
      if (!g) return;
      double total = 0.0;
      for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j]) total += (*g)[j];
      auto& gl = ld->grad_buffer();
      for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j]) gl[j] += (*g)[j] - std::exp(od->value[j]) * total;
    });
  }
  return out;
}

Tensor masked_entropy(Tape& tape, const Tensor& logits, const std::vector<bool>& mask) {
  auto st = masked_stats(logits, mask);
  std::vector<double> logp(mask.size(), 0.0);
  double h = 0.0;
  for (std::size_t j = 0; j < mask.size(); ++j)
    if (mask[j]) {
      logp[j] = logits.values()[j] - st.lse;
      h -= std::exp(logp[j]) * logp[j];
    }
  Tensor out = Tensor::from(1, 1, {h}, tracks(tape, {&logits}));
  if (out.requires_grad()) {
    tape.push([ld = logits.shared(), od = out.shared(), mask, logp = std::move(logp), h] {
      const auto* g = upstream(od);
      if (!g) return;
      auto& gl = ld->grad_buffer();
      for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j]) gl[j] += (*g)[0] * -std::exp(logp[j]) * (logp[j] + h);
    });
  }
  return out;
}

// ---- parameters -----------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  t.impl()->requires_grad = true;
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter: " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const auto& p) { return p.first == name; });
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : items_) out.items_.emplace_back(name, t.clone());
  return out;
}

void ParamStore::assign(const ParamStore& other) {
  if (other.items_.size() != items_.size()) throw std::invalid_argument("parameter stores differ in size");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto& [name, t] = items_[i];
    const auto& [oname, o] = other.items_[i];
    if (name != oname || t.rows() != o.rows() || t.cols() != o.cols())
      throw std::invalid_argument("parameter stores differ at " + name);
    t.values() = o.values();
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params.items())
    for (double g : t.impl()->grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, t] : params.items())
      for (double& g : t.impl()->grad) g *= factor;
  }
  return norm;
}

double Adam::step(ParamStore& params) {
  auto& items = params.items();
  if (m_.empty()) {
    for (const auto& [name, t] : items) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }
  if (m_.size() != items.size()) throw std::logic_error("parameter set changed under the optimizer");

  const double norm = clip_grad_norm(params, config_.clip_norm);

  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, t_);
  const double c2 = 1.0 - std::pow(config_.beta2, t_);
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto& t = items[k].second;
    const auto& grad = t.impl()->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    auto& w = t.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = grad.empty() ? 0.0 : grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
  return norm;
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'B', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_le(std::ostream& out, T x) {
  auto u = static_cast<std::uint64_t>(x);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <class T>
T read_le(std::istream& in) {
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    int c = in.get();
    if (c == EOF) throw CheckpointError("truncated checkpoint");
    u |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(u);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, std::uint64_t digest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint64_t>(out, digest);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.items().size()));
  for (const auto& [name, t] : params.items()) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
    for (double x : t.values()) write_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params, std::uint64_t digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw CheckpointError("not a checkpoint file");
  if (read_le<std::uint32_t>(in) != kVersion) throw CheckpointError("unsupported checkpoint version");
  if (read_le<std::uint64_t>(in) != digest) throw CheckpointError("checkpoint config digest mismatch");
  auto count = read_le<std::uint32_t>(in);
  if (count != params.items().size()) throw CheckpointError("checkpoint tensor count mismatch");
  ParamStore staged = params.clone();
  for (auto& [name, t] : staged.items()) {
    auto len = read_le<std::uint32_t>(in);
    std::string stored(len, '\0');
    in.read(stored.data(), len);
    if (!in || stored != name) throw CheckpointError("checkpoint tensor name mismatch at " + name);
    auto rows = read_le<std::uint32_t>(in);
    auto cols = read_le<std::uint32_t>(in);
    if (static_cast<int>(rows) != t.rows() || static_cast<int>(cols) != t.cols())
      throw CheckpointError("checkpoint shape mismatch at " + name);
    for (auto& x : t.values()) x = std::bit_cast<double>(read_le<std::uint64_t>(in));
  }
  params.assign(staged);
}

// ---- finite differences -----------------------------------------------------

GradCheckResult gradcheck(ParamStore& params, const std::function<Tensor(Tape&)>& loss_fn,
                          const GradCheckOptions& options) {
  params.zero_grad();
  std::uint64_t base_kinks;
  {
    Tape tape;
    Tensor loss = loss_fn(tape);
    base_kinks = tape.kink_signature();
    tape.backward(loss);
  }
  auto evaluate = [&](std::uint64_t& kinks) {
    Tape tape(false);
    double v = loss_fn(tape).item();
    kinks = tape.kink_signature();
    return v;
  };

  GradCheckResult result;
  Rng rng = Rng::substream(options.seed, "gradcheck");
  for (auto& [name, t] : params.items()) {
    const auto analytic = t.grad();
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    int want = std::min<int>(options.coords_per_tensor, static_cast<int>(t.size()));
    int done = 0, redraws = 0;
    for (std::size_t idx : order) {
      if (done >= want || redraws > options.max_redraws) break;
      double& x = t.values()[idx];
      const double orig = x;
      std::uint64_t kp, km;
      x = orig + options.h;
      double lp = evaluate(kp);
      x = orig - options.h;
      double lm = evaluate(km);
      x = orig;
      if (kp != base_kinks || km != base_kinks) {
        ++result.skipped_kinks;
        ++redraws;
        continue;
      }
      double numeric = (lp - lm) / (2.0 * options.h);
      double abs_err = std::abs(analytic[idx] - numeric);
      double rel = abs_err / std::max({std::abs(analytic[idx]), std::abs(numeric), options.denom_floor});
      ++result.checked;
      ++done;
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      if (rel > result.max_rel_error || result.worst.empty()) {
        if (rel >= result.max_rel_error) result.worst = name + "[" + std::to_string(idx) + "]";
        result.max_rel_error = std::max(result.max_rel_error, rel);
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace molbuild
