#pragma once

// Dense 2-D float64 tensors with tape-based reverse-mode differentiation,
// Adam, checkpoints and a finite-difference gradient checker.
//
// Ops are free functions that take the Tape. A tape built with
// record = false computes values only (no closures, no grads).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace molbuild {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorData {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulated
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor from(int rows, int cols, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false) { return from(1, 1, {v}, requires_grad); }

  bool defined() const { return d_ != nullptr; }
  int rows() const { return d_->rows; }
  int cols() const { return d_->cols; }
  std::size_t size() const { return d_->value.size(); }

  double& at(int r, int c) { return d_->value[static_cast<std::size_t>(r) * d_->cols + c]; }
  double at(int r, int c) const { return d_->value[static_cast<std::size_t>(r) * d_->cols + c]; }
  double item() const;

  std::vector<double>& values() { return d_->value; }
  const std::vector<double>& values() const { return d_->value; }
  // Zero-filled if nothing was accumulated yet.
  std::vector<double> grad() const;
  bool requires_grad() const { return d_->requires_grad; }
  void zero_grad() { d_->grad.clear(); }

  TensorData* impl() const { return d_.get(); }
  const std::shared_ptr<TensorData>& shared() const { return d_; }

  // Independent copy of shape, values and the requires_grad flag.
  Tensor clone() const;

 private:
  std::shared_ptr<TensorData> d_;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  void push(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d loss / d loss = 1 and runs the recorded closures in reverse.
  void backward(const Tensor& loss);

  // Fingerprint of every relu sign pattern seen on this tape.
  std::uint64_t kink_signature() const { return kinks_; }
  void note_kinks(const std::vector<double>& pre_activation);

 private:
  bool record_;
  std::vector<std::function<void()>> nodes_;
  std::uint64_t kinks_ = 0x9ae16a3b2f90404fULL;
};

// ---- ops ------------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);  // elementwise
// a (n x m) + bias (1 x m) on every row.
Tensor add_row(Tape& tape, const Tensor& a, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& a, double s);
// a * s where s is a 1 x 1 tensor.
Tensor scale_by(Tape& tape, const Tensor& a, const Tensor& s);
Tensor relu(Tape& tape, const Tensor& a);
Tensor log(Tape& tape, const Tensor& a);
Tensor transpose(Tape& tape, const Tensor& a);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
Tensor pick(Tape& tape, const Tensor& a, int row, int col);

// Embedding lookup / row selection; gradients scatter-add.
Tensor gather_rows(Tape& tape, const Tensor& table, const std::vector<int>& rows);
Tensor slice_cols(Tape& tape, const Tensor& a, int begin, int end);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts);

// out(i, j) = table(row, index[i * n + j]) for an n x n index grid.
Tensor gather_grid(Tape& tape, const Tensor& table, int row, const std::vector<int>& index, int n);

Tensor softmax_rows(Tape& tape, const Tensor& a);
// Row vector ops over the entries where mask is true; masked entries are 0
// (softmax) or -inf (log-softmax). Throws NumericError when no entry is legal.
Tensor masked_softmax(Tape& tape, const Tensor& logits, const std::vector<bool>& mask);
Tensor masked_log_softmax(Tape& tape, const Tensor& logits, const std::vector<bool>& mask);
// Entropy of masked_softmax(logits, mask) as a 1 x 1 tensor.
Tensor masked_entropy(Tape& tape, const Tensor& logits, const std::vector<bool>& mask);

// ---- parameters -----------------------------------------------------------

class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t parameter_count() const;

  void zero_grad();
  // Deep copy of all tensors.
  ParamStore clone() const;
  // Copies values from a store with identical names and shapes.
  void assign(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

// Scales all grads so their global L2 norm is at most max_norm (<= 0: no-op).
// Returns the norm before scaling; throws NumericError if it is not finite.
double clip_grad_norm(ParamStore& params, double max_norm);

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Clips the global L2 norm of all grads, then applies one bias-corrected
  // Adam update. Returns the norm before clipping. Throws NumericError on a
  // non-finite gradient without touching the parameters.
  double step(ParamStore& params);
  int t() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- checkpoints ----------------------------------------------------------

// Layout: "MBCKPT\0\0", u32 version, u64 config digest, u32 tensor count,
// then per tensor: u32 name length, name bytes, u32 rows, u32 cols, values
// as little-endian IEEE-754 binary64.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, std::uint64_t digest);
// Loads into an existing store; names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, ParamStore& params, std::uint64_t digest);

// ---- finite differences -----------------------------------------------------

struct GradCheckOptions {
  double h = 1e-5;
  int coords_per_tensor = 4;
  // Relative error is |a - n| / max(|a|, |n|, denom_floor).
  double denom_floor = 1e-6;
  std::uint64_t seed = 0;
  // Replacement draws allowed per tensor for coordinates whose perturbation
  // flips a relu sign.
  int max_redraws = 32;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int checked = 0;
  int skipped_kinks = 0;
  std::string worst;  // "name[index]"
};

// Compares analytic gradients of loss_fn (which must read the params it is
// given) against central differences.
GradCheckResult gradcheck(ParamStore& params, const std::function<Tensor(Tape&)>& loss_fn,
                          const GradCheckOptions& options = {});

}  // namespace molbuild
