#pragma once

// Attacked ("teacher") classifiers behind a common interface: a trained FCN
// or a 1-NN DTW classifier over a labeled reference set.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsadv/dtw.hpp"
#include "tsadv/error.hpp"
#include "tsadv/nn/model.hpp"
#include "tsadv/timeseries.hpp"

namespace tsadv {

enum class TeacherKind { fcn, dtw1nn };
enum class BoxMode { white, black };

inline std::string to_string(TeacherKind k) { return k == TeacherKind::fcn ? "fcn" : "dtw1nn"; }
inline std::string to_string(BoxMode b) { return b == BoxMode::white ? "white" : "black"; }

inline TeacherKind teacher_kind_from_string(const std::string& s) {
  if (s == "fcn") return TeacherKind::fcn;
  if (s == "dtw1nn" || s == "dtw") return TeacherKind::dtw1nn;
  throw ConfigError("unknown teacher kind '" + s + "' (expected fcn or dtw1nn)");
}

inline BoxMode box_mode_from_string(const std::string& s) {
  if (s == "white") return BoxMode::white;
  if (s == "black") return BoxMode::black;
  throw ConfigError("unknown box mode '" + s + "' (expected white or black)");
}

using Series = std::vector<std::vector<double>>;

class Teacher {
public:
  virtual ~Teacher() = default;

  virtual TeacherKind kind() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::vector<int> predict(const Series& x) const = 0;
  /// Class distribution per sample: softmax outputs or Soft-1NN probabilities.
  /// Calls are counted by audit::Scope, as are calls to logits().
  virtual Matrix probabilities(const Series& x) const = 0;
  /// Pre-softmax scores, when the teacher has them.
  virtual std::optional<Matrix> logits(const Series&) const { return std::nullopt; }
};

/// Splits inference into fixed chunks to bound im2col memory.
template <typename T, typename Fn>
void for_each_chunk(const Series& x, std::size_t chunk, Fn&& fn) {
  for (std::size_t i = 0; i < x.size(); i += chunk) {
    const Series part(x.begin() + static_cast<std::ptrdiff_t>(i),
                      x.begin() + static_cast<std::ptrdiff_t>(std::min(x.size(), i + chunk)));
    fn(i, nn::to_input<T>(part));
  }
}

class FcnTeacher final : public Teacher {
public:
  explicit FcnTeacher(nn::Model<float> model) : model_(std::move(model)) {
    if (model_.arch.num_classes < 2) throw ConfigError("FcnTeacher: model must have >= 2 classes");
  }

  TeacherKind kind() const override { return TeacherKind::fcn; }
  std::size_t num_classes() const override { return model_.arch.num_classes; }
  const nn::Model<float>& model() const noexcept { return model_; }

  std::vector<int> predict(const Series& x) const override {
    std::vector<int> out;
    for_each_chunk<float>(x, kChunk, [&](std::size_t, const nn::Tensor<float>& t) {
      const auto p = nn::predict_labels(model_, t);
      out.insert(out.end(), p.begin(), p.end());
    });
    return out;
  }

  std::optional<Matrix> logits(const Series& x) const override {
    audit::note_teacher_prob_read();
    Matrix m(x.size(), num_classes());
    for_each_chunk<float>(x, kChunk, [&](std::size_t first, const nn::Tensor<float>& t) {
      const auto z = model_.net.forward(t, nn::Mode::inference);
      for (std::size_t i = 0; i < z.size(); ++i) m.data[first * m.cols + i] = static_cast<double>(z[i]);
    });
    return m;
  }

  Matrix probabilities(const Series& x) const override {
    Matrix z = *logits(x);
    for (std::size_t r = 0; r < z.rows; ++r) {
      const auto q = nn::softmax(z.row(r), 1.0);
      std::copy(q.begin(), q.end(), z.row(r).begin());
    }
    return z;
  }

private:
  static constexpr std::size_t kChunk = 256;
  nn::Model<float> model_;
};

/// 1-NN DTW with a full warping window. Reference labels are copied out of
/// the dataset once, at construction.
class Dtw1nnTeacher final : public Teacher {
public:
  Dtw1nnTeacher(const Dataset& reference, unsigned workers = 1)
      : reference_(reference.values()), labels_(reference.labels()), workers_(workers),
        classes_(static_cast<std::size_t>(reference.num_classes)) {
    if (reference_.empty()) throw ConfigError("Dtw1nnTeacher: empty reference set");
  }

  TeacherKind kind() const override { return TeacherKind::dtw1nn; }
  std::size_t num_classes() const override { return classes_; }
  const Series& reference() const noexcept { return reference_; }
  const std::vector<int>& reference_labels() const noexcept { return labels_; }

  DistanceMatrix distances(const Series& x) const { return dtw_distance_matrix(x, reference_, labels_, workers_); }

  std::vector<int> predict(const Series& x) const override { return nn1_classify(distances(x)); }

  Matrix probabilities(const Series& x) const override {
    audit::note_teacher_prob_read();
    return soft_1nn(distances(x), static_cast<int>(classes_)).probs;
  }

private:
  Series reference_;
  std::vector<int> labels_;
  unsigned workers_;
  std::size_t classes_;
};

}  // namespace tsadv
