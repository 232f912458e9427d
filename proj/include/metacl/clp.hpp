#pragma once

// Continual Learning Prediction tasks.
//
// A task fixes an ordered sequence of classes C_1..C_n and a shot count k. A
// trajectory drawn from it is the class-incremental stream: k samples of C_1,
// then k samples of C_2, and so on, so H = n * k. Labels are positional: the
// i-th class of the task gets label i-1 regardless of its pool identity.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metacl/autodiff.hpp"
#include "metacl/models.hpp"
#include "metacl/rng.hpp"

namespace metacl {

struct Sample {
  std::vector<double> x;
  std::size_t item = 0;  // index of the underlying example within its class
};

/// Generator behind a set of classes: realizes the per-class draws.
class ClassPool {
 public:
  virtual ~ClassPool() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_classes() const = 0;
  /// Finite example count per class, or nullopt for an unbounded generator.
  virtual std::optional<std::size_t> items_per_class(std::size_t cls) const = 0;
  /// Draws `count` examples of `cls` without replacement, skipping `excluded`
  /// item indices when the generator is finite.
  virtual std::vector<Sample> draw(std::size_t cls, std::size_t count, Rng& rng,
                                   std::span<const std::size_t> excluded) const = 0;
};

struct TaskDistribution {
  std::shared_ptr<const ClassPool> pool;
  std::vector<std::size_t> classes;  // pool class ids belonging to this split
  std::size_t classes_per_task = 10;
  std::size_t shots = 5;
  LossKind loss = LossKind::CrossEntropy;
  std::string name;

  void validate() const;
};

struct CLPTask {
  std::shared_ptr<const ClassPool> pool;
  std::vector<std::size_t> class_sequence;
  std::size_t shots = 5;
  LossKind loss = LossKind::CrossEntropy;

  std::size_t horizon() const { return class_sequence.size() * shots; }
  std::size_t num_classes() const { return class_sequence.size(); }
  std::size_t input_dim() const { return pool->input_dim(); }
  std::size_t output_dim() const { return class_sequence.size(); }
};

struct Trajectory {
  std::size_t input_dim = 0;
  std::vector<double> features;               // row-major, size() x input_dim
  std::vector<std::size_t> labels;            // positional labels
  std::vector<std::size_t> class_boundaries;  // start index of each class
  std::vector<std::size_t> items;             // per-point item index within its class
  std::optional<Tensor> targets;              // dense regression targets, if any

  std::size_t size() const { return labels.size(); }
  /// Rows [begin, end) as a constant (rows, input_dim) tensor.
  Tensor x(std::size_t begin, std::size_t end) const;
  Tensor x() const { return x(0, size()); }
  std::vector<std::size_t> label_range(std::size_t begin, std::size_t end) const;
  /// First `n` points (keeps the boundaries that fall inside).
  Trajectory prefix(std::size_t n) const;
};

/// Samples n distinct classes uniformly without replacement, in random order.
CLPTask sample_task(const TaskDistribution& dist, Rng& rng);

/// k samples per class in task order. When `disjoint_from` is given and the
/// pool is finite, items used there are excluded.
Trajectory sample_trajectory(const CLPTask& task, Rng& rng);
Trajectory sample_trajectory(const CLPTask& task, Rng& rng, std::size_t shots,
                             const Trajectory* disjoint_from = nullptr);

/// Restricts a task to a sub-sequence of its classes (labels are re-assigned positionally).
CLPTask sub_task(const CLPTask& task, std::span<const std::size_t> positions);

/// Checks labels are 0,0,..,1,1,.. with contiguous blocks matching class_boundaries.
bool is_class_incremental(const Trajectory& traj);

/// Sum of per-point losses over the trajectory.
Tensor trajectory_loss(const ParamSet& params, const Trajectory& traj, LossKind kind);

/// CSV with header step,label,feature_0..feature_{d-1}.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

// ---------------------------------------------------------------------------
// Synthetic Gaussian clusters

struct GaussianSpec {
  std::size_t input_dim = 8;
  std::size_t train_classes = 60;
  std::size_t test_classes = 40;
  std::size_t classes_per_task = 10;
  std::size_t shots = 5;
  double separation = 4.0;
  double spread = 0.5;
  std::uint64_t seed = 0;
};

/// Isotropic clusters around centers drawn uniformly on the sphere of radius `separation`.
class GaussianPool final : public ClassPool {
 public:
  GaussianPool(std::size_t input_dim, std::size_t classes, double separation, double spread,
               std::uint64_t seed);
  std::size_t input_dim() const override { return dim_; }
  std::size_t num_classes() const override { return classes_; }
  std::optional<std::size_t> items_per_class(std::size_t) const override { return std::nullopt; }
  std::vector<Sample> draw(std::size_t cls, std::size_t count, Rng& rng,
                           std::span<const std::size_t> excluded) const override;
  std::span<const double> center(std::size_t cls) const;
  double spread() const { return spread_; }

 private:
  std::size_t dim_, classes_;
  double spread_;
  std::vector<double> centers_;
};

struct Benchmark {
  TaskDistribution meta_train;
  TaskDistribution meta_test;
};

TaskDistribution make_gaussian_distribution(std::size_t input_dim, std::size_t pool_size,
                                            std::size_t classes_per_task, std::size_t shots,
                                            double spread, std::uint64_t seed, double separation = 4.0);

/// One shared generator; meta-train gets the first train_classes ids, meta-test the rest.
Benchmark make_gaussian_benchmark(const GaussianSpec& spec);

// ---------------------------------------------------------------------------
// Omniglot-style image directories

enum class Split { MetaTrain, MetaTest };

struct OmniglotOptions {
  std::size_t image_size = 28;
  std::size_t train_classes = 963;
  std::size_t test_classes = 660;
  std::size_t classes_per_task = 10;
  std::size_t shots = 5;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ImagePool final : public ClassPool {
 public:
  ImagePool(std::size_t input_dim, std::vector<std::vector<std::vector<double>>> images,
            std::vector<std::string> class_names);
  std::size_t input_dim() const override { return dim_; }
  std::size_t num_classes() const override { return images_.size(); }
  std::optional<std::size_t> items_per_class(std::size_t cls) const override;
  std::vector<Sample> draw(std::size_t cls, std::size_t count, Rng& rng,
                           std::span<const std::size_t> excluded) const override;
  const std::string& class_name(std::size_t cls) const { return names_.at(cls); }

 private:
  std::size_t dim_;
  std::vector<std::vector<std::vector<double>>> images_;
  std::vector<std::string> names_;
};

/// Reads every directory of *.png files under root (or the paths listed in root/manifest.txt),
/// sorts classes by relative path, and splits into meta-train / meta-test.
Benchmark load_omniglot(const std::filesystem::path& root, const OmniglotOptions& options);
TaskDistribution load_omniglot_pool(const std::filesystem::path& root, Split split,
                                    const OmniglotOptions& options = {});

/// Grayscale image in [0,1], ink = 1, area-resampled to size x size and flattened.
std::vector<double> load_image(const std::filesystem::path& path, std::size_t size);

}  // namespace metacl
