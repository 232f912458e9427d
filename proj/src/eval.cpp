#include "metacl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "metacl/checkpoint.hpp"
#include "metacl/csv.hpp"

namespace metacl {

void EvalProtocol::validate() const {
  if (!(head_lr > 0.0)) throw std::invalid_argument("eval head_lr must be > 0");
  if (tasks == 0) throw std::invalid_argument("eval tasks must be >= 1");
  if (test_samples_per_class == 0) throw std::invalid_argument("test_samples_per_class must be >= 1");
}

ParamSet reinit_head(const ParamSet& params, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> idx = params.indices(Partition::Head);
  std::vector<Tensor> values;
  for (auto i : idx) {
    const auto& t = params[i].value;
    if (t.rank() == 2) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.shape()[0]));
      std::uniform_real_distribution<double> u(-bound, bound);
      std::vector<double> w(t.size());
      for (auto& v : w) v = u(rng);
      values.push_back(Tensor::constant(t.shape(), std::move(w)));
    } else {
      values.push_back(Tensor::zeros(t.shape()));
    }
  }
  return params.detach().with_values(idx, std::move(values));
}

namespace {

struct TaskData {
  ParamSet params;  // encoder from the trained set, fresh head
  Trajectory train;
  Trajectory test;
};

TaskData draw_task_data(const ParamSet& trained, const CLPTask& task, Rng& rng, std::size_t test_per_class) {
  const std::uint64_t head_seed = rng();
  TaskData d{reinit_head(trained, head_seed), sample_trajectory(task, rng), {}};
  d.test = sample_trajectory(task, rng, test_per_class, &d.train);
  return d;
}

// One SGD step on the rows [row, row+1) of `inputs`. When `features` is set,
// inputs are precomputed representations and only the head moves.
ParamSet sgd_point(const ParamSet& params, const Tensor& inputs, std::size_t row, std::size_t label,
                   double alpha, bool features) {
  Tape tape;
  const ParamSet on_tape = params.attach(tape);
  const auto x = slice_rows(inputs, row, row + 1);
  const auto out = features ? head_logits(on_tape, x) : logits(on_tape, x);
  const auto loss = cross_entropy(out, {label});
  std::vector<std::size_t> idx;
  if (features) {
    idx = params.indices(Partition::Head);
  } else {
    idx.resize(params.size());
    std::iota(idx.begin(), idx.end(), 0);
  }
  std::vector<Tensor> wrt;
  for (auto i : idx) wrt.push_back(on_tape[i].value);
  const auto grads = gradient(loss, wrt, false);
  std::vector<Tensor> cur;
  for (auto i : idx) cur.push_back(params[i].value);
  return params.with_values(idx, sgd_step(cur, grads, alpha));
}

double prefix_accuracy(const ParamSet& params, const Tensor& inputs, const std::vector<std::size_t>& labels,
                       std::size_t rows, bool features) {
  const auto x = slice_rows(inputs, 0, rows);
  const auto out = features ? head_logits(params, x) : logits(params, x);
  return accuracy_from_logits(out, std::vector<std::size_t>(labels.begin(), labels.begin() + rows));
}

}  // namespace

OnlineResult meta_test_online(const ParamSet& trained, const CLPTask& task, double alpha, Rng& rng,
                              const OnlineOptions& options) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("meta-test step size must be >= 0");
  TaskData d = draw_task_data(trained, task, rng, options.test_samples_per_class);
  const bool frozen = !options.update_encoder;
  // The encoder never changes in the frozen setting, so representations are computed once.
  const Tensor train_in = frozen ? encode(d.params, d.train.x()) : d.train.x();
  const Tensor test_in = frozen ? encode(d.params, d.test.x()) : d.test.x();

  OnlineResult r;
  ParamSet params = d.params;
  const std::size_t n = task.num_classes();
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t begin = d.train.class_boundaries[c];
    const std::size_t end = c + 1 < n ? d.train.class_boundaries[c + 1] : d.train.size();
    for (std::size_t j = begin; j < end; ++j) {
      params = sgd_point(params, train_in, j, d.train.labels[j], alpha, frozen);
      ++r.sgd_steps;
    }
    const std::size_t test_rows = d.test.class_boundaries.size() > c + 1 ? d.test.class_boundaries[c + 1]
                                                                           : d.test.size();
    r.train_acc.push_back(prefix_accuracy(params, train_in, d.train.labels, end, frozen));
    r.test_acc.push_back(prefix_accuracy(params, test_in, d.test.labels, test_rows, frozen));
    r.train_rows_used.push_back(end);
    r.test_rows_used.push_back(test_rows);
    r.max_label_used.push_back(std::max(*std::max_element(d.train.labels.begin(), d.train.labels.begin() + end),
                                        *std::max_element(d.test.labels.begin(), d.test.labels.begin() + test_rows)));
  }
  r.final_params = std::move(params);
  return r;
}

IidResult meta_test_iid(const ParamSet& trained, const CLPTask& task, double alpha, std::size_t epochs, Rng& rng,
                        std::size_t test_samples_per_class) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("meta-test step size must be >= 0");
  TaskData d = draw_task_data(trained, task, rng, test_samples_per_class);
  const Tensor train_in = encode(d.params, d.train.x());
  const Tensor test_in = encode(d.params, d.test.x());
  IidResult r;
  ParamSet params = d.params;
  std::vector<std::size_t> order(d.train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto j : order) {
      params = sgd_point(params, train_in, j, d.train.labels[j], alpha, true);
      ++r.sgd_steps;
    }
  }
  r.train_acc = prefix_accuracy(params, train_in, d.train.labels, d.train.size(), true);
  r.test_acc = prefix_accuracy(params, test_in, d.test.labels, d.test.size(), true);
  return r;
}

EvalCurve aggregate_curves(const std::vector<std::vector<double>>& per_task, std::vector<double> x) {
  if (per_task.empty()) throw std::invalid_argument("aggregate_curves: no tasks");
  const std::size_t points = per_task.front().size();
  for (const auto& t : per_task)
    if (t.size() != points) throw std::invalid_argument("aggregate_curves: mismatched x-grids");
  if (x.empty()) {
    x.resize(points);
    std::iota(x.begin(), x.end(), 1.0);
  }
  if (x.size() != points) throw std::invalid_argument("aggregate_curves: x-grid length mismatch");
  EvalCurve c;
  c.x = std::move(x);
  c.per_task = per_task;
  const double n = static_cast<double>(per_task.size());
  for (std::size_t i = 0; i < points; ++i) {
    // Fixed summation order over a sorted copy keeps the result independent of task order.
    std::vector<double> col;
    for (const auto& t : per_task) col.push_back(t[i]);
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (double v : col) s += v;
    // Identical columns get an exact mean and a zero interval, free of rounding residue.
    const double m = col.front() == col.back() ? col.front() : s / n;
    double ss = 0.0;
    for (double v : col) ss += (v - m) * (v - m);
    c.mean.push_back(m);
    c.ci_halfwidth.push_back(per_task.size() < 2 ? 0.0 : 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n));
  }
  return c;
}

Comparison compare_objectives(const std::vector<NamedEncoder>& encoders, const TaskDistribution& dist,
                              const EvalProtocol& protocol) {
  protocol.validate();
  if (encoders.empty()) throw std::invalid_argument("compare_objectives: no encoders");
  for (const auto& e : encoders)
    if (!structurally_compatible(e.params, encoders.front().params))
      throw std::invalid_argument("compare_objectives: encoder '" + e.name + "' has incompatible shapes");

  const std::size_t n = dist.classes_per_task;
  std::vector<std::vector<std::vector<double>>> on_tr(encoders.size()), on_te(encoders.size()),
      iid_tr(encoders.size()), iid_te(encoders.size());
  Comparison cmp;
  cmp.reports.resize(encoders.size());
  for (std::size_t t = 0; t < protocol.tasks; ++t) {
    Rng task_rng = make_rng(protocol.seed, "eval-task", t);
    const CLPTask task = sample_task(dist, task_rng);
    const Rng data_rng = make_rng(protocol.seed, "eval-data", t);
    for (std::size_t k = 0; k < encoders.size(); ++k) {
      const auto& enc = encoders[k];
      auto& rep = cmp.reports[k];
      Rng online_rng = data_rng;
      const auto online = meta_test_online(enc.params, task, enc.head_lr, online_rng,
                                           {protocol.test_samples_per_class, false});
      Rng iid_rng = data_rng;
      const auto iid = meta_test_iid(enc.params, task, enc.head_lr, protocol.iid_epochs, iid_rng,
                                     protocol.test_samples_per_class);
      on_tr[k].push_back(online.train_acc);
      on_te[k].push_back(online.test_acc);
      iid_tr[k].push_back({iid.train_acc});
      iid_te[k].push_back({iid.test_acc});
      rep.online_steps_per_task = online.sgd_steps;
      rep.iid_steps_per_task = iid.sgd_steps;
      rep.task_log.push_back(task.class_sequence);
    }
  }
  const std::vector<double> final_x{static_cast<double>(n)};
  for (std::size_t k = 0; k < encoders.size(); ++k) {
    auto& rep = cmp.reports[k];
    rep.name = encoders[k].name;
    rep.head_lr = encoders[k].head_lr;
    rep.online_train = aggregate_curves(on_tr[k]);
    rep.online_test = aggregate_curves(on_te[k]);
    rep.iid_train = aggregate_curves(iid_tr[k], final_x);
    rep.iid_test = aggregate_curves(iid_te[k], final_x);
  }
  for (std::size_t k = 1; k < encoders.size(); ++k) {
    const auto diff = [&](const EvalCurve& a, const EvalCurve& b, const char* protocol_name) {
      std::vector<std::vector<double>> d;
      for (std::size_t t = 0; t < a.per_task.size(); ++t) d.push_back({a.per_task[t].back() - b.per_task[t].back()});
      const auto c = aggregate_curves(d);
      cmp.paired.push_back({cmp.reports[k].name, protocol_name, c.mean[0], c.ci_halfwidth[0]});
    };
    const auto& a = cmp.reports[k];
    const auto& b = cmp.reports[0];
    diff(a.online_train, b.online_train, "online_train");
    diff(a.online_test, b.online_test, "online_test");
    diff(a.iid_train, b.iid_train, "iid_train");
    diff(a.iid_test, b.iid_test, "iid_test");
  }
  return cmp;
}

OnlineEvaluation evaluate_online(const ParamSet& params, const TaskDistribution& dist,
                                 const EvalProtocol& protocol, const OnlineOptions& options) {
  protocol.validate();
  std::vector<std::vector<double>> tr, te;
  OnlineEvaluation out;
  for (std::size_t t = 0; t < protocol.tasks; ++t) {
    Rng task_rng = make_rng(protocol.seed, "eval-task", t);
    const CLPTask task = sample_task(dist, task_rng);
    Rng data_rng = make_rng(protocol.seed, "eval-data", t);
    const auto r = meta_test_online(params, task, protocol.head_lr, data_rng, options);
    tr.push_back(r.train_acc);
    te.push_back(r.test_acc);
    std::vector<ParamEntry> enc;
    for (const auto& e : r.final_params.entries())
      if (e.partition == Partition::Encoder) enc.push_back(e);
    out.encoder_checksums.push_back(ParamSet(std::move(enc)).checksum());
    out.task_log.push_back(task.class_sequence);
  }
  out.train = aggregate_curves(tr);
  out.test = aggregate_curves(te);
  return out;
}

void write_curve_csv_header(std::ostream& out) {
  out << "encoder_name,protocol,classes_seen,mean_acc,ci_halfwidth\n";
}

void write_curve_rows(std::ostream& out, const std::string& encoder, const std::string& protocol,
                      const EvalCurve& curve) {
  for (std::size_t i = 0; i < curve.x.size(); ++i)
    out << encoder << ',' << protocol << ',' << format_double(curve.x[i]) << ',' << format_double(curve.mean[i])
        << ',' << format_double(curve.ci_halfwidth[i]) << '\n';
}

void write_summary_csv(std::ostream& out, const Comparison& cmp) {
  const bool paired = cmp.reports.size() >= 2;
  out << "encoder_name,protocol,head_lr,sgd_steps_per_task,final_mean_acc,ci_halfwidth";
  if (paired) out << ",paired_diff_vs_" << cmp.reports.front().name << ",paired_diff_ci";
  out << '\n';
  for (std::size_t k = 0; k < cmp.reports.size(); ++k) {
    const auto& r = cmp.reports[k];
    const std::pair<const char*, const EvalCurve*> panels[] = {
        {"online_train", &r.online_train}, {"online_test", &r.online_test},
        {"iid_train", &r.iid_train}, {"iid_test", &r.iid_test}};
    for (const auto& [name, curve] : panels) {
      const bool online = std::string_view(name).starts_with("online");
      out << r.name << ',' << name << ',' << format_double(r.head_lr) << ','
          << (online ? r.online_steps_per_task : r.iid_steps_per_task) << ','
          << format_double(curve->mean.back()) << ',' << format_double(curve->ci_halfwidth.back());
      if (paired) {
        if (k == 0) {
          out << ",0,0";
        } else {
          for (const auto& p : cmp.paired)
            if (p.name == r.name && p.protocol == name)
              out << ',' << format_double(p.mean) << ',' << format_double(p.ci_halfwidth);
        }
      }
      out << '\n';
    }
  }
}

}  // namespace metacl
