#include "edt/harness/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "edt/error.hpp"
#include "edt/harness/dataset.hpp"

namespace edt::harness {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t row_extent(const Tensor<float>& t) {
  if (!t.defined() || t.rank() < 1 || t.dim(0) == 0) throw ArgumentError("evaluation: empty set");
  return t.numel() / t.dim(0);
}

Matrix pooled(const std::vector<const Tensor<float>*>& sets) {
  const std::size_t d = row_extent(*sets.front());
  std::size_t rows = 0;
  for (const auto* s : sets) {
    if (row_extent(*s) != d) throw DimensionError("evaluation: sets differ in extent");
    rows += s->dim(0);
  }
  Matrix z(rows, d);
  std::size_t r = 0;
  for (const auto* s : sets) {
    const auto data = s->data();
    for (std::size_t i = 0; i < s->dim(0); ++i, ++r) {
      for (std::size_t k = 0; k < d; ++k) z(r, k) = data[i * d + k];
    }
  }
  return z;
}

Matrix squared_distances(const Matrix& z) {
  const Matrix g = z * z.transpose();
  const Eigen::Index n = z.rows();
  Matrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) d(i, j) = std::max(0.0, g(i, i) + g(j, j) - 2.0 * g(i, j));
    d(i, i) = 0.0;
  }
  return d;
}

double median_off_diagonal(const Matrix& d) {
  std::vector<double> v;
  const Eigen::Index n = d.rows();
  if (n < 2) return 1.0;
  v.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) v.push_back(d(i, j));
  }
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  return m > 0.0 ? m : 1.0;
}

}  // namespace

double median_bandwidth(const std::vector<const Tensor<float>*>& sets) {
  if (sets.empty()) throw ArgumentError("median_bandwidth: no sets");
  return median_off_diagonal(squared_distances(pooled(sets)));
}

MmdResult kernel_mmd(const Tensor<float>& x, const Tensor<float>& y, std::optional<double> bandwidth) {
  const Matrix d = squared_distances(pooled({&x, &y}));
  const double h = bandwidth ? *bandwidth : median_off_diagonal(d);
  if (!(h > 0.0)) throw ArgumentError("kernel_mmd: bandwidth must be positive");
  const Eigen::Index m = static_cast<Eigen::Index>(x.dim(0)), n = static_cast<Eigen::Index>(y.dim(0));
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (Eigen::Index i = 0; i < m + n; ++i) {
    for (Eigen::Index j = 0; j < m + n; ++j) {
      const double k = std::exp(-d(i, j) / h);
      if (i < m && j < m) kxx += k;
      else if (i >= m && j >= m) kyy += k;
      else if (i < m) kxy += k;
    }
  }
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  MmdResult r;
  r.bandwidth = h;
  r.mmd2 = std::max(0.0, kxx / (md * md) + kyy / (nd * nd) - 2.0 * kxy / (md * nd));
  r.mmd = std::sqrt(r.mmd2);
  return r;
}

namespace {

// Per-pixel mean and standard deviation over the rows of a set.
std::pair<std::vector<double>, std::vector<double>> pixel_moments(const Tensor<float>& t) {
  const std::size_t n = t.dim(0), d = t.numel() / n;
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  const auto data = t.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) mean[k] += data[i * d + k];
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double e = data[i * d + k] - mean[k];
      var[k] += e * e;
    }
  }
  for (auto& v : var) v = std::sqrt(v / static_cast<double>(n));
  return {mean, var};
}

double rms_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

}  // namespace

EvalReport evaluate(const Tensor<float>& generated, const std::vector<std::size_t>& generated_labels,
                    const Tensor<float>& reference, const std::vector<std::size_t>& reference_labels,
                    std::size_t class_count, std::optional<double> bandwidth) {
  if (row_extent(generated) != row_extent(reference)) {
    throw DimensionError("evaluate: generated and reference extents differ");
  }
  if (generated_labels.size() != generated.dim(0) || reference_labels.size() != reference.dim(0)) {
    throw ArgumentError("evaluate: one label per item required");
  }
  const double h = bandwidth ? *bandwidth : median_bandwidth({&reference});
  EvalReport rep;
  rep.overall = kernel_mmd(generated, reference, h);

  std::vector<Tensor<float>> refs(class_count);
  for (std::size_t c = 0; c < class_count; ++c) refs[c] = select_class(reference, reference_labels, c);
  for (std::size_t c = 0; c < class_count; ++c) {
    const auto gen = select_class(generated, generated_labels, c);
    if (gen.dim(0) == 0) continue;
    if (refs[c].dim(0) == 0) throw ArgumentError("evaluate: no reference items for a generated class");
    ClassStats st;
    st.cls = c;
    st.generated = gen.dim(0);
    st.reference = refs[c].dim(0);
    const auto [gm, gs] = pixel_moments(gen);
    const auto [rm, rs] = pixel_moments(refs[c]);
    st.mean_distance = rms_gap(gm, rm);
    st.std_distance = rms_gap(gs, rs);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < class_count; ++k) {
      const double v = refs[k].dim(0) ? kernel_mmd(gen, refs[k], h).mmd : std::numeric_limits<double>::infinity();
      st.mmd_to_class.push_back(v);
      if (v < best) {
        best = v;
        st.nearest_class = k;
      }
    }
    if (st.nearest_class == c) ++rep.classes_nearest_own;
    rep.classes.push_back(std::move(st));
  }
  return rep;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"class", c.cls},
                       {"generated", c.generated},
                       {"reference", c.reference},
                       {"mean_distance", c.mean_distance},
                       {"std_distance", c.std_distance},
                       {"mmd_to_class", c.mmd_to_class},
                       {"nearest_class", c.nearest_class}});
  }
  return {{"metric", "kernel MMD, RBF exp(-|x-y|^2/h), biased estimate"},
          {"bandwidth", r.overall.bandwidth},
          {"mmd", r.overall.mmd},
          {"mmd2", r.overall.mmd2},
          {"classes", classes},
          {"classes_nearest_own", r.classes_nearest_own}};
}

double linear_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ArgumentError("linear_slope: need two or more points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw ArgumentError("linear_slope: constant abscissa");
  return sxy / sxx;
}

}  // namespace edt::harness
