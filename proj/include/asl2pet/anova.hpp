/*
 * asl2pet: semi-supervised ASL/T1w to PET translation
 *
 * Copyright 2026 The asl2pet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "asl2pet/common.hpp"

namespace asl2pet {

struct AnovaResult {
  double f = 0.0;
  double p = 1.0;
  double df_treatment = 0.0;
  double df_error = 0.0;
  double ss_treatment = 0.0;
  double ss_subjects = 0.0;
  double ss_error = 0.0;
};

/// One-way repeated-measures ANOVA. `table[i][j]` is subject i under
/// condition j. F = (SS_cond / (k-1)) / (SS_err / ((k-1)(n-1))), with
/// SS_err the subject-by-condition interaction; p is the upper tail of
/// F(k-1, (k-1)(n-1)). A table with no condition effect gives F = 0, p = 1;
/// a table without any variance, or with an effect but no residual, throws.
inline AnovaResult anova_rm(const std::vector<std::vector<double>>& table) {
  const std::size_t n = table.size();
  if (n < 3) fail(ErrorCode::DegenerateInput, "repeated-measures ANOVA needs at least 3 subjects");
  const std::size_t k = table[0].size();
  if (k < 2) fail(ErrorCode::DegenerateInput, "repeated-measures ANOVA needs at least 2 conditions");
  for (const auto& row : table) {
    if (row.size() != k) fail(ErrorCode::DegenerateInput, "ragged ANOVA table");
    for (double v : row)
      if (!std::isfinite(v)) fail(ErrorCode::DegenerateInput, "missing or non-finite ANOVA cell");
  }

  bool constant = true;
  for (const auto& row : table)
    for (double v : row) constant = constant && v == table[0][0];
  if (constant) fail(ErrorCode::DegenerateInput, "ANOVA table has no variance at all");

  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += table[i][j];
      col_mean[j] += table[i][j];
      grand += table[i][j];
    }
  for (auto& v : row_mean) v /= static_cast<double>(k);
  for (auto& v : col_mean) v /= static_cast<double>(n);
  grand /= static_cast<double>(n * k);

  AnovaResult r;
  r.df_treatment = static_cast<double>(k - 1);
  r.df_error = static_cast<double>((k - 1) * (n - 1));

  bool no_effect = true;
  for (std::size_t j = 1; j < k; ++j) no_effect = no_effect && col_mean[j] == col_mean[0];
  if (!no_effect)
    for (double m : col_mean) r.ss_treatment += static_cast<double>(n) * (m - grand) * (m - grand);
  for (double m : row_mean) r.ss_subjects += static_cast<double>(k) * (m - grand) * (m - grand);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double e = table[i][j] - row_mean[i] - col_mean[j] + grand;
      r.ss_error += e * e;
    }

  if (r.ss_treatment == 0.0) {
    r.f = 0.0;
    r.p = 1.0;
    return r;
  }
  if (r.ss_error == 0.0)
    fail(ErrorCode::DegenerateInput, "zero residual variance with a non-zero condition effect");
  r.f = (r.ss_treatment / r.df_treatment) / (r.ss_error / r.df_error);
  const boost::math::fisher_f_distribution<double> dist(r.df_treatment, r.df_error);
  r.p = boost::math::cdf(boost::math::complement(dist, r.f));
  return r;
}

}  // namespace asl2pet
