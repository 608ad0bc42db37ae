//! Source-level synthetic control weights on the probability simplex.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ArmDiagnostics, ConstructionMethod, ControlArm, ControlError, Exclusion, Member};
use crate::data::Dataset;

pub const FW_MAX_ITERATIONS: usize = 10_000;
pub const FW_GAP_TOLERANCE: f64 = 1e-10;

/// Covariate means and subject count of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub name: String,
    pub means: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWeights {
    pub sources: Vec<String>,
    pub weights: Vec<f64>,
    /// Square root of the objective at the returned weights.
    pub residual: f64,
    /// Diagonal of V.
    pub metric: Vec<f64>,
    pub iterations: usize,
    /// Frank–Wolfe duality gap at the returned weights.
    pub gap: f64,
}

/// `(t − Σ w_k m_k)ᵀ V (t − Σ w_k m_k)`.
pub fn synthetic_objective(sources: &[SourceSummary], target: &[f64], metric: &[f64], w: &[f64]) -> f64 {
    (0..target.len())
        .map(|j| {
            let r = target[j] - sources.iter().zip(w).map(|(s, wk)| wk * s.means[j]).sum::<f64>();
            metric[j] * r * r
        })
        .sum()
}

/// Minimizes the V-weighted distance between `target` and a convex
/// combination of source means.
///
/// Pairwise Frank–Wolfe with exact line search, stopped at a duality gap of
/// [`FW_GAP_TOLERANCE`]; then the equality-constrained optimum on the final
/// support is tried and kept if it is feasible and no worse.
pub fn synthetic_weights(
    sources: &[SourceSummary],
    target: &[f64],
    metric: &[f64],
) -> Result<SyntheticWeights, ControlError> {
    if sources.is_empty() {
        return Err(ControlError::NoSources);
    }
    let d = target.len();
    for s in sources {
        if s.means.len() != d {
            return Err(ControlError::DimensionMismatch { expected: d, found: s.means.len() });
        }
    }
    if metric.len() != d {
        return Err(ControlError::DimensionMismatch { expected: d, found: metric.len() });
    }
    if metric.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(ControlError::InvalidMetric);
    }
    let k = sources.len();
    let m = DMatrix::from_fn(d, k, |j, s| sources[s].means[j]);
    let v = DVector::from_column_slice(metric);
    let t = DVector::from_column_slice(target);
    // Q = Mᵀ V M, b = Mᵀ V t; f(w) = wᵀQw − 2bᵀw + tᵀVt
    let vm = DMatrix::from_fn(d, k, |j, s| metric[j] * m[(j, s)]);
    let q = m.transpose() * &vm;
    let b = vm.transpose() * &t;
    let c = t.dot(&t.component_mul(&v));
    let f = |w: &DVector<f64>| (w.dot(&(&q * w)) - 2.0 * b.dot(w) + c).max(0.0);

    let vertex_value = |i: usize| q[(i, i)] - 2.0 * b[i];
    let start = (0..k).min_by(|&x, &y| vertex_value(x).total_cmp(&vertex_value(y))).unwrap();
    let mut w = DVector::zeros(k);
    w[start] = 1.0;
    let mut qw = q.column(start).into_owned();
    let mut iterations = 0;
    while iterations < FW_MAX_ITERATIONS {
        let grad = 2.0 * (&qw - &b);
        let s = grad.argmin().0;
        let gap = grad.dot(&w) - grad[s];
        if gap <= FW_GAP_TOLERANCE {
            break;
        }
        let away = (0..k).filter(|&i| w[i] > 0.0).max_by(|&x, &y| grad[x].total_cmp(&grad[y])).unwrap();
        iterations += 1;
        // direction e_s − e_away, step in [0, w_away]
        let curvature = q[(s, s)] + q[(away, away)] - 2.0 * q[(s, away)];
        let slope = grad[s] - grad[away];
        let max_step = w[away];
        let step = if curvature > 0.0 { (-slope / (2.0 * curvature)).min(max_step) } else { max_step };
        if !(step > 0.0) {
            break;
        }
        if step == max_step {
            w[s] += w[away];
            w[away] = 0.0;
        } else {
            w[s] += step;
            w[away] -= step;
        }
        qw += step * (q.column(s) - q.column(away));
    }
    let fw_obj = f(&w);

    // polish on the support
    let support: Vec<usize> = (0..k).filter(|&i| w[i] > 0.0).collect();
    if support.len() > 1 {
        let p = support.len();
        let mut kkt = DMatrix::zeros(p + 1, p + 1);
        let mut rhs = DVector::zeros(p + 1);
        for (a, &i) in support.iter().enumerate() {
            for (bb, &j) in support.iter().enumerate() {
                kkt[(a, bb)] = 2.0 * q[(i, j)];
            }
            kkt[(a, p)] = 1.0;
            kkt[(p, a)] = 1.0;
            rhs[a] = 2.0 * b[i];
        }
        rhs[p] = 1.0;
        if let Some(sol) = kkt.lu().solve(&rhs) {
            if sol.iter().take(p).all(|x| x.is_finite() && *x >= 0.0) {
                let mut cand = DVector::zeros(k);
                for (a, &i) in support.iter().enumerate() {
                    cand[i] = sol[a];
                }
                let total = cand.sum();
                cand /= total;
                if f(&cand) <= fw_obj {
                    w = cand;
                }
            }
        }
    }
    let grad = 2.0 * (&q * &w - &b);
    let gap = grad.dot(&w) - grad.min();
    let weights: Vec<f64> = w.iter().copied().collect();
    let objective = synthetic_objective(sources, target, metric, &weights);
    Ok(SyntheticWeights {
        sources: sources.iter().map(|s| s.name.clone()).collect(),
        weights,
        residual: objective.sqrt(),
        metric: metric.to_vec(),
        iterations,
        gap: gap.max(0.0),
    })
}

fn complete_rows(ds: &Dataset, positions: &[usize]) -> Vec<(String, String, Vec<f64>)> {
    ds.records()
        .iter()
        .filter_map(|r| {
            let row: Option<Vec<f64>> = positions.iter().map(|&j| r.covariates[j]).collect();
            row.map(|row| (r.id.clone(), r.source.label.clone(), row))
        })
        .collect()
}

fn positions(ds: &Dataset, covariates: &[String]) -> Result<Vec<usize>, ControlError> {
    covariates
        .iter()
        .map(|c| ds.schema().column_index(c).ok_or_else(|| ControlError::SchemaMismatch(c.clone())))
        .collect()
}

/// Per-source means of `covariates` over complete cases, in source-label
/// order.
pub fn source_summaries(ds: &Dataset, covariates: &[String]) -> Result<Vec<SourceSummary>, ControlError> {
    let pos = positions(ds, covariates)?;
    let mut groups: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (_, source, row) in complete_rows(ds, &pos) {
        let g = groups.entry(source).or_insert_with(|| (vec![0.0; pos.len()], 0));
        for (acc, x) in g.0.iter_mut().zip(&row) {
            *acc += x;
        }
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(name, (sum, count))| SourceSummary { name, means: sum.iter().map(|s| s / count as f64).collect(), count })
        .collect())
}

/// Inverse of the pooled per-covariate sample variances over all complete
/// cases in `datasets`. Constant covariates get weight 1.
pub fn default_metric(datasets: &[&Dataset], covariates: &[String]) -> Result<Vec<f64>, ControlError> {
    let mut rows = vec![];
    for ds in datasets {
        let pos = positions(ds, covariates)?;
        rows.extend(complete_rows(ds, &pos).into_iter().map(|(_, _, r)| r));
    }
    if rows.len() < 2 {
        return Err(ControlError::InsufficientData("need two complete cases for the default metric".into()));
    }
    let n = rows.len() as f64;
    Ok((0..covariates.len())
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            if var > 0.0 {
                1.0 / var
            } else {
                1.0
            }
        })
        .collect())
}

/// Synthetic control arm: each external source gets weight w_k, spread
/// evenly over its complete-case members (w_k / n_k each).
pub fn synthetic_control(
    treated: &Dataset,
    external: &Dataset,
    covariates: &[String],
    metric: Option<&[f64]>,
) -> Result<ControlArm, ControlError> {
    let tpos = positions(treated, covariates)?;
    let target_rows = complete_rows(treated, &tpos);
    if target_rows.is_empty() {
        return Err(ControlError::EmptyTreatedArm);
    }
    let target: Vec<f64> = (0..covariates.len())
        .map(|j| target_rows.iter().map(|r| r.2[j]).sum::<f64>() / target_rows.len() as f64)
        .collect();
    let sources = source_summaries(external, covariates)?;
    let default;
    let metric = match metric {
        Some(m) => m,
        None => {
            default = default_metric(&[treated, external], covariates)?;
            &default
        }
    };
    let sw = synthetic_weights(&sources, &target, metric)?;
    let epos = positions(external, covariates)?;
    let complete = complete_rows(external, &epos);
    let mut members = vec![];
    for (id, source, _) in &complete {
        let k = sources.iter().position(|s| &s.name == source).expect("summaries cover every complete row");
        if sw.weights[k] > 0.0 {
            members.push(Member { id: id.clone(), weight: sw.weights[k] / sources[k].count as f64 });
        }
    }
    let mut excluded = vec![];
    for r in external.records() {
        if !members.iter().any(|m| m.id == r.id) {
            let reason = if complete.iter().any(|c| c.0 == r.id) { "zero-source-weight" } else { "missing-covariate" };
            excluded.push(Exclusion { id: r.id.clone(), reason: reason.into() });
        }
    }
    Ok(ControlArm { method: ConstructionMethod::Synthetic, members, excluded, diagnostics: ArmDiagnostics::Synthetic(sw) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::tests::controls;

    fn src(name: &str, means: &[f64]) -> SourceSummary {
        SourceSummary { name: name.into(), means: means.to_vec(), count: 10 }
    }

    #[test]
    fn single_source() {
        let w = synthetic_weights(&[src("a", &[1.0, 2.0])], &[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        assert_eq!(w.residual, 0.0);
    }

    #[test]
    fn hand_solved_one_dimensional() {
        let w = synthetic_weights(&[src("a", &[0.0]), src("b", &[1.0])], &[0.5], &[1.0]).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-12 && (w.weights[1] - 0.5).abs() < 1e-12);
        assert!(w.residual < 1e-12);
        let v = 4.0;
        let w = synthetic_weights(&[src("a", &[0.0]), src("b", &[0.4])], &[1.0], &[v]).unwrap();
        assert_eq!(w.weights, vec![0.0, 1.0]);
        assert!((w.residual - 0.6 * v.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn interior_target_in_hull() {
        let sources = [src("a", &[0.0, 0.0]), src("b", &[1.0, 0.0]), src("c", &[0.0, 1.0]), src("d", &[1.0, 1.0])];
        let w = synthetic_weights(&sources, &[0.3, 0.6], &[1.0, 2.0]).unwrap();
        assert!(w.residual < 1e-9, "{}", w.residual);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.weights.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn errors() {
        assert_eq!(synthetic_weights(&[], &[1.0], &[1.0]), Err(ControlError::NoSources));
        assert!(matches!(
            synthetic_weights(&[src("a", &[1.0])], &[1.0, 2.0], &[1.0, 1.0]),
            Err(ControlError::DimensionMismatch { .. })
        ));
        assert_eq!(synthetic_weights(&[src("a", &[1.0])], &[1.0], &[0.0]), Err(ControlError::InvalidMetric));
    }

    #[test]
    fn arm_spreads_source_weight() {
        let treated = controls("t", &[0.5, 0.5], &[1.0, 0.0], false);
        let a = controls("a", &[0.0, 0.0], &[0.0, 0.0], true);
        let b = controls("b", &[1.0, 1.0, 1.0, 1.0], &[1.0; 4], true);
        let ext = crate::data::pool(&[a, b]).unwrap();
        let arm = synthetic_control(&treated, &ext, &["x".into()], Some(&[1.0])).unwrap();
        assert!((arm.total_weight() - 1.0).abs() < 1e-12);
        assert!((arm.weight_of("a000").unwrap() - 0.25).abs() < 1e-12);
        assert!((arm.weight_of("b003").unwrap() - 0.125).abs() < 1e-12);
    }
}
