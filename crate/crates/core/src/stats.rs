//! Shared statistical kernels: correlations, regression fits, and
//! distribution tail probabilities.
//!
//! Everything here is deterministic and operates on plain slices or
//! nalgebra matrices; the higher-level modules own the data wrangling.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("too few samples ({n}) for the requested fit")]
    TooFewSamples { n: usize },
    #[error("singular system")]
    Singular,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n-1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> f64 {
    let wsum: f64 = ws.iter().sum();
    if wsum <= 0.0 {
        return f64::NAN;
    }
    xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / wsum
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let w = vec![1.0; x.len()];
    weighted_pearson(x, y, &w)
}

/// Weighted Pearson correlation. Weights must be non-negative; rows with
/// zero weight drop out of the estimate.
pub fn weighted_pearson(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    debug_assert_eq!(x.len(), w.len());
    let wsum: f64 = w.iter().sum();
    if wsum <= 0.0 {
        return 0.0;
    }
    let mx = x.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let my = y.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += w[i] * dx * dy;
        sxx += w[i] * dx * dx;
        syy += w[i] * dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Correlation matrix over the given columns (each a slice of equal length).
pub fn correlation_matrix(cols: &[&[f64]], weights: Option<&[f64]>) -> DMatrix<f64> {
    let k = cols.len();
    let unit;
    let w = match weights {
        Some(w) => w,
        None => {
            unit = vec![1.0; cols.first().map_or(0, |c| c.len())];
            &unit
        }
    };
    let mut m = DMatrix::identity(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let r = weighted_pearson(cols[i], cols[j], w);
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// Partial correlation of variables 0 and 1 given the rest, via inversion
/// of their joint correlation matrix.
pub fn partial_correlation(corr: &DMatrix<f64>) -> Result<f64, StatsError> {
    let prec = corr.clone().try_inverse().ok_or(StatsError::Singular)?;
    let d = prec[(0, 0)] * prec[(1, 1)];
    if !d.is_finite() || d <= 0.0 {
        return Err(StatsError::Singular);
    }
    let r = -prec[(0, 1)] / d.sqrt();
    // Inversion round-off can push |r| marginally past 1.
    Ok(r.clamp(-1.0, 1.0))
}

pub fn normal_cdf(x: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    n.cdf(x)
}

/// Two-sided p-value for a standard-normal statistic.
pub fn normal_two_sided_p(stat: f64) -> f64 {
    (2.0 * (1.0 - normal_cdf(stat.abs()))).clamp(0.0, 1.0)
}

/// Upper-tail probability of a chi-squared statistic.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    let c = ChiSquared::new(df).expect("valid dof");
    (1.0 - c.cdf(x.max(0.0))).clamp(0.0, 1.0)
}

/// Two-sided p-value for a Student-t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return 1.0;
    }
    let d = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    (2.0 * (1.0 - d.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Standardize in place to zero mean and unit (sample) variance.
/// Constant columns are left centered at zero.
pub fn standardize(xs: &mut [f64]) {
    let m = mean(xs);
    let sd = variance(xs).sqrt();
    for x in xs.iter_mut() {
        *x -= m;
        if sd > 0.0 {
            *x /= sd;
        }
    }
}

/// Weighted least squares fit of `y` on the design matrix `x`.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefs: DVector<f64>,
    pub stderr: DVector<f64>,
    pub n: usize,
    /// True when the normal equations were singular and a small ridge
    /// penalty was applied.
    pub ridged: bool,
}

pub fn wls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<LinearFit, StatsError> {
    let n = x.nrows();
    let p = x.ncols();
    if n <= p {
        return Err(StatsError::TooFewSamples { n });
    }
    let unit;
    let w = match weights {
        Some(w) => w,
        None => {
            unit = vec![1.0; n];
            &unit
        }
    };
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwy = DVector::zeros(p);
    for i in 0..n {
        let wi = w[i];
        if wi <= 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..p {
            xtwy[a] += wi * row[a] * y[i];
            for b in a..p {
                xtwx[(a, b)] += wi * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    let (inv, ridged) = invert_with_ridge(&xtwx, 1e-8)?;
    let coefs = &inv * &xtwy;

    // Classical stderr from weighted residual variance.
    let mut rss = 0.0;
    let mut wn = 0usize;
    for i in 0..n {
        if w[i] <= 0.0 {
            continue;
        }
        wn += 1;
        let fitted: f64 = (0..p).map(|a| x[(i, a)] * coefs[a]).sum();
        let res = y[i] - fitted;
        rss += w[i] * res * res;
    }
    let dof = wn.saturating_sub(p);
    let sigma2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let stderr = DVector::from_iterator(p, (0..p).map(|a| (sigma2 * inv[(a, a)]).max(0.0).sqrt()));
    Ok(LinearFit {
        coefs,
        stderr,
        n: wn,
        ridged,
    })
}

fn invert_with_ridge(m: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, bool), StatsError> {
    if let Some(inv) = m.clone().try_inverse() {
        if inv.iter().all(|v| v.is_finite()) {
            return Ok((inv, false));
        }
    }
    let p = m.nrows();
    let scale = m.diagonal().amax().max(1.0);
    let mut ridged = m.clone();
    for a in 0..p {
        ridged[(a, a)] += ridge * scale;
    }
    ridged
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .map(|inv| (inv, true))
        .ok_or(StatsError::Singular)
}

/// Maximum-likelihood logistic regression via Newton iterations.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coefs: DVector<f64>,
    pub probs: Vec<f64>,
    /// Perfect or quasi-perfect separation was detected and the fit fell
    /// back to a ridge-penalized likelihood.
    pub separation: bool,
    pub iterations: usize,
}

const LOGISTIC_TOL: f64 = 1e-8;
const LOGISTIC_MAX_ITER: usize = 100;
const SEPARATION_PENALTY: f64 = 1e-4;

pub fn logistic_fit(x: &DMatrix<f64>, y: &[bool]) -> Result<LogisticFit, StatsError> {
    match logistic_newton(x, y, 0.0) {
        Ok(fit) if !fit.separation => Ok(fit),
        // Separation or a singular Hessian: refit with a ridge penalty.
        _ => {
            let mut fit = logistic_newton(x, y, SEPARATION_PENALTY)?;
            fit.separation = true;
            Ok(fit)
        }
    }
}

fn logistic_newton(x: &DMatrix<f64>, y: &[bool], penalty: f64) -> Result<LogisticFit, StatsError> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 || n < p {
        return Err(StatsError::TooFewSamples { n });
    }
    let mut beta = DVector::zeros(p);
    let mut separation = false;
    let mut iterations = 0;
    for it in 0..LOGISTIC_MAX_ITER {
        iterations = it + 1;
        let eta = x * &beta;
        if eta.iter().any(|e| e.abs() > 30.0) {
            separation = true;
        }
        let probs: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let yi = if y[i] { 1.0 } else { 0.0 };
            let pi = probs[i];
            let wi = (pi * (1.0 - pi)).max(1e-12);
            for a in 0..p {
                grad[a] += x[(i, a)] * (yi - pi);
                for b in a..p {
                    hess[(a, b)] += wi * x[(i, a)] * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
            if penalty > 0.0 {
                grad[a] -= penalty * beta[a];
                hess[(a, a)] += penalty;
            }
        }
        if grad.norm() < LOGISTIC_TOL {
            return Ok(LogisticFit {
                probs,
                coefs: beta,
                separation,
                iterations,
            });
        }
        let step: DVector<f64> = hess
            .clone()
            .try_inverse()
            .map(|inv| &inv * &grad)
            .ok_or(StatsError::Singular)?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::Singular);
        }
        beta += step;
    }
    let eta = x * &beta;
    let probs: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
    // Ran out of iterations without meeting the gradient tolerance:
    // almost always separation in practice.
    Ok(LogisticFit {
        probs,
        coefs: beta,
        separation: true,
        iterations,
    })
}

/// Area under the ROC curve via the rank statistic, with midranks for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(l, _)| **l)
        .map(|(_, r)| r)
        .sum();
    (rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64)
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
/// The input is symmetrized and eigenvalues are clipped at zero; `clipped`
/// reports whether any negative eigenvalue was encountered.
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, same order as `values`.
    pub vectors: DMatrix<f64>,
    pub clipped: bool,
}

pub fn sym_eigen_desc(m: &DMatrix<f64>) -> SymEigen {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let k = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut clipped = false;
    let mut values = Vec::with_capacity(k);
    let mut vectors = DMatrix::zeros(k, k);
    for (out, &idx) in order.iter().enumerate() {
        let mut v = eig.eigenvalues[idx];
        if v < 0.0 {
            clipped = v < -1e-9;
            v = 0.0;
        }
        values.push(v);
        vectors.set_column(out, &eig.eigenvectors.column(idx));
    }
    SymEigen {
        values,
        vectors,
        clipped,
    }
}

/// Cramér's V between two integer-coded categorical vectors.
pub fn cramers_v(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    if ka < 2 || kb < 2 {
        return 0.0;
    }
    let mut table = vec![vec![0.0f64; kb]; ka];
    for i in 0..n {
        table[a[i]][b[i]] += 1.0;
    }
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let mut col = vec![0.0f64; kb];
    for r in &table {
        for (j, v) in r.iter().enumerate() {
            col[j] += v;
        }
    }
    let mut chi2 = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let expected = row[i] * col[j] / n as f64;
            if expected > 0.0 {
                let d = table[i][j] - expected;
                chi2 += d * d / expected;
            }
        }
    }
    let denom = n as f64 * (ka.min(kb) - 1) as f64;
    if denom <= 0.0 {
        return 0.0;
    }
    (chi2 / denom).sqrt().clamp(0.0, 1.0)
}

/// Correlation ratio η between a categorical grouping and a numeric column.
pub fn correlation_ratio(groups: &[usize], values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let total_mean = mean(values);
    let k = groups.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        sums[groups[i]] += values[i];
        counts[groups[i]] += 1;
    }
    let mut ss_between = 0.0;
    for g in 0..k {
        if counts[g] > 0 {
            let gm = sums[g] / counts[g] as f64;
            ss_between += counts[g] as f64 * (gm - total_mean) * (gm - total_mean);
        }
    }
    let ss_total: f64 = values.iter().map(|v| (v - total_mean) * (v - total_mean)).sum();
    if ss_total <= 0.0 {
        return 0.0;
    }
    (ss_between / ss_total).sqrt().clamp(0.0, 1.0)
}
