//! Least squares with absorbed fixed effects, and logistic regression.
//!
//! Fixed effects are absorbed by alternating within-group demeaning of the
//! response and every regressor until convergence (tolerance 1e-10), then
//! plain least squares runs on the transformed data. Coefficients equal the
//! full-dummy regression; expanding zone-by-week dummies explicitly would
//! not fit in memory at panel scale, demeaning does. Standard errors are
//! conventional homoskedastic ones.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub n_obs: usize,
    /// Total fixed-effect levels absorbed (0 for plain OLS / logit).
    pub absorbed_groups: usize,
    /// Within R-squared for least squares, McFadden pseudo R-squared for
    /// the logit.
    pub r_squared: f64,
    pub log_likelihood: Option<f64>,
}

impl RegressionResult {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    pub fn t_stat(&self, name: &str) -> Option<f64> {
        match (self.coef(name), self.std_error(name)) {
            (Some(c), Some(s)) if s > 0.0 => Some(c / s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegressError {
    #[error("design needs at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("design matrix is rank deficient (a regressor is constant or collinear after absorption)")]
    RankDeficient,
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("fixed-effect demeaning did not converge")]
    DemeanDiverged,
    #[error("logit did not converge in {0} iterations")]
    NonConvergence(usize),
    #[error("perfect separation detected (unbounded logit estimate)")]
    Separation,
    #[error("response has no variation")]
    ConstantResponse,
}

/// Group index per observation for one fixed-effect factor.
pub type FeFactor = Vec<usize>;

fn check_shapes(y: &[f64], x: &[Vec<f64>], fe: &[FeFactor]) -> Result<(), RegressError> {
    let n = y.len();
    for (j, col) in x.iter().enumerate() {
        if col.len() != n {
            return Err(RegressError::Shape(format!("column {j} has {} rows, y has {n}", col.len())));
        }
    }
    for (k, factor) in fe.iter().enumerate() {
        if factor.len() != n {
            return Err(RegressError::Shape(format!("factor {k} has {} rows, y has {n}", factor.len())));
        }
    }
    Ok(())
}

fn group_count(factor: &FeFactor) -> usize {
    factor.iter().copied().max().map_or(0, |m| m + 1)
}

/// Demeans columns in place by each factor alternately until the largest
/// adjustment is below tolerance.
fn demean(columns: &mut [Vec<f64>], fe: &[FeFactor]) -> Result<(), RegressError> {
    if fe.is_empty() {
        return Ok(());
    }
    let sizes: Vec<Vec<f64>> = fe
        .iter()
        .map(|factor| {
            let mut counts = vec![0.0; group_count(factor)];
            for &g in factor {
                counts[g] += 1.0;
            }
            counts
        })
        .collect();

    const TOL: f64 = 1e-10;
    const MAX_SWEEPS: usize = 2000;
    for _ in 0..MAX_SWEEPS {
        let mut max_shift = 0.0f64;
        for (factor, counts) in fe.iter().zip(&sizes) {
            for col in columns.iter_mut() {
                let mut means = vec![0.0; counts.len()];
                for (i, &g) in factor.iter().enumerate() {
                    means[g] += col[i];
                }
                for (m, c) in means.iter_mut().zip(counts) {
                    if *c > 0.0 {
                        *m /= c;
                    }
                }
                for (i, &g) in factor.iter().enumerate() {
                    col[i] -= means[g];
                }
                let shift = means.iter().fold(0.0f64, |a, m| a.max(m.abs()));
                max_shift = max_shift.max(shift);
            }
        }
        if max_shift < TOL {
            return Ok(());
        }
        if fe.len() == 1 {
            return Ok(()); // one factor: a single sweep demeans exactly
        }
    }
    Err(RegressError::DemeanDiverged)
}

fn solve_ols(
    y: &[f64],
    x: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64> /* fitted */, DMatrix<f64> /* (X'X)^-1 */), RegressError> {
    let n = y.len();
    let p = x.len();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for j in 0..p {
        for k in j..p {
            let mut s = 0.0;
            for i in 0..n {
                s += x[j][i] * x[k][i];
            }
            xtx[(j, k)] = s;
            xtx[(k, j)] = s;
        }
        let mut s = 0.0;
        for i in 0..n {
            s += x[j][i] * y[i];
        }
        xty[j] = s;
    }

    let svd = xtx.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b));
    let min_sv = svd.singular_values.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    if !(max_sv > 0.0) || min_sv < 1e-10 * max_sv {
        return Err(RegressError::RankDeficient);
    }
    let inv = svd.pseudo_inverse(1e-12 * max_sv).map_err(|_| RegressError::RankDeficient)?;
    let beta = &inv * &xty;

    let mut fitted = vec![0.0; n];
    for (j, col) in x.iter().enumerate() {
        let b = beta[j];
        for i in 0..n {
            fitted[i] += b * col[i];
        }
    }
    Ok((beta.iter().copied().collect(), fitted, inv))
}

/// Least squares of `y` on regressor columns `x`, absorbing the fixed-effect
/// factors `fe` by iterated demeaning. Coefficients equal the explicit
/// dummy-variable regression. With `fe` empty this is plain OLS (include a
/// constant column yourself if wanted).
pub fn fit_ols_fe(
    y: &[f64],
    x: &[Vec<f64>],
    names: &[&str],
    fe: &[FeFactor],
) -> Result<RegressionResult, RegressError> {
    check_shapes(y, x, fe)?;
    let n = y.len();
    let p = x.len();
    let absorbed: usize = fe.iter().map(|f| group_count(f)).sum();
    let df_absorbed = if fe.is_empty() { 0 } else { absorbed - (fe.len() - 1) };
    if n < p + df_absorbed + 1 {
        return Err(RegressError::TooFewObservations { need: p + df_absorbed + 1, got: n });
    }

    let mut work: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    work.push(y.to_vec());
    for col in x {
        work.push(col.clone());
    }
    demean(&mut work, fe)?;
    let yd = work.remove(0);
    let xd = work;

    let (coefficients, fitted, inv) = solve_ols(&yd, &xd)?;

    let rss: f64 = yd.iter().zip(&fitted).map(|(a, f)| (a - f) * (a - f)).sum();
    let tss: f64 = {
        let mean = yd.iter().sum::<f64>() / n as f64;
        yd.iter().map(|v| (v - mean) * (v - mean)).sum()
    };
    let df = (n as f64 - p as f64 - df_absorbed as f64).max(1.0);
    let sigma2 = rss / df;
    let std_errors: Vec<f64> = (0..p).map(|j| (sigma2 * inv[(j, j)]).max(0.0).sqrt()).collect();

    Ok(RegressionResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        coefficients,
        std_errors,
        n_obs: n,
        absorbed_groups: absorbed,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
        log_likelihood: None,
    })
}

/// Maximum-likelihood logistic regression via Newton iterations (gradient
/// max-norm below 1e-8). Fixed-effect factors enter as explicit dummies
/// (first group of each factor is the reference); groups without outcome
/// variation are dropped, rows and dummies together.
pub fn fit_logit(
    y: &[bool],
    x: &[Vec<f64>],
    names: &[&str],
    fe: &[FeFactor],
) -> Result<RegressionResult, RegressError> {
    let yf: Vec<f64> = y.iter().map(|&b| f64::from(b)).collect();
    check_shapes(&yf, x, fe)?;

    // Iteratively drop rows in groups where the outcome does not vary.
    let mut keep: Vec<bool> = vec![true; y.len()];
    loop {
        let mut changed = false;
        for factor in fe {
            let n_groups = group_count(factor);
            let mut any_pos = vec![false; n_groups];
            let mut any_neg = vec![false; n_groups];
            for i in 0..y.len() {
                if keep[i] {
                    if y[i] {
                        any_pos[factor[i]] = true;
                    } else {
                        any_neg[factor[i]] = true;
                    }
                }
            }
            for i in 0..y.len() {
                if keep[i] && !(any_pos[factor[i]] && any_neg[factor[i]]) {
                    keep[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let rows: Vec<usize> = (0..y.len()).filter(|&i| keep[i]).collect();
    if rows.is_empty() {
        return Err(RegressError::ConstantResponse);
    }

    // Intercept + regressors + dummies per factor (reference level dropped).
    let mut design: Vec<Vec<f64>> = Vec::new();
    let mut all_names: Vec<String> = Vec::new();
    design.push(vec![1.0; rows.len()]);
    all_names.push("const".into());
    for (col, name) in x.iter().zip(names) {
        design.push(rows.iter().map(|&i| col[i]).collect());
        all_names.push(name.to_string());
    }
    let mut absorbed = 0usize;
    for (k, factor) in fe.iter().enumerate() {
        let mut groups: Vec<usize> = rows.iter().map(|&i| factor[i]).collect();
        groups.sort_unstable();
        groups.dedup();
        absorbed += groups.len();
        for &g in groups.iter().skip(1) {
            design.push(rows.iter().map(|&i| f64::from(factor[i] == g)).collect());
            all_names.push(format!("fe{k}_{g}"));
        }
    }

    let n = rows.len();
    let p = design.len();
    if n < p + 1 {
        return Err(RegressError::TooFewObservations { need: p + 1, got: n });
    }
    let yv: Vec<f64> = rows.iter().map(|&i| yf[i]).collect();
    if yv.iter().all(|&v| v == 0.0) || yv.iter().all(|&v| v == 1.0) {
        return Err(RegressError::ConstantResponse);
    }

    let xmat = DMatrix::from_fn(n, p, |i, j| design[j][i]);
    let yvec = DVector::from_vec(yv);
    let mut beta = DVector::zeros(p);

    let weighted_hessian_inv = |beta: &DVector<f64>| -> Result<DMatrix<f64>, RegressError> {
        let eta = &xmat * beta;
        let mu: DVector<f64> = eta.map(|v| 1.0 / (1.0 + (-v).exp()));
        let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(1e-12)).collect();
        let mut xtwx = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in j..p {
                let mut s = 0.0;
                for i in 0..n {
                    s += xmat[(i, j)] * w[i] * xmat[(i, k)];
                }
                xtwx[(j, k)] = s;
                xtwx[(k, j)] = s;
            }
        }
        let svd = xtwx.svd(true, true);
        let max_sv = svd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b));
        let min_sv = svd.singular_values.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        if !(max_sv > 0.0) || min_sv < 1e-12 * max_sv {
            return Err(RegressError::RankDeficient);
        }
        svd.pseudo_inverse(1e-14 * max_sv).map_err(|_| RegressError::RankDeficient)
    };

    const MAX_ITER: usize = 100;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let eta = &xmat * &beta;
        if eta.iter().any(|v| v.abs() > 35.0) {
            return Err(RegressError::Separation);
        }
        let mu: DVector<f64> = eta.map(|v| 1.0 / (1.0 + (-v).exp()));
        let grad = xmat.transpose() * (&yvec - &mu);
        if grad.iter().all(|g| g.abs() < 1e-8) {
            converged = true;
            break;
        }
        let inv = weighted_hessian_inv(&beta)?;
        beta += &inv * grad;
    }
    if !converged {
        return Err(RegressError::NonConvergence(MAX_ITER));
    }
    if beta.iter().any(|b| b.abs() > 30.0) {
        return Err(RegressError::Separation);
    }

    let eta = &xmat * &beta;
    let ll: f64 = (0..n)
        .map(|i| {
            let e = eta[i];
            yvec[i] * e - (1.0 + e.exp()).ln()
        })
        .sum();
    let p_mean = yvec.iter().sum::<f64>() / n as f64;
    let ll0 = n as f64 * (p_mean * p_mean.ln() + (1.0 - p_mean) * (1.0 - p_mean).ln());

    // Hessian at the solution for standard errors.
    let inv = weighted_hessian_inv(&beta)?;
    let std_errors: Vec<f64> = (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect();

    Ok(RegressionResult {
        names: all_names,
        coefficients: beta.iter().copied().collect(),
        std_errors,
        n_obs: n,
        absorbed_groups: absorbed,
        r_squared: if ll0 < 0.0 { 1.0 - ll / ll0 } else { 0.0 },
        log_likelihood: Some(ll),
    })
}

/// Per-group intercepts implied by a within (demeaned) fit:
/// `alpha_g = mean_g(y) - mean_g(x) . beta`. Single-factor case.
pub fn group_intercepts(
    y: &[f64],
    x: &[Vec<f64>],
    factor: &FeFactor,
    coefficients: &[f64],
) -> Vec<f64> {
    let n_groups = group_count(factor);
    let mut sum_y = vec![0.0; n_groups];
    let mut count = vec![0.0; n_groups];
    let mut sum_x = vec![vec![0.0; n_groups]; x.len()];
    for (i, &g) in factor.iter().enumerate() {
        sum_y[g] += y[i];
        count[g] += 1.0;
        for (j, col) in x.iter().enumerate() {
            sum_x[j][g] += col[i];
        }
    }
    (0..n_groups)
        .map(|g| {
            if count[g] == 0.0 {
                return 0.0;
            }
            let mut a = sum_y[g] / count[g];
            for (j, b) in coefficients.iter().enumerate() {
                a -= b * sum_x[j][g] / count[g];
            }
            a
        })
        .collect()
}
