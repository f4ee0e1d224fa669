use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// `2√(2 ln 2)`, FWHM of a unit-σ Gaussian.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Relative χ² change below which an accepted step counts as converged.
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresFit {
    pub params: Vec<f64>,
    /// Row-major `p × p` covariance.
    pub covariance: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LeastSquaresFit {
    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn covariance_at(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.dim() + j]
    }

    pub fn std_error(&self, i: usize) -> f64 {
        self.covariance_at(i, i).max(0.0).sqrt()
    }

    /// `√χ²`, i.e. the (weighted) residual norm.
    pub fn residual_norm(&self) -> f64 {
        self.chi2.sqrt()
    }
}

struct Linearized {
    chi2: f64,
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
}

fn linearize<M>(model: &M, xs: &[f64], ys: &[f64], sigma: Option<&[f64]>, p: &[f64]) -> Linearized
where
    M: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let n = p.len();
    let mut jtj = DMatrix::zeros(n, n);
    let mut jtr = DVector::zeros(n);
    let mut grad = vec![0.0; n];
    let mut chi2 = 0.0;
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let w = sigma.map_or(1.0, |s| 1.0 / s[k]);
        let f = model(p, x, &mut grad);
        let r = (y - f) * w;
        chi2 += r * r;
        for i in 0..n {
            let gi = grad[i] * w;
            jtr[i] += gi * r;
            for j in 0..=i {
                jtj[(i, j)] += gi * grad[j] * w;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            jtj[(j, i)] = jtj[(i, j)];
        }
    }
    Linearized { chi2, jtj, jtr }
}

fn chi2_at<M>(model: &M, xs: &[f64], ys: &[f64], sigma: Option<&[f64]>, p: &[f64]) -> f64
where
    M: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let mut grad = vec![0.0; p.len()];
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(k, (&x, &y))| {
            let w = sigma.map_or(1.0, |s| 1.0 / s[k]);
            ((y - model(p, x, &mut grad)) * w).powi(2)
        })
        .sum()
}

/// Damped Gauss–Newton least squares with Marquardt's diagonal scaling.
///
/// `model(p, x, grad)` returns the model value and writes `∂f/∂p` into `grad`.
/// With `sigma` given the covariance is `(JᵀWJ)⁻¹`; without it, it is scaled by
/// the reduced χ². The inverse is a pseudo-inverse, so parameters the data do
/// not constrain get large rather than infinite errors.
pub fn levenberg_marquardt<M>(
    model: M,
    xs: &[f64],
    ys: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    config: &FitConfig,
) -> Result<LeastSquaresFit>
where
    M: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let n = p0.len();
    if xs.len() != ys.len() || sigma.is_some_and(|s| s.len() != xs.len()) {
        return Err(invalid("data", "x, y and sigma lengths differ"));
    }
    if xs.len() <= n {
        return Err(invalid("data", "need more points than parameters"));
    }
    if sigma.is_some_and(|s| s.iter().any(|&v| !(v > 0.0))) {
        return Err(invalid("sigma", "must be positive"));
    }
    let mut p = p0.to_vec();
    let mut lin = linearize(&model, xs, ys, sigma, &p);
    if !lin.chi2.is_finite() {
        return Err(Error::FitDiverged("non-finite residuals at the start point".into()));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        // solve in unit-diagonal coordinates so parameters of very different
        // magnitude are treated alike
        let d = unit_scaling(&lin.jtj);
        let mut a = scaled(&lin.jtj, &d);
        for i in 0..n {
            a[(i, i)] += lambda * a[(i, i)].max(1e-15);
        }
        let g = lin.jtr.component_mul(&d);
        let step = match a.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => match a.lu().solve(&g) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            },
        }
        .component_mul(&d);
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let chi2 = chi2_at(&model, xs, ys, sigma, &trial);
        if chi2.is_finite() && chi2 <= lin.chi2 {
            let drop = lin.chi2 - chi2;
            p = trial;
            lin = linearize(&model, xs, ys, sigma, &p);
            lambda = (lambda / 10.0).max(1e-12);
            if drop <= config.tolerance * chi2.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left at working precision
                converged = true;
                break;
            }
        }
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDiverged("non-finite parameters".into()));
    }
    let dof = (xs.len() - n) as f64;
    let factor = if sigma.is_some() { 1.0 } else { lin.chi2 / dof };
    let cov = pseudo_inverse(&lin.jtj) * factor;
    Ok(LeastSquaresFit {
        params: p,
        covariance: cov.transpose().iter().copied().collect(),
        chi2: lin.chi2,
        iterations,
        converged,
    })
}

fn unit_scaling(m: &DMatrix<f64>) -> DVector<f64> {
    let max = m.diagonal().max().max(f64::MIN_POSITIVE);
    DVector::from_iterator(m.nrows(), m.diagonal().iter().map(|&v| 1.0 / v.max(1e-300 * max).sqrt()))
}

fn scaled(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)] * d[j])
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = unit_scaling(m);
    let svd = scaled(m, &d).svd(true, true);
    let max = svd.singular_values.max();
    let inv = svd
        .pseudo_inverse(max * 1e-12)
        .unwrap_or_else(|_| DMatrix::zeros(m.nrows(), m.ncols()));
    scaled(&inv, &d)
}

/// `N(f) = R̄·[1 − C̄·exp(−½((f − f0)/Δf)²)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDipFit {
    pub baseline: f64,
    pub contrast: f64,
    pub center: f64,
    pub width: f64,
    pub std_errors: [f64; 4],
    pub residual_norm: f64,
    pub fit: LeastSquaresFit,
}

impl GaussianDipFit {
    pub fn evaluate(&self, f: f64) -> f64 {
        let u = (f - self.center) / self.width;
        self.baseline * (1.0 - self.contrast * (-0.5 * u * u).exp())
    }

    /// `σ_f = 2√(2 ln 2)·Δf`, in the units of the fitted axis.
    pub fn fwhm(&self) -> f64 {
        FWHM_PER_SIGMA * self.width
    }

    pub fn fwhm_std_error(&self) -> f64 {
        FWHM_PER_SIGMA * self.std_errors[3]
    }
}

fn dip_model(p: &[f64], f: f64, grad: &mut [f64]) -> f64 {
    let (r, c, f0, w) = (p[0], p[1], p[2], p[3]);
    let u = (f - f0) / w;
    let g = (-0.5 * u * u).exp();
    grad[0] = 1.0 - c * g;
    grad[1] = -r * g;
    grad[2] = -r * c * g * u / w;
    grad[3] = -r * c * g * u * u / w;
    r * (1.0 - c * g)
}

/// Weighted least-squares Gaussian dip, multi-started from the lowest points
/// and a few widths around the half-depth estimate.
pub fn fit_gaussian_dip(
    f: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    config: &FitConfig,
) -> Result<GaussianDipFit> {
    if f.len() < 5 || f.len() != y.len() {
        return Err(invalid("spectrum", "need at least 5 points"));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let mut sorted_y: Vec<f64> = y.to_vec();
    sorted_y.sort_by(f64::total_cmp);
    let baseline = sorted_y[sorted_y.len() * 3 / 4..].iter().sum::<f64>()
        / (sorted_y.len() - sorted_y.len() * 3 / 4) as f64;
    let min = sorted_y[0];
    let depth = if baseline > 0.0 { (1.0 - min / baseline).clamp(0.0, 1.0) } else { 0.0 };
    let span = f.iter().copied().fold(f64::NEG_INFINITY, f64::max) - f.iter().copied().fold(f64::INFINITY, f64::min);
    let below = y.iter().filter(|&&v| v < baseline * (1.0 - 0.5 * depth)).count().max(1);
    let w0 = (span * below as f64 / f.len() as f64 / FWHM_PER_SIGMA).max(span / f.len() as f64);

    let mut best: Option<LeastSquaresFit> = None;
    for &center in order.iter().take(3) {
        for factor in [0.5, 1.0, 2.0] {
            let p0 = [baseline, depth.max(1e-3), f[center], w0 * factor];
            let Ok(fit) = levenberg_marquardt(dip_model, f, y, sigma, &p0, config) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
                best = Some(fit);
            }
        }
    }
    let fit = best.ok_or_else(|| Error::FitDiverged("no start point converged".into()))?;
    let p = &fit.params;
    if !(p[3].abs() > 0.0) || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::FitDiverged(format!("degenerate dip parameters {p:?}")));
    }
    Ok(GaussianDipFit {
        baseline: p[0],
        contrast: p[1],
        center: p[2],
        width: p[3].abs(),
        std_errors: [0, 1, 2, 3].map(|i| fit.std_error(i)),
        residual_norm: fit.residual_norm(),
        fit,
    })
}

/// One precessing hyperfine component `A·cos(2πν·τ + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyLine {
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    pub phase: f64,
    pub frequency_std_error: f64,
}

/// `N(τ) = R̄·[1 + C̄·e^{−(τ/T2*)^m}·Σ A_i cos(2πν_i τ + φ_i)]` with `Σ A_i = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyFit {
    pub baseline: f64,
    pub contrast: f64,
    pub contrast_std_error: f64,
    pub t2_star: f64,
    pub t2_star_std_error: f64,
    pub decay_order: f64,
    pub lines: Vec<RamseyLine>,
    pub residual_norm: f64,
    pub fit: LeastSquaresFit,
}

impl RamseyFit {
    pub fn evaluate(&self, tau: f64) -> f64 {
        let osc: f64 = self
            .lines
            .iter()
            .map(|l| l.amplitude * (TAU * l.frequency * tau + l.phase).cos())
            .sum();
        self.baseline * (1.0 + self.contrast * (-(tau / self.t2_star).powf(self.decay_order)).exp() * osc)
    }
}

/// Parameters: `[R, T2*, (c_0)?, (c_i, s_i, ν_i)…]` with `c_i cos θ + s_i sin θ`.
/// A non-precessing line (prior below the record resolution) carries `c_0`
/// only: its sine term and frequency are not identifiable.
fn ramsey_model(m: f64, has_static: bool) -> impl Fn(&[f64], f64, &mut [f64]) -> f64 {
    move |p: &[f64], tau: f64, grad: &mut [f64]| {
        let (r, t) = (p[0], p[1]);
        let q = (tau / t).abs().powf(m);
        let e = (-q).exp();
        let mut s = 0.0;
        let first = if has_static {
            s += p[2];
            grad[2] = r * e;
            3
        } else {
            2
        };
        for (i, line) in p[first..].chunks(3).enumerate() {
            let theta = TAU * line[2] * tau;
            let (sin, cos) = theta.sin_cos();
            s += line[0] * cos + line[1] * sin;
            let g = &mut grad[first + 3 * i..first + 3 + 3 * i];
            g[0] = r * e * cos;
            g[1] = r * e * sin;
            g[2] = r * e * (-line[0] * sin + line[1] * cos) * TAU * tau;
        }
        grad[0] = 1.0 + e * s;
        grad[1] = r * s * e * m * q / t;
        r * (1.0 + e * s)
    }
}

struct Lines {
    has_static: bool,
    precessing: Vec<f64>,
}

/// Merge priors closer than the record can resolve; anything slower than the
/// resolution is a non-precessing line.
fn distinct_frequencies(priors: &[f64], record: f64) -> Lines {
    let resolution = 0.5 / record;
    let mut sorted: Vec<f64> = priors.iter().map(|v| v.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let has_static = sorted[0] <= resolution;
    let mut precessing: Vec<f64> = Vec::new();
    for v in sorted.into_iter().filter(|&v| v > resolution) {
        if precessing.last().is_none_or(|&last| v - last > resolution) {
            precessing.push(v);
        }
    }
    Lines { has_static, precessing }
}

/// Linear least squares for the amplitudes at fixed `T2*` and `ν_i`, returned
/// in the layout of [`ramsey_model`].
fn linear_start(tau: &[f64], y: &[f64], lines: &Lines, t2: f64, m: f64) -> Option<Vec<f64>> {
    let stat = usize::from(lines.has_static);
    let cols = 1 + stat + 2 * lines.precessing.len();
    let a = DMatrix::from_fn(tau.len(), cols, |k, j| {
        if j == 0 {
            return 1.0;
        }
        let e = (-(tau[k] / t2).powf(m)).exp();
        if j < 1 + stat {
            return e;
        }
        let j = j - 1 - stat;
        let theta = TAU * lines.precessing[j / 2] * tau[k];
        if j % 2 == 0 { e * theta.cos() } else { e * theta.sin() }
    });
    let b = DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let r = sol[0];
    if !(r.abs() > 0.0) {
        return None;
    }
    let mut p = vec![r, t2];
    if lines.has_static {
        p.push(sol[1] / r);
    }
    for (i, &nu) in lines.precessing.iter().enumerate() {
        p.extend([sol[1 + stat + 2 * i] / r, sol[2 + stat + 2 * i] / r, nu]);
    }
    Some(p)
}

/// Fit a multi-line Ramsey fringe. `priors` are expected precession
/// frequencies (Hz), typically the drive detuning shifted by each hyperfine
/// offset.
pub fn fit_ramsey(
    tau: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    priors: &[f64],
    decay_order: f64,
    config: &FitConfig,
) -> Result<RamseyFit> {
    if tau.len() != y.len() || tau.len() < 8 {
        return Err(invalid("fringe", "need at least 8 points"));
    }
    if priors.is_empty() {
        return Err(invalid("priors", "need at least one frequency"));
    }
    let max_step = tau.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    let nyquist = 0.5 / max_step;
    if let Some(&fastest) = priors.iter().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
        if fastest.abs() >= nyquist {
            return Err(Error::UnderResolved {
                frequency_hz: fastest.abs(),
                nyquist_hz: nyquist,
            });
        }
    }
    let record = tau.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - tau.iter().copied().fold(f64::INFINITY, f64::min);
    let lines = distinct_frequencies(priors, record);
    let model = ramsey_model(decay_order, lines.has_static);

    let mut best: Option<LeastSquaresFit> = None;
    for factor in [0.1, 0.2, 0.4, 0.8, 1.6] {
        let Some(p0) = linear_start(tau, y, &lines, factor * record, decay_order) else {
            continue;
        };
        let Ok(fit) = levenberg_marquardt(&model, tau, y, sigma, &p0, config) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
            best = Some(fit);
        }
    }
    let fit = best.ok_or_else(|| Error::FitDiverged("no start point converged".into()))?;
    let p = &fit.params;
    // every line as (c index, s index, ν index); the static line has no s or ν
    let mut idx: Vec<(usize, Option<usize>, Option<usize>)> = Vec::new();
    let mut first = 2;
    if lines.has_static {
        idx.push((2, None, None));
        first = 3;
    }
    idx.extend((0..lines.precessing.len()).map(|i| {
        let k = first + 3 * i;
        (k, Some(k + 1), Some(k + 2))
    }));
    let sine = |s: Option<usize>| s.map_or(0.0, |k| p[k]);
    // amplitudes at rounding level are zero, not a tiny positive contrast
    let floor = 1e-12 * p[0].abs();
    let amps: Vec<f64> = idx
        .iter()
        .map(|&(c, s, _)| p[c].hypot(sine(s)))
        .map(|a| if a <= floor { 0.0 } else { a })
        .collect();
    let contrast: f64 = amps.iter().sum();
    // δC̄ from the covariance of the (c_i, s_i) pairs
    let mut grad = vec![0.0; p.len()];
    for (&(c, s, _), &a) in idx.iter().zip(&amps) {
        if a > 0.0 {
            grad[c] = p[c] / a;
            if let Some(s) = s {
                grad[s] = p[s] / a;
            }
        }
    }
    let mut var = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            var += grad[i] * grad[j] * fit.covariance_at(i, j);
        }
    }
    let lines = idx
        .iter()
        .zip(&amps)
        .map(|(&(c, s, nu), &a)| RamseyLine {
            amplitude: if contrast > 0.0 { a / contrast } else { 0.0 },
            frequency: nu.map_or(0.0, |k| p[k]),
            phase: (-sine(s)).atan2(p[c]),
            frequency_std_error: nu.map_or(0.0, |k| fit.std_error(k)),
        })
        .collect();
    let t2 = p[1].abs();
    if !(t2 > 0.0) || !t2.is_finite() {
        return Err(Error::FitDiverged(format!("T2* = {}", p[1])));
    }
    Ok(RamseyFit {
        baseline: p[0],
        contrast,
        contrast_std_error: var.max(0.0).sqrt(),
        t2_star: t2,
        t2_star_std_error: fit.std_error(1),
        decay_order,
        lines,
        residual_norm: fit.residual_norm(),
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn straight_line_matches_normal_equations() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 + 0.5 * x + if (*x as i32) % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let fit = levenberg_marquardt(
            |p: &[f64], x: f64, g: &mut [f64]| {
                g[0] = 1.0;
                g[1] = x;
                p[0] + p[1] * x
            },
            &xs,
            &ys,
            None,
            &[0.0, 0.0],
            &FitConfig::default(),
        )
        .unwrap();
        // closed-form ordinary least squares
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        assert!((fit.params[1] - slope).abs() < 1e-10);
        assert!((fit.params[0] - intercept).abs() < 1e-10);
    }

    #[test]
    fn noiseless_dip_is_recovered() {
        let truth = [1.0, 0.3, 2.0 * PI * 0.4e6, 2.0 * PI * 1.1e6];
        let f: Vec<f64> = (0..81).map(|k| 2.0 * PI * (-8e6 + 0.2e6 * k as f64)).collect();
        let mut g = [0.0; 4];
        let y: Vec<f64> = f.iter().map(|&x| dip_model(&truth, x, &mut g)).collect();
        let fit = fit_gaussian_dip(&f, &y, None, &FitConfig::default()).unwrap();
        for (got, want) in [fit.baseline, fit.contrast, fit.center, fit.width].iter().zip(truth) {
            assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn single_line_ramsey_is_recovered() {
        let (t2, nu) = (1.5e-6, 3.0e6);
        let tau: Vec<f64> = (0..200).map(|k| k as f64 * 20e-9).collect();
        let y: Vec<f64> = tau
            .iter()
            .map(|&t| 0.8 * (1.0 + 0.25 * (-(t / t2).powi(2)).exp() * (TAU * nu * t + 0.3).cos()))
            .collect();
        let fit = fit_ramsey(&tau, &y, None, &[2.9e6], 2.0, &FitConfig::default()).unwrap();
        assert!((fit.t2_star - t2).abs() / t2 < 1e-2);
        assert!((fit.lines[0].frequency - nu).abs() / nu < 1e-2);
        assert!((fit.contrast - 0.25).abs() < 1e-3);
    }

    #[test]
    fn under_resolved_grid_is_rejected() {
        let tau: Vec<f64> = (0..50).map(|k| k as f64 * 100e-9).collect();
        let y = vec![1.0; 50];
        assert!(matches!(
            fit_ramsey(&tau, &y, None, &[10e6], 2.0, &FitConfig::default()),
            Err(Error::UnderResolved { .. })
        ));
    }
}
