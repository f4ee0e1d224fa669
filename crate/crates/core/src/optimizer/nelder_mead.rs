use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
        }
    }

    pub fn range(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Coupled bound: `lo_factor·x[reference] ≤ x[target] ≤ hi_factor·x[reference]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub target: usize,
    pub reference: usize,
    pub lo_factor: f64,
    pub hi_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub parameters: Vec<Parameter>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

impl SearchSpace {
    pub fn new(parameters: Vec<Parameter>) -> Result<Self> {
        let s = Self {
            parameters,
            constraints: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_constraint(mut self, c: Constraint) -> Result<Self> {
        self.constraints.push(c);
        self.validate()?;
        Ok(self)
    }

    /// Symmetric box `[−bound, bound]^dim`.
    pub fn symmetric(dim: usize, bound: f64) -> Result<Self> {
        Self::new(
            (0..dim)
                .map(|i| Parameter::new(format!("a{i}"), -bound, bound))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.parameters.is_empty() {
            return Err(invalid("search_space", "needs at least one parameter"));
        }
        for p in &self.parameters {
            if !(p.lo < p.hi) || !p.lo.is_finite() || !p.hi.is_finite() {
                return Err(Error::EmptyInterval { lo: p.lo, hi: p.hi });
            }
        }
        for c in &self.constraints {
            let n = self.dim();
            if c.target >= n || c.reference >= n || c.target == c.reference {
                return Err(invalid("constraint", "indices out of range"));
            }
            if !(c.lo_factor <= c.hi_factor) {
                return Err(invalid("constraint", "lo_factor must not exceed hi_factor"));
            }
        }
        Ok(())
    }

    /// Nearest admissible point: clamp to the box, then pull coupled
    /// parameters into their proportional band (and back into the box).
    pub fn project(&self, x: &mut [f64]) {
        for (v, p) in x.iter_mut().zip(&self.parameters) {
            *v = v.clamp(p.lo, p.hi);
        }
        for c in &self.constraints {
            let r = x[c.reference];
            let p = &self.parameters[c.target];
            let lo = (c.lo_factor * r).max(p.lo);
            let hi = (c.hi_factor * r).min(p.hi);
            x[c.target] = if lo <= hi {
                x[c.target].clamp(lo, hi)
            } else {
                x[c.target].clamp(p.lo, p.hi)
            };
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let in_box = x
            .iter()
            .zip(&self.parameters)
            .all(|(v, p)| *v >= p.lo && *v <= p.hi);
        in_box
            && self.constraints.iter().all(|c| {
                let r = x[c.reference];
                let t = x[c.target];
                let eps = 1e-12 * r.abs().max(1.0);
                t >= c.lo_factor * r - eps && t <= c.hi_factor * r + eps
            })
    }
}

/// A FoM measurement with its standard error (zero when noiseless).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub std_error: f64,
}

impl Measured {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    pub max_evaluations: usize,
    /// Stop once the simplex FoM spread falls below this.
    pub tol_f: f64,
    /// Stop once every simplex edge is below this fraction of its range.
    pub tol_x: f64,
    /// Initial simplex edge per parameter; defaults to 10% of the range.
    #[serde(default)]
    pub initial_step: Option<Vec<f64>>,
    /// Re-measure the incumbent every `2·(dim+1)` evaluations, and before
    /// shrinking onto a point measured only once, and average.
    pub reevaluate: bool,
    /// Attempts per point before a failing FoM aborts the run.
    pub max_retries: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evaluations: 200,
            tol_f: 1e-3,
            tol_x: 1e-9,
            initial_step: None,
            reevaluate: false,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Status {
    Running,
    Converged,
    MaxEvaluations,
    Aborted(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub evaluation: usize,
    pub superiteration: usize,
    pub x: Vec<f64>,
    pub fom: f64,
    pub std_error: f64,
    /// Running minimum over all measured values.
    pub best_fom: f64,
    pub reevaluation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub iterations: usize,
    pub evaluations: usize,
    pub superiteration: usize,
    pub best_x: Vec<f64>,
    /// Incumbent FoM, averaged over its re-measurements.
    pub best_fom: f64,
    pub best_std_error: f64,
    pub best_measurements: usize,
    pub status: Status,
    pub history: Vec<HistoryEntry>,
}

impl OptimizerState {
    fn new(x: Vec<f64>, superiteration: usize) -> Self {
        Self {
            iterations: 0,
            evaluations: 0,
            superiteration,
            best_x: x,
            best_fom: f64::INFINITY,
            best_std_error: 0.0,
            best_measurements: 0,
            status: Status::Running,
            history: Vec::new(),
        }
    }

    /// Running-minimum FoM after each evaluation.
    pub fn trace(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.best_fom).collect()
    }
}

#[derive(Debug, Clone)]
struct Vertex {
    x: Vec<f64>,
    sum: f64,
    var_sum: f64,
    count: usize,
}

impl Vertex {
    fn value(&self) -> f64 {
        self.sum / self.count as f64
    }

    fn std_error(&self) -> f64 {
        self.var_sum.sqrt() / self.count as f64
    }
}

struct Run<'a, F> {
    fom: &'a mut F,
    config: &'a NelderMeadConfig,
    state: OptimizerState,
    best_seen: f64,
    since_reevaluation: usize,
}

impl<F: FnMut(&[f64]) -> Result<Measured>> Run<'_, F> {
    fn measure(&mut self, x: &[f64], reevaluation: bool) -> Result<Measured> {
        let mut last = None;
        for _ in 0..=self.config.max_retries {
            match (self.fom)(x) {
                Ok(m) if m.value.is_finite() => {
                    self.state.evaluations += 1;
                    self.since_reevaluation += 1;
                    self.best_seen = self.best_seen.min(m.value);
                    self.state.history.push(HistoryEntry {
                        evaluation: self.state.evaluations,
                        superiteration: self.state.superiteration,
                        x: x.to_vec(),
                        fom: m.value,
                        std_error: m.std_error,
                        best_fom: self.best_seen,
                        reevaluation,
                    });
                    return Ok(m);
                }
                Ok(m) => last = Some(Error::Objective(format!("non-finite FoM {}", m.value))),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn vertex(&mut self, x: Vec<f64>) -> Result<Vertex> {
        let m = self.measure(&x, false)?;
        Ok(Vertex {
            x,
            sum: m.value,
            var_sum: m.std_error * m.std_error,
            count: 1,
        })
    }

    fn record_best(&mut self, best: &Vertex) {
        self.state.best_x.clone_from(&best.x);
        self.state.best_fom = best.value();
        self.state.best_std_error = best.std_error();
        self.state.best_measurements = best.count;
    }
}

fn sort(simplex: &mut [Vertex]) {
    simplex.sort_by(|a, b| a.value().total_cmp(&b.value()));
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t·(b − a)
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Bounded Nelder–Mead minimization with coefficients (1, 2, ½, ½).
///
/// Proposals outside the search space are projected onto it before being
/// evaluated, so `fom` never sees an inadmissible point. A FoM that keeps
/// failing after `max_retries` attempts ends the run with
/// [`Status::Aborted`]; everything measured up to that point is kept.
pub fn nelder_mead<F>(
    space: &SearchSpace,
    x0: &[f64],
    config: &NelderMeadConfig,
    fom: &mut F,
) -> Result<OptimizerState>
where
    F: FnMut(&[f64]) -> Result<Measured>,
{
    nelder_mead_in(space, x0, config, fom, 0)
}

pub(crate) fn nelder_mead_in<F>(
    space: &SearchSpace,
    x0: &[f64],
    config: &NelderMeadConfig,
    fom: &mut F,
    superiteration: usize,
) -> Result<OptimizerState>
where
    F: FnMut(&[f64]) -> Result<Measured>,
{
    space.validate()?;
    let dim = space.dim();
    if x0.len() != dim {
        return Err(Error::CoefficientMismatch {
            expected: dim,
            got: x0.len(),
        });
    }
    if !space.contains(x0) {
        return Err(invalid("initial_guess", "must lie inside the search space"));
    }
    let steps: Vec<f64> = match &config.initial_step {
        Some(s) if s.len() == dim => s.clone(),
        Some(_) => return Err(invalid("initial_step", "one step per parameter")),
        None => space.parameters.iter().map(|p| 0.1 * p.range()).collect(),
    };
    let mut run = Run {
        fom,
        config,
        state: OptimizerState::new(x0.to_vec(), superiteration),
        best_seen: f64::INFINITY,
        since_reevaluation: 0,
    };
    match drive(space, x0, &steps, &mut run) {
        Ok(()) => {}
        Err(e) => run.state.status = Status::Aborted(e.to_string()),
    }
    Ok(run.state)
}

fn drive<F>(space: &SearchSpace, x0: &[f64], steps: &[f64], run: &mut Run<'_, F>) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<Measured>,
{
    let dim = space.dim();
    let config = run.config;
    let reevaluation_period = 2 * (dim + 1);

    let mut simplex = Vec::with_capacity(dim + 1);
    simplex.push(run.vertex(x0.to_vec())?);
    run.record_best(&simplex[0]);
    for i in 0..dim {
        let mut x = x0.to_vec();
        let p = &space.parameters[i];
        x[i] = if x0[i] + steps[i] <= p.hi { x0[i] + steps[i] } else { x0[i] - steps[i] };
        space.project(&mut x);
        let v = run.vertex(x)?;
        simplex.push(v);
        sort(&mut simplex);
        run.record_best(&simplex[0]);
    }

    loop {
        sort(&mut simplex);
        run.record_best(&simplex[0]);
        let spread = simplex[dim].value() - simplex[0].value();
        let collapsed = simplex.iter().skip(1).all(|v| {
            v.x.iter()
                .zip(&simplex[0].x)
                .zip(&space.parameters)
                .all(|((a, b), p)| (a - b).abs() <= config.tol_x * p.range())
        });
        if spread < config.tol_f || collapsed {
            run.state.status = Status::Converged;
            return Ok(());
        }
        if run.state.evaluations >= config.max_evaluations {
            run.state.status = Status::MaxEvaluations;
            return Ok(());
        }

        if config.reevaluate && run.since_reevaluation >= reevaluation_period {
            run.since_reevaluation = 0;
            let x = simplex[0].x.clone();
            let m = run.measure(&x, true)?;
            let best = &mut simplex[0];
            best.sum += m.value;
            best.var_sum += m.std_error * m.std_error;
            best.count += 1;
            continue;
        }

        run.state.iterations += 1;
        let mut centroid = vec![0.0; dim];
        for v in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(&v.x) {
                *c += x / dim as f64;
            }
        }
        let worst = simplex[dim].x.clone();
        let propose = |t: f64, toward: &[f64]| {
            let mut x = affine(&centroid, toward, t);
            space.project(&mut x);
            x
        };

        let reflected = run.vertex(propose(-1.0, &worst))?;
        let (f_best, f_second, f_worst) = (
            simplex[0].value(),
            simplex[dim - 1].value(),
            simplex[dim].value(),
        );
        let fr = reflected.value();
        if fr < f_best {
            let expanded = run.vertex(propose(-2.0, &worst))?;
            simplex[dim] = if expanded.value() < fr { expanded } else { reflected };
            continue;
        }
        if fr < f_second {
            simplex[dim] = reflected;
            continue;
        }
        let contracted = if fr < f_worst {
            let c = run.vertex(affine(&centroid, &reflected.x, 0.5))?;
            (c.value() <= fr).then_some(c)
        } else {
            let c = run.vertex(propose(0.5, &worst))?;
            (c.value() < f_worst).then_some(c)
        };
        if let Some(c) = contracted {
            simplex[dim] = c;
            continue;
        }
        if config.reevaluate && simplex[0].count == 1 {
            // a lucky reading would otherwise pull the whole simplex onto it
            run.since_reevaluation = 0;
            let x = simplex[0].x.clone();
            let m = run.measure(&x, true)?;
            let best = &mut simplex[0];
            best.sum += m.value;
            best.var_sum += m.std_error * m.std_error;
            best.count += 1;
            continue;
        }
        let best = simplex[0].x.clone();
        for v in simplex.iter_mut().skip(1) {
            let mut x = affine(&best, &v.x, 0.5);
            space.project(&mut x);
            *v = run.vertex(x)?;
        }
    }
}
