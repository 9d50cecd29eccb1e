//! EM fitting of phase-type distributions to weighted, right-censored data.
//!
//! Conditional expectations of the complete-data statistics are read off
//! Van Loan block exponentials, one per observation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{block_upper, expm, ones, Matrix, Vector};
use crate::phasetype::PhaseType;

/// Exact observations `(y, w)` and right-censored observations `(c, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub exact: Vec<(f64, f64)>,
    pub censored: Vec<(f64, f64)>,
}

impl WeightedSample {
    pub fn new(exact: Vec<(f64, f64)>, censored: Vec<(f64, f64)>) -> Result<Self> {
        if exact.is_empty() && censored.is_empty() {
            return Err(Error::domain("sample has no observations"));
        }
        for &(x, w) in exact.iter().chain(&censored) {
            if !(x > 0.0 && x.is_finite()) || !(w > 0.0 && w.is_finite()) {
                return Err(Error::domain(format!(
                    "observation ({x}, {w}) needs positive time and weight"
                )));
            }
        }
        Ok(Self { exact, censored })
    }

    /// Unit-weight exact observations.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        Self::new(times.iter().map(|&y| (y, 1.0)).collect(), Vec::new())
    }

    pub fn total_weight(&self) -> f64 {
        self.exact.iter().chain(&self.censored).map(|o| o.1).sum()
    }

    /// Weighted mean of the recorded times (censoring times count as-is).
    pub fn mean(&self) -> f64 {
        let s: f64 = self.exact.iter().chain(&self.censored).map(|o| o.0 * o.1).sum();
        s / self.total_weight()
    }
}

/// Expected complete-data statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmStats {
    /// `B_i`: expected number of starts in each phase.
    pub starts: Vector,
    /// `Z_i`: expected total time spent in each phase.
    pub occupation: Vector,
    /// `N_ij`: expected number of `i → j` jumps (zero diagonal).
    pub transitions: Matrix,
    /// `N_i`: expected number of exits from each phase.
    pub exits: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    #[default]
    General,
    /// Start in phase 1, jumps only `i → i+1` or to absorption.
    Coxian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub dim: usize,
    pub structure: Structure,
    /// Exit rates held fixed during fitting (restricted interest rates).
    pub fixed_exit: Option<Vec<f64>>,
    /// Initial distribution held fixed during fitting.
    pub fixed_initial: Option<Vec<f64>>,
    pub max_iters: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl FitConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            structure: Structure::General,
            fixed_exit: None,
            fixed_initial: None,
            max_iters: 5000,
            tol: 1e-10,
            seed: 1,
            restarts: 5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("dimension must be at least 1"));
        }
        if !(self.tol > 0.0) || self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::domain("tolerance, restarts and max_iters must be positive"));
        }
        if let Some(e) = &self.fixed_exit {
            if e.len() != self.dim || e.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::domain("fixed exit vector must have length p and be nonnegative"));
            }
        }
        if let Some(pi) = &self.fixed_initial {
            if pi.len() != self.dim
                || pi.iter().any(|&x| !(x >= 0.0))
                || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(Error::domain("fixed initial vector must be a probability vector of length p"));
            }
        }
        Ok(())
    }
}

/// Parameters as the EM iterates them: the exit vector is carried
/// explicitly so that fixed exits stay bit-identical across iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct PhParams {
    pub initial: Vector,
    pub sub_intensity: Matrix,
    pub exit: Vector,
}

impl PhParams {
    pub fn from_phase_type(d: &PhaseType) -> Result<Self> {
        let t = d.sub_intensity()?.clone();
        let exit = -(&t * ones(d.dim()));
        Ok(Self {
            initial: d.initial().clone(),
            sub_intensity: t,
            exit,
        })
    }

    pub fn to_phase_type(&self) -> Result<PhaseType> {
        PhaseType::homogeneous(self.initial.clone(), self.sub_intensity.clone())
    }

    fn from_offdiag(initial: Vector, mut t: Matrix, exit: Vector) -> Self {
        for i in 0..t.nrows() {
            t[(i, i)] = 0.0;
            let s: f64 = t.row(i).sum();
            t[(i, i)] = -exit[i] - s;
        }
        Self {
            initial,
            sub_intensity: t,
            exit,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: PhParams,
    pub dist: PhaseType,
    pub loglik: f64,
    /// Log-likelihood of every iterate of the best restart.
    pub trace: Vec<f64>,
    /// Final log-likelihood per restart (`None` if that restart degenerated).
    pub restart_logliks: Vec<Option<f64>>,
    pub best_restart: usize,
    pub converged: bool,
    /// Phases whose expected occupation is below `1e-12` of the total.
    pub degenerate_states: Vec<usize>,
}

struct Contribution {
    loglik: f64,
    starts: Vector,
    occupation: Vector,
    flow: Matrix,
    exits: Vector,
}

fn contribution(p: &PhParams, y: f64, w: f64, censored: bool, index: usize) -> Result<Contribution> {
    let n = p.initial.len();
    let t = &p.sub_intensity;
    let kernel = if censored {
        ones(n) * p.initial.transpose()
    } else {
        &p.exit * p.initial.transpose()
    };
    let g = expm(&(block_upper(t, &kernel, t) * y))?;
    let e_ty = g.view((0, 0), (n, n));
    let j = g.view((0, n), (n, n));
    let right = if censored { e_ty * ones(n) } else { e_ty * &p.exit };
    let lik = p.initial.dot(&right);
    if !(lik > 0.0) || !lik.is_finite() {
        return Err(Error::FitDegenerate {
            index,
            time: y,
            kind: if censored { "survival" } else { "density" },
        });
    }
    let scale = w / lik;
    let starts = p.initial.component_mul(&right) * scale;
    let occupation = Vector::from_iterator(n, (0..n).map(|i| j[(i, i)] * scale));
    let flow = Matrix::from_fn(n, n, |a, b| if a == b { 0.0 } else { t[(a, b)] * j[(b, a)] * scale });
    let exits = if censored {
        Vector::zeros(n)
    } else {
        let left = e_ty.tr_mul(&p.initial);
        left.component_mul(&p.exit) * scale
    };
    Ok(Contribution {
        loglik: w * lik.ln(),
        starts,
        occupation,
        flow,
        exits,
    })
}

fn e_step_params(p: &PhParams, sample: &WeightedSample) -> Result<(EmStats, f64)> {
    let n = p.initial.len();
    let obs: Vec<(f64, f64, bool)> = sample
        .exact
        .iter()
        .map(|&(y, w)| (y, w, false))
        .chain(sample.censored.iter().map(|&(c, v)| (c, v, true)))
        .collect();
    let parts = obs
        .par_iter()
        .enumerate()
        .map(|(i, &(y, w, c))| contribution(p, y, w, c, i))
        .collect::<Result<Vec<_>>>()?;
    let mut stats = EmStats {
        starts: Vector::zeros(n),
        occupation: Vector::zeros(n),
        transitions: Matrix::zeros(n, n),
        exits: Vector::zeros(n),
    };
    let mut ll = 0.0;
    for c in parts {
        ll += c.loglik;
        stats.starts += c.starts;
        stats.occupation += c.occupation;
        stats.transitions += c.flow;
        stats.exits += c.exits;
    }
    Ok((stats, ll))
}

/// Conditional expectations of the complete-data statistics.
///
/// Exact points are conditioned on the density, censored points on survival
/// beyond the censoring time; for the latter only the path up to the
/// censoring time enters the statistics.
pub fn e_step(d: &PhaseType, sample: &WeightedSample) -> Result<EmStats> {
    Ok(e_step_params(&PhParams::from_phase_type(d)?, sample)?.0)
}

/// `Σ w log f(y) + Σ v log S(c)`.
pub fn loglik(d: &PhaseType, sample: &WeightedSample) -> Result<f64> {
    let mut ll = 0.0;
    for (i, &(y, w)) in sample.exact.iter().enumerate() {
        let f = d.density(y)?;
        if !(f > 0.0) {
            return Err(Error::FitDegenerate { index: i, time: y, kind: "density" });
        }
        ll += w * f.ln();
    }
    for (i, &(c, v)) in sample.censored.iter().enumerate() {
        let s = d.survival(c)?;
        if !(s > 0.0) {
            return Err(Error::FitDegenerate {
                index: sample.exact.len() + i,
                time: c,
                kind: "survival",
            });
        }
        ll += v * s.ln();
    }
    Ok(ll)
}

/// Maximises the complete-data likelihood given expected statistics.
pub fn m_step(stats: &EmStats, config: &FitConfig) -> Result<PhParams> {
    let n = config.dim;
    if stats.starts.len() != n {
        return Err(Error::structure("statistics do not match the configured dimension"));
    }
    for i in 0..n {
        if !(stats.occupation[i] > 0.0) {
            return Err(Error::DegenerateState { state: i });
        }
    }
    let initial = if let Some(pi) = &config.fixed_initial {
        Vector::from_column_slice(pi)
    } else if config.structure == Structure::Coxian {
        let mut e = Vector::zeros(n);
        e[0] = 1.0;
        e
    } else {
        let total = stats.starts.sum();
        &stats.starts / total
    };
    let t = Matrix::from_fn(n, n, |i, j| {
        let allowed = match config.structure {
            Structure::General => i != j,
            Structure::Coxian => j == i + 1,
        };
        if allowed {
            stats.transitions[(i, j)] / stats.occupation[i]
        } else {
            0.0
        }
    });
    let exit = match &config.fixed_exit {
        Some(e) => Vector::from_column_slice(e),
        None => stats.exits.component_div(&stats.occupation),
    };
    Ok(PhParams::from_offdiag(initial, t, exit))
}

fn initial_params(config: &FitConfig, sample_mean: f64, rng: &mut ChaCha8Rng) -> PhParams {
    let n = config.dim;
    let scale = 1.0 / sample_mean.max(1e-12);
    let initial = match (&config.fixed_initial, config.structure) {
        (Some(pi), _) => Vector::from_column_slice(pi),
        (None, Structure::Coxian) => {
            let mut e = Vector::zeros(n);
            e[0] = 1.0;
            e
        }
        (None, Structure::General) => {
            let v = Vector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
            let s = v.sum();
            v / s
        }
    };
    let t = Matrix::from_fn(n, n, |i, j| {
        let allowed = match config.structure {
            Structure::General => i != j,
            Structure::Coxian => j == i + 1,
        };
        if allowed {
            rng.random_range(0.1..1.0) * scale * n as f64
        } else {
            0.0
        }
    });
    match &config.fixed_exit {
        Some(e) => PhParams::from_offdiag(initial, t, Vector::from_column_slice(e)),
        None => {
            let exit = Vector::from_fn(n, |_, _| rng.random_range(0.1..1.0) * scale);
            let mut p = PhParams::from_offdiag(initial, t, exit);
            // rescale so the mean matches the sample mean
            if let Ok(mean) = p.to_phase_type().and_then(|d| d.mean()) {
                let f = mean / sample_mean;
                if f.is_finite() && f > 0.0 {
                    p.sub_intensity *= f;
                    p.exit *= f;
                }
            }
            p
        }
    }
}

struct RunOutcome {
    params: PhParams,
    trace: Vec<f64>,
    converged: bool,
    occupation: Vector,
}

fn run_em(start: PhParams, sample: &WeightedSample, config: &FitConfig) -> Result<RunOutcome> {
    let mut params = start;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_stats;
    loop {
        let (stats, ll) = e_step_params(&params, sample)?;
        if !ll.is_finite() {
            return Err(Error::Numeric("non-finite log-likelihood".into()));
        }
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() < config.tol);
        trace.push(ll);
        last_stats = stats;
        if done {
            converged = true;
            break;
        }
        if trace.len() > config.max_iters {
            break;
        }
        params = m_step(&last_stats, config)?;
    }
    Ok(RunOutcome {
        params,
        trace,
        converged,
        occupation: last_stats.occupation,
    })
}

/// Runs EM from `config.restarts` seeded random starting points and keeps the
/// best final log-likelihood.
pub fn em_fit(sample: &WeightedSample, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let mean = sample.mean();
    let mut best: Option<(usize, RunOutcome)> = None;
    let mut logliks = Vec::with_capacity(config.restarts);
    let mut errors = Vec::new();
    for r in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64);
        let start = initial_params(config, mean, &mut rng);
        match run_em(start, sample, config) {
            Ok(out) => {
                let ll = *out.trace.last().unwrap();
                logliks.push(Some(ll));
                let better = best
                    .as_ref()
                    .is_none_or(|(_, b)| ll > *b.trace.last().unwrap());
                if better {
                    best = Some((r, out));
                }
            }
            Err(e) => {
                logliks.push(None);
                errors.push(format!("restart {r}: {e}"));
            }
        }
    }
    let (best_restart, out) =
        best.ok_or_else(|| Error::FitFailure(errors.join("; ")))?;
    let total = out.occupation.sum();
    let degenerate_states = (0..config.dim)
        .filter(|&i| out.occupation[i] < 1e-12 * total)
        .collect();
    Ok(FitResult {
        dist: out.params.to_phase_type()?,
        loglik: *out.trace.last().unwrap(),
        params: out.params,
        trace: out.trace,
        restart_logliks: logliks,
        best_restart,
        converged: out.converged,
        degenerate_states,
    })
}

/// Histogram of a density on `grid`: cell midpoints weighted by trapezoid
/// mass, and the remaining mass as a censored point at the last breakpoint.
pub fn discretize_density<F>(mut f: F, grid: &[f64]) -> Result<WeightedSample>
where
    F: FnMut(f64) -> f64,
{
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) || grid[0] < 0.0 {
        return Err(Error::domain("grid must be increasing, nonnegative and have two points"));
    }
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    if let Some(i) = vals.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::domain(format!("density is {} at {}", vals[i], grid[i])));
    }
    let mut exact = Vec::new();
    let mut mass = 0.0;
    for k in 0..grid.len() - 1 {
        let w = 0.5 * (vals[k] + vals[k + 1]) * (grid[k + 1] - grid[k]);
        mass += w;
        if w > 0.0 {
            exact.push((0.5 * (grid[k] + grid[k + 1]), w));
        }
    }
    let tail = 1.0 - mass;
    let censored = if tail > 1e-15 {
        vec![(*grid.last().unwrap(), tail)]
    } else {
        Vec::new()
    };
    WeightedSample::new(exact, censored)
}
