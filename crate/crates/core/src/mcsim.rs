//! Monte Carlo simulation of discounted payment streams.
//!
//! Each path follows the combined chain exactly: within a sojourn all
//! piecewise-constant quantities are integrated in closed form through
//! per-state prefix sums on the model grid, so the only error is statistical.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::life::ProductModel;
use crate::phasetype::pick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationOutput {
    #[default]
    Summary,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub paths: usize,
    pub seed: u64,
    /// Results depend on the worker count, never on the thread pool size.
    pub workers: usize,
    pub output: SimulationOutput,
}

impl SimulationConfig {
    pub fn new(paths: usize, seed: u64) -> Self {
        Self {
            paths,
            seed,
            workers: 8,
            output: SimulationOutput::Summary,
        }
    }
}

/// Simulated present values, in worker order.
#[derive(Debug, Clone, PartialEq)]
pub struct PVSample {
    pub values: Vec<f64>,
    /// Jumps of the chain, over all paths.
    pub transitions: u64,
    /// Lump sums paid on transitions, over all paths.
    pub transition_lumps: u64,
    /// Lump sums paid during sojourns (diagonal of `Λ¹`).
    pub sojourn_lumps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub paths: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    /// Raw moments `E X^k`, `k = 1..=4`.
    pub raw_moments: Vec<f64>,
    pub quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// `count / (N · width)`.
    pub density: Vec<f64>,
}

/// Per-state cumulative quantities at the grid points.
struct StateTables {
    /// Cumulative event intensity (jumps plus sojourn lumps).
    hazard: Vec<f64>,
    /// `R(t) = ∫_0^t r`.
    rate: Vec<f64>,
    /// `P(t) = ∫_0^t e^{−R(u)} b(u) du`.
    paid: Vec<f64>,
}

struct Prepared<'a> {
    model: &'a ProductModel,
    grid: Vec<f64>,
    states: Vec<StateTables>,
    /// Per interval: (`Λ`, `Λ¹`, `B`) with θ applied.
    intensity: &'a [crate::matrix::Matrix],
    lump_intensity: &'a [crate::matrix::Matrix],
    lumps: Vec<crate::matrix::Matrix>,
    rates: &'a [crate::matrix::Matrix],
    pay: Vec<crate::matrix::Matrix>,
}

/// `∫_0^h e^{−r u} du`.
fn discount_integral(r: f64, h: f64) -> f64 {
    if r.abs() * h < 1e-12 {
        h
    } else {
        -(-r * h).exp_m1() / r
    }
}

impl<'a> Prepared<'a> {
    fn new(model: &'a ProductModel) -> Self {
        let n = model.dim();
        let grid = model.grid().to_vec();
        let theta = model.theta();
        let p = model.payments();
        let pay: Vec<_> = p
            .rates
            .values()
            .iter()
            .zip(p.rates_theta.values())
            .map(|(b, bt)| b + bt * theta)
            .collect();
        let lumps: Vec<_> = p
            .lumps
            .values()
            .iter()
            .zip(p.lumps_theta.values())
            .map(|(b, bt)| b + bt * theta)
            .collect();
        let intensity = model.intensity().values();
        let lump_intensity = p.lump_intensity.values();
        let rates = model.rates().values();
        let cells = intensity.len();
        let states = (0..n)
            .map(|i| {
                let mut t = StateTables {
                    hazard: vec![0.0; cells + 1],
                    rate: vec![0.0; cells + 1],
                    paid: vec![0.0; cells + 1],
                };
                for k in 0..cells {
                    let h = grid[k + 1] - grid[k];
                    let lam = -intensity[k][(i, i)] + lump_intensity[k][(i, i)];
                    let r = rates[k][(i, 0)];
                    t.hazard[k + 1] = t.hazard[k] + lam.max(0.0) * h;
                    t.rate[k + 1] = t.rate[k] + r * h;
                    t.paid[k + 1] = t.paid[k] + (-t.rate[k]).exp() * pay[k][(i, 0)] * discount_integral(r, h);
                }
                t
            })
            .collect();
        Self {
            model,
            grid,
            states,
            intensity,
            lump_intensity,
            lumps,
            rates,
            pay,
        }
    }

    /// Cell containing `t` (right-continuous; the horizon maps to the last).
    fn cell(&self, t: f64) -> usize {
        let g = &self.grid;
        g.partition_point(|&x| x <= t).saturating_sub(1).min(g.len() - 2)
    }

    fn rate_at(&self, i: usize, k: usize, t: f64) -> f64 {
        self.states[i].rate[k] + self.rates[k][(i, 0)] * (t - self.grid[k])
    }

    fn paid_at(&self, i: usize, k: usize, t: f64) -> f64 {
        let s = &self.states[i];
        let r = self.rates[k][(i, 0)];
        s.paid[k] + (-s.rate[k]).exp() * self.pay[k][(i, 0)] * discount_integral(r, t - self.grid[k])
    }

    fn hazard_at(&self, i: usize, k: usize, t: f64) -> f64 {
        let lam = -self.intensity[k][(i, i)] + self.lump_intensity[k][(i, i)];
        self.states[i].hazard[k] + lam.max(0.0) * (t - self.grid[k])
    }

    fn path<R: Rng>(&self, start: usize, rng: &mut R, counts: &mut [u64; 3]) -> f64 {
        let horizon = self.model.horizon();
        let n = self.model.dim();
        let (mut state, mut t, mut discount, mut pv) = (start, 0.0, 0.0, 0.0);
        loop {
            let k0 = self.cell(t);
            let st = &self.states[state];
            let r0 = self.rate_at(state, k0, t);
            let p0 = self.paid_at(state, k0, t);
            let e: f64 = Exp1.sample(rng);
            let target = self.hazard_at(state, k0, t) + e;
            // accrual from t to u while in `state`: e^{R(t) − D} (P(u) − P(t))
            let scale = (r0 - discount).exp();
            let last = *st.hazard.last().unwrap();
            if target >= last {
                let k = self.grid.len() - 2;
                return pv + scale * (self.paid_at(state, k, horizon) - p0);
            }
            let k = st.hazard.partition_point(|&h| h < target) - 1;
            let k = k.max(k0);
            let lam = -self.intensity[k][(state, state)] + self.lump_intensity[k][(state, state)];
            let tau = (self.grid[k] + (target - st.hazard[k]) / lam).clamp(t, self.grid[k + 1]);
            pv += scale * (self.paid_at(state, k, tau) - p0);
            discount += self.rate_at(state, k, tau) - r0;
            t = tau;
            let l = &self.intensity[k];
            let l1 = &self.lump_intensity[k];
            let weights = (0..n).map(|j| if j == state { l1[(j, j)] } else { l[(state, j)] });
            let Some(j) = pick(rng, weights, lam) else {
                return pv;
            };
            let df = (-discount).exp();
            if j == state {
                counts[2] += 1;
                pv += df * self.lumps[k][(j, j)];
            } else {
                counts[0] += 1;
                let p1 = l1[(state, j)];
                if p1 > 0.0 && (p1 >= l[(state, j)] || rng.random::<f64>() * l[(state, j)] < p1) {
                    counts[1] += 1;
                    pv += df * self.lumps[k][(state, j)];
                }
                state = j;
            }
            if t >= horizon {
                return pv;
            }
        }
    }
}

/// Simulates `config.paths` present values of the payment stream on
/// `[0, T]` starting in `start`.
pub fn simulate_pv(model: &ProductModel, start: usize, config: &SimulationConfig) -> Result<PVSample> {
    if config.paths == 0 || config.workers == 0 {
        return Err(Error::domain("path and worker counts must be positive"));
    }
    if start >= model.dim() {
        return Err(Error::domain(format!("start state {start} out of range")));
    }
    let prepared = Prepared::new(model);
    let w = config.workers;
    let chunks: Vec<usize> = (0..w)
        .map(|i| config.paths / w + usize::from(i < config.paths % w))
        .collect();
    let parts: Vec<(Vec<f64>, [u64; 3])> = chunks
        .par_iter()
        .enumerate()
        .map(|(worker, &len)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(worker as u64);
            let mut counts = [0u64; 3];
            let values = (0..len).map(|_| prepared.path(start, &mut rng, &mut counts)).collect();
            (values, counts)
        })
        .collect();
    let mut out = PVSample {
        values: Vec::with_capacity(config.paths),
        transitions: 0,
        transition_lumps: 0,
        sojourn_lumps: 0,
    };
    for (v, c) in parts {
        out.values.extend(v);
        out.transitions += c[0];
        out.transition_lumps += c[1];
        out.sojourn_lumps += c[2];
    }
    Ok(out)
}

/// Type-1 (inverse distribution function) quantiles.
pub fn empirical_quantiles(values: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::domain(format!("quantile level {q} not in (0, 1)")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(qs
        .iter()
        .map(|q| {
            let idx = ((n * q).ceil() as usize).clamp(1, sorted.len()) - 1;
            sorted[idx]
        })
        .collect())
}

impl PVSample {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn quantiles(&self, qs: &[f64]) -> Result<Vec<f64>> {
        empirical_quantiles(&self.values, qs)
    }

    /// Sample raw moments `E X^k`, `k = 1..=order`, with their standard errors.
    pub fn raw_moments(&self, order: usize) -> Vec<(f64, f64)> {
        let n = self.values.len() as f64;
        (1..=order as i32)
            .map(|k| {
                let (s, s2) = self.values.iter().fold((0.0, 0.0), |(s, s2), x| {
                    let p = x.powi(k);
                    (s + p, s2 + p * p)
                });
                let m = s / n;
                let var = (s2 / n - m * m).max(0.0) * n / (n - 1.0).max(1.0);
                (m, (var / n).sqrt())
            })
            .collect()
    }

    pub fn summary(&self, qs: &[f64]) -> Result<Summary> {
        let m = self.raw_moments(4);
        let n = self.values.len() as f64;
        let mean = m[0].0;
        let variance = self.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Ok(Summary {
            paths: self.values.len(),
            mean,
            variance,
            std_error: m[0].1,
            raw_moments: m.iter().map(|x| x.0).collect(),
            quantiles: qs.iter().copied().zip(self.quantiles(qs)?).collect(),
        })
    }

    /// Equal-width histogram over `[min, max]` of the sample.
    pub fn histogram(&self, bins: usize) -> Result<Histogram> {
        if bins == 0 || self.values.is_empty() {
            return Err(Error::domain("histogram needs bins and data"));
        }
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            hi = lo + 1.0;
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for x in &self.values {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let n = self.values.len() as f64;
        Ok(Histogram {
            edges: (0..=bins).map(|i| lo + width * i as f64).collect(),
            density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
            counts,
        })
    }

    /// Writes the values as a little-endian `u64` count followed by `f64`s.
    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(w.flush()?)
    }

    pub fn write_raw_file(&self, path: &Path) -> Result<()> {
        self.write_raw(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Reads values written by [`PVSample::write_raw`].
pub fn read_raw<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lower", "upper", "count", "density"])
            .map_err(|e| Error::Numeric(e.to_string()))?;
        for i in 0..self.counts.len() {
            out.write_record([
                self.edges[i].to_string(),
                self.edges[i + 1].to_string(),
                self.counts[i].to_string(),
                self.density[i].to_string(),
            ])
            .map_err(|e| Error::Numeric(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}
