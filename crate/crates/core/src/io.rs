//! File formats: bond curves (CSV), rate models and products (JSON).

use std::io::{Read, Write};
use std::path::Path;

use evalexpr::{build_operator_tree, ContextWithMutableVariables, HashMapContext, Node, Value};
use serde::{Deserialize, Serialize};

use crate::bond::{BondCurve, ShortRateModel};
use crate::error::{Error, Result};
use crate::life::{PaymentSpec, ProductModel};
use crate::matrix::{grid, Matrix, PiecewiseMatrix, Vector, DEFAULT_STEP};

/// Reads a curve with header `maturity,price[,forward]`.
pub fn read_curve<R: Read>(reader: R) -> Result<BondCurve> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, "reading header"))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let forwards_col = match names.as_slice() {
        ["maturity", "price"] => false,
        ["maturity", "price", "forward"] => true,
        [] | [""] => return Err(Error::parse(Some(1), "empty curve file")),
        _ => {
            return Err(Error::parse(
                Some(1),
                format!("expected header maturity,price[,forward], found {}", names.join(",")),
            ))
        }
    };
    let (mut mats, mut prices, mut fwds) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, "reading record"))?;
        let line = rec.position().map(|p| p.line());
        let num = |i: usize, what: &str| -> Result<f64> {
            let s = rec.get(i).ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
            s.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("{what} {s:?} is not a number")))
        };
        mats.push(num(0, "maturity")?);
        prices.push(num(1, "price")?);
        if forwards_col {
            fwds.push(num(2, "forward")?);
        }
    }
    if mats.is_empty() {
        return Err(Error::parse(Some(2), "curve has no data rows"));
    }
    BondCurve::new(mats, prices, forwards_col.then_some(fwds))
        .map_err(|e| Error::parse(None, e.to_string()))
}

fn csv_error(e: csv::Error, what: &str) -> Error {
    let line = e.position().map(|p| p.line());
    Error::parse(line, format!("{what}: {e}"))
}

pub fn read_curve_file(path: &Path) -> Result<BondCurve> {
    read_curve(std::fs::File::open(path)?)
}

/// Writes a curve in the format read by [`read_curve`]. Numbers are written
/// in shortest round-trip form.
pub fn write_curve<W: Write>(writer: W, curve: &BondCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    match &curve.forwards {
        Some(_) => w.write_record(["maturity", "price", "forward"]).map_err(err)?,
        None => w.write_record(["maturity", "price"]).map_err(err)?,
    }
    for i in 0..curve.maturities.len() {
        let mut row = vec![curve.maturities[i].to_string(), curve.prices[i].to_string()];
        if let Some(f) = &curve.forwards {
            row.push(f[i].to_string());
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Either one value for all intervals or one per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerInterval {
    Constant(Vec<f64>),
    Piecewise(Vec<Vec<f64>>),
}

impl PerInterval {
    fn pieces(&self) -> Vec<&[f64]> {
        match self {
            PerInterval::Constant(v) => vec![v.as_slice()],
            PerInterval::Piecewise(v) => v.iter().map(|x| x.as_slice()).collect(),
        }
    }
}

/// JSON form of a rate model. `intensity` holds row-major `p × p` matrices;
/// `breakpoints` lists the start of each interval (the last is open-ended).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub p: usize,
    #[serde(default)]
    pub rho: f64,
    pub pi: Vec<f64>,
    pub rates: PerInterval,
    pub intensity: PerInterval,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
}

impl ModelFile {
    pub fn to_model(&self) -> Result<ShortRateModel> {
        let p = self.p;
        let rates = self.rates.pieces();
        let intens = self.intensity.pieces();
        let count = rates.len().max(intens.len());
        let starts = match &self.breakpoints {
            Some(b) => b.clone(),
            None if count == 1 => vec![0.0],
            None => return Err(Error::parse(None, "per-interval model needs breakpoints")),
        };
        if starts.len() != count || starts[0] != 0.0 {
            return Err(Error::parse(
                None,
                format!("{} breakpoints for {count} intervals (first must be 0)", starts.len()),
            ));
        }
        let pick = |v: &[&[f64]], k: usize| -> Vec<f64> { v[if v.len() == 1 { 0 } else { k }].to_vec() };
        let mut breaks = starts.clone();
        breaks.push(f64::INFINITY);
        let mut lam = Vec::new();
        let mut r = Vec::new();
        for k in 0..count {
            let l = pick(&intens, k);
            let rv = pick(&rates, k);
            if l.len() != p * p || rv.len() != p {
                return Err(Error::parse(
                    None,
                    format!("interval {k}: intensity has {} entries and rates {} for p = {p}", l.len(), rv.len()),
                ));
            }
            lam.push(Matrix::from_row_slice(p, p, &l));
            r.push(Matrix::from_column_slice(p, 1, &rv));
        }
        if self.pi.len() != p {
            return Err(Error::parse(None, format!("pi has {} entries for p = {p}", self.pi.len())));
        }
        ShortRateModel::new(
            PiecewiseMatrix::new(breaks.clone(), lam)?,
            PiecewiseMatrix::new(breaks, r)?,
            Vector::from_column_slice(&self.pi),
            self.rho,
        )
    }

    /// Serialisable form of a time-homogeneous model.
    pub fn from_model(m: &ShortRateModel) -> Result<Self> {
        let starts: Vec<f64> = m.intensity().breaks().iter().copied().filter(|b| b.is_finite()).collect();
        let (lam, rates) = (m.intensity(), m.rates());
        if lam.breaks() != rates.breaks() {
            return Err(Error::structure("intensity and rates use different breakpoints"));
        }
        let rowmajor = |x: &Matrix| x.transpose().as_slice().to_vec();
        let (intensity, rates, breakpoints) = if lam.is_constant() {
            (
                PerInterval::Constant(rowmajor(&lam.values()[0])),
                PerInterval::Constant(rates.values()[0].as_slice().to_vec()),
                None,
            )
        } else {
            (
                PerInterval::Piecewise(lam.values().iter().map(rowmajor).collect()),
                PerInterval::Piecewise(rates.values().iter().map(|r| r.as_slice().to_vec()).collect()),
                Some(starts),
            )
        };
        Ok(Self {
            p: m.dim(),
            rho: m.rho(),
            pi: m.initial().as_slice().to_vec(),
            rates,
            intensity,
            breakpoints,
        })
    }
}

pub fn read_model_file(path: &Path) -> Result<ShortRateModel> {
    let f: ModelFile = serde_json::from_reader(std::fs::File::open(path)?)
        .map_err(|e| Error::parse(Some(e.line() as u64), e.to_string()))?;
    f.to_model()
}

/// A number or a closed-form expression in `t` (time) and `theta`.
///
/// Expressions use the `evalexpr` syntax (`10^(x)`, `math::exp(x)`,
/// `if(t <= 25, 1, 0)`); integer literals are integers, so write `1.0/2.0`
/// rather than `1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expr {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductInterval {
    /// End of the interval; intervals are consecutive starting at 0.
    pub until: f64,
    /// Transition intensities; the diagonal is ignored and set to minus the
    /// off-diagonal row sum.
    pub intensity: Vec<Vec<Expr>>,
    /// Continuous payment rates per state.
    pub rates: Vec<Expr>,
    /// Lump sums on transitions (diagonal entries: sojourn lumps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lumps: Option<Vec<Vec<Expr>>>,
    /// Part of the intensity that triggers lumps; defaults to all of it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lump_intensity: Option<Vec<Vec<Expr>>>,
}

/// JSON form of a product on the biometric state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductFile {
    pub states: Vec<String>,
    pub horizon: f64,
    /// Sampling step for time-dependent expressions.
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub start_state: usize,
    pub intervals: Vec<ProductInterval>,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

struct Compiled {
    node: Option<Node>,
    value: f64,
    uses_t: bool,
    uses_theta: bool,
}

impl Compiled {
    fn new(e: &Expr, what: &str) -> Result<Self> {
        match e {
            Expr::Number(x) => Ok(Self {
                node: None,
                value: *x,
                uses_t: false,
                uses_theta: false,
            }),
            Expr::Text(s) => {
                let node = build_operator_tree(s)
                    .map_err(|err| Error::parse(None, format!("{what}: cannot parse {s:?}: {err}")))?;
                let mut uses_t = false;
                let mut uses_theta = false;
                for id in node.iter_variable_identifiers() {
                    match id {
                        "t" => uses_t = true,
                        "theta" => uses_theta = true,
                        other => {
                            return Err(Error::parse(
                                None,
                                format!("{what}: unknown variable {other:?} in {s:?}"),
                            ))
                        }
                    }
                }
                Ok(Self {
                    node: Some(node),
                    value: 0.0,
                    uses_t,
                    uses_theta,
                })
            }
        }
    }

    fn eval(&self, ctx: &HashMapContext, what: &str) -> Result<f64> {
        match &self.node {
            None => Ok(self.value),
            Some(n) => {
                let v = n
                    .eval_number_with_context(ctx)
                    .map_err(|e| Error::parse(None, format!("{what}: {e}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::domain(format!("{what} evaluates to {v}")))
                }
            }
        }
    }
}

struct CompiledInterval {
    until: f64,
    intensity: Vec<Vec<Compiled>>,
    rates: Vec<Compiled>,
    lumps: Option<Vec<Vec<Compiled>>>,
    lump_intensity: Option<Vec<Vec<Compiled>>>,
}

impl CompiledInterval {
    fn all(&self) -> impl Iterator<Item = &Compiled> {
        let mats = [Some(&self.intensity), self.lumps.as_ref(), self.lump_intensity.as_ref()];
        mats.into_iter()
            .flatten()
            .flat_map(|m| m.iter().flatten())
            .chain(self.rates.iter())
    }
}

fn compile_matrix(m: &[Vec<Expr>], q: usize, what: &str) -> Result<Vec<Vec<Compiled>>> {
    if m.len() != q || m.iter().any(|r| r.len() != q) {
        return Err(Error::parse(None, format!("{what} must be {q}x{q}")));
    }
    m.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, e)| Compiled::new(e, &format!("{what}[{i}][{j}]")))
                .collect()
        })
        .collect()
}

/// Values of one product interval at a time point, for a given θ.
struct Sampled {
    intensity: Matrix,
    rates: Matrix,
    lumps: Matrix,
    lump_intensity: Matrix,
}

fn ctx(t: f64, theta: f64) -> Result<HashMapContext> {
    let mut c = HashMapContext::new();
    c.set_value("t".into(), Value::Float(t))
        .and_then(|_| c.set_value("theta".into(), Value::Float(theta)))
        .map_err(|e| Error::parse(None, e.to_string()))?;
    Ok(c)
}

fn eval_matrix(m: &[Vec<Compiled>], c: &HashMapContext, what: &str) -> Result<Matrix> {
    let q = m.len();
    let mut out = Matrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            out[(i, j)] = m[i][j].eval(c, what)?;
        }
    }
    Ok(out)
}

fn sample_interval(ci: &CompiledInterval, t: f64, theta: f64) -> Result<Sampled> {
    let c = ctx(t, theta)?;
    let q = ci.rates.len();
    let mut intensity = eval_matrix(&ci.intensity, &c, "intensity")?;
    for i in 0..q {
        intensity[(i, i)] = 0.0;
        let s: f64 = intensity.row(i).sum();
        intensity[(i, i)] = -s;
    }
    let rates = Matrix::from_iterator(q, 1, ci.rates.iter().map(|r| r.eval(&c, "rates")).collect::<Result<Vec<_>>>()?);
    let lumps = match &ci.lumps {
        Some(l) => eval_matrix(l, &c, "lumps")?,
        None => Matrix::zeros(q, q),
    };
    let lump_intensity = match &ci.lump_intensity {
        Some(l) => eval_matrix(l, &c, "lump_intensity")?,
        None => {
            let mut l = intensity.clone();
            l.fill_diagonal(0.0);
            l
        }
    };
    Ok(Sampled {
        intensity,
        rates,
        lumps,
        lump_intensity,
    })
}

/// A product sampled onto a grid: biometric intensity and affine payments.
#[derive(Debug, Clone)]
pub struct Product {
    pub states: Vec<String>,
    pub horizon: f64,
    pub start_state: usize,
    pub intensity: PiecewiseMatrix,
    pub payments: PaymentSpec,
    /// Whether any payment depends on θ.
    pub has_theta: bool,
}

impl Product {
    /// Combines the product with an independent rate model.
    pub fn with_rate_model(&self, rates: &ShortRateModel) -> Result<ProductModel> {
        ProductModel::independent(&self.intensity, &self.payments, rates, self.horizon)
    }
}

impl ProductFile {
    /// Samples all expressions at cell midpoints (intervals whose expressions
    /// do not involve `t` become single cells) and checks that payments are
    /// affine in θ.
    pub fn to_product(&self) -> Result<Product> {
        let q = self.states.len();
        if q == 0 || self.intervals.is_empty() {
            return Err(Error::parse(None, "product needs states and intervals"));
        }
        if !(self.step > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::parse(None, "step and horizon must be positive"));
        }
        if self.start_state >= q {
            return Err(Error::parse(None, format!("start_state {} out of range", self.start_state)));
        }
        let mut compiled = Vec::new();
        for (k, iv) in self.intervals.iter().enumerate() {
            if iv.rates.len() != q {
                return Err(Error::parse(
                    None,
                    format!("interval {k}: {} rates for {q} states", iv.rates.len()),
                ));
            }
            let ci = CompiledInterval {
                until: iv.until,
                intensity: compile_matrix(&iv.intensity, q, "intensity")?,
                rates: iv
                    .rates
                    .iter()
                    .enumerate()
                    .map(|(i, e)| Compiled::new(e, &format!("rates[{i}]")))
                    .collect::<Result<_>>()?,
                lumps: iv.lumps.as_ref().map(|l| compile_matrix(l, q, "lumps")).transpose()?,
                lump_intensity: iv
                    .lump_intensity
                    .as_ref()
                    .map(|l| compile_matrix(l, q, "lump_intensity"))
                    .transpose()?,
            };
            if ci.intensity.iter().flatten().chain(ci.lump_intensity.iter().flatten().flatten()).any(|c| c.uses_theta) {
                return Err(Error::parse(None, format!("interval {k}: intensities may not depend on theta")));
            }
            compiled.push(ci);
        }
        let mut breaks = vec![0.0];
        let mut samples: Vec<[Sampled; 3]> = Vec::new();
        let mut start = 0.0;
        for (k, ci) in compiled.iter().enumerate() {
            let end = ci.until.min(self.horizon);
            if !(end > start) {
                return Err(Error::parse(None, format!("interval {k} ends at {} before it starts", ci.until)));
            }
            let step = if ci.all().any(|c| c.uses_t) { self.step } else { f64::INFINITY };
            let cells = if step.is_finite() { grid(start, end, step, &[])? } else { vec![start, end] };
            for w in cells.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                samples.push([
                    sample_interval(ci, mid, 0.0)?,
                    sample_interval(ci, mid, 1.0)?,
                    sample_interval(ci, mid, 2.0)?,
                ]);
                breaks.push(w[1]);
            }
            start = end;
            if end >= self.horizon {
                break;
            }
        }
        if start < self.horizon {
            return Err(Error::parse(None, format!("intervals end at {start}, before the horizon {}", self.horizon)));
        }
        let mut has_theta = false;
        let mut parts: [Vec<Matrix>; 6] = Default::default();
        for (k, [s0, s1, s2]) in samples.iter().enumerate() {
            let b_theta = &s1.rates - &s0.rates;
            let l_theta = &s1.lumps - &s0.lumps;
            let lin = (&s2.rates - &s0.rates - &b_theta * 2.0).amax() + (&s2.lumps - &s0.lumps - &l_theta * 2.0).amax();
            let scale = 1.0 + s0.rates.amax() + s0.lumps.amax() + b_theta.amax() + l_theta.amax();
            if lin > 1e-9 * scale {
                return Err(Error::parse(
                    None,
                    format!("payments are not affine in theta (cell {k}, deviation {lin:e})"),
                ));
            }
            has_theta |= b_theta.amax() > 0.0 || l_theta.amax() > 0.0;
            parts[0].push(s0.intensity.clone());
            parts[1].push(s0.rates.clone());
            parts[2].push(s0.lumps.clone());
            parts[3].push(s0.lump_intensity.clone());
            parts[4].push(b_theta);
            parts[5].push(l_theta);
        }
        let [lam, rates, lumps, l1, b_theta, l_theta] = parts.map(|v| PiecewiseMatrix::new(breaks.clone(), v));
        let payments = PaymentSpec::new(rates?, lumps?, l1?)?.with_theta(b_theta?, l_theta?)?;
        Ok(Product {
            states: self.states.clone(),
            horizon: self.horizon,
            start_state: self.start_state,
            intensity: lam?,
            payments,
            has_theta,
        })
    }
}

pub fn read_product_file(path: &Path) -> Result<ProductFile> {
    serde_json::from_reader(std::fs::File::open(path)?)
        .map_err(|e| Error::parse(Some(e.line() as u64), e.to_string()))
}
