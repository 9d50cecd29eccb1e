//! Dense matrix plumbing: exponentials, Kronecker products, piecewise-constant
//! matrix functions, product integrals and Van Loan block integrals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Row-sum tolerance used when validating (sub-)intensity matrices.
pub const ROW_SUM_TOL: f64 = 1e-10;

/// Default refinement step for time-inhomogeneous inputs (one trading day).
pub const DEFAULT_STEP: f64 = 1.0 / 252.0;

fn check_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} has non-finite entries")))
    }
}

/// Matrix exponential (Padé scaling and squaring).
pub fn expm(a: &Matrix) -> Result<Matrix> {
    check_finite(a, "expm argument")?;
    if !a.is_square() {
        return Err(Error::structure(format!(
            "expm needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let out = a.clone().exp();
    check_finite(&out, "matrix exponential")?;
    Ok(out)
}

/// Computes `exp(a) * w` by scaled Taylor series without forming `exp(a)`.
///
/// `op` applies `a` to a block of columns and `norm` must bound `‖a‖₁`.
pub fn expm_action<F>(op: F, norm: f64, w: &Matrix) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Matrix,
{
    if !norm.is_finite() {
        return Err(Error::domain("expm_action: non-finite operator norm"));
    }
    let steps = norm.ceil().max(1.0) as usize;
    let scale = 1.0 / steps as f64;
    let mut out = w.clone();
    for _ in 0..steps {
        let mut term = out.clone();
        let mut acc = out.clone();
        for j in 1..=60 {
            term = op(&term) * (scale / j as f64);
            acc += &term;
            let tn = term.amax();
            if tn <= f64::EPSILON * 0.5 * acc.amax() || tn == 0.0 {
                break;
            }
        }
        out = acc;
    }
    check_finite(&out, "expm_action result")?;
    Ok(out)
}

/// Maximum absolute column sum.
pub fn norm1(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Kronecker product `{a_ij B}`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Kronecker sum `A ⊗ I + I ⊗ B`.
pub fn kron_sum(a: &Matrix, b: &Matrix) -> Matrix {
    let ia = Matrix::identity(a.nrows(), a.ncols());
    let ib = Matrix::identity(b.nrows(), b.ncols());
    a.kronecker(&ib) + ia.kronecker(b)
}

pub fn diag(v: &Vector) -> Matrix {
    Matrix::from_diagonal(v)
}

pub fn ones(n: usize) -> Vector {
    Vector::from_element(n, 1.0)
}

/// Checks that `m` is an intensity matrix: nonnegative off-diagonals and
/// zero row sums (within `tol`).
pub fn check_intensity(m: &Matrix, tol: f64) -> Result<()> {
    check_rates(m, tol, false)
}

/// As [`check_intensity`] but row sums only need to be `≤ tol`.
pub fn check_sub_intensity(m: &Matrix, tol: f64) -> Result<()> {
    check_rates(m, tol, true)
}

fn check_rates(m: &Matrix, tol: f64, sub: bool) -> Result<()> {
    if !m.is_square() {
        return Err(Error::structure("intensity matrix must be square"));
    }
    check_finite(m, "intensity matrix")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)] < 0.0 {
                return Err(Error::domain(format!(
                    "negative off-diagonal rate {} at ({i},{j})",
                    m[(i, j)]
                )));
            }
        }
        let s: f64 = m.row(i).sum();
        let bad = if sub { s > tol } else { s.abs() > tol };
        if bad {
            return Err(Error::domain(format!("row {i} sums to {s:e}")));
        }
    }
    Ok(())
}

/// A matrix-valued function of time that is constant on each interval
/// `[t_k, t_{k+1})`. The last breakpoint may be `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseMatrix {
    breaks: Vec<f64>,
    values: Vec<Matrix>,
}

impl PiecewiseMatrix {
    pub fn new(breaks: Vec<f64>, values: Vec<Matrix>) -> Result<Self> {
        if values.is_empty() || breaks.len() != values.len() + 1 {
            return Err(Error::structure(format!(
                "{} breakpoints for {} intervals",
                breaks.len(),
                values.len()
            )));
        }
        if breaks[0].is_nan() || !breaks[0].is_finite() {
            return Err(Error::domain("first breakpoint must be finite"));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("breakpoints must be strictly increasing"));
        }
        let shape = values[0].shape();
        for (k, v) in values.iter().enumerate() {
            if v.shape() != shape {
                return Err(Error::structure(format!(
                    "interval {k} is {}x{}, expected {}x{}",
                    v.nrows(),
                    v.ncols(),
                    shape.0,
                    shape.1
                )));
            }
            check_finite(v, "piecewise matrix value")?;
        }
        Ok(Self { breaks, values })
    }

    /// Constant on `[0, ∞)`.
    pub fn constant(m: Matrix) -> Self {
        Self {
            breaks: vec![0.0, f64::INFINITY],
            values: vec![m],
        }
    }

    /// Samples `f` at the midpoint of each cell of a grid on `[start, end]`
    /// with spacing at most `step`; every knot in `knots` inside the range
    /// becomes a breakpoint, so discontinuities there are respected.
    pub fn sample<F>(mut f: F, start: f64, end: f64, step: f64, knots: &[f64]) -> Result<Self>
    where
        F: FnMut(f64) -> Result<Matrix>,
    {
        let breaks = grid(start, end, step, knots)?;
        let values = breaks
            .windows(2)
            .map(|w| f(0.5 * (w[0] + w[1])))
            .collect::<Result<Vec<_>>>()?;
        Self::new(breaks, values)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    fn index(&self, t: f64) -> Result<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::domain(format!(
                "time {t} outside [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let k = self.breaks.partition_point(|&b| b <= t);
        Ok(k.saturating_sub(1).min(self.values.len() - 1))
    }

    /// Value at `t` (right-continuous; the right end maps to the last interval).
    pub fn at(&self, t: f64) -> Result<&Matrix> {
        Ok(&self.values[self.index(t)?])
    }

    pub fn map<F: FnMut(&Matrix) -> Matrix>(&self, f: F) -> Result<Self> {
        Self::new(self.breaks.clone(), self.values.iter().map(f).collect())
    }

    /// Combines two functions on the union of their breakpoints, restricted
    /// to the common domain.
    pub fn zip_with<F>(&self, other: &Self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Matrix, &Matrix) -> Matrix,
    {
        if self.breaks == other.breaks {
            let values = self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect();
            return Self::new(self.breaks.clone(), values);
        }
        let lo = self.start().max(other.start());
        let hi = self.end().min(other.end());
        if !(lo < hi) {
            return Err(Error::domain("piecewise functions have disjoint domains"));
        }
        let breaks = merge_breaks(&[&self.breaks, &other.breaks], lo, hi);
        let values = breaks
            .windows(2)
            .map(|w| {
                let t = cell_probe(w[0], w[1]);
                Ok(f(self.at(t)?, other.at(t)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(breaks, values)
    }

    /// Re-expresses the function on a finer set of breakpoints.
    pub fn refine(&self, extra: &[f64]) -> Result<Self> {
        let breaks = merge_breaks(&[&self.breaks, extra], self.start(), self.end());
        let values = breaks
            .windows(2)
            .map(|w| self.at(cell_probe(w[0], w[1])).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::new(breaks, values)
    }

    /// Restricts the domain to `[s, t]`.
    pub fn restrict(&self, s: f64, t: f64) -> Result<Self> {
        if !(s < t) || s < self.start() || t > self.end() {
            return Err(Error::domain(format!("cannot restrict to [{s}, {t}]")));
        }
        let breaks = merge_breaks(&[&self.breaks], s, t);
        let values = breaks
            .windows(2)
            .map(|w| self.at(cell_probe(w[0], w[1])).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::new(breaks, values)
    }

    /// `x ↦ F(x + shift)`, defined on `[start − shift, end − shift]`.
    pub fn shift(&self, shift: f64) -> Result<Self> {
        Self::new(
            self.breaks.iter().map(|b| b - shift).collect(),
            self.values.clone(),
        )
    }

    /// The pieces of `[s, t]` as `(length, value)` pairs, in time order.
    pub fn segments(&self, s: f64, t: f64) -> Result<Vec<(f64, &Matrix)>> {
        if s > t {
            return Err(Error::domain(format!("interval [{s}, {t}] is reversed")));
        }
        if s < self.start() || t > self.end() {
            return Err(Error::domain(format!(
                "[{s}, {t}] not inside the domain [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        let mut out = Vec::new();
        if s == t {
            return Ok(out);
        }
        let mut k = self.index(s)?;
        let mut lo = s;
        while lo < t {
            let hi = self.breaks[k + 1].min(t);
            if hi > lo {
                out.push((hi - lo, &self.values[k]));
            }
            lo = hi;
            k += 1;
            if k >= self.values.len() {
                break;
            }
        }
        Ok(out)
    }
}

fn cell_probe(a: f64, b: f64) -> f64 {
    if b.is_finite() {
        0.5 * (a + b)
    } else {
        a
    }
}

/// Grid on `[start, end]` with spacing ≤ `step` that contains every knot in
/// range. `end` may be infinite only if `step` is infinite.
pub fn grid(start: f64, end: f64, step: f64, knots: &[f64]) -> Result<Vec<f64>> {
    if !(start < end) || !(step > 0.0) {
        return Err(Error::domain(format!(
            "bad grid [{start}, {end}] with step {step}"
        )));
    }
    let mut anchors = vec![start];
    anchors.extend(knots.iter().copied().filter(|&k| k > start && k < end));
    anchors.push(end);
    anchors.sort_by(f64::total_cmp);
    anchors.dedup();
    let mut out = vec![start];
    for w in anchors.windows(2) {
        let len = w[1] - w[0];
        if len.is_finite() {
            let n = ((len / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            for i in 1..n {
                out.push(w[0] + len * i as f64 / n as f64);
            }
        }
        out.push(w[1]);
    }
    Ok(out)
}

fn merge_breaks(sets: &[&[f64]], lo: f64, hi: f64) -> Vec<f64> {
    let mut all: Vec<f64> = sets
        .iter()
        .flat_map(|s| s.iter().copied())
        .filter(|&b| b > lo && b < hi)
        .collect();
    all.push(lo);
    all.push(hi);
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for b in all {
        match out.last() {
            Some(&last) if (b - last).abs() <= 1e-12 * (1.0 + last.abs()) => {}
            _ => out.push(b),
        }
    }
    // keep the exact endpoints even if a near-duplicate was merged into them
    out[0] = lo;
    let n = out.len();
    if n >= 2 {
        out[n - 1] = hi;
    }
    out
}

fn check_square(f: &PiecewiseMatrix) -> Result<usize> {
    let (r, c) = f.shape();
    if r != c {
        return Err(Error::structure(format!(
            "product integral needs square generators, got {r}x{c}"
        )));
    }
    Ok(r)
}

/// Product integral `∏_s^t (I + F(u) du)`.
pub fn prod_integral(f: &PiecewiseMatrix, s: f64, t: f64) -> Result<Matrix> {
    let n = check_square(f)?;
    let mut y = Matrix::identity(n, n);
    for (len, m) in f.segments(s, t)? {
        y *= expm(&(m * len))?;
    }
    Ok(y)
}

/// `∏_t^s` for `s ≤ t`, i.e. the inverse of [`prod_integral`]`(f, s, t)`.
pub fn prod_integral_reverse(f: &PiecewiseMatrix, s: f64, t: f64) -> Result<Matrix> {
    let n = check_square(f)?;
    let mut y = Matrix::identity(n, n);
    for (len, m) in f.segments(s, t)?.into_iter().rev() {
        y *= expm(&(m * -len))?;
    }
    Ok(y)
}

/// `∏_s^t (I + F(u) du) · W` without forming the product integral.
pub fn prod_integral_apply(f: &PiecewiseMatrix, s: f64, t: f64, w: &Matrix) -> Result<Matrix> {
    let n = check_square(f)?;
    if w.nrows() != n {
        return Err(Error::structure(format!(
            "cannot apply a {n}x{n} product integral to {} rows",
            w.nrows()
        )));
    }
    let mut out = w.clone();
    for (len, m) in f.segments(s, t)?.into_iter().rev() {
        let a = m * len;
        out = expm_action(|x| &a * x, norm1(&a), &out)?;
    }
    Ok(out)
}

/// Upper block-triangular generator `[[A, B], [0, C]]`.
pub fn block_upper(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
    let (n, m) = (a.nrows(), c.nrows());
    let mut g = Matrix::zeros(n + m, n + m);
    g.view_mut((0, 0), (n, n)).copy_from(a);
    g.view_mut((0, n), (n, m)).copy_from(b);
    g.view_mut((n, n), (m, m)).copy_from(c);
    g
}

/// Blocks of the Van Loan product integral.
#[derive(Debug, Clone)]
pub struct VanLoan {
    /// `∏ (I + A dx)`
    pub upper_left: Matrix,
    /// `∫ ∏_s^x (I + A du) B(x) ∏_x^t (I + C du) dx`
    pub upper_right: Matrix,
    /// `∏ (I + C dx)`
    pub lower_right: Matrix,
}

/// Assembles the block generator `[[A, B], [0, C]]` as a piecewise function.
pub fn van_loan_generator(
    a: &PiecewiseMatrix,
    b: &PiecewiseMatrix,
    c: &PiecewiseMatrix,
) -> Result<PiecewiseMatrix> {
    let (n, n2) = a.shape();
    let (m, m2) = c.shape();
    if n != n2 || m != m2 || b.shape() != (n, m) {
        return Err(Error::structure(format!(
            "Van Loan blocks A {:?}, B {:?}, C {:?} do not fit",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let ab = a.zip_with(b, |x, y| {
        let mut g = Matrix::zeros(n, n + m);
        g.view_mut((0, 0), (n, n)).copy_from(x);
        g.view_mut((0, n), (n, m)).copy_from(y);
        g
    })?;
    ab.zip_with(c, |xy, z| {
        let mut g = Matrix::zeros(n + m, n + m);
        g.view_mut((0, 0), (n, n + m)).copy_from(xy);
        g.view_mut((n, n), (m, m)).copy_from(z);
        g
    })
}

/// Van Loan block integral over `[s, t]`.
pub fn van_loan(
    a: &PiecewiseMatrix,
    b: &PiecewiseMatrix,
    c: &PiecewiseMatrix,
    s: f64,
    t: f64,
) -> Result<VanLoan> {
    let n = a.shape().0;
    let m = c.shape().0;
    let g = van_loan_generator(a, b, c)?;
    let p = prod_integral(&g, s, t)?;
    Ok(VanLoan {
        upper_left: p.view((0, 0), (n, n)).into_owned(),
        upper_right: p.view((0, n), (n, m)).into_owned(),
        lower_right: p.view((n, n), (m, m)).into_owned(),
    })
}
