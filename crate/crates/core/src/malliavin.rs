//! Discretized Sobolev derivatives, divergences and resolvents.
//!
//! See [`crate::conventions`] for the Jacobian normalization.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::conventions::{FD_STEP_SCALE, POWER_ITERATION_MAX, POWER_ITERATION_TOL, QUASI_NILPOTENT_TOL_FD};
use crate::drift::{DriftKind, DriftModel};
use crate::error::{Error, Result};
use crate::wiener::WienerPath;

/// Dense `n × n` Jacobian, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl JacobianMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.entries[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: r.len(),
                });
            }
            entries.extend(r);
        }
        Ok(Self { n, entries })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn hs_norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn is_lower_triangular(&self) -> bool {
        (0..self.n).all(|i| self.row(i)[i + 1..].iter().all(|&x| x == 0.0))
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }
}

/// Operator `(P x)_i = a_i · Σ_{j<i} x_j`: the Jacobian shape of a drift
/// that depends on the running sum of its input. Applies and solves in O(n).
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixOperator {
    coeff: Vec<f64>,
}

impl PrefixOperator {
    pub fn new(coeff: Vec<f64>) -> Self {
        Self { coeff }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeff
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        self.coeff
            .iter()
            .zip(x)
            .map(|(a, xi)| {
                let y = a * acc;
                acc += xi;
                y
            })
            .collect()
    }

    /// Solves `(I - c P) y = b`.
    pub fn solve_shifted(&self, c: f64, b: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        self.coeff
            .iter()
            .zip(b)
            .map(|(a, bi)| {
                let y = bi + c * a * acc;
                acc += y;
                y
            })
            .collect()
    }

    pub fn to_dense(&self) -> JacobianMatrix {
        let n = self.coeff.len();
        JacobianMatrix::from_fn(n, |i, j| if j < i { self.coeff[i] } else { 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

/// Central finite-difference Jacobian of an arbitrary path map `w ↦ v̇(w)`.
pub fn fd_jacobian<F>(w: &WienerPath, field: F) -> Result<JacobianMatrix>
where
    F: Fn(&WienerPath) -> Result<Vec<f64>> + Sync,
{
    let grid = w.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let eps = FD_STEP_SCALE * dt.sqrt();
    let columns: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let bump = |s: f64| {
                let mut inc = w.increments().to_vec();
                inc[j] += s * eps;
                field(&WienerPath::from_increments(grid, inc)?)
            };
            let (plus, minus) = (bump(1.0)?, bump(-1.0)?);
            if plus.len() != n || minus.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: plus.len().min(minus.len()),
                });
            }
            let col: Vec<f64> = plus
                .iter()
                .zip(&minus)
                .map(|(p, q)| (p - q) / (2.0 * eps) * dt)
                .collect();
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "finite-difference jacobian",
                    step: i,
                });
            }
            Ok(col)
        })
        .collect();
    let mut m = JacobianMatrix::zeros(n);
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            m.set(i, j, v);
        }
    }
    Ok(m)
}

/// The observation-form prefix operator `P` with `a_i = g'(U_i)·dt`.
///
/// For markov drifts `I + ∇u_λ = (I - c(λ) P)^{-1}`.
pub fn observation_prefix(model: &DriftModel, obs: &WienerPath) -> PrefixOperator {
    let dt = obs.grid().dt();
    PrefixOperator::new(
        obs.values()[..obs.grid().n_steps()]
            .iter()
            .map(|&x| model.unit_dx(x) * dt)
            .collect(),
    )
}

/// Jacobian of `u̇_λ` with respect to the noise increments.
pub fn gradient_matrix(
    model: &DriftModel,
    lambda: f64,
    w: &WienerPath,
    m: f64,
    mode: GradientMode,
) -> Result<JacobianMatrix> {
    let grid = w.grid();
    let n = grid.n_steps();
    let dt = grid.dt();
    let c = model.c(lambda);
    match mode {
        GradientMode::FiniteDifference => fd_jacobian(w, |p| {
            Ok(model.build_u(lambda, p, m)?.drift.density().to_vec())
        }),
        GradientMode::Analytic => match model.kind {
            DriftKind::Deterministic { .. } | DriftKind::GaussChannel { .. } => {
                Ok(JacobianMatrix::zeros(n))
            }
            DriftKind::PathFunctional { .. } => {
                let vals = w.values();
                Ok(JacobianMatrix::from_fn(n, |i, j| {
                    if j < i {
                        c * model.unit_dx(vals[i]) * dt
                    } else {
                        0.0
                    }
                }))
            }
            DriftKind::Markov { .. } => {
                let obs = model.build_u(lambda, w, m)?.obs;
                let u = obs.values();
                let mut out = JacobianMatrix::zeros(n);
                // J[i][k] = ∂U(t_i)/∂ΔW_k, propagated down each column
                for k in 0..n {
                    let mut jik = 1.0;
                    for i in k + 1..n {
                        let a = c * model.unit_dx(u[i]);
                        out.set(i, k, a * jik * dt);
                        jik *= 1.0 + a * dt;
                    }
                }
                Ok(out)
            }
        },
    }
}

/// Jacobian information carried by a vector field for its divergence.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldJacobian {
    /// Field does not depend on the noise.
    Zero,
    /// Field is adapted: the Jacobian is strictly lower triangular.
    Adapted,
    /// Only the diagonal `M[i][i]` is known.
    Diagonal(Vec<f64>),
    Dense(JacobianMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub density: Vec<f64>,
    pub jacobian: FieldJacobian,
}

impl VectorField {
    pub fn adapted(density: Vec<f64>) -> Self {
        Self {
            density,
            jacobian: FieldJacobian::Adapted,
        }
    }

    pub fn dense(density: Vec<f64>, jacobian: JacobianMatrix) -> Self {
        Self {
            density,
            jacobian: FieldJacobian::Dense(jacobian),
        }
    }
}

/// Discrete Skorohod integral `Σ v̇_i ΔW_i - Σ_i M[i][i]`.
pub fn divergence(field: &VectorField, w: &WienerPath) -> Result<f64> {
    let n = w.grid().n_steps();
    if field.density.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: field.density.len(),
        });
    }
    let trace = match &field.jacobian {
        FieldJacobian::Zero | FieldJacobian::Adapted => 0.0,
        FieldJacobian::Diagonal(d) => {
            if d.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: d.len(),
                });
            }
            d.iter().sum()
        }
        FieldJacobian::Dense(m) => {
            if m.dim() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: m.dim(),
                });
            }
            m.trace()
        }
    };
    let ito: f64 = field
        .density
        .iter()
        .zip(w.increments())
        .map(|(v, dw)| v * dw)
        .sum();
    Ok(ito - trace)
}

/// `max |M[i][j]|` over `j ≥ i`.
pub fn quasi_nilpotency_defect(m: &JacobianMatrix) -> f64 {
    let n = m.dim();
    (0..n)
        .flat_map(|i| m.row(i)[i..].iter().map(|x| x.abs()))
        .fold(0.0, f64::max)
}

/// A representation of `(I + M)^{-1}`.
#[derive(Debug, Clone)]
pub enum Resolvent {
    /// Lower-triangular `I + M`: forward substitution.
    Triangular(JacobianMatrix),
    /// General `I + M`: LU factors.
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Resolvent {
    pub fn new(m: &JacobianMatrix) -> Result<Self> {
        if m.is_lower_triangular() {
            if (0..m.dim()).any(|i| 1.0 + m.get(i, i) == 0.0) {
                return Err(Error::SingularResolvent);
            }
            return Ok(Self::Triangular(m.clone()));
        }
        let a = DMatrix::identity(m.dim(), m.dim()) + m.to_nalgebra();
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularResolvent);
        }
        Ok(Self::Dense(lu))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Triangular(m) => m.dim(),
            Self::Dense(lu) => lu.l().nrows(),
        }
    }

    /// Solves `(I + M) x = v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        match self {
            Self::Triangular(m) => {
                let mut x = Vec::with_capacity(v.len());
                for i in 0..v.len() {
                    let row = m.row(i);
                    let s: f64 = row[..i].iter().zip(&x).map(|(a, b)| a * b).sum();
                    x.push((v[i] - s) / (1.0 + row[i]));
                }
                Ok(x)
            }
            Self::Dense(lu) => lu
                .solve(&nalgebra::DVector::from_column_slice(v))
                .map(|x| x.as_slice().to_vec())
                .ok_or(Error::SingularResolvent),
        }
    }

    /// Solves `(I + M)^T x = v` (triangular case only).
    fn apply_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Triangular(m) => {
                let n = v.len();
                let mut x = vec![0.0; n];
                for i in (0..n).rev() {
                    let s: f64 = (i + 1..n).map(|k| m.get(k, i) * x[k]).sum();
                    x[i] = (v[i] - s) / (1.0 + m.get(i, i));
                }
                Ok(x)
            }
            Self::Dense(_) => Err(Error::NotQuasiNilpotent(f64::NAN)),
        }
    }
}

/// Solves `(I + M) x = v`.
pub fn resolvent_apply(m: &JacobianMatrix, v: &[f64]) -> Result<Vec<f64>> {
    Resolvent::new(m)?.apply(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanReport {
    /// Estimate of `‖(I + M)^{-1}‖_op`.
    pub operator_norm: f64,
    pub hs_norm: f64,
    /// `exp(½(‖M‖²_HS + 1))`
    pub bound: f64,
    pub satisfied: bool,
    pub iterations: usize,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Checks `‖(I + M)^{-1}‖ ≤ exp(½(‖M‖²_HS + 1))` for strictly lower triangular `M`.
pub fn carleman_check(m: &JacobianMatrix) -> Result<CarlemanReport> {
    let defect = quasi_nilpotency_defect(m);
    if defect > QUASI_NILPOTENT_TOL_FD {
        return Err(Error::NotQuasiNilpotent(defect));
    }
    let n = m.dim();
    // drop round-off above the sub-diagonal so the triangular solver applies
    let strict = JacobianMatrix::from_fn(n, |i, j| if j < i { m.get(i, j) } else { 0.0 });
    let hs = strict.hs_norm();
    let bound = (0.5 * (hs * hs + 1.0)).exp();
    let k = Resolvent::new(&strict)?;
    let (op, iterations) = top_singular_value(&k, n)?;
    Ok(CarlemanReport {
        operator_norm: op,
        hs_norm: hs,
        bound,
        satisfied: op <= bound,
        iterations,
    })
}

/// Largest singular value of `K` from Lanczos iterations on `KᵀK`.
///
/// Lanczos is power iteration with a Rayleigh–Ritz step over the whole
/// Krylov space; plain power iteration stalls on the clustered top spectrum
/// of Volterra resolvents. Vectors are fully reorthogonalized.
fn top_singular_value(k: &Resolvent, n: usize) -> Result<(f64, usize)> {
    // low-discrepancy start with weight on every frequency
    let mut q: Vec<f64> = (0..n).map(|i| (i as f64 * 0.618_033_988_749_895).fract() - 0.5).collect();
    let nq = norm(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut prev = 0.0;
    for it in 1..=POWER_ITERATION_MAX.min(n) {
        let mut z = k.apply_transpose(&k.apply(&q)?)?;
        let a: f64 = z.iter().zip(&q).map(|(x, y)| x * y).sum();
        basis.push(q);
        // two Gram–Schmidt passes keep the basis orthogonal once z gets small
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = z.iter().zip(b).map(|(x, y)| x * y).sum();
                z.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        alpha.push(a);
        let top = ritz_max(&alpha, &beta);
        if !top.is_finite() {
            return Err(Error::PowerIterationDiverged(it));
        }
        let b = norm(&z);
        if (top - prev).abs() <= POWER_ITERATION_TOL * top || b <= POWER_ITERATION_TOL * top || it == n {
            return Ok((top.sqrt(), it));
        }
        prev = top;
        beta.push(b);
        q = z.into_iter().map(|v| v / b).collect();
    }
    Err(Error::PowerIterationDiverged(POWER_ITERATION_MAX))
}

fn ritz_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let j = alpha.len();
    let t = DMatrix::from_fn(j, j, |r, c| {
        if r == c {
            alpha[r]
        } else if r == c + 1 {
            beta[c]
        } else if c == r + 1 {
            beta[r]
        } else {
            0.0
        }
    });
    t.symmetric_eigenvalues().max()
}
