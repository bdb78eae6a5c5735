//! Time grids, Brownian paths and Cameron–Martin arithmetic on `[0, 1]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition `t_i = i / n` of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::EmptyGrid);
        }
        Ok(Self { n_steps })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }

    /// Node `t_i`; `node(n_steps)` is exactly 1.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            1.0
        } else {
            i as f64 / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }

    /// Grid `factor` times coarser; `n_steps` must be divisible by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps
            )));
        }
        Self::new(self.n_steps / factor)
    }
}

/// A reproducible random stream: `(seed, stream_id)` fixes every draw.
///
/// Backed by ChaCha8 with its 64-bit stream selector, so distinct stream ids
/// give non-overlapping keystreams and path-level parallelism stays
/// reproducible regardless of scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Brownian path stored as increments, with cached partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    grid: TimeGrid,
    increments: Vec<f64>,
    values: Vec<f64>,
}

impl WienerPath {
    pub fn from_increments(grid: TimeGrid, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::LengthMismatch {
                expected: grid.n_steps(),
                found: increments.len(),
            });
        }
        let values = cumulative(&increments);
        Ok(Self {
            grid,
            increments,
            values,
        })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            grid,
            increments: vec![0.0; grid.n_steps()],
            values: vec![0.0; grid.n_steps() + 1],
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_0), …, W(t_n)`; `values()[0] == 0`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.grid.n_steps()]
    }

    /// Reflected path `-W`, which has the same law.
    pub fn reflected(&self) -> Self {
        Self::from_increments(self.grid, self.increments.iter().map(|x| -x).collect())
            .expect("same grid")
    }

    /// Restriction to a grid `factor` times coarser (sums of consecutive increments).
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let coarse = self.grid.coarsen(factor)?;
        let increments = (0..coarse.n_steps())
            .map(|j| {
                (0..factor)
                    .map(|k| self.increments[j * factor + k])
                    .sum::<f64>()
            })
            .collect();
        Self::from_increments(coarse, increments)
    }

    fn check_grid(&self, other: TimeGrid) -> Result<()> {
        if self.grid != other {
            return Err(Error::LengthMismatch {
                expected: self.grid.n_steps(),
                found: other.n_steps(),
            });
        }
        Ok(())
    }
}

/// Prefix sums with a leading zero, accumulated left to right.
pub(crate) fn cumulative(increments: &[f64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    values.push(acc);
    for dx in increments {
        acc += dx;
        values.push(acc);
    }
    values
}

/// Element of the Cameron–Martin space given by its density on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CameronMartinPath {
    grid: TimeGrid,
    density: Vec<f64>,
    primitive: Vec<f64>,
}

impl CameronMartinPath {
    pub fn from_density(grid: TimeGrid, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.n_steps() {
            return Err(Error::LengthMismatch {
                expected: grid.n_steps(),
                found: density.len(),
            });
        }
        let dt = grid.dt();
        let steps: Vec<f64> = density.iter().map(|d| d * dt).collect();
        let primitive = cumulative(&steps);
        Ok(Self {
            grid,
            density,
            primitive,
        })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            grid,
            density: vec![0.0; grid.n_steps()],
            primitive: vec![0.0; grid.n_steps() + 1],
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// `u̇(t_0), …, u̇(t_{n-1})`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// `u(t_0) = 0, …, u(t_n)`.
    pub fn primitive(&self) -> &[f64] {
        &self.primitive
    }
}

/// Draws independent `N(0, dt)` increments from `rng`.
pub fn sample_wiener(grid: TimeGrid, rng: &RngStream) -> WienerPath {
    let mut rng = rng.rng();
    sample_wiener_with(grid, &mut rng)
}

pub(crate) fn sample_wiener_with<R: rand::Rng + ?Sized>(grid: TimeGrid, rng: &mut R) -> WienerPath {
    let sd = grid.dt().sqrt();
    let increments = (0..grid.n_steps())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect();
    WienerPath::from_increments(grid, increments).expect("length matches grid")
}

/// Left-point (Itô) sum `Σ_i integrand[i] · ΔW_i`.
///
/// The caller guarantees `integrand[i]` is a function of `ΔW_0..ΔW_{i-1}`.
pub fn ito_integral(integrand: &[f64], path: &WienerPath) -> Result<f64> {
    if integrand.len() != path.increments.len() {
        return Err(Error::LengthMismatch {
            expected: path.increments.len(),
            found: integrand.len(),
        });
    }
    Ok(integrand
        .iter()
        .zip(&path.increments)
        .map(|(a, dw)| a * dw)
        .sum())
}

/// `|u|²_H = Σ u̇(t_i)² dt`.
pub fn cm_norm_sq(u: &CameronMartinPath) -> f64 {
    u.density.iter().map(|d| d * d).sum::<f64>() * u.grid.dt()
}

/// The shifted path `W + u`, with increments `ΔW_i + u̇(t_i) dt`.
pub fn apply_shift(path: &WienerPath, u: &CameronMartinPath) -> Result<WienerPath> {
    path.check_grid(u.grid)?;
    let dt = path.grid.dt();
    let increments = path
        .increments
        .iter()
        .zip(&u.density)
        .map(|(dw, d)| dw + d * dt)
        .collect();
    WienerPath::from_increments(path.grid, increments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n).unwrap()
    }

    #[test]
    fn grid_nodes_are_uniform_and_end_at_one() {
        let g = grid(7);
        let nodes = g.nodes();
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[7], 1.0);
        for w in nodes.windows(2) {
            assert!(w[1] > w[0]);
            assert!((w[1] - w[0] - g.dt()).abs() < 1e-15);
        }
        assert_eq!(TimeGrid::new(0), Err(Error::EmptyGrid));
    }

    #[test]
    fn single_step_path_starts_at_zero() {
        let w = sample_wiener(grid(1), &RngStream::new(3, 0));
        assert_eq!(w.values()[0], 0.0);
        assert_eq!(w.values()[1], w.increments()[0]);
    }

    #[test]
    fn same_stream_reproduces_bit_identical_paths() {
        let s = RngStream::new(11, 5);
        let a = sample_wiener(grid(64), &s);
        let b = sample_wiener(grid(64), &s);
        assert_eq!(a, b);
        let c = sample_wiener(grid(64), &RngStream::new(11, 6));
        assert_ne!(a, c);
    }

    #[test]
    fn terminal_value_has_unit_variance() {
        // law of large numbers over 10^5 paths
        let g = grid(1024);
        let n = 100_000;
        let terminals: Vec<f64> = (0..n)
            .map(|k| sample_wiener(g, &RngStream::new(99, k as u64)).terminal())
            .collect();
        let mean = terminals.iter().sum::<f64>() / n as f64;
        let var = terminals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn ito_integral_edge_cases() {
        let g = grid(32);
        let w = sample_wiener(g, &RngStream::new(1, 1));
        assert_eq!(ito_integral(&vec![0.0; 32], &w).unwrap(), 0.0);
        let one = ito_integral(&vec![1.0; 32], &w).unwrap();
        assert!((one - w.terminal()).abs() < 1e-14);
        assert!(matches!(
            ito_integral(&[1.0; 3], &w),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ito_integral_of_brownian_motion_matches_ito_formula() {
        let g = grid(256);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut resid = 0.0;
        let mut resid_sq = 0.0;
        for k in 0..n {
            let w = sample_wiener(g, &RngStream::new(7, k as u64));
            let integral = ito_integral(&w.values()[..256], &w).unwrap();
            let r = integral - 0.5 * (w.terminal().powi(2) - 1.0);
            sum += integral;
            sum_sq += integral * integral;
            resid += r;
            resid_sq += r * r;
        }
        let nf = n as f64;
        let se = ((sum_sq / nf - (sum / nf).powi(2)) / nf).sqrt();
        assert!((sum / nf).abs() < 3.0 * se);
        let se_r = ((resid_sq / nf - (resid / nf).powi(2)) / nf).sqrt();
        assert!((resid / nf).abs() < 3.0 * se_r, "{} vs {}", resid / nf, se_r);
    }

    #[test]
    fn cm_norm_examples() {
        let g = grid(1024);
        assert_eq!(cm_norm_sq(&CameronMartinPath::zero(g)), 0.0);
        let one = CameronMartinPath::from_density(g, vec![1.0; 1024]).unwrap();
        assert!((cm_norm_sq(&one) - 1.0).abs() < 1e-12);
        let ramp = CameronMartinPath::from_density(g, g.nodes()[..1024].to_vec()).unwrap();
        assert!((cm_norm_sq(&ramp) - 1.0 / 3.0).abs() < 1e-2);
        assert_eq!(one.primitive()[0], 0.0);
        assert!((one.primitive()[1024] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_examples() {
        let g = grid(128);
        let w = sample_wiener(g, &RngStream::new(2, 0));
        assert_eq!(apply_shift(&w, &CameronMartinPath::zero(g)).unwrap(), w);

        let c = 0.8;
        let u = CameronMartinPath::from_density(g, vec![c; 128]).unwrap();
        let shifted = apply_shift(&w, &u).unwrap();
        assert!((shifted.terminal() - (w.terminal() + c)).abs() < 1e-12);

        // subtracting the same deterministic drift restores the path exactly
        let back: Vec<f64> = shifted
            .increments()
            .iter()
            .zip(u.density())
            .map(|(x, d)| x - d * g.dt())
            .collect();
        for (a, b) in back.iter().zip(w.increments()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }

        let other = CameronMartinPath::zero(grid(64));
        assert!(apply_shift(&w, &other).is_err());
    }

    #[test]
    fn shift_by_deterministic_h_moves_the_mean() {
        let g = grid(64);
        let n = 20_000usize;
        let h = CameronMartinPath::from_density(g, vec![0.5; 64]).unwrap();
        let xs: Vec<f64> = (0..n)
            .map(|k| {
                let w = sample_wiener(g, &RngStream::new(5, k as u64));
                apply_shift(&w, &h).unwrap().terminal()
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 3.0 * (var / n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn coarsening_sums_increments() {
        let g = grid(16);
        let w = sample_wiener(g, &RngStream::new(8, 1));
        let c = w.coarsen(4).unwrap();
        assert_eq!(c.grid().n_steps(), 4);
        assert!((c.terminal() - w.terminal()).abs() < 1e-14);
        assert!((c.values()[2] - w.values()[8]).abs() < 1e-14);
        assert!(w.coarsen(3).is_err());
    }

    proptest::proptest! {
        #[test]
        fn increments_sum_to_values(incs in proptest::collection::vec(-3.0f64..3.0, 1..200)) {
            let g = TimeGrid::new(incs.len()).unwrap();
            let w = WienerPath::from_increments(g, incs.clone()).unwrap();
            let mut acc = 0.0;
            for (i, dx) in incs.iter().enumerate() {
                proptest::prop_assert_eq!(w.values()[i], acc);
                acc += dx;
            }
            proptest::prop_assert_eq!(w.terminal(), acc);
        }
    }
}
