//! Gaussian-process belief over the grid and its measurement updates.
//!
//! The belief is a dense mean vector and covariance matrix over every grid
//! cell. [`gp_condition`] conditions the prior on a set of noisy cell
//! observations in one batch; [`kalman_update`] fuses a measurement batch
//! sequentially and is the path used online. With matching noise the two
//! agree, which the tests use as an oracle.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::groundtruth::write_grid_text;
use crate::{GridSpec, IppError, Result};

const JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    SquaredExponential,
    Matern32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpHyperparams {
    /// Meters.
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub kernel: KernelKind,
    /// Uniform prior mean.
    pub prior_mean: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self {
            length_scale: 3.67,
            signal_variance: 1.82,
            noise_variance: 1.42,
            kernel: KernelKind::SquaredExponential,
            prior_mean: 0.5,
        }
    }
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.length_scale) && pos(self.signal_variance) && pos(self.noise_variance)) {
            return Err(IppError::Config(format!(
                "GP hyperparameters must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Isotropic covariance between two points `dist` meters apart.
    pub fn kernel(&self, dist: f64) -> f64 {
        let r = dist / self.length_scale;
        match self.kernel {
            KernelKind::SquaredExponential => self.signal_variance * (-0.5 * r * r).exp(),
            KernelKind::Matern32 => {
                let s = 3f64.sqrt() * r;
                self.signal_variance * (1.0 + s) * (-s).exp()
            }
        }
    }
}

/// Independent cell measurements: one row of `H` per entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementBatch {
    pub cell_indices: Vec<usize>,
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MeasurementBatch {
    pub fn new(cell_indices: Vec<usize>, values: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let batch = Self { cell_indices, values, variances };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_indices.len() != self.values.len() || self.values.len() != self.variances.len() {
            return Err(IppError::Dimension(format!(
                "measurement batch lengths differ: {} cells, {} values, {} variances",
                self.cell_indices.len(),
                self.values.len(),
                self.variances.len()
            )));
        }
        if let Some(v) = self.variances.iter().find(|v| !(**v > 0.0)) {
            return Err(IppError::Domain(format!("measurement variance {v} must be positive")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cell_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_indices.is_empty()
    }
}

/// GP posterior over all cells: mean `mu` and covariance `cov`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Uniform-mean prior with covariance `K(X, X)` on cell centers.
pub fn init_prior(grid: GridSpec, hp: &GpHyperparams) -> BeliefState {
    let n = grid.len();
    let centers: Vec<[f64; 2]> = (0..n).map(|i| grid.center(i)).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let [xi, yi] = centers[i];
        let [xj, yj] = centers[j];
        hp.kernel(((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt())
    });
    BeliefState { mu: DVector::from_element(n, hp.prior_mean), cov }
}

impl BeliefState {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.cov.diagonal().iter().copied().collect()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Mean clamped to `[0, 1]`, for region-of-interest evaluation and display.
    pub fn clamped_mean(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m.clamp(0.0, 1.0)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    pub fn trace_over(&self, cells: &[usize]) -> Result<f64> {
        trace_over(self, cells)
    }

    pub fn kalman_update(&self, batch: &MeasurementBatch) -> Result<BeliefState> {
        let mut next = self.clone();
        next.kalman_update_in_place(batch)?;
        Ok(next)
    }

    /// Kalman-style fusion of one batch:
    /// `S = H P Hᵀ + R`, `K = P Hᵀ S⁻¹`, `ν += K (z − H ν)`, `P -= K H P`.
    ///
    /// `S = L Lᵀ` is factored once and the gain is never formed: with
    /// `W = L⁻¹ H P` the covariance update is `P -= Wᵀ W`.
    pub fn kalman_update_in_place(&mut self, batch: &MeasurementBatch) -> Result<()> {
        batch.validate()?;
        let n = self.len();
        let m = batch.len();
        if m == 0 {
            return Ok(());
        }
        for &c in &batch.cell_indices {
            if c >= n {
                return Err(IppError::Index { index: c, len: n });
            }
        }
        let cells = &batch.cell_indices;
        let hp = DMatrix::from_fn(m, n, |r, j| self.cov[(cells[r], j)]);
        let mut s = DMatrix::from_fn(m, m, |r, c| hp[(r, cells[c])]);
        for (r, var) in batch.variances.iter().enumerate() {
            s[(r, r)] += var;
        }
        let l = cholesky_with_jitter(s)?;
        let w = l
            .solve_lower_triangular(&hp)
            .ok_or_else(|| IppError::Numerical("triangular solve failed".into()))?;
        let innovation =
            DVector::from_iterator(m, (0..m).map(|r| batch.values[r] - self.mu[cells[r]]));
        let wv = l
            .solve_lower_triangular(&innovation)
            .ok_or_else(|| IppError::Numerical("triangular solve failed".into()))?;
        self.mu.gemv_tr(1.0, &w, &wv, 1.0);
        // P -= Wᵀ W; both matrices are column-major
        let (rs, cs) = w.strides();
        // SAFETY: `w` is m×n and `cov` is n×n, both owned and contiguous with
        // the strides passed; the output does not alias the inputs.
        unsafe {
            matrixmultiply::dgemm(
                n,
                m,
                n,
                -1.0,
                w.as_ptr(),
                cs as isize,
                rs as isize,
                w.as_ptr(),
                rs as isize,
                cs as isize,
                1.0,
                self.cov.as_mut_ptr(),
                1,
                n as isize,
            );
        }
        self.tidy_covariance();
        Ok(())
    }

    fn tidy_covariance(&mut self) {
        let n = self.len();
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = avg;
                self.cov[(j, i)] = avg;
            }
            if self.cov[(j, j)] < 0.0 {
                self.cov[(j, j)] = 0.0;
            }
        }
    }

    /// Mean as the plain-text grid format shared with ground-truth fields.
    pub fn mean_to_text(&self, grid: GridSpec) -> Result<String> {
        if grid.len() != self.len() {
            return Err(IppError::Dimension(format!(
                "belief has {} cells, grid {}",
                self.len(),
                grid.len()
            )));
        }
        Ok(write_grid_text(grid, self.mu.as_slice()))
    }

    /// Binary covariance dump: magic `IPPCOV01`, `n` as u64, then the lower
    /// triangle row by row as little-endian f64.
    pub fn write_covariance<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.len();
        out.write_all(COV_MAGIC)?;
        out.write_all(&(n as u64).to_le_bytes())?;
        for i in 0..n {
            for j in 0..=i {
                out.write_all(&self.cov[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_covariance<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != COV_MAGIC {
            return Err(IppError::Format("not a covariance dump".into()));
        }
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let n = u64::from_le_bytes(buf) as usize;
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                input.read_exact(&mut buf)?;
                let v = f64::from_le_bytes(buf);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(cov)
    }
}

const COV_MAGIC: &[u8; 8] = b"IPPCOV01";

/// Factors a symmetric positive-definite matrix; on failure retries once
/// with `1e-8` added to the diagonal.
fn cholesky_with_jitter(s: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = s.clone().cholesky() {
        return Ok(ch.unpack());
    }
    let m = s.nrows();
    let jittered = s + DMatrix::identity(m, m) * JITTER;
    jittered
        .cholesky()
        .map(|ch| ch.unpack())
        .ok_or_else(|| IppError::Numerical("innovation covariance is not positive definite".into()))
}

pub fn kalman_update(belief: &BeliefState, batch: &MeasurementBatch) -> Result<BeliefState> {
    belief.kalman_update(batch)
}

/// Batch GP posterior given observations `z` at `observed` cells with i.i.d.
/// noise `hp.noise_variance`:
/// `P⁺ = K** − K*x (Kxx + σ²I)⁻¹ K*xᵀ`, mean by the matching conjugate update.
/// The prior's covariance plays the role of the kernel matrix.
///
/// Solved by LU so that it stays an independent route from the Cholesky-based
/// [`kalman_update`].
pub fn gp_condition(
    prior: &BeliefState,
    observed: &[usize],
    z: &[f64],
    hp: &GpHyperparams,
) -> Result<BeliefState> {
    if observed.len() != z.len() {
        return Err(IppError::Dimension(format!(
            "{} observed cells but {} values",
            observed.len(),
            z.len()
        )));
    }
    let n = prior.len();
    if let Some(&bad) = observed.iter().find(|&&c| c >= n) {
        return Err(IppError::Index { index: bad, len: n });
    }
    if observed.is_empty() {
        return Ok(prior.clone());
    }
    let m = observed.len();
    let k_sx = DMatrix::from_fn(n, m, |i, c| prior.cov[(i, observed[c])]);
    let mut k_xx = DMatrix::from_fn(m, m, |r, c| prior.cov[(observed[r], observed[c])]);
    for r in 0..m {
        k_xx[(r, r)] += hp.noise_variance;
    }
    let lu = k_xx.clone().lu();
    let lu = if lu.is_invertible() {
        lu
    } else {
        (k_xx + DMatrix::identity(m, m) * JITTER).lu()
    };
    let solved = lu
        .solve(&k_sx.transpose())
        .ok_or_else(|| IppError::Numerical("observation covariance is singular".into()))?;
    let resid = DVector::from_iterator(m, (0..m).map(|r| z[r] - prior.mu[observed[r]]));
    let alpha = lu
        .solve(&resid)
        .ok_or_else(|| IppError::Numerical("observation covariance is singular".into()))?;
    Ok(BeliefState { mu: &prior.mu + &k_sx * alpha, cov: &prior.cov - &k_sx * solved })
}

/// Sum of the covariance diagonal over `cells`.
pub fn trace_over(belief: &BeliefState, cells: &[usize]) -> Result<f64> {
    let n = belief.len();
    cells.iter().try_fold(0.0, |acc, &c| {
        if c >= n {
            Err(IppError::Index { index: c, len: n })
        } else {
            Ok(acc + belief.cov[(c, c)])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_belief(mean: f64, var: f64) -> BeliefState {
        BeliefState { mu: DVector::from_element(1, mean), cov: DMatrix::from_element(1, 1, var) }
    }

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, m: usize, var: f64) -> MeasurementBatch {
        MeasurementBatch::new(
            (0..m).map(|_| rng.random_range(0..n)).collect(),
            (0..m).map(|_| rng.random()).collect(),
            vec![var; m],
        )
        .unwrap()
    }

    #[test]
    fn prior_examples() {
        let hp = GpHyperparams::default();
        let b = init_prior(GridSpec::new(1, 1, 2.5).unwrap(), &hp);
        assert_eq!(b.cov[(0, 0)], 1.82);
        let b = init_prior(GridSpec::new(2, 2, 2.5).unwrap(), &hp);
        assert!(b.mu.iter().all(|&m| m == 0.5));
        // independent scalar kernel evaluation for horizontally adjacent cells
        let expected = 1.82 * (-(2.5f64 * 2.5) / (2.0 * 3.67 * 3.67)).exp();
        assert!((b.cov[(0, 1)] - expected).abs() < 1e-15);
        let diag = 1.82 * (-(2.0 * 2.5f64 * 2.5) / (2.0 * 3.67 * 3.67)).exp();
        assert!((b.cov[(0, 3)] - diag).abs() < 1e-15);
    }

    #[test]
    fn gp_condition_examples() {
        let grid = GridSpec::new(3, 3, 2.5).unwrap();
        let hp = GpHyperparams { noise_variance: 1e-12, ..Default::default() };
        let prior = init_prior(grid, &hp);
        let post = gp_condition(&prior, &[4], &[1.0], &hp).unwrap();
        assert!(post.cov[(4, 4)] <= 1e-9, "{}", post.cov[(4, 4)]);

        let unchanged = gp_condition(&prior, &[], &[], &hp).unwrap();
        assert_eq!(unchanged, prior);

        let hp = GpHyperparams::default();
        let post = gp_condition(&prior, &[0, 8], &[1.0, 0.0], &hp).unwrap();
        assert!(post.trace() < prior.trace());
        assert!(gp_condition(&prior, &[0, 8], &[1.0], &hp).is_err());
    }

    #[test]
    fn scalar_kalman_by_hand() {
        let b = scalar_belief(0.0, 1.0);
        let batch = MeasurementBatch::new(vec![0], vec![1.0], vec![1.0]).unwrap();
        let post = b.kalman_update(&batch).unwrap();
        // gain = 1 / (1 + 1)
        assert!((post.mu[0] - 0.5).abs() < 1e-12);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uninformative_measurement_leaves_belief() {
        let prior = init_prior(GridSpec::new(3, 3, 2.5).unwrap(), &GpHyperparams::default());
        let batch = MeasurementBatch::new(vec![2, 5], vec![1.0, 0.0], vec![1e12, 1e12]).unwrap();
        let post = prior.kalman_update(&batch).unwrap();
        assert!(max_abs_diff(&post.cov, &prior.cov) < 1e-6);
        assert!((&post.mu - &prior.mu).abs().max() < 1e-6);
    }

    #[test]
    fn kalman_matches_gp_condition() {
        let hp = GpHyperparams::default();
        let prior = init_prior(GridSpec::new(4, 4, 2.5).unwrap(), &hp);
        let batch = MeasurementBatch::new(
            vec![1, 6, 13],
            vec![0.9, 0.1, 0.4],
            vec![hp.noise_variance; 3],
        )
        .unwrap();
        let a = prior.kalman_update(&batch).unwrap();
        let b = gp_condition(&prior, &batch.cell_indices, &batch.values, &hp).unwrap();
        assert!(max_abs_diff(&a.cov, &b.cov) < 1e-6);
        assert!((&a.mu - &b.mu).abs().max() < 1e-6);
    }

    #[test]
    fn kalman_rejects_bad_batches() {
        let prior = init_prior(GridSpec::new(2, 2, 1.0).unwrap(), &GpHyperparams::default());
        let out_of_range = MeasurementBatch { cell_indices: vec![4], values: vec![0.0], variances: vec![1.0] };
        assert!(matches!(prior.kalman_update(&out_of_range), Err(IppError::Index { .. })));
        assert!(MeasurementBatch::new(vec![0], vec![0.0], vec![0.0]).is_err());
        assert!(MeasurementBatch::new(vec![0, 1], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn trace_over_examples() {
        let prior = init_prior(GridSpec::new(3, 2, 2.5).unwrap(), &GpHyperparams::default());
        assert_eq!(prior.trace_over(&[]).unwrap(), 0.0);
        let all: Vec<usize> = (0..6).collect();
        assert!((prior.trace_over(&all).unwrap() - 1.82 * 6.0).abs() < 1e-12);
        assert!(matches!(prior.trace_over(&[6]), Err(IppError::Index { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let post = prior.kalman_update(&random_batch(&mut rng, 6, 3, 0.1)).unwrap();
        let subset = [0usize, 2, 5];
        let mut sum = 0.0;
        for &i in &subset {
            sum += post.cov[(i, i)];
        }
        assert!((post.trace_over(&subset).unwrap() - sum).abs() < 1e-15);
    }

    #[test]
    fn stays_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = init_prior(GridSpec::new(4, 3, 2.5).unwrap(), &GpHyperparams::default());
        for _ in 0..20 {
            b.kalman_update_in_place(&random_batch(&mut rng, 12, 4, 0.05)).unwrap();
            assert!(max_abs_diff(&b.cov, &b.cov.transpose()) <= 1e-8);
            assert!(b.cov.diagonal().iter().all(|&v| v >= 0.0));
            let min_eig = b.cov.clone().symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn covariance_dump_round_trips() {
        let b = init_prior(GridSpec::new(3, 2, 2.5).unwrap(), &GpHyperparams::default());
        let mut buf = Vec::new();
        b.write_covariance(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 21 * 8);
        assert_eq!(BeliefState::read_covariance(buf.as_slice()).unwrap(), b.cov);
        let text = b.mean_to_text(GridSpec::new(3, 2, 2.5).unwrap()).unwrap();
        assert_eq!(text, "3 2 2.5\n0.5 0.5 0.5\n0.5 0.5 0.5\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn sequential_equals_batch(seed in any::<u64>(), m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prior = init_prior(GridSpec::new(3, 3, 2.5).unwrap(), &GpHyperparams::default());
            let batch = random_batch(&mut rng, 9, m, 0.2);
            let once = prior.kalman_update(&batch).unwrap();
            let mut seq = prior.clone();
            for r in 0..m {
                let single = MeasurementBatch::new(
                    vec![batch.cell_indices[r]], vec![batch.values[r]], vec![batch.variances[r]],
                ).unwrap();
                seq.kalman_update_in_place(&single).unwrap();
            }
            prop_assert!(max_abs_diff(&once.cov, &seq.cov) < 1e-6);
            prop_assert!((&once.mu - &seq.mu).abs().max() < 1e-6);
        }

        #[test]
        fn order_invariant(seed in any::<u64>(), m in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prior = init_prior(GridSpec::new(3, 3, 2.5).unwrap(), &GpHyperparams::default());
            let batch = random_batch(&mut rng, 9, m, 0.3);
            let mut rev = batch.clone();
            rev.cell_indices.reverse();
            rev.values.reverse();
            rev.variances.reverse();
            let a = prior.kalman_update(&batch).unwrap();
            let b = prior.kalman_update(&rev).unwrap();
            prop_assert!(max_abs_diff(&a.cov, &b.cov) <= 1e-8);
            prop_assert!((&a.mu - &b.mu).abs().max() <= 1e-8);
        }

        #[test]
        fn uncertainty_never_grows(seed in any::<u64>(), m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let prior = init_prior(GridSpec::new(4, 3, 2.5).unwrap(), &GpHyperparams::default());
            let var = rng.random_range(0.01..2.0);
            let batch = random_batch(&mut rng, 12, m, var);
            let post = prior.kalman_update(&batch).unwrap();
            prop_assert!(post.trace() <= prior.trace() + 1e-9);
            let cells = &batch.cell_indices;
            prop_assert!(post.trace_over(cells).unwrap() <= prior.trace_over(cells).unwrap() + 1e-9);
        }
    }
}
