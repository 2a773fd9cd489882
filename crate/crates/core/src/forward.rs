//! Forward simulation: Brownian increments, the Euler scheme and Markov state
//! augmentation for path-dependent payoffs.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::mix_seed;

/// One-dimensional Black–Scholes dynamics `dS = S (mu dt + sigma dW)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlackScholes {
    pub mu: f64,
    pub sigma: f64,
    pub s0: f64,
}

impl BlackScholes {
    pub fn new(mu: f64, sigma: f64, s0: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && s0.is_finite()) {
            return Err(Error::NonFinite("Black-Scholes parameters".into()));
        }
        if sigma < 0.0 {
            return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
        }
        if s0 <= 0.0 {
            return Err(Error::Parameter(format!("s0 must be > 0, got {s0}")));
        }
        Ok(Self { mu, sigma, s0 })
    }
}

pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Writes the `d x q` diffusion matrix in row-major order.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A general diffusion `dS = b(t, S) dt + sigma(t, S) dW`.
#[derive(Clone)]
pub struct GeneralModel {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub initial_state: Vec<f64>,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
}

impl fmt::Debug for GeneralModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneralModel")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("initial_state", &self.initial_state)
            .finish_non_exhaustive()
    }
}

/// Forward market model.
#[derive(Debug, Clone)]
pub enum MarketModel {
    BlackScholes(BlackScholes),
    General(GeneralModel),
}

impl MarketModel {
    pub fn state_dim(&self) -> usize {
        match self {
            MarketModel::BlackScholes(_) => 1,
            MarketModel::General(g) => g.state_dim,
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            MarketModel::BlackScholes(_) => 1,
            MarketModel::General(g) => g.noise_dim,
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            MarketModel::BlackScholes(bs) => vec![bs.s0],
            MarketModel::General(g) => g.initial_state.clone(),
        }
    }

    pub fn as_black_scholes(&self) -> Option<&BlackScholes> {
        match self {
            MarketModel::BlackScholes(bs) => Some(bs),
            MarketModel::General(_) => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let MarketModel::General(g) = self {
            if g.state_dim == 0 || g.noise_dim == 0 {
                return Err(Error::Dimension("model dimensions must be >= 1".into()));
            }
            if g.initial_state.len() != g.state_dim {
                return Err(Error::Dimension(format!(
                    "initial state has length {}, expected {}",
                    g.initial_state.len(),
                    g.state_dim
                )));
            }
            if g.initial_state.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("initial state".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Euler,
    /// Euler on the log-price; Black–Scholes models only.
    LogEuler,
}

/// Extra Markov coordinates appended to the simulated state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    #[default]
    Vanilla,
    /// Running average `(1/(k+1)) sum_{i<=k} S_i`.
    AsianRunningAverage,
    /// Trapezoid-corrected average `(1/k) sum_{i<k} S_i (1 + mu h/2 + sigma dW_i/2)`.
    AsianCorrected,
    /// Running minimum and maximum of `S`.
    LookbackMinMax,
}

impl AugmentationKind {
    pub fn augmented_dim(self, state_dim: usize) -> usize {
        match self {
            AugmentationKind::Vanilla => state_dim,
            AugmentationKind::AsianRunningAverage | AugmentationKind::AsianCorrected => {
                state_dim + 1
            }
            AugmentationKind::LookbackMinMax => state_dim + 2,
        }
    }
}

/// M simulated trajectories with their increments and augmented states.
///
/// Arrays are path-major: `increments[(m * N + k) * q + l]`,
/// `states[(m * (N + 1) + k) * d + j]`, and likewise for `augmented` with
/// width `aug_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    n_steps: usize,
    n_paths: usize,
    step_h: f64,
    state_dim: usize,
    noise_dim: usize,
    aug_dim: usize,
    kind: AugmentationKind,
    increments: Vec<f64>,
    states: Vec<f64>,
    augmented: Vec<f64>,
}

impl PathEnsemble {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn step_h(&self) -> f64 {
        self.step_h
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn aug_dim(&self) -> usize {
        self.aug_dim
    }

    pub fn augmentation(&self) -> AugmentationKind {
        self.kind
    }

    /// `Delta W_k` along path `m`.
    pub fn increment(&self, m: usize, k: usize) -> &[f64] {
        let q = self.noise_dim;
        let start = (m * self.n_steps + k) * q;
        &self.increments[start..start + q]
    }

    pub fn state(&self, m: usize, k: usize) -> &[f64] {
        let d = self.state_dim;
        let start = (m * (self.n_steps + 1) + k) * d;
        &self.states[start..start + d]
    }

    /// Augmented Markov state `P_k` along path `m`.
    pub fn augmented(&self, m: usize, k: usize) -> &[f64] {
        let d = self.aug_dim;
        let start = (m * (self.n_steps + 1) + k) * d;
        &self.augmented[start..start + d]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Checks the structural invariant: the first `d` augmented coordinates
    /// equal the simulated state.
    pub fn check_invariants(&self) -> Result<()> {
        for m in 0..self.n_paths {
            for k in 0..=self.n_steps {
                if self.augmented(m, k)[..self.state_dim] != *self.state(m, k) {
                    return Err(Error::Dimension(format!(
                        "augmented state of path {m} at step {k} does not extend the state"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes `m,k,dW_1..dW_q,S_1..S_d,P_1..P_d'` rows, one per `(m, k)`.
    /// At `k = N` the increment columns are empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["m".to_string(), "k".to_string()];
        header.extend((1..=self.noise_dim).map(|l| format!("dW{l}")));
        header.extend((1..=self.state_dim).map(|j| format!("S{j}")));
        header.extend((1..=self.aug_dim).map(|j| format!("P{j}")));
        writeln!(out, "{}", header.join(","))?;
        for m in 0..self.n_paths {
            for k in 0..=self.n_steps {
                let mut row = vec![m.to_string(), k.to_string()];
                if k < self.n_steps {
                    row.extend(self.increment(m, k).iter().map(|v| format!("{v:e}")));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), self.noise_dim));
                }
                row.extend(self.state(m, k).iter().map(|v| format!("{v:e}")));
                row.extend(self.augmented(m, k).iter().map(|v| format!("{v:e}")));
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

/// Independent `N(0, h)` increments, `M x N x q`, path-major.
///
/// Path `m` draws from its own xoshiro256++ stream seeded with
/// `mix_seed(seed, [m])`; normals come from the ziggurat sampler of
/// `rand_distr::StandardNormal`. Output depends only on the arguments, not on
/// the execution policy.
pub fn draw_increments(
    n_steps: usize,
    n_paths: usize,
    noise_dim: usize,
    h: f64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if n_steps == 0 || n_paths == 0 || noise_dim == 0 {
        return Err(Error::Parameter(format!(
            "N, M, q must be >= 1, got ({n_steps}, {n_paths}, {noise_dim})"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("time step must be > 0, got {h}")));
    }
    let sqrt_h = h.sqrt();
    let per_path = n_steps * noise_dim;
    let mut out = vec![0.0; n_paths * per_path];
    exec.for_each_chunk(&mut out, per_path, |m, chunk| {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(mix_seed(seed, &[m as u64]));
        for v in chunk.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = sqrt_h * z;
        }
    });
    Ok(out)
}

/// Simulates `n_paths` trajectories on `[0, maturity]` with `n_steps` steps.
/// The returned ensemble carries the [`AugmentationKind::Vanilla`] state.
pub fn simulate(
    model: &MarketModel,
    scheme: Scheme,
    maturity: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    exec: Execution,
) -> Result<PathEnsemble> {
    model.validate()?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::Parameter(format!(
            "maturity must be > 0, got {maturity}"
        )));
    }
    if scheme == Scheme::LogEuler && model.as_black_scholes().is_none() {
        return Err(Error::UnsupportedScheme(
            "log-Euler requires a Black-Scholes model".into(),
        ));
    }
    let h = maturity / n_steps.max(1) as f64;
    let increments = draw_increments(n_steps, n_paths, model.noise_dim(), h, seed, exec)?;
    simulate_with_increments(model, scheme, maturity, n_steps, increments, exec)
}

/// Runs the scheme of [`simulate`] on caller-supplied Brownian increments,
/// laid out path-major as `M x N x q`.
pub fn simulate_with_increments(
    model: &MarketModel,
    scheme: Scheme,
    maturity: f64,
    n_steps: usize,
    increments: Vec<f64>,
    exec: Execution,
) -> Result<PathEnsemble> {
    model.validate()?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::Parameter(format!(
            "maturity must be > 0, got {maturity}"
        )));
    }
    if scheme == Scheme::LogEuler && model.as_black_scholes().is_none() {
        return Err(Error::UnsupportedScheme(
            "log-Euler requires a Black-Scholes model".into(),
        ));
    }
    let d = model.state_dim();
    let q = model.noise_dim();
    if n_steps == 0 || increments.is_empty() || !increments.len().is_multiple_of(n_steps * q) {
        return Err(Error::Dimension(format!(
            "{} increments do not form whole paths of {n_steps} steps in {q} dimensions",
            increments.len()
        )));
    }
    if let Some(i) = increments.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("increment {i}")));
    }
    let n_paths = increments.len() / (n_steps * q);
    let h = maturity / n_steps as f64;
    let x0 = model.initial_state();
    let per_path = (n_steps + 1) * d;
    let mut states = vec![0.0; n_paths * per_path];

    exec.for_each_chunk(&mut states, per_path, |m, path| {
        path[..d].copy_from_slice(&x0);
        let dw_path = &increments[m * n_steps * q..(m + 1) * n_steps * q];
        match (model, scheme) {
            (MarketModel::BlackScholes(bs), Scheme::Euler) => {
                for k in 0..n_steps {
                    let s = path[k];
                    path[k + 1] = s + bs.mu * s * h + bs.sigma * s * dw_path[k];
                }
            }
            (MarketModel::BlackScholes(bs), Scheme::LogEuler) => {
                let drift = (bs.mu - 0.5 * bs.sigma * bs.sigma) * h;
                for k in 0..n_steps {
                    path[k + 1] = path[k] * (drift + bs.sigma * dw_path[k]).exp();
                }
            }
            (MarketModel::General(g), _) => {
                let mut b = vec![0.0; d];
                let mut sig = vec![0.0; d * q];
                for k in 0..n_steps {
                    let t = k as f64 * h;
                    let (cur, next) = path[k * d..(k + 2) * d].split_at_mut(d);
                    (g.drift)(t, cur, &mut b);
                    (g.diffusion)(t, cur, &mut sig);
                    let dw = &dw_path[k * q..(k + 1) * q];
                    for j in 0..d {
                        let noise: f64 = (0..q).map(|l| sig[j * q + l] * dw[l]).sum();
                        next[j] = cur[j] + b[j] * h + noise;
                    }
                }
            }
        }
    });

    Ok(PathEnsemble {
        n_steps,
        n_paths,
        step_h: h,
        state_dim: d,
        noise_dim: q,
        aug_dim: d,
        kind: AugmentationKind::Vanilla,
        augmented: states.clone(),
        increments,
        states,
    })
}

/// Rebuilds the augmented state of `ensemble` for `kind`.
///
/// `model` supplies `mu` and `sigma` for [`AugmentationKind::AsianCorrected`].
pub fn augment(
    kind: AugmentationKind,
    ensemble: PathEnsemble,
    model: &MarketModel,
) -> Result<PathEnsemble> {
    let d = ensemble.state_dim;
    if kind != AugmentationKind::Vanilla && d != 1 {
        return Err(Error::Dimension(format!(
            "{kind:?} augmentation needs a one-dimensional state, got d = {d}"
        )));
    }
    let n = ensemble.n_steps;
    let h = ensemble.step_h;
    let aug_dim = kind.augmented_dim(d);
    let corrected = match kind {
        AugmentationKind::AsianCorrected => {
            let bs = model.as_black_scholes().ok_or_else(|| {
                Error::UnsupportedScheme(
                    "corrected Asian state requires a Black-Scholes model".into(),
                )
            })?;
            Some((bs.mu, bs.sigma))
        }
        _ => None,
    };

    let mut augmented = vec![0.0; ensemble.n_paths * (n + 1) * aug_dim];
    for m in 0..ensemble.n_paths {
        let base = m * (n + 1) * aug_dim;
        let mut sum = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=n {
            let s = ensemble.state(m, k);
            let row = &mut augmented[base + k * aug_dim..base + (k + 1) * aug_dim];
            row[..d].copy_from_slice(s);
            match kind {
                AugmentationKind::Vanilla => {}
                AugmentationKind::AsianRunningAverage => {
                    sum += s[0];
                    row[1] = sum / (k + 1) as f64;
                }
                AugmentationKind::AsianCorrected => {
                    let (mu, sigma) = corrected.expect("checked above");
                    row[1] = if k == 0 { s[0] } else { sum / k as f64 };
                    if k < n {
                        let dw = ensemble.increment(m, k)[0];
                        sum += s[0] * (1.0 + 0.5 * mu * h + 0.5 * sigma * dw);
                    }
                }
                AugmentationKind::LookbackMinMax => {
                    lo = lo.min(s[0]);
                    hi = hi.max(s[0]);
                    row[1] = lo;
                    row[2] = hi;
                }
            }
        }
    }

    Ok(PathEnsemble {
        aug_dim,
        kind,
        augmented,
        ..ensemble
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(mu: f64, sigma: f64) -> MarketModel {
        MarketModel::BlackScholes(BlackScholes::new(mu, sigma, 100.0).unwrap())
    }

    #[test]
    fn increments_are_deterministic() {
        let a = draw_increments(4, 50, 2, 0.1, 9, Execution::Sequential).unwrap();
        let b = draw_increments(4, 50, 2, 0.1, 9, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let c = draw_increments(4, 50, 2, 0.1, 10, Execution::Sequential).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn increment_moments() {
        let (m, h) = (100_000usize, 0.1);
        let dw = draw_increments(1, m, 1, h, 1234, Execution::Parallel).unwrap();
        let mean = dw.iter().sum::<f64>() / m as f64;
        let var = dw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!(mean.abs() < 4.0 * (h / m as f64).sqrt(), "mean {mean}");
        assert!((var - h).abs() < 0.05 * h, "var {var}");
    }

    #[test]
    fn zero_step_rejected() {
        assert!(matches!(
            draw_increments(1, 1, 1, 0.0, 0, Execution::Sequential),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            draw_increments(1, 1, 1, -0.5, 0, Execution::Sequential),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn flat_model_stays_put() {
        let e = simulate(
            &bs(0.0, 0.0),
            Scheme::Euler,
            1.0,
            5,
            10,
            1,
            Execution::Sequential,
        )
        .unwrap();
        for m in 0..10 {
            for k in 0..=5 {
                assert_eq!(e.state(m, k), &[100.0]);
            }
        }
    }

    #[test]
    fn one_euler_step_by_hand() {
        // A general model with Black–Scholes coefficients and a forced increment.
        let model = MarketModel::General(GeneralModel {
            state_dim: 1,
            noise_dim: 1,
            initial_state: vec![100.0],
            drift: Arc::new(|_, x, out| out[0] = 0.06 * x[0]),
            diffusion: Arc::new(|_, x, out| out[0] = 0.2 * x[0]),
        });
        let e = simulate(&model, Scheme::Euler, 0.1, 1, 1, 0, Execution::Sequential).unwrap();
        let dw = e.increment(0, 0)[0];
        let expected = 100.0 * (1.0 + 0.06 * 0.1 + 0.2 * dw);
        assert!((e.state(0, 1)[0] - expected).abs() < 1e-12);
        assert!((100.0f64 * (1.0 + 0.006 + 0.2 * 0.3) - 106.6).abs() < 1e-12);
    }

    #[test]
    fn euler_mean_matches_recursion() {
        let (mu, sigma, n, m) = (0.06, 0.2, 5usize, 100_000usize);
        let e = simulate(
            &bs(mu, sigma),
            Scheme::Euler,
            0.5,
            n,
            m,
            77,
            Execution::Parallel,
        )
        .unwrap();
        let h = 0.5 / n as f64;
        let finals: Vec<f64> = (0..m).map(|p| e.state(p, n)[0]).collect();
        let mean = finals.iter().sum::<f64>() / m as f64;
        let sd = (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        let expected = 100.0 * (1.0 + mu * h).powi(n as i32);
        assert!((mean - expected).abs() < 4.0 * sd / (m as f64).sqrt());
    }

    #[test]
    fn euler_martingale_at_zero_drift() {
        let (n, m) = (10usize, 50_000usize);
        let e = simulate(
            &bs(0.0, 0.3),
            Scheme::Euler,
            1.0,
            n,
            m,
            5,
            Execution::Parallel,
        )
        .unwrap();
        let finals: Vec<f64> = (0..m).map(|p| e.state(p, n)[0]).collect();
        let mean = finals.iter().sum::<f64>() / m as f64;
        let sd = (finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        assert!((mean - 100.0).abs() < 4.0 * sd / (m as f64).sqrt());
    }

    #[test]
    fn log_euler_positive_and_general_rejected() {
        let e = simulate(
            &bs(0.05, 1.5),
            Scheme::LogEuler,
            2.0,
            20,
            2000,
            3,
            Execution::Sequential,
        )
        .unwrap();
        assert!((0..2000).all(|m| (0..=20).all(|k| e.state(m, k)[0] > 0.0)));
        let general = MarketModel::General(GeneralModel {
            state_dim: 1,
            noise_dim: 1,
            initial_state: vec![1.0],
            drift: Arc::new(|_, _, o| o[0] = 0.0),
            diffusion: Arc::new(|_, _, o| o[0] = 1.0),
        });
        assert!(matches!(
            simulate(
                &general,
                Scheme::LogEuler,
                1.0,
                2,
                2,
                0,
                Execution::Sequential
            ),
            Err(Error::UnsupportedScheme(_))
        ));
    }

    #[test]
    fn asian_running_average_of_constant_path() {
        let model = bs(0.0, 0.0);
        let e = simulate(&model, Scheme::Euler, 1.0, 6, 3, 0, Execution::Sequential).unwrap();
        let e = augment(AugmentationKind::AsianRunningAverage, e, &model).unwrap();
        assert_eq!(e.aug_dim(), 2);
        for k in 0..=6 {
            assert_eq!(e.augmented(1, k), &[100.0, 100.0]);
        }
        e.check_invariants().unwrap();
    }

    #[test]
    fn asian_running_average_formula() {
        let model = bs(0.06, 0.2);
        let e = simulate(&model, Scheme::Euler, 1.0, 8, 4, 1, Execution::Sequential).unwrap();
        let e = augment(AugmentationKind::AsianRunningAverage, e, &model).unwrap();
        for k in 0..=8 {
            let avg = (0..=k).map(|i| e.state(2, i)[0]).sum::<f64>() / (k + 1) as f64;
            assert!((e.augmented(2, k)[1] - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn asian_corrected_reduces_to_average_without_noise() {
        let model = bs(0.0, 0.0);
        let e = simulate(&model, Scheme::Euler, 1.0, 5, 2, 0, Execution::Sequential).unwrap();
        let e = augment(AugmentationKind::AsianCorrected, e, &model).unwrap();
        for k in 0..=5 {
            assert_eq!(e.augmented(0, k)[1], 100.0);
        }
    }

    #[test]
    fn asian_corrected_formula() {
        let (mu, sigma) = (0.06, 0.2);
        let model = bs(mu, sigma);
        let e = simulate(&model, Scheme::Euler, 1.0, 10, 3, 8, Execution::Sequential).unwrap();
        let h = e.step_h();
        let e = augment(AugmentationKind::AsianCorrected, e, &model).unwrap();
        assert_eq!(e.augmented(0, 0)[1], 100.0);
        for k in 1..=10 {
            let avg = (0..k)
                .map(|i| {
                    e.state(1, i)[0] * (1.0 + mu * h / 2.0 + sigma / 2.0 * e.increment(1, i)[0])
                })
                .sum::<f64>()
                / k as f64;
            assert!((e.augmented(1, k)[1] - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn lookback_on_monotone_path() {
        let model = MarketModel::General(GeneralModel {
            state_dim: 1,
            noise_dim: 1,
            initial_state: vec![50.0],
            drift: Arc::new(|_, _, o| o[0] = 10.0),
            diffusion: Arc::new(|_, _, o| o[0] = 0.0),
        });
        let e = simulate(&model, Scheme::Euler, 1.0, 4, 2, 0, Execution::Sequential).unwrap();
        let e = augment(AugmentationKind::LookbackMinMax, e, &model).unwrap();
        assert_eq!(e.aug_dim(), 3);
        for k in 0..=4 {
            let s = e.state(0, k)[0];
            assert_eq!(e.augmented(0, k), &[s, 50.0, s]);
        }
    }

    #[test]
    fn augment_rejects_multidimensional_state() {
        let model = MarketModel::General(GeneralModel {
            state_dim: 2,
            noise_dim: 1,
            initial_state: vec![1.0, 1.0],
            drift: Arc::new(|_, _, o| o.fill(0.0)),
            diffusion: Arc::new(|_, _, o| o.fill(1.0)),
        });
        let e = simulate(&model, Scheme::Euler, 1.0, 2, 2, 0, Execution::Sequential).unwrap();
        assert!(matches!(
            augment(AugmentationKind::AsianRunningAverage, e, &model),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn csv_dump_has_one_row_per_state() {
        let model = bs(0.05, 0.2);
        let e = simulate(&model, Scheme::Euler, 1.0, 3, 2, 0, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        assert!(text.starts_with("m,k,dW1,S1,P1"));
    }
}
