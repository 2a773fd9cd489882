//! Backward regression scheme with Picard iterations and smooth truncation.
//!
//! For `k = N-1` down to `0` the solver regresses the target
//! `Y_{k+1} + h f(t_k, S_k, Y_k, Z_k)` on the regression vector
//! `v_k = (p_0, p_1 dW_1 / sqrt(h), ..., p_q dW_q / sqrt(h))`, iterating the
//! implicit driver term `I` times from zero coefficients. Coefficients live in
//! the scaled coordinates `theta = (alpha_0, sqrt(h) alpha_1, ..., sqrt(h) alpha_q)`
//! during the solve so the design is exactly the stacked `v_k`; the returned
//! [`CoefficientSet`] holds the unscaled `alpha`.
//!
//! Values crossing a time boundary (the target for step `k - 1`) and final
//! evaluations go through the clamp `rho xi(x / rho)`; the driver inside the
//! Picard loop sees raw `alpha . p` values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bases::BasisFamily;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::finance::{Driver, Payoff};
use crate::forward::{PathEnsemble, Scheme};
use crate::numkit::{BlockDiagonalSolver, DesignMatrix, MinNormSolver, DEFAULT_RANK_TOL};

/// Half-width of the region where [`xi`] is the identity.
const XI_KNEE: f64 = 1.5;

/// Smooth odd clamp: the identity on `[-1.5, 1.5]`, then
/// `sign(x) (1.5 + 0.5 tanh(2 (|x| - 1.5)))`.
///
/// Value, first and second derivative match at the junction, `|xi| < 2` and
/// `0 <= xi' <= 1`.
#[inline]
pub fn xi(x: f64) -> f64 {
    let a = x.abs();
    if a <= XI_KNEE {
        x
    } else {
        (XI_KNEE + 0.5 * (2.0 * (a - XI_KNEE)).tanh()).copysign(x)
    }
}

/// `rho xi(x / rho)`; an infinite radius disables the clamp.
#[inline]
fn clamp(x: f64, rho: f64) -> f64 {
    // Exact identity on the inner region, free of the rounding in `x / rho`.
    if rho.is_infinite() || x.abs() <= 1.5 * rho {
        x
    } else {
        rho * xi(x / rho)
    }
}

/// `rho xi(x / rho)` for a radius `rho >= 1`.
pub fn smooth_truncate(x: f64, rho: f64) -> Result<f64> {
    if rho.is_nan() || rho < 1.0 {
        return Err(Error::Parameter(format!(
            "truncation radius must be >= 1, got {rho}"
        )));
    }
    Ok(clamp(x, rho))
}

/// How the truncation constant `C_0` is chosen for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TruncationPolicy {
    /// `C_0 = factor * max(1, max_m |Phi(P_N^m)|)` from the run's own terminal values.
    PayoffScaled { factor: f64 },
    /// A fixed `C_0`.
    Fixed { c0: f64 },
    /// No truncation at all (`rho = +inf`); for ablations.
    Disabled,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy::PayoffScaled { factor: 10.0 }
    }
}

impl TruncationPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TruncationPolicy::PayoffScaled { factor: v } | TruncationPolicy::Fixed { c0: v } => {
                if v > 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "truncation constant must be > 0, got {v}"
                    )))
                }
            }
            TruncationPolicy::Disabled => Ok(()),
        }
    }

    /// Resolves the policy against the terminal values of a run.
    pub fn resolve(&self, terminal: &[f64]) -> Result<TruncationProfile> {
        self.validate()?;
        match *self {
            TruncationPolicy::PayoffScaled { factor } => {
                let peak = terminal.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
                TruncationProfile::new(factor * peak)
            }
            TruncationPolicy::Fixed { c0 } => TruncationProfile::new(c0),
            TruncationPolicy::Disabled => Ok(TruncationProfile::disabled()),
        }
    }
}

/// Radii `rho_{l,k}(x) = max(1, C_0 |p_{l,k}(x)|)` paired with the clamp [`xi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationProfile {
    /// `None` disables truncation.
    c0: Option<f64>,
}

impl TruncationProfile {
    pub fn new(c0: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::Parameter(format!("C_0 must be > 0, got {c0}")));
        }
        Ok(Self { c0: Some(c0) })
    }

    pub fn disabled() -> Self {
        Self { c0: None }
    }

    pub fn c0(&self) -> Option<f64> {
        self.c0
    }

    /// Radius for a feature vector of Euclidean norm `feature_norm`.
    #[inline]
    pub fn radius_for_norm(&self, feature_norm: f64) -> f64 {
        match self.c0 {
            Some(c0) => (c0 * feature_norm).max(1.0),
            None => f64::INFINITY,
        }
    }

    /// Clamps `value` with the radius belonging to `feature_norm`.
    #[inline]
    pub fn apply(&self, value: f64, feature_norm: f64) -> f64 {
        clamp(value, self.radius_for_norm(feature_norm))
    }
}

/// `rho_{l,k}(x)`; infinite when truncation is disabled.
pub fn truncation_radius(
    profile: &TruncationProfile,
    l: usize,
    k: usize,
    x: &[f64],
    basis: &BasisFamily,
) -> f64 {
    profile.radius_for_norm(basis.norm(l, k, x))
}

/// Regression vector `v_k` of path `m`:
/// `(p_0(P_k), p_1(P_k) dW_1 / sqrt(h), ..., p_q(P_k) dW_q / sqrt(h))`.
pub fn regression_row(
    k: usize,
    m: usize,
    ensemble: &PathEnsemble,
    basis: &BasisFamily,
    h: f64,
) -> Result<Vec<f64>> {
    check_compatible(ensemble, basis)?;
    if k >= ensemble.n_steps() {
        return Err(Error::IndexOutOfRange {
            what: "k",
            index: k,
            limit: ensemble.n_steps() - 1,
        });
    }
    if m >= ensemble.n_paths() {
        return Err(Error::IndexOutOfRange {
            what: "m",
            index: m,
            limit: ensemble.n_paths() - 1,
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("time step must be > 0, got {h}")));
    }
    let x = ensemble.augmented(m, k);
    let dw = ensemble.increment(m, k);
    let mut row = basis.evaluate(0, k, x)?;
    for (l, &dw_l) in dw.iter().enumerate() {
        let scale = dw_l / h.sqrt();
        row.extend(basis.evaluate(l + 1, k, x)?.into_iter().map(|v| v * scale));
    }
    Ok(row)
}

/// Coefficients `alpha_{l,k}` for every step `k` and component `l = 0..=q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    steps: Vec<Vec<Vec<f64>>>,
}

impl CoefficientSet {
    /// Wraps per-step coefficient blocks `steps[k][l]`; every entry must be finite.
    pub fn new(steps: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        for (k, step) in steps.iter().enumerate() {
            if step.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite coefficient at step {k}"
                )));
            }
        }
        Ok(Self { steps })
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// `alpha_{l,k}`.
    pub fn alpha(&self, l: usize, k: usize) -> &[f64] {
        &self.steps[k][l]
    }

    pub fn step(&self, k: usize) -> &[Vec<f64>] {
        &self.steps[k]
    }
}

/// How each regression is assembled and factorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionLayout {
    /// Per-cell blocks for partition bases, the dense design otherwise.
    #[default]
    Auto,
    /// Always factorize the full dense design.
    Dense,
}

/// Run-level solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub n_steps: usize,
    pub n_paths: usize,
    pub picard_iters: usize,
    pub rank_tol: f64,
    /// Seed of the regression paths.
    pub seed: u64,
    pub scheme: Scheme,
    pub truncation: TruncationPolicy,
    pub layout: RegressionLayout,
    pub execution: Execution,
}

impl SolverConfig {
    /// Defaults: three Picard iterations, payoff-scaled truncation, Euler scheme.
    pub fn new(n_steps: usize, n_paths: usize) -> Self {
        Self {
            n_steps,
            n_paths,
            picard_iters: 3,
            rank_tol: DEFAULT_RANK_TOL,
            seed: 0,
            scheme: Scheme::Euler,
            truncation: TruncationPolicy::default(),
            layout: RegressionLayout::Auto,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.n_paths == 0 || self.picard_iters == 0 {
            return Err(Error::Parameter(format!(
                "N, M and I must be >= 1, got ({}, {}, {})",
                self.n_steps, self.n_paths, self.picard_iters
            )));
        }
        self.truncation.validate()
    }

    fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            picard_iters: self.picard_iters,
            rank_tol: self.rank_tol,
            layout: self.layout,
            execution: self.execution,
        }
    }
}

/// Settings of a single [`picard_sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub picard_iters: usize,
    pub rank_tol: f64,
    pub layout: RegressionLayout,
    pub execution: Execution,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            picard_iters: 3,
            rank_tol: DEFAULT_RANK_TOL,
            layout: RegressionLayout::Auto,
            execution: Execution::default(),
        }
    }
}

/// Output of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `alpha_{l,k}` for `l = 0..=q`.
    pub alpha: Vec<Vec<f64>>,
    /// `|theta^i - theta^{i-1}|` for `i = 1..=I`, with `theta^0 = 0`.
    pub iterate_gaps: Vec<f64>,
    pub numerical_rank: usize,
}

/// Everything [`backward_solve`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSolution {
    pub coefficients: CoefficientSet,
    pub y0: f64,
    pub z0: Vec<f64>,
    pub profile: TruncationProfile,
    /// `iterate_gaps[k]` as in [`StepOutcome::iterate_gaps`].
    pub iterate_gaps: Vec<Vec<f64>>,
    pub numerical_ranks: Vec<usize>,
}

fn check_compatible(ensemble: &PathEnsemble, basis: &BasisFamily) -> Result<()> {
    if basis.state_dim() != ensemble.aug_dim() {
        return Err(Error::Dimension(format!(
            "basis expects states of dimension {}, ensemble carries {}",
            basis.state_dim(),
            ensemble.aug_dim()
        )));
    }
    if basis.noise_dim() != ensemble.noise_dim() {
        return Err(Error::Dimension(format!(
            "basis has {} Brownian components, ensemble has {}",
            basis.noise_dim(),
            ensemble.noise_dim()
        )));
    }
    if let Some(n) = basis.n_steps() {
        if n < ensemble.n_steps() {
            return Err(Error::Dimension(format!(
                "basis covers {n} time steps, ensemble has {}",
                ensemble.n_steps()
            )));
        }
    }
    Ok(())
}

/// Per-path features of one time step in cell-local form.
///
/// For path `m` lying in cell `c`, the global feature vector `p_{l,k}` is zero
/// except for entries `c * w_l .. (c + 1) * w_l`, which hold
/// `local[m * width + offset_l ..][..w_l]`. Global polynomial bases are the
/// one-cell case.
struct StepFeatures {
    cells: Vec<Option<usize>>,
    n_cells: usize,
    /// `w_l` for `l = 0..=q`.
    widths: Vec<usize>,
    /// Start of block `l` inside a local row.
    local_offsets: Vec<usize>,
    /// Start of segment `l` inside the global coefficient vector.
    global_offsets: Vec<usize>,
    width: usize,
    n_coeffs: usize,
    local: Vec<f64>,
    /// Euclidean norm of the `l = 0` block of every path.
    norms0: Vec<f64>,
}

impl StepFeatures {
    fn build(k: usize, ensemble: &PathEnsemble, basis: &BasisFamily, exec: Execution) -> Self {
        let q = ensemble.noise_dim();
        let m_paths = ensemble.n_paths();
        let n_cells = basis.n_cells(k);
        let widths: Vec<usize> = (0..=q).map(|l| basis.local_dim(l)).collect();
        let mut local_offsets = Vec::with_capacity(q + 1);
        let mut global_offsets = Vec::with_capacity(q + 1);
        let (mut lo, mut go) = (0, 0);
        for &w in &widths {
            local_offsets.push(lo);
            global_offsets.push(go);
            lo += w;
            go += w * n_cells;
        }
        let width = lo;
        let cells = exec.map_indexed(m_paths, |m| basis.locate(k, ensemble.augmented(m, k)));
        let mut local = vec![0.0; m_paths * width];
        exec.for_each_chunk(&mut local, width, |m, row| {
            if cells[m].is_some() {
                let x = ensemble.augmented(m, k);
                for l in 0..=q {
                    let start = local_offsets[l];
                    basis.local_features_into(l, x, &mut row[start..start + widths[l]]);
                }
            }
        });
        let w0 = widths[0];
        let norms0 = (0..m_paths)
            .map(|m| {
                let r = &local[m * width..m * width + w0];
                r.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        Self {
            cells,
            n_cells,
            widths,
            local_offsets,
            global_offsets,
            width,
            n_coeffs: go,
            local,
            norms0,
        }
    }

    fn local_row(&self, m: usize) -> &[f64] {
        &self.local[m * self.width..(m + 1) * self.width]
    }

    /// `coeffs_l . p_l` on path `m` (0 outside every cell).
    #[inline]
    fn dot(&self, m: usize, l: usize, coeffs: &[f64]) -> f64 {
        let Some(c) = self.cells[m] else {
            return 0.0;
        };
        let w = self.widths[l];
        let start = self.global_offsets[l] + c * w;
        let feats = &self.local_row(m)[self.local_offsets[l]..self.local_offsets[l] + w];
        feats
            .iter()
            .zip(&coeffs[start..start + w])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Global column of local entry `j` of the row of a path in cell `c`.
    fn global_column(&self, c: usize, j: usize) -> usize {
        let l = self.local_offsets.partition_point(|&o| o <= j) - 1;
        self.global_offsets[l] + c * self.widths[l] + (j - self.local_offsets[l])
    }
}

/// A factorized regression design for one time step.
enum StepSolver {
    Dense(MinNormSolver),
    /// Blocks indexed compactly over the nonempty cells; `columns[j]` maps
    /// block column `j` to its global coefficient index.
    Cells {
        solver: BlockDiagonalSolver,
        columns: Vec<usize>,
        n_coeffs: usize,
    },
}

impl StepSolver {
    fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, usize)> {
        match self {
            StepSolver::Dense(s) => {
                let sol = s.solve(b)?;
                Ok((sol.coefficients, sol.numerical_rank))
            }
            StepSolver::Cells {
                solver,
                columns,
                n_coeffs,
            } => {
                let sol = solver.solve(b)?;
                let mut theta = vec![0.0; *n_coeffs];
                for (&g, v) in columns.iter().zip(sol.coefficients) {
                    theta[g] = v;
                }
                Ok((theta, sol.numerical_rank))
            }
        }
    }
}

/// Scaled design entries of path `m`: the local row with the `l >= 1`
/// blocks multiplied by `dW_l / sqrt(h)`.
fn scaled_local_row(
    feats: &StepFeatures,
    ensemble: &PathEnsemble,
    m: usize,
    k: usize,
    out: &mut [f64],
) {
    let inv_sqrt_h = 1.0 / ensemble.step_h().sqrt();
    let dw = ensemble.increment(m, k);
    out.copy_from_slice(feats.local_row(m));
    for (l, &dw_l) in dw.iter().enumerate() {
        let start = feats.local_offsets[l + 1];
        for v in &mut out[start..start + feats.widths[l + 1]] {
            *v *= dw_l * inv_sqrt_h;
        }
    }
}

fn factorize(
    feats: &StepFeatures,
    ensemble: &PathEnsemble,
    k: usize,
    basis: &BasisFamily,
    opts: &SweepOptions,
) -> Result<StepSolver> {
    let m_paths = ensemble.n_paths();
    let mut row = vec![0.0; feats.width];
    let cellwise = opts.layout == RegressionLayout::Auto && basis.is_local();
    if !cellwise {
        let mut a = DMatrix::zeros(m_paths, feats.n_coeffs);
        for m in 0..m_paths {
            let Some(c) = feats.cells[m] else { continue };
            scaled_local_row(feats, ensemble, m, k, &mut row);
            for (j, &v) in row.iter().enumerate() {
                a[(m, feats.global_column(c, j))] = v;
            }
        }
        let design = DesignMatrix::from_matrix(a)?;
        return Ok(StepSolver::Dense(MinNormSolver::new(
            &design,
            opts.rank_tol,
        )?));
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); feats.n_cells];
    for (m, cell) in feats.cells.iter().enumerate() {
        if let Some(c) = *cell {
            members[c].push(m);
        }
    }
    let mut blocks = Vec::new();
    let mut columns = Vec::new();
    for (c, rows) in members.into_iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let offset = columns.len();
        columns.extend((0..feats.width).map(|j| feats.global_column(c, j)));
        let mut a = DMatrix::zeros(rows.len(), feats.width);
        for (i, &m) in rows.iter().enumerate() {
            scaled_local_row(feats, ensemble, m, k, &mut row);
            for (j, &v) in row.iter().enumerate() {
                a[(i, j)] = v;
            }
        }
        blocks.push((rows, offset, DesignMatrix::from_matrix(a)?));
    }
    if blocks.is_empty() {
        // Every path left the domain: all coefficients are zero.
        columns.push(0);
    }
    Ok(StepSolver::Cells {
        solver: BlockDiagonalSolver::new(m_paths, columns.len(), blocks, opts.rank_tol)?,
        columns,
        n_coeffs: feats.n_coeffs,
    })
}

/// Picard iterations for time step `k`.
///
/// `target[m]` is the (already truncated) value `Y_{k+1}` on path `m`, or
/// the terminal payoff at `k = N-1`. Starting from zero coefficients, each of
/// the `I` iterations solves the minimal-norm least-squares problem
/// `min_theta sum_m (target_m + h f(t_k, S_k^m, y_m, z_m) - theta . v_k^m)^2`
/// with `y_m, z_m` the untruncated values of the previous iterate.
pub fn picard_sweep(
    k: usize,
    ensemble: &PathEnsemble,
    basis: &BasisFamily,
    target: &[f64],
    driver: &Driver,
    opts: &SweepOptions,
) -> Result<StepOutcome> {
    check_compatible(ensemble, basis)?;
    if k >= ensemble.n_steps() {
        return Err(Error::IndexOutOfRange {
            what: "k",
            index: k,
            limit: ensemble.n_steps() - 1,
        });
    }
    if target.len() != ensemble.n_paths() {
        return Err(Error::Dimension(format!(
            "target has {} entries for {} paths",
            target.len(),
            ensemble.n_paths()
        )));
    }
    if let Some(m) = target.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("regression target on path {m}")));
    }
    if opts.picard_iters == 0 {
        return Err(Error::Parameter(
            "at least one Picard iteration is required".into(),
        ));
    }
    driver.validate()?;
    let feats = StepFeatures::build(k, ensemble, basis, opts.execution);
    let (alpha, gaps, rank) =
        sweep_with_features(k, ensemble, basis, &feats, target, driver, opts)?;
    Ok(StepOutcome {
        alpha,
        iterate_gaps: gaps,
        numerical_rank: rank,
    })
}

type SweepResult = (Vec<Vec<f64>>, Vec<f64>, usize);

fn sweep_with_features(
    k: usize,
    ensemble: &PathEnsemble,
    basis: &BasisFamily,
    feats: &StepFeatures,
    target: &[f64],
    driver: &Driver,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    let q = ensemble.noise_dim();
    let h = ensemble.step_h();
    let sqrt_h = h.sqrt();
    let t_k = k as f64 * h;
    let solver = factorize(feats, ensemble, k, basis, opts)?;

    let mut theta = vec![0.0; feats.n_coeffs];
    let mut gaps = Vec::with_capacity(opts.picard_iters);
    let mut rank = 0;
    for _ in 0..opts.picard_iters {
        let b = opts.execution.map_indexed(ensemble.n_paths(), |m| {
            let y = feats.dot(m, 0, &theta);
            let mut z_stack = [0.0; 4];
            let mut z_heap = Vec::new();
            let z = if q <= z_stack.len() {
                &mut z_stack[..q]
            } else {
                z_heap.resize(q, 0.0);
                &mut z_heap[..]
            };
            for (l, zl) in z.iter_mut().enumerate() {
                *zl = feats.dot(m, l + 1, &theta) / sqrt_h;
            }
            target[m] + h * driver.eval(t_k, ensemble.state(m, k), y, z)
        });
        if let Some(m) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite regression target at step {k}, path {m}"
            )));
        }
        let (next, r) = solver.solve(&b)?;
        let gap = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        gaps.push(gap);
        theta = next;
        rank = r;
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite coefficients at step {k}"
        )));
    }
    let alpha = (0..=q)
        .map(|l| {
            let start = feats.global_offsets[l];
            let seg = &theta[start..start + feats.widths[l] * feats.n_cells];
            if l == 0 {
                seg.to_vec()
            } else {
                seg.iter().map(|v| v / sqrt_h).collect()
            }
        })
        .collect();
    Ok((alpha, gaps, rank))
}

/// Truncated `(Y, Z)` at state `x` and step `k`:
/// `y = rho_0 xi(alpha_0 . p_0 / rho_0)` and
/// `z_l = rho_l xi(sqrt(h) alpha_l . p_l / rho_l) / sqrt(h)`.
pub fn evaluate_yz(
    coeffs: &CoefficientSet,
    profile: &TruncationProfile,
    basis: &BasisFamily,
    k: usize,
    x: &[f64],
    h: f64,
) -> Result<(f64, Vec<f64>)> {
    if k >= coeffs.n_steps() {
        return Err(Error::IndexOutOfRange {
            what: "k",
            index: k,
            limit: coeffs.n_steps().saturating_sub(1),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("time step must be > 0, got {h}")));
    }
    let step = coeffs.step(k);
    if step.len() != basis.noise_dim() + 1 {
        return Err(Error::Dimension(format!(
            "coefficients carry {} components, basis has {}",
            step.len(),
            basis.noise_dim() + 1
        )));
    }
    let sqrt_h = h.sqrt();
    let mut out = Vec::with_capacity(step.len());
    for (l, alpha) in step.iter().enumerate() {
        let p = basis.evaluate(l, k, x)?;
        if p.len() != alpha.len() {
            return Err(Error::Dimension(format!(
                "alpha_{l} has {} entries, basis has {}",
                alpha.len(),
                p.len()
            )));
        }
        let raw: f64 = p.iter().zip(alpha).map(|(a, b)| a * b).sum();
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push(if l == 0 {
            profile.apply(raw, norm)
        } else {
            profile.apply(sqrt_h * raw, norm) / sqrt_h
        });
    }
    let y = out[0];
    out.remove(0);
    Ok((y, out))
}

/// Runs the full backward sweep on `ensemble` and evaluates `(Y_0, Z_0)` at
/// the initial state.
pub fn backward_solve(
    config: &SolverConfig,
    ensemble: &PathEnsemble,
    basis: &BasisFamily,
    driver: &Driver,
    payoff: &Payoff,
) -> Result<BackwardSolution> {
    config.validate()?;
    driver.validate()?;
    payoff.validate()?;
    check_compatible(ensemble, basis)?;
    if ensemble.n_steps() != config.n_steps || ensemble.n_paths() != config.n_paths {
        return Err(Error::Dimension(format!(
            "ensemble has N = {}, M = {}; configuration expects N = {}, M = {}",
            ensemble.n_steps(),
            ensemble.n_paths(),
            config.n_steps,
            config.n_paths
        )));
    }
    if !payoff.supports(ensemble.augmentation()) {
        return Err(Error::Config(format!(
            "payoff {payoff:?} cannot read states augmented as {:?}",
            ensemble.augmentation()
        )));
    }
    let n = ensemble.n_steps();
    let m_paths = ensemble.n_paths();
    let mut target: Vec<f64> = (0..m_paths)
        .map(|m| payoff.eval(ensemble.augmented(m, n)))
        .collect();
    if let Some(m) = target.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("terminal payoff on path {m}")));
    }
    let profile = config.truncation.resolve(&target)?;
    let opts = config.sweep_options();

    let mut steps = vec![Vec::new(); n];
    let mut gaps = vec![Vec::new(); n];
    let mut ranks = vec![0; n];
    for k in (0..n).rev() {
        let feats = StepFeatures::build(k, ensemble, basis, opts.execution);
        let (alpha, g, rank) =
            sweep_with_features(k, ensemble, basis, &feats, &target, driver, &opts)?;
        if k > 0 {
            target = opts.execution.map_indexed(m_paths, |m| {
                profile.apply(feats.dot(m, 0, &alpha[0]), feats.norms0[m])
            });
        }
        steps[k] = alpha;
        gaps[k] = g;
        ranks[k] = rank;
    }
    let coefficients = CoefficientSet::new(steps)?;
    let (y0, z0) = evaluate_yz(
        &coefficients,
        &profile,
        basis,
        0,
        ensemble.augmented(0, 0),
        ensemble.step_h(),
    )?;
    Ok(BackwardSolution {
        coefficients,
        y0,
        z0,
        profile,
        iterate_gaps: gaps,
        numerical_ranks: ranks,
    })
}
