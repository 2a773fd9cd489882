//! Experiment harness: repeated independent solves over a grid of path
//! counts, summary statistics, built-in table presets and report output.
//!
//! Every repetition draws its own paths (and Voronoi centers, when used) from
//! a seed derived from `(base_seed, M, repetition)`, so a report does not
//! depend on the order or the threads in which repetitions run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bases::{
    build_gp, build_hc, build_vp, build_vp10, BasisFamily, HypercubeSpec, OutsidePolicy,
    PolynomialSpec, VoronoiSpec,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::finance::{Driver, Payoff};
use crate::forward::{augment, simulate, AugmentationKind, BlackScholes, MarketModel, Scheme};
use crate::numkit::DEFAULT_RANK_TOL;
use crate::seed::{mix_seed, STREAM_CENTERS, STREAM_PATHS};
use crate::solver::{backward_solve, RegressionLayout, SolverConfig, TruncationPolicy};

/// Path counts used by the tables unless a preset says otherwise.
pub const DEFAULT_M_GRID: [usize; 5] = [128, 512, 2048, 8192, 32768];

pub const DEFAULT_REPETITIONS: usize = 50;

/// One-dimensional Black–Scholes market with lending rate `r` and borrowing rate `big_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub mu: f64,
    pub sigma: f64,
    pub s0: f64,
    pub maturity: f64,
    pub r: f64,
    pub big_r: f64,
}

/// Which driver to build from the market parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    /// Lending at `r`, borrowing at `big_r`.
    #[default]
    DifferentialRates,
    /// Single rate `r` with market price of risk `(mu - r) / sigma`.
    RiskNeutral,
    Zero,
}

/// Basis family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BasisConfig {
    /// Hypercubes of edge `edge` covering `(lo, hi]` on every state axis.
    Hypercube {
        lo: f64,
        hi: f64,
        edge: f64,
        #[serde(default)]
        outside: OutsidePolicy,
    },
    /// Voronoi cells around `n_centers` independently simulated states.
    Voronoi { n_centers: usize },
    /// Voronoi cells with a local affine block for `l = 0`.
    VoronoiAffine { n_centers: usize },
    /// Monomials of total degree `<= degree_y` / `<= degree_z` in
    /// `(x - S0) / scale`; `scale` defaults to `S0 sigma sqrt(T)`.
    Polynomial {
        degree_y: u32,
        degree_z: u32,
        #[serde(default)]
        scale: Option<f64>,
    },
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_picard() -> usize {
    3
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

fn default_m_grid() -> Vec<usize> {
    DEFAULT_M_GRID.to_vec()
}

/// Full description of a table-style experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    pub market: MarketParams,
    pub payoff: Payoff,
    #[serde(default)]
    pub driver: DriverKind,
    #[serde(default)]
    pub augmentation: AugmentationKind,
    #[serde(default)]
    pub scheme: Scheme,
    pub basis: BasisConfig,
    pub n_steps: usize,
    #[serde(default = "default_m_grid")]
    pub m_grid: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_picard")]
    pub picard_iters: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_grid.is_empty() {
            return Err(Error::Config("M grid must be nonempty".into()));
        }
        if self.m_grid.contains(&0) {
            return Err(Error::Config("path counts must be >= 1".into()));
        }
        if self.repetitions < 2 {
            return Err(Error::Config(format!(
                "need at least 2 repetitions for a standard deviation, got {}",
                self.repetitions
            )));
        }
        if self.n_steps == 0 || self.picard_iters == 0 {
            return Err(Error::Config("N and I must be >= 1".into()));
        }
        self.model()?;
        self.driver()?;
        self.payoff.validate()?;
        self.truncation.validate()?;
        if !self.payoff.supports(self.augmentation) {
            return Err(Error::Config(format!(
                "payoff {:?} needs a different state augmentation than {:?}",
                self.payoff, self.augmentation
            )));
        }
        if !(self.market.maturity > 0.0 && self.market.maturity.is_finite()) {
            return Err(Error::Config(format!(
                "maturity must be > 0, got {}",
                self.market.maturity
            )));
        }
        match self.basis {
            BasisConfig::Voronoi { n_centers } | BasisConfig::VoronoiAffine { n_centers }
                if n_centers == 0 =>
            {
                Err(Error::Config(
                    "Voronoi bases need at least one center".into(),
                ))
            }
            BasisConfig::Hypercube { .. } => {
                // Building the grid checks the cell geometry.
                self.fixed_basis().map(|_| ())
            }
            _ => Ok(()),
        }
    }

    pub fn model(&self) -> Result<MarketModel> {
        let m = &self.market;
        Ok(MarketModel::BlackScholes(BlackScholes::new(
            m.mu, m.sigma, m.s0,
        )?))
    }

    pub fn driver(&self) -> Result<Driver> {
        let m = &self.market;
        match self.driver {
            DriverKind::DifferentialRates => {
                Driver::differential_rates(m.r, m.big_r, m.mu, m.sigma)
            }
            DriverKind::RiskNeutral => {
                let d = Driver::LinearRiskNeutral {
                    r: m.r,
                    theta: (m.mu - m.r) / m.sigma,
                };
                d.validate()?;
                Ok(d)
            }
            DriverKind::Zero => Ok(Driver::Zero),
        }
    }

    pub fn step_h(&self) -> f64 {
        self.market.maturity / self.n_steps as f64
    }

    fn state_dim(&self) -> usize {
        self.augmentation.augmented_dim(1)
    }

    /// Bases that do not depend on simulated centers.
    fn fixed_basis(&self) -> Result<Option<BasisFamily>> {
        let dim = self.state_dim();
        match self.basis {
            BasisConfig::Hypercube {
                lo,
                hi,
                edge,
                outside,
            } => {
                if hi.is_nan() || lo.is_nan() || hi <= lo {
                    return Err(Error::BasisSpec(format!("empty interval ({lo}, {hi}]")));
                }
                let spec = HypercubeSpec::from_interval(lo, hi, edge, dim).with_outside(outside);
                Ok(Some(build_hc(&spec, 1)?))
            }
            BasisConfig::Polynomial {
                degree_y,
                degree_z,
                scale,
            } => {
                let m = &self.market;
                let scale = scale.unwrap_or(m.s0 * m.sigma * m.maturity.sqrt());
                let spec = PolynomialSpec {
                    degree_y,
                    degree_z,
                    center: vec![m.s0; dim],
                    scale,
                };
                Ok(Some(build_gp(&spec, 1)?))
            }
            BasisConfig::Voronoi { .. } | BasisConfig::VoronoiAffine { .. } => Ok(None),
        }
    }
}

/// Statistics for one path count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointReport {
    pub m: usize,
    pub mean: f64,
    pub std: f64,
    pub wall_time_s: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub repetitions: usize,
    pub rows: Vec<GridPointReport>,
}

impl ExperimentReport {
    pub fn row(&self, m: usize) -> Option<&GridPointReport> {
        self.rows.iter().find(|r| r.m == m)
    }
}

/// Sample mean and standard deviation with the `1/(n-1)` normalization,
/// computed in two passes.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Seed of repetition `rep` at path count `m`.
pub fn repetition_seed(base_seed: u64, m: usize, rep: usize) -> u64 {
    mix_seed(base_seed, &[m as u64, rep as u64])
}

/// Solves one repetition of `spec` with `m` paths and returns `Y_0`.
///
/// `exec` parallelizes the per-path work inside the solve.
pub fn run_repetition(spec: &ExperimentSpec, m: usize, rep: usize, exec: Execution) -> Result<f64> {
    let seed = repetition_seed(spec.base_seed, m, rep);
    let model = spec.model()?;
    let driver = spec.driver()?;
    let n = spec.n_steps;
    let path_seed = mix_seed(seed, &[STREAM_PATHS]);
    let ensemble = simulate(
        &model,
        spec.scheme,
        spec.market.maturity,
        n,
        m,
        path_seed,
        exec,
    )?;
    let ensemble = augment(spec.augmentation, ensemble, &model)?;

    let basis = match spec.fixed_basis()? {
        Some(b) => b,
        None => {
            let (BasisConfig::Voronoi { n_centers } | BasisConfig::VoronoiAffine { n_centers }) =
                spec.basis
            else {
                unreachable!("only Voronoi bases need centers")
            };
            let center_seed = mix_seed(seed, &[STREAM_CENTERS]);
            let extra = simulate(
                &model,
                spec.scheme,
                spec.market.maturity,
                n,
                n_centers,
                center_seed,
                exec,
            )?;
            let extra = augment(spec.augmentation, extra, &model)?;
            let centers = VoronoiSpec::from_paths(&extra);
            if matches!(spec.basis, BasisConfig::VoronoiAffine { .. }) {
                build_vp10(&centers, 1)?
            } else {
                build_vp(&centers, 1)?
            }
        }
    };

    let config = SolverConfig {
        n_steps: n,
        n_paths: m,
        picard_iters: spec.picard_iters,
        rank_tol: spec.rank_tol,
        seed: path_seed,
        scheme: spec.scheme,
        truncation: spec.truncation,
        layout: RegressionLayout::Auto,
        execution: exec,
    };
    let y0 = backward_solve(&config, &ensemble, &basis, &driver, &spec.payoff)?.y0;
    if !y0.is_finite() {
        return Err(Error::NonFiniteResult {
            repetition: rep,
            paths: m,
            value: y0,
        });
    }
    Ok(y0)
}

/// Runs every grid point of `spec` with the real solver.
pub fn run_experiment(spec: &ExperimentSpec, exec: Execution) -> Result<ExperimentReport> {
    run_experiment_with(spec, exec, |m, rep| {
        run_repetition(spec, m, rep, Execution::Sequential)
    })
}

/// Runs every grid point with a caller-supplied solve `(M, repetition) -> Y_0`.
///
/// Repetitions are spread over `exec`; each grid point is timed as a whole.
pub fn run_experiment_with<F>(
    spec: &ExperimentSpec,
    exec: Execution,
    solve: F,
) -> Result<ExperimentReport>
where
    F: Fn(usize, usize) -> Result<f64> + Sync + Send,
{
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.m_grid.len());
    for &m in &spec.m_grid {
        let start = Instant::now();
        let values = exec.try_map_indexed(spec.repetitions, |rep| {
            let v = solve(m, rep)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteResult {
                    repetition: rep,
                    paths: m,
                    value: v,
                })
            }
        })?;
        let (mean, std) = mean_std(&values);
        rows.push(GridPointReport {
            m,
            mean,
            std,
            wall_time_s: start.elapsed().as_secs_f64(),
            values,
        });
    }
    Ok(ExperimentReport {
        name: spec.name.clone(),
        repetitions: spec.repetitions,
        rows,
    })
}

fn call_market() -> MarketParams {
    MarketParams {
        mu: 0.06,
        sigma: 0.2,
        s0: 100.0,
        maturity: 0.5,
        r: 0.04,
        big_r: 0.06,
    }
}

fn combination_market() -> MarketParams {
    MarketParams {
        mu: 0.05,
        sigma: 0.2,
        s0: 100.0,
        maturity: 0.25,
        r: 0.01,
        big_r: 0.06,
    }
}

fn asian_market() -> MarketParams {
    MarketParams {
        mu: 0.06,
        sigma: 0.2,
        s0: 100.0,
        maturity: 1.0,
        r: 0.1,
        big_r: 0.1,
    }
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 6] = ["table1", "table2", "table3", "table4", "table5", "table6"];

/// Number of columns of each preset table.
pub fn preset_columns(name: &str) -> Result<usize> {
    match name {
        "table1" => Ok(2),
        "table2" | "table5" => Ok(3),
        "table3" | "table4" => Ok(4),
        "table6" => Ok(1),
        _ => Err(Error::Config(format!(
            "unknown preset {name:?}; expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Built-in table configuration; `column` is 1-based as in the tables.
pub fn preset(name: &str, column: usize) -> Result<ExperimentSpec> {
    let columns = preset_columns(name)?;
    if column == 0 || column > columns {
        return Err(Error::Config(format!(
            "preset {name} has columns 1..={columns}, got {column}"
        )));
    }
    let hc = |lo: f64, hi: f64, edge: f64| BasisConfig::Hypercube {
        lo,
        hi,
        edge,
        outside: OutsidePolicy::NearestCell,
    };
    let combination = Payoff::CallsCombination {
        k1: 95.0,
        k2: 105.0,
    };
    let asian = Payoff::AsianCall { strike: 100.0 };
    let (market, payoff, augmentation, n_steps, basis, m_grid) = match (name, column) {
        ("table1", 1) => (
            call_market(),
            Payoff::Call { strike: 100.0 },
            AugmentationKind::Vanilla,
            5,
            hc(60.0, 140.0, 5.0),
            None,
        ),
        ("table1", _) => (
            call_market(),
            Payoff::Call { strike: 100.0 },
            AugmentationKind::Vanilla,
            10,
            hc(60.0, 140.0, 1.0),
            None,
        ),
        ("table2", 1) => (
            combination_market(),
            combination,
            AugmentationKind::Vanilla,
            5,
            hc(60.0, 140.0, 5.0),
            None,
        ),
        ("table2", 2) => (
            combination_market(),
            combination,
            AugmentationKind::Vanilla,
            20,
            hc(60.0, 200.0, 1.0),
            None,
        ),
        ("table2", _) => (
            combination_market(),
            combination,
            AugmentationKind::Vanilla,
            50,
            hc(40.0, 200.0, 0.5),
            None,
        ),
        ("table3", c) => {
            let (n, basis) = match c {
                1 => (5, BasisConfig::Voronoi { n_centers: 16 }),
                2 => (20, BasisConfig::Voronoi { n_centers: 64 }),
                3 => (20, BasisConfig::Voronoi { n_centers: 10 }),
                _ => (20, BasisConfig::VoronoiAffine { n_centers: 10 }),
            };
            (
                combination_market(),
                combination,
                AugmentationKind::Vanilla,
                n,
                basis,
                None,
            )
        }
        ("table4", c) => {
            let (n, degree_y, degree_z) = match c {
                1 => (5, 1, 0),
                2 => (20, 2, 1),
                3 => (50, 4, 2),
                _ => (50, 9, 9),
            };
            let basis = BasisConfig::Polynomial {
                degree_y,
                degree_z,
                scale: None,
            };
            (
                combination_market(),
                combination,
                AugmentationKind::Vanilla,
                n,
                basis,
                None,
            )
        }
        ("table5", c) => {
            let (n, edge) = match c {
                1 => (5, 5.0),
                2 => (20, 1.0),
                _ => (50, 0.5),
            };
            (
                asian_market(),
                asian,
                AugmentationKind::AsianRunningAverage,
                n,
                hc(60.0, 200.0, edge),
                None,
            )
        }
        _ => {
            let grid = (0..8).map(|i| 2usize << (2 * i)).collect();
            (
                asian_market(),
                asian,
                AugmentationKind::AsianCorrected,
                20,
                hc(60.0, 200.0, 1.0),
                Some(grid),
            )
        }
    };
    let driver = if market.r == market.big_r {
        DriverKind::RiskNeutral
    } else {
        DriverKind::DifferentialRates
    };
    Ok(ExperimentSpec {
        name: format!("{name}-col{column}"),
        market,
        payoff,
        driver,
        augmentation,
        scheme: Scheme::Euler,
        basis,
        n_steps,
        m_grid: m_grid.unwrap_or_else(default_m_grid),
        repetitions: DEFAULT_REPETITIONS,
        picard_iters: 3,
        base_seed: 0,
        truncation: TruncationPolicy::default(),
        rank_tol: DEFAULT_RANK_TOL,
    })
}

/// Output format of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

/// CSV with columns `M, mean, std, wall_time_s, rep_0, ..., rep_{n-1}`;
/// numbers carry 17 significant digits.
pub fn write_csv<W: Write>(report: &ExperimentReport, mut out: W) -> std::io::Result<()> {
    write!(out, "M,mean,std,wall_time_s")?;
    for r in 0..report.repetitions {
        write!(out, ",rep_{r}")?;
    }
    writeln!(out)?;
    for row in &report.rows {
        write!(
            out,
            "{},{:.16e},{:.16e},{:.6e}",
            row.m, row.mean, row.std, row.wall_time_s
        )?;
        for v in &row.values {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes `report` to `path` as CSV or JSON.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_csv(report, &mut out).map_err(io_err)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> ExperimentSpec {
        let mut spec = preset("table1", 1).unwrap();
        spec.m_grid = vec![64, 256];
        spec.repetitions = 4;
        spec.base_seed = 7;
        spec
    }

    #[test]
    fn constant_solver_gives_zero_spread() {
        let spec = small_spec();
        let report = run_experiment_with(&spec, Execution::Parallel, |_, _| Ok(3.25)).unwrap();
        for row in &report.rows {
            assert_eq!(row.mean, 3.25);
            assert_eq!(row.std, 0.0);
            assert_eq!(row.values.len(), spec.repetitions);
        }
    }

    #[test]
    fn two_values_statistics() {
        let (a, b) = (1.25f64, 4.0f64);
        let (mean, std) = mean_std(&[a, b]);
        assert_eq!(mean, (a + b) / 2.0);
        assert!((std - (a - b).abs() / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_values_name_the_repetition() {
        let spec = small_spec();
        let err = run_experiment_with(&spec, Execution::Sequential, |m, rep| {
            Ok(if rep == 2 { f64::NAN } else { m as f64 })
        })
        .unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteResult {
                repetition: 2,
                paths: 64,
                ..
            }
        ));
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec();
        spec.m_grid.clear();
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.repetitions = 1;
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.basis = BasisConfig::Hypercube {
            lo: 60.0,
            hi: 140.0,
            edge: 3.0,
            outside: OutsidePolicy::Zero,
        };
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.payoff = Payoff::AsianCall { strike: 100.0 };
        assert!(spec.validate().is_err());
        assert!(preset("table7", 1).is_err());
        assert!(preset("table1", 3).is_err());
        assert!(preset("table1", 0).is_err());
    }

    #[test]
    fn presets_match_the_tables() {
        let t1 = preset("table1", 1).unwrap();
        assert_eq!(t1.n_steps, 5);
        assert_eq!(
            t1.basis,
            BasisConfig::Hypercube {
                lo: 60.0,
                hi: 140.0,
                edge: 5.0,
                outside: OutsidePolicy::NearestCell,
            }
        );
        let hc = HypercubeSpec::from_interval(60.0, 140.0, 5.0, 1);
        assert_eq!((hc.center[0], hc.half_width), (100.0, 40.0));
        assert_eq!(t1.driver, DriverKind::DifferentialRates);
        assert_eq!(t1.m_grid, DEFAULT_M_GRID.to_vec());
        assert_eq!(t1.repetitions, 50);

        let t4 = preset("table4", 4).unwrap();
        assert_eq!(t4.n_steps, 50);
        assert!(matches!(
            t4.basis,
            BasisConfig::Polynomial {
                degree_y: 9,
                degree_z: 9,
                ..
            }
        ));

        let t6 = preset("table6", 1).unwrap();
        assert_eq!(t6.augmentation, AugmentationKind::AsianCorrected);
        assert_eq!(t6.n_steps, 20);
        assert_eq!(t6.m_grid, vec![2, 8, 32, 128, 512, 2048, 8192, 32768]);
        assert_eq!(t6.driver, DriverKind::RiskNeutral);

        for name in PRESET_NAMES {
            for c in 1..=preset_columns(name).unwrap() {
                preset(name, c).unwrap().validate().unwrap();
            }
        }
    }

    #[test]
    fn hypercube_preset_cell_counts() {
        let t5 = preset("table5", 2).unwrap();
        let basis = t5.fixed_basis().unwrap().unwrap();
        assert_eq!(basis.n_cells(0), 140 * 140);
        let t2 = preset("table2", 3).unwrap();
        assert_eq!(t2.fixed_basis().unwrap().unwrap().n_cells(0), 320);
    }

    #[test]
    fn repetitions_are_order_independent() {
        let spec = small_spec();
        let par = run_experiment(&spec, Execution::Parallel).unwrap();
        let seq = run_experiment(&spec, Execution::Sequential).unwrap();
        for (a, b) in par.rows.iter().zip(&seq.rows) {
            assert_eq!(a.values, b.values);
        }
        // Recompute each value alone, in reverse order.
        for row in &par.rows {
            for rep in (0..spec.repetitions).rev() {
                let v = run_repetition(&spec, row.m, rep, Execution::Sequential).unwrap();
                assert_eq!(v, row.values[rep]);
            }
        }
        // Changing one grid point leaves the others untouched.
        let mut other = spec.clone();
        other.m_grid = vec![256];
        let alone = run_experiment(&other, Execution::Sequential).unwrap();
        assert_eq!(alone.rows[0].values, seq.rows[1].values);
    }

    #[test]
    fn voronoi_repetitions_run() {
        let mut spec = preset("table3", 4).unwrap();
        spec.m_grid = vec![200];
        spec.repetitions = 2;
        let report = run_experiment(&spec, Execution::Sequential).unwrap();
        assert!(report.rows[0].values.iter().all(|v| v.is_finite()));
    }

    fn sample_report() -> ExperimentReport {
        ExperimentReport {
            name: "sample".into(),
            repetitions: 3,
            rows: vec![
                GridPointReport {
                    m: 128,
                    mean: 7.123456789012345,
                    std: 0.1 + 0.2,
                    wall_time_s: 0.5,
                    values: vec![1.0 / 3.0, 7.0, -2.5e-17],
                },
                GridPointReport {
                    m: 512,
                    mean: 1e300,
                    std: 0.0,
                    wall_time_s: 1.25,
                    values: vec![2.0, f64::MIN_POSITIVE, 3.0],
                },
            ],
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = std::env::temp_dir().join(format!("bsde-json-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("report.json");
        let report = sample_report();
        emit_report(&report, ReportFormat::Json, &path).unwrap();
        let back: ExperimentReport =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, report);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_layout() {
        let report = sample_report();
        let mut buf = Vec::new();
        write_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), report.rows.len() + 1);
        assert_eq!(lines[0], "M,mean,std,wall_time_s,rep_0,rep_1,rep_2");
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[1].parse::<f64>().unwrap(), 7.123456789012345);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn emit_reports_the_failing_path() {
        let path = Path::new("/nonexistent-dir/for/sure/report.csv");
        let err = emit_report(&sample_report(), ReportFormat::Csv, path).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err
            .to_string()
            .contains("/nonexistent-dir/for/sure/report.csv"));
    }

    #[test]
    fn spec_json_round_trip_and_defaults() {
        let spec = preset("table3", 2).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let minimal = r#"{
            "market": {"mu": 0.06, "sigma": 0.2, "s0": 100, "maturity": 0.5, "r": 0.04, "big_r": 0.06},
            "payoff": {"type": "call", "strike": 100},
            "basis": {"type": "hypercube", "lo": 60, "hi": 140, "edge": 5},
            "n_steps": 5
        }"#;
        let spec: ExperimentSpec = serde_json::from_str(minimal).unwrap();
        assert_eq!(spec.repetitions, 50);
        assert_eq!(spec.picard_iters, 3);
        assert_eq!(spec.m_grid, DEFAULT_M_GRID.to_vec());
        assert_eq!(spec.driver, DriverKind::DifferentialRates);
        spec.validate().unwrap();
    }

    proptest! {
        #[test]
        fn statistics_match_direct_two_pass(values in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let (mean, std) = mean_std(&values);
            let n = values.len() as f64;
            let mut direct_mean = 0.0;
            for v in &values {
                direct_mean += v;
            }
            direct_mean /= n;
            let mut ss = 0.0;
            for v in &values {
                ss += (v - direct_mean).powi(2);
            }
            let direct_std = (ss / (n - 1.0)).sqrt();
            prop_assert!((mean - direct_mean).abs() <= 1e-12 * (1.0 + direct_mean.abs()));
            prop_assert!((std - direct_std).abs() <= 1e-12 * (1.0 + direct_std));
            prop_assert!(std >= 0.0);
        }
    }
}
