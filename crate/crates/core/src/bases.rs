//! Function bases `p_{l,k}` used to project the backward values.
//!
//! Four families are supported:
//!
//! * hypercube indicators on a regular grid (`HC`),
//! * Voronoi cell indicators with centers taken from extra simulated paths (`VP`),
//! * the same Voronoi cells carrying a local affine block for `l = 0` (`VP(1,0)`),
//! * global polynomials of bounded total degree (`GP`).
//!
//! The three partition-based families are *local*: every point activates at
//! most one cell, and inside a cell the features are a small fixed block. The
//! solver uses that structure to split each regression into independent
//! per-cell problems (see [`BasisFamily::is_local`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::PathEnsemble;

/// Regular grid of half-open hypercubes `prod_j (lo_j + i_j delta, lo_j + (i_j + 1) delta]`
/// with `lo_j = center_j - half_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypercubeSpec {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub edge: f64,
    #[serde(default)]
    pub outside: OutsidePolicy,
}

/// What the hypercube basis does with states that fall outside the domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutsidePolicy {
    /// All-zero feature vector: the basis only spans the domain.
    #[default]
    Zero,
    /// Clamp every coordinate onto the domain, so outside states share the
    /// boundary cell nearest to them and the cells cover the whole space.
    NearestCell,
}

impl HypercubeSpec {
    /// The grid covering `(lo, hi]` on every axis of a `dim`-dimensional state.
    pub fn from_interval(lo: f64, hi: f64, edge: f64, dim: usize) -> Self {
        Self {
            center: vec![0.5 * (lo + hi); dim],
            half_width: 0.5 * (hi - lo),
            edge,
            outside: OutsidePolicy::Zero,
        }
    }

    pub fn with_outside(mut self, outside: OutsidePolicy) -> Self {
        self.outside = outside;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypercubeGrid {
    lower: Vec<f64>,
    edge: f64,
    cells_per_axis: usize,
    n_cells: usize,
    outside: OutsidePolicy,
}

impl HypercubeGrid {
    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    fn locate(&self, x: &[f64]) -> Option<usize> {
        let c = self.cells_per_axis;
        let mut index = 0usize;
        for (&xi, &lo) in x.iter().zip(&self.lower) {
            let mut t = (xi - lo) / self.edge;
            if !(t > 0.0 && t <= c as f64) {
                match self.outside {
                    OutsidePolicy::Zero => return None,
                    OutsidePolicy::NearestCell if t.is_nan() => return None,
                    OutsidePolicy::NearestCell => t = t.clamp(1.0, c as f64),
                }
            }
            let i = (t.ceil() as usize).clamp(1, c) - 1;
            index = index * c + i;
        }
        Some(index)
    }
}

/// Voronoi centers for every time step `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiSpec {
    pub centers_per_time: Vec<Vec<Vec<f64>>>,
}

impl VoronoiSpec {
    /// Centers taken from the augmented states of an independent batch of
    /// paths. Exactly coincident centers at a time step (e.g. the
    /// deterministic initial state at `k = 0`) are collapsed into one.
    pub fn from_paths(extra: &PathEnsemble) -> Self {
        let centers_per_time = (0..extra.n_steps())
            .map(|k| {
                let mut centers: Vec<Vec<f64>> = Vec::with_capacity(extra.n_paths());
                for m in 0..extra.n_paths() {
                    let c = extra.augmented(m, k);
                    if !centers.iter().any(|e| e.as_slice() == c) {
                        centers.push(c.to_vec());
                    }
                }
                centers
            })
            .collect();
        Self { centers_per_time }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiBasis {
    centers_per_time: Vec<Vec<Vec<f64>>>,
    /// `VP(1,0)`: affine block `(1, x)` per cell for `l = 0`.
    local_affine: bool,
}

impl VoronoiBasis {
    pub fn n_centers(&self, k: usize) -> usize {
        self.centers_per_time[k].len()
    }

    fn locate(&self, k: usize, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centers_per_time[k].iter().enumerate() {
            let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Global monomials of total degree at most `degree_y` (for `l = 0`) and
/// `degree_z` (for `l >= 1`) in the shifted and scaled variables
/// `(x - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialSpec {
    pub degree_y: u32,
    pub degree_z: u32,
    pub center: Vec<f64>,
    pub scale: f64,
}

impl PolynomialSpec {
    /// Plain monomials in `x` itself.
    pub fn raw(degree_y: u32, degree_z: u32, dim: usize) -> Self {
        Self {
            degree_y,
            degree_z,
            center: vec![0.0; dim],
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialBasis {
    exponents_y: Vec<Vec<u32>>,
    exponents_z: Vec<Vec<u32>>,
    center: Vec<f64>,
    inv_scale: f64,
}

impl PolynomialBasis {
    fn exponents(&self, l: usize) -> &[Vec<u32>] {
        if l == 0 {
            &self.exponents_y
        } else {
            &self.exponents_z
        }
    }

    fn eval_into(&self, l: usize, x: &[f64], out: &mut [f64]) {
        let u: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * self.inv_scale)
            .collect();
        for (o, e) in out.iter_mut().zip(self.exponents(l)) {
            *o = e.iter().zip(&u).map(|(&p, &v)| v.powi(p as i32)).product();
        }
    }
}

/// Exponent tuples of all monomials in `dim` variables with total degree at
/// most `degree`, in graded lexicographic order.
pub fn monomial_exponents(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn fill(rest: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == cur.len() {
            cur[pos] = rest;
            out.push(cur.clone());
            return;
        }
        for p in (0..=rest).rev() {
            cur[pos] = p;
            fill(rest - p, pos + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        return out;
    }
    let mut cur = vec![0; dim];
    for total in 0..=degree {
        fill(total, 0, &mut cur, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    Hypercube(HypercubeGrid),
    Voronoi(VoronoiBasis),
    Polynomial(PolynomialBasis),
}

/// Feature maps `x -> p_{l,k}(x)` for `l = 0..=q` and `k = 0..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFamily {
    kind: BasisKind,
    state_dim: usize,
    noise_dim: usize,
    /// Number of time steps covered; `None` when the basis is time-invariant.
    n_steps: Option<usize>,
}

/// Hypercube indicator basis, identical for every `l` and `k`.
pub fn build_hc(spec: &HypercubeSpec, noise_dim: usize) -> Result<BasisFamily> {
    let dim = spec.center.len();
    if dim == 0 {
        return Err(Error::BasisSpec("hypercube center must be nonempty".into()));
    }
    if !(spec.edge > 0.0 && spec.half_width > 0.0) {
        return Err(Error::BasisSpec(format!(
            "edge and half-width must be > 0, got ({}, {})",
            spec.edge, spec.half_width
        )));
    }
    if spec.center.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("hypercube center".into()));
    }
    let ratio = 2.0 * spec.half_width / spec.edge;
    let cells = ratio.round();
    if cells < 1.0 || (ratio - cells).abs() > 1e-3 * cells {
        return Err(Error::BasisSpec(format!(
            "2R/delta = {ratio} is not close to a positive integer"
        )));
    }
    let cells_per_axis = cells as usize;
    let n_cells = cells_per_axis
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::BasisSpec("too many hypercube cells".into()))?;
    Ok(BasisFamily {
        kind: BasisKind::Hypercube(HypercubeGrid {
            lower: spec.center.iter().map(|c| c - spec.half_width).collect(),
            edge: spec.edge,
            cells_per_axis,
            n_cells,
            outside: spec.outside,
        }),
        state_dim: dim,
        noise_dim,
        n_steps: None,
    })
}

fn build_voronoi(spec: &VoronoiSpec, noise_dim: usize, local_affine: bool) -> Result<BasisFamily> {
    let first = spec
        .centers_per_time
        .first()
        .and_then(|c| c.first())
        .ok_or_else(|| Error::BasisSpec("no Voronoi centers".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::BasisSpec(
            "Voronoi centers must be nonempty vectors".into(),
        ));
    }
    for (k, centers) in spec.centers_per_time.iter().enumerate() {
        if centers.is_empty() {
            return Err(Error::BasisSpec(format!("no Voronoi centers at step {k}")));
        }
        for (i, c) in centers.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::Dimension(format!(
                    "center {i} at step {k} has dimension {}, expected {dim}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("center {i} at step {k}")));
            }
            if centers[..i].iter().any(|o| o == c) {
                return Err(Error::BasisSpec(format!(
                    "duplicate Voronoi center {i} at step {k}"
                )));
            }
        }
    }
    Ok(BasisFamily {
        kind: BasisKind::Voronoi(VoronoiBasis {
            centers_per_time: spec.centers_per_time.clone(),
            local_affine,
        }),
        state_dim: dim,
        noise_dim,
        n_steps: Some(spec.centers_per_time.len()),
    })
}

/// Voronoi indicator basis, identical for every `l`.
pub fn build_vp(spec: &VoronoiSpec, noise_dim: usize) -> Result<BasisFamily> {
    build_voronoi(spec, noise_dim, false)
}

/// Voronoi cells with the block `(1, x_1, ..., x_d')` for `l = 0` and the
/// plain indicator for `l >= 1`.
pub fn build_vp10(spec: &VoronoiSpec, noise_dim: usize) -> Result<BasisFamily> {
    build_voronoi(spec, noise_dim, true)
}

pub fn build_gp(spec: &PolynomialSpec, noise_dim: usize) -> Result<BasisFamily> {
    let dim = spec.center.len();
    if dim == 0 {
        return Err(Error::BasisSpec(
            "polynomial state dimension must be >= 1".into(),
        ));
    }
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(Error::BasisSpec(format!(
            "scale must be > 0, got {}",
            spec.scale
        )));
    }
    if spec.center.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("polynomial center".into()));
    }
    Ok(BasisFamily {
        kind: BasisKind::Polynomial(PolynomialBasis {
            exponents_y: monomial_exponents(dim, spec.degree_y),
            exponents_z: monomial_exponents(dim, spec.degree_z),
            center: spec.center.clone(),
            inv_scale: 1.0 / spec.scale,
        }),
        state_dim: dim,
        noise_dim,
        n_steps: None,
    })
}

impl BasisFamily {
    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Dimension `d'` of the state the features are evaluated on.
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Number of time steps the basis is defined for, if it varies with `k`.
    pub fn n_steps(&self) -> Option<usize> {
        self.n_steps
    }

    /// `n_{l,k}`.
    pub fn dim(&self, l: usize, k: usize) -> usize {
        match &self.kind {
            BasisKind::Hypercube(g) => g.n_cells,
            BasisKind::Voronoi(v) => v.n_centers(k) * self.local_dim(l),
            BasisKind::Polynomial(p) => p.exponents(l).len(),
        }
    }

    /// Whether every point activates at most one cell.
    pub fn is_local(&self) -> bool {
        !matches!(self.kind, BasisKind::Polynomial(_))
    }

    /// Number of cells at step `k` (local bases only).
    pub fn n_cells(&self, k: usize) -> usize {
        match &self.kind {
            BasisKind::Hypercube(g) => g.n_cells,
            BasisKind::Voronoi(v) => v.n_centers(k),
            BasisKind::Polynomial(_) => 1,
        }
    }

    /// Per-cell block width for `l` (local bases only).
    pub fn local_dim(&self, l: usize) -> usize {
        match &self.kind {
            BasisKind::Voronoi(v) if v.local_affine && l == 0 => 1 + self.state_dim,
            BasisKind::Polynomial(p) => p.exponents(l).len(),
            _ => 1,
        }
    }

    /// Cell containing `x` at step `k`, `None` outside the hypercube domain.
    /// Polynomial bases report the single global cell 0.
    pub fn locate(&self, k: usize, x: &[f64]) -> Option<usize> {
        match &self.kind {
            BasisKind::Hypercube(g) => g.locate(x),
            BasisKind::Voronoi(v) => Some(v.locate(k, x)),
            BasisKind::Polynomial(_) => Some(0),
        }
    }

    /// Writes the `local_dim(l)` features of `x` inside its cell.
    pub fn local_features_into(&self, l: usize, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            BasisKind::Voronoi(v) if v.local_affine && l == 0 => {
                out[0] = 1.0;
                out[1..].copy_from_slice(x);
            }
            BasisKind::Polynomial(p) => p.eval_into(l, x, out),
            _ => out[0] = 1.0,
        }
    }

    fn check(&self, l: usize, k: usize, x: &[f64]) -> Result<()> {
        if l > self.noise_dim {
            return Err(Error::IndexOutOfRange {
                what: "l",
                index: l,
                limit: self.noise_dim,
            });
        }
        if let Some(n) = self.n_steps {
            if k >= n {
                return Err(Error::IndexOutOfRange {
                    what: "k",
                    index: k,
                    limit: n.saturating_sub(1),
                });
            }
        }
        if x.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "state has dimension {}, basis expects {}",
                x.len(),
                self.state_dim
            )));
        }
        Ok(())
    }

    /// Full feature vector `p_{l,k}(x)`.
    pub fn evaluate(&self, l: usize, k: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check(l, k, x)?;
        let mut out = vec![0.0; self.dim(l, k)];
        self.features_into(l, k, x, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`BasisFamily::evaluate`]; `out` must have length `dim(l, k)`.
    pub fn features_into(&self, l: usize, k: usize, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if let Some(cell) = self.locate(k, x) {
            let w = self.local_dim(l);
            self.local_features_into(l, x, &mut out[cell * w..(cell + 1) * w]);
        }
    }

    /// `coeffs . p_{l,k}(x)` without materializing the feature vector.
    pub fn dot(&self, l: usize, k: usize, x: &[f64], coeffs: &[f64]) -> f64 {
        let Some(cell) = self.locate(k, x) else {
            return 0.0;
        };
        let w = self.local_dim(l);
        let block = &coeffs[cell * w..(cell + 1) * w];
        match &self.kind {
            BasisKind::Voronoi(v) if v.local_affine && l == 0 => {
                block[0] + block[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            BasisKind::Polynomial(p) => {
                let mut buf = vec![0.0; w];
                p.eval_into(l, x, &mut buf);
                buf.iter().zip(block).map(|(a, b)| a * b).sum()
            }
            _ => block[0],
        }
    }

    /// Euclidean norm `|p_{l,k}(x)|`.
    pub fn norm(&self, l: usize, k: usize, x: &[f64]) -> f64 {
        let Some(_) = self.locate(k, x) else {
            return 0.0;
        };
        match &self.kind {
            BasisKind::Voronoi(v) if v.local_affine && l == 0 => {
                (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
            }
            BasisKind::Polynomial(p) => {
                let mut buf = vec![0.0; p.exponents(l).len()];
                p.eval_into(l, x, &mut buf);
                buf.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            _ => 1.0,
        }
    }
}
