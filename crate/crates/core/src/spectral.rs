//! Separation of variables on periodic grids of dimension one or two.
//!
//! The backward generator `L₀ = wⁱʲ∂²_ij + v₊ⁱ∂_i` and the forward generator
//! `L p = ∂²_ij(wⁱʲp) − ∂_i(v₊ⁱp)` are discretized with second-order central
//! differences. The discrete forward operator is the transpose of the
//! backward one, so both share the spectrum `{−λₙ}`. Eigenfunctions are
//! biorthonormalized under `⟨X, X⁰⟩ = Σ X(x̄) X⁰(x̄) ΔV` and the transition
//! density is reconstructed as
//!
//! ```text
//! p(x̄, s | x̄₀, s₀) = Σ Xₙ(x̄) Xₙ⁰(x̄₀) exp{−λₙ [g(s) − g(s₀)]}.
//! ```

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::Gauge;
use crate::geometry::FourVector;
use crate::sde::{Direction, ProcessSpec};

/// Largest admissible grid Péclet number `|vⁱ| Δxⁱ / wⁱⁱ`.
pub const MAX_PECLET: f64 = 2.0;
/// Residual above which eigenvalue pairings are reported as failed.
pub const PAIRING_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Axis {
    pub length: f64,
    pub points: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }
}

/// Uniform periodic grid on `[0, L₁) × [0, L₂)`, nodes `i Δx`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeriodicGrid {
    axes: Vec<Axis>,
}

impl PeriodicGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Grid(format!(
                "periodic grids support 1 or 2 dimensions, got {}",
                axes.len()
            )));
        }
        for a in &axes {
            if a.points < 8 {
                return Err(Error::Grid(format!("need >= 8 points per axis, got {}", a.points)));
            }
            if !(a.length > 0.0) || !a.length.is_finite() {
                return Err(Error::Grid(format!("axis length {} must be positive", a.length)));
            }
        }
        Ok(PeriodicGrid { axes })
    }

    pub fn line(length: f64, points: usize) -> Result<Self> {
        Self::new(vec![Axis { length, points }])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `Π Δxⁱ`.
    pub fn cell(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.length).product()
    }

    /// Multi-index of a flat node index (first axis fastest).
    pub fn unflatten(&self, idx: usize) -> [usize; 2] {
        let n0 = self.axes[0].points;
        [idx % n0, idx / n0]
    }

    pub fn flatten(&self, multi: [usize; 2]) -> usize {
        multi[0] + self.axes[0].points * multi[1]
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let m = self.unflatten(idx);
        let mut out = [0.0; 2];
        for (a, axis) in self.axes.iter().enumerate() {
            out[a] = m[a] as f64 * axis.spacing();
        }
        out
    }

    /// Flat index of the node shifted by `by` along `axis`, with wraparound.
    pub fn neighbour(&self, idx: usize, axis: usize, by: isize) -> usize {
        let mut m = self.unflatten(idx);
        let n = self.axes[axis].points as isize;
        m[axis] = (m[axis] as isize + by).rem_euclid(n) as usize;
        self.flatten(m)
    }

    /// Nearest node to a point, coordinates reduced modulo the box.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut m = [0usize; 2];
        for (a, axis) in self.axes.iter().enumerate() {
            let r = (x[a] / axis.spacing()).round() as isize;
            m[a] = r.rem_euclid(axis.points as isize) as usize;
        }
        self.flatten(m)
    }
}

type DriftFn = dyn Fn(&[f64; 2]) -> Result<[f64; 2]> + Send + Sync;
type DiffusionFn = dyn Fn(&[f64; 2]) -> Result<[[f64; 2]; 2]> + Send + Sync;

/// Drift and diffusion restricted to the grid axes. Unused second
/// components are ignored on one-dimensional grids.
#[derive(Clone)]
pub struct GridCoefficients {
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    constant: bool,
}

impl GridCoefficients {
    pub fn constant(v: [f64; 2], w: [[f64; 2]; 2]) -> Self {
        GridCoefficients {
            drift: Arc::new(move |_| Ok(v)),
            diffusion: Arc::new(move |_| Ok(w)),
            constant: true,
        }
    }

    pub fn constant_1d(v: f64, w: f64) -> Self {
        Self::constant([v, 0.0], [[w, 0.0], [0.0, 0.0]])
    }

    pub fn from_fn<V, W>(drift: V, diffusion: W) -> Self
    where
        V: Fn(&[f64; 2]) -> Result<[f64; 2]> + Send + Sync + 'static,
        W: Fn(&[f64; 2]) -> Result<[[f64; 2]; 2]> + Send + Sync + 'static,
    {
        GridCoefficients {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            constant: false,
        }
    }

    /// `v₊` and `w` of a process evaluated at `base` displaced along the
    /// given coordinate axes, keeping only those components.
    pub fn from_process(spec: ProcessSpec, axes: Vec<usize>, base: FourVector) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 || axes.iter().any(|&a| a > 3) {
            return Err(Error::Domain(format!("invalid axis selection {axes:?}")));
        }
        let spec = Arc::new(spec);
        let point = {
            let axes = axes.clone();
            move |x: &[f64; 2]| {
                let mut p = base;
                for (k, &a) in axes.iter().enumerate() {
                    p[a] += x[k];
                }
                p
            }
        };
        let (s1, p1, a1) = (spec.clone(), point.clone(), axes.clone());
        let drift = move |x: &[f64; 2]| -> Result<[f64; 2]> {
            let v = s1.drift(&p1(x), Direction::Forward)?;
            Ok(std::array::from_fn(|k| a1.get(k).map_or(0.0, |&a| v[a])))
        };
        let diffusion = move |x: &[f64; 2]| -> Result<[[f64; 2]; 2]> {
            let w = spec.diffusion_at(&point(x))?;
            Ok(std::array::from_fn(|i| {
                std::array::from_fn(|j| match (axes.get(i), axes.get(j)) {
                    (Some(&a), Some(&b)) => w[(a, b)],
                    _ => 0.0,
                })
            }))
        };
        Ok(Self::from_fn(drift, diffusion))
    }

    pub fn drift_at(&self, x: &[f64; 2]) -> Result<[f64; 2]> {
        (self.drift)(x)
    }

    pub fn diffusion_at(&self, x: &[f64; 2]) -> Result<[[f64; 2]; 2]> {
        (self.diffusion)(x)
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }
}

/// Operator in coordinate format, rows and columns indexing grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridOperator {
    pub n: usize,
    /// `(row, col, value)` sorted by row then column, duplicates merged.
    pub entries: Vec<(usize, usize, f64)>,
}

impl GridOperator {
    fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut entries = Vec::new();
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            entries.extend(merged.into_iter().filter(|e| e.1 != 0.0).map(|(c, v)| (r, c, v)));
        }
        GridOperator { n, entries }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn transpose(&self) -> GridOperator {
        let mut entries: Vec<_> = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        entries.sort_by_key(|a| (a.0, a.1));
        GridOperator { n: self.n, entries }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(r, _, v) in &self.entries {
            s[r] += v;
        }
        s
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for &(_, c, v) in &self.entries {
            s[c] += v;
        }
        s
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }
}

struct NodeCoefficients {
    v: [f64; 2],
    w: [[f64; 2]; 2],
}

fn node_coefficients(coef: &GridCoefficients, grid: &PeriodicGrid) -> Result<Vec<NodeCoefficients>> {
    let d = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let x = grid.coords(idx);
            let v = coef.drift_at(&x)?;
            let w = coef.diffusion_at(&x)?;
            let bad = |what: &str| {
                Err(Error::Grid(format!("{what} at node {idx} (x = {:?})", &x[..d])))
            };
            if v[..d].iter().any(|c| !c.is_finite()) || w.iter().flatten().any(|c| !c.is_finite()) {
                return bad("non-finite coefficient");
            }
            let spd = if d == 1 {
                w[0][0] > 0.0
            } else {
                (w[0][1] - w[1][0]).abs() <= 1e-12 * w[0][0].abs().max(w[1][1].abs())
                    && w[0][0] > 0.0
                    && w[0][0] * w[1][1] - w[0][1] * w[1][0] > 0.0
            };
            if !spd {
                return bad("restricted diffusion tensor is not symmetric positive definite");
            }
            for (a, axis) in grid.axes().iter().enumerate() {
                let pe = v[a].abs() * axis.spacing() / w[a][a];
                if pe > MAX_PECLET {
                    return Err(Error::Grid(format!(
                        "grid Peclet number {pe:.3} > {MAX_PECLET} on axis {a} at node {idx}; refine the grid"
                    )));
                }
            }
            Ok(NodeCoefficients { v, w })
        })
        .collect()
}

/// Stencil entries `(column, weight)` of `D_i` and `D²_ij` at a node.
fn first_stencil(grid: &PeriodicGrid, idx: usize, i: usize) -> [(usize, f64); 2] {
    let h = grid.axes()[i].spacing();
    [
        (grid.neighbour(idx, i, 1), 0.5 / h),
        (grid.neighbour(idx, i, -1), -0.5 / h),
    ]
}

fn second_stencil(grid: &PeriodicGrid, idx: usize, i: usize, j: usize) -> Vec<(usize, f64)> {
    let hi = grid.axes()[i].spacing();
    if i == j {
        vec![
            (grid.neighbour(idx, i, 1), 1.0 / (hi * hi)),
            (idx, -2.0 / (hi * hi)),
            (grid.neighbour(idx, i, -1), 1.0 / (hi * hi)),
        ]
    } else {
        let hj = grid.axes()[j].spacing();
        let c = 1.0 / (4.0 * hi * hj);
        let at = |a: isize, b: isize| grid.neighbour(grid.neighbour(idx, i, a), j, b);
        vec![(at(1, 1), c), (at(1, -1), -c), (at(-1, 1), -c), (at(-1, -1), c)]
    }
}

/// `L₀`: `(L₀f)(x̄) = wⁱʲ(x̄) D²_ij f + v₊ⁱ(x̄) D_i f`.
pub fn assemble_backward(coef: &GridCoefficients, grid: &PeriodicGrid) -> Result<GridOperator> {
    let nodes = node_coefficients(coef, grid)?;
    let d = grid.dim();
    let rows = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let nc = &nodes[idx];
            let mut row = Vec::new();
            for i in 0..d {
                for (c, wgt) in first_stencil(grid, idx, i) {
                    row.push((c, nc.v[i] * wgt));
                }
                for j in 0..d {
                    for (c, wgt) in second_stencil(grid, idx, i, j) {
                        row.push((c, nc.w[i][j] * wgt));
                    }
                }
            }
            row
        })
        .collect();
    Ok(GridOperator::from_rows(grid.len(), rows))
}

/// `L`: `(Lp)(x̄) = D²_ij(wⁱʲ p) − D_i(v₊ⁱ p)`, the discrete divergence form.
pub fn assemble_forward(coef: &GridCoefficients, grid: &PeriodicGrid) -> Result<GridOperator> {
    let nodes = node_coefficients(coef, grid)?;
    let d = grid.dim();
    let rows = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let mut row = Vec::new();
            for i in 0..d {
                for (c, wgt) in first_stencil(grid, idx, i) {
                    row.push((c, -nodes[c].v[i] * wgt));
                }
                for j in 0..d {
                    for (c, wgt) in second_stencil(grid, idx, i, j) {
                        row.push((c, nodes[c].w[i][j] * wgt));
                    }
                }
            }
            row
        })
        .collect();
    Ok(GridOperator::from_rows(grid.len(), rows))
}

/// Conjugate-pair record: indices into the sorted eigenvalue list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ModePair {
    Real(usize),
    Conjugate(usize, usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralDiagnostics {
    /// Largest distance between matched eigenvalues of `L` and `L₀`,
    /// relative to `max(1, |λ|)`.
    pub adjoint_mismatch: f64,
    /// `max |B − I|` with `B_ik = ⟨X_i, X⁰_k⟩`.
    pub biorthonormality: f64,
    /// Largest relative distance between an eigenvalue and its conjugate partner.
    pub pairing_residual: f64,
    pub lambda0: f64,
}

/// Eigenpairs of the generators on a periodic grid, sorted by `Re λ` then
/// `Im λ`.
#[derive(Clone, Debug)]
pub struct SpectralExpansion {
    pub grid: PeriodicGrid,
    pub eigenvalues: Vec<Complex64>,
    /// Columns are the forward eigenfunctions `Xₙ`.
    pub right: DMatrix<Complex64>,
    /// Columns are the backward eigenfunctions `Xₙ⁰`.
    pub left: DMatrix<Complex64>,
    pub pairs: Vec<ModePair>,
    pub diagnostics: SpectralDiagnostics,
}

fn faer_eigen(m: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = m.nrows();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let e = a
        .eigen()
        .map_err(|e| Error::Spectral(format!("eigendecomposition failed: {e:?}")))?;
    let vals: Vec<Complex64> = e.S().column_vector().iter().cloned().collect();
    let u = e.U();
    let vecs = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    Ok((vals, vecs))
}

fn phase_to_real(m: &DMatrix<Complex64>, col: usize) -> Complex64 {
    let pivot = m
        .column(col)
        .iter()
        .fold(Complex64::new(0.0, 0.0), |a, z| if z.norm() > a.norm() { *z } else { a });
    if pivot.norm() == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        pivot.conj() / pivot.norm()
    }
}

fn is_real_vector(m: &DMatrix<Complex64>, col: usize) -> bool {
    let phase = phase_to_real(m, col);
    let top = m.column(col).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
    m.column(col).iter().all(|z| (z * phase).im.abs() <= 1e-10 * top)
}

fn rel_dist(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().max(1.0)
}

/// Greedy nearest matching of two eigenvalue lists; returns the largest
/// relative distance.
fn match_spectra(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for &x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, &y)| (k, rel_dist(x, y)))
            .fold((usize::MAX, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        if k != usize::MAX {
            used[k] = true;
            worst = worst.max(d);
        }
    }
    worst
}

/// Diagonalizes `L` (and `L₀` for the spectral cross-check), pairs
/// conjugate modes and biorthonormalizes. Eigenvalues are reported as
/// `λ = −(matrix eigenvalue)`.
pub fn eigensolve(backward: &GridOperator, forward: &GridOperator, grid: &PeriodicGrid) -> Result<SpectralExpansion> {
    let n = grid.len();
    if backward.n != n || forward.n != n {
        return Err(Error::Spectral("operator size does not match the grid".into()));
    }
    let (mu_raw, vecs) = faer_eigen(&forward.to_dense())?;
    let (lam0_raw, _) = faer_eigen(&backward.to_dense())?;
    let mu: Vec<Complex64> = mu_raw.iter().map(|z| -z).collect();
    let lam_b: Vec<Complex64> = lam0_raw.iter().map(|z| -z).collect();
    let adjoint_mismatch = match_spectra(&lam_b, &mu);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (mu[a].re, mu[a].im)
            .partial_cmp(&(mu[b].re, mu[b].im))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<Complex64> = order.iter().map(|&k| mu[k]).collect();
    let mut right = DMatrix::from_fn(n, n, |i, j| vecs[(i, order[j])]);

    // conjugate pairing on the sorted list
    let scale = eigenvalues.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    let real_tol = 1e-12 * scale;
    let mut pairs = Vec::new();
    let mut paired = vec![false; n];
    let mut pairing_residual = 0.0_f64;
    for i in 0..n {
        if paired[i] {
            continue;
        }
        let z = eigenvalues[i];
        if z.im.abs() <= real_tol && is_real_vector(&right, i) {
            paired[i] = true;
            pairs.push(ModePair::Real(i));
            continue;
        }
        let (k, d) = (0..n)
            .filter(|&k| !paired[k] && k != i)
            .map(|k| (k, rel_dist(z.conj(), eigenvalues[k])))
            .fold((usize::MAX, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        if k == usize::MAX || d > PAIRING_TOL {
            return Err(Error::Spectral(format!(
                "eigenvalue {z} has no conjugate partner (residual {d:e})"
            )));
        }
        pairing_residual = pairing_residual.max(d);
        paired[i] = true;
        paired[k] = true;
        let (lo, hi) = if z.im < 0.0 { (i, k) } else { (k, i) };
        pairs.push(ModePair::Conjugate(lo, hi));
    }
    let mut eigenvalues = eigenvalues;
    for p in &pairs {
        match *p {
            ModePair::Real(i) => {
                // rotate to a real vector
                let phase = phase_to_real(&right, i);
                for r in 0..n {
                    right[(r, i)] = Complex64::new((right[(r, i)] * phase).re, 0.0);
                }
                eigenvalues[i].im = 0.0;
            }
            ModePair::Conjugate(lo, hi) => {
                let avg = 0.5 * (eigenvalues[lo] + eigenvalues[hi].conj());
                eigenvalues[lo] = avg;
                eigenvalues[hi] = avg.conj();
                for r in 0..n {
                    right[(r, hi)] = right[(r, lo)].conj();
                }
            }
        }
    }

    let cell = grid.cell();
    let inv = right
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Spectral("eigenvector matrix is singular (defective operator)".into()))?;
    let mut left = inv.transpose() / Complex64::new(cell, 0.0);

    // zero mode: backward eigenfunction equal to 1
    let zero = (0..n)
        .min_by(|&a, &b| eigenvalues[a].norm().partial_cmp(&eigenvalues[b].norm()).unwrap())
        .unwrap_or(0);
    let mean = left.column(zero).iter().sum::<Complex64>() / Complex64::new(n as f64, 0.0);
    if mean.norm() == 0.0 {
        return Err(Error::Spectral("zero mode has no constant component".into()));
    }
    for r in 0..n {
        left[(r, zero)] /= mean;
        right[(r, zero)] *= mean;
    }

    let b = left.transpose() * &right * Complex64::new(cell, 0.0);
    let biorthonormality = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .map(|(i, k)| {
            let target = if i == k { 1.0 } else { 0.0 };
            (b[(i, k)] - Complex64::new(target, 0.0)).norm()
        })
        .fold(0.0_f64, f64::max);
    let lambda0 = eigenvalues[zero].norm();
    let diagnostics = SpectralDiagnostics {
        adjoint_mismatch,
        biorthonormality,
        pairing_residual,
        lambda0,
    };
    if adjoint_mismatch > PAIRING_TOL {
        return Err(Error::Spectral(format!(
            "spectra of L and L0 differ by {adjoint_mismatch:e}"
        )));
    }
    Ok(SpectralExpansion {
        grid: grid.clone(),
        eigenvalues,
        right,
        left,
        pairs,
        diagnostics,
    })
}

/// Assembles both generators and diagonalizes them.
pub fn solve(coef: &GridCoefficients, grid: &PeriodicGrid) -> Result<SpectralExpansion> {
    let l0 = assemble_backward(coef, grid)?;
    let l = assemble_forward(coef, grid)?;
    eigensolve(&l0, &l, grid)
}

/// `S⁰(s₀) = exp[λ g(s₀)]`.
pub fn time_factor_initial(lambda: Complex64, gauge: &Gauge, s0: f64) -> Result<Complex64> {
    Ok((lambda * gauge.try_eval(s0)?).exp())
}

/// `S(s) = exp[−λ g(s)]`.
pub fn time_factor_final(lambda: Complex64, gauge: &Gauge, s: f64) -> Result<Complex64> {
    Ok((-lambda * gauge.try_eval(s)?).exp())
}

impl SpectralExpansion {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Number of leading modes, extended so no conjugate pair is split.
    pub fn complete_modes(&self, n_modes: usize) -> usize {
        let n = n_modes.min(self.len());
        let mut m = n;
        for p in &self.pairs {
            if let ModePair::Conjugate(a, b) = *p {
                if (a < n) != (b < n) {
                    m = m.max(a.max(b) + 1);
                }
            }
        }
        m
    }

    /// Grid function `x̄ ↦ Σₙ Xₙ(x̄) Xₙ⁰(x̄₀) e^{−λₙ Δg}` (complex).
    pub fn density_complex(&self, x0: usize, delta_g: f64, n_modes: usize) -> Result<Vec<Complex64>> {
        if delta_g < 0.0 {
            return Err(Error::Domain(format!("g - g0 = {delta_g} must be >= 0")));
        }
        if x0 >= self.grid.len() {
            return Err(Error::Domain(format!("node {x0} outside the grid")));
        }
        let m = self.complete_modes(n_modes);
        let coef: Vec<Complex64> = (0..m)
            .map(|k| self.left[(x0, k)] * (-self.eigenvalues[k] * delta_g).exp())
            .collect();
        Ok((0..self.grid.len())
            .map(|x| (0..m).map(|k| self.right[(x, k)] * coef[k]).sum())
            .collect())
    }

    /// Real transition density on the grid; fails if the imaginary residue
    /// exceeds `1e−8` of the largest value.
    pub fn density_field(&self, x0: usize, delta_g: f64, n_modes: usize) -> Result<Vec<f64>> {
        let z = self.density_complex(x0, delta_g, n_modes)?;
        let top = z.iter().fold(1.0_f64, |m, c| m.max(c.re.abs()));
        let im = z.iter().fold(0.0_f64, |m, c| m.max(c.im.abs()));
        if im > 1e-8 * top {
            return Err(Error::Spectral(format!(
                "imaginary residue {im:e} in the spectral density"
            )));
        }
        Ok(z.iter().map(|c| c.re).collect())
    }

    pub fn stationary(&self) -> Vec<f64> {
        let zero = (0..self.len())
            .min_by(|&a, &b| {
                self.eigenvalues[a]
                    .norm()
                    .partial_cmp(&self.eigenvalues[b].norm())
                    .unwrap()
            })
            .unwrap_or(0);
        (0..self.grid.len()).map(|x| self.right[(x, zero)].re).collect()
    }

    /// `p(x̄, s | x̄₀, s₀)` at grid nodes.
    #[allow(clippy::too_many_arguments)]
    pub fn spectral_density(
        &self,
        x: usize,
        s: f64,
        x0: usize,
        s0: f64,
        gauge: &Gauge,
        n_modes: usize,
    ) -> Result<f64> {
        let dg = gauge.try_eval(s)? - gauge.try_eval(s0)?;
        Ok(self.density_field(x0, dg, n_modes)?[x])
    }

    /// Transition matrix `P[x, x₀]` for a gauge difference.
    pub fn transition_matrix(&self, delta_g: f64) -> DMatrix<f64> {
        let n = self.len();
        let mut scaled = self.right.clone();
        for k in 0..n {
            let f = (-self.eigenvalues[k] * delta_g).exp();
            for r in 0..n {
                scaled[(r, k)] *= f;
            }
        }
        (scaled * self.left.transpose()).map(|z| z.re)
    }

    /// Joint density of grid nodes `points` at ordered parameters `params`,
    /// started from the stationary density.
    pub fn joint_density(&self, points: &[usize], params: &[f64], gauge: &Gauge) -> Result<f64> {
        if points.len() != params.len() || points.is_empty() {
            return Err(Error::Domain("points and parameters must align".into()));
        }
        let n = self.len();
        let mut p = self.stationary()[points[0]];
        for k in 1..points.len() {
            let dg = gauge.try_eval(params[k])? - gauge.try_eval(params[k - 1])?;
            p *= self.density_field(points[k - 1], dg, n)?[points[k]];
        }
        Ok(p)
    }
}

/// Marginalizing the middle node of every consecutive triple in the chain
/// must give the two-step conditional. Returns the largest absolute error.
pub fn markov_factorization_check(exp: &SpectralExpansion, x0: usize, params: &[f64], gauge: &Gauge) -> Result<f64> {
    if params.len() < 3 || params.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("need >= 3 strictly increasing parameters".into()));
    }
    let cell = exp.grid.cell();
    let n = exp.len();
    let mut worst = 0.0_f64;
    for t in params.windows(3) {
        let (g0, g1, g2) = (gauge.try_eval(t[0])?, gauge.try_eval(t[1])?, gauge.try_eval(t[2])?);
        let first = exp.density_field(x0, g1 - g0, n)?;
        let second = exp.transition_matrix(g2 - g1);
        let direct = exp.density_field(x0, g2 - g0, n)?;
        for (x, d) in direct.iter().enumerate() {
            let conv: f64 = (0..n).map(|m| second[(x, m)] * first[m]).sum::<f64>() * cell;
            worst = worst.max((conv - d).abs());
        }
    }
    Ok(worst)
}

/// Fits the decay rate of `‖p(·, Δg) − stationary‖∞` over `delta_g_values`.
pub fn decay_rate_fit(exp: &SpectralExpansion, x0: usize, delta_g_values: &[f64]) -> Result<f64> {
    if delta_g_values.len() < 2 {
        return Err(Error::Insufficient("decay fit needs >= 2 parameter values".into()));
    }
    let stat = exp.stationary();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &dg in delta_g_values {
        let p = exp.density_field(x0, dg, exp.len())?;
        let dev = p
            .iter()
            .zip(&stat)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if !(dev > 0.0) {
            return Err(Error::Insufficient(format!("no deviation left at g - g0 = {dg}")));
        }
        xs.push(dg);
        ys.push(dev.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(-sxy / sxx)
}
