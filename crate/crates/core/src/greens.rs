//! Label-invariant Green functions of the unperturbed operator.
//!
//! The truncated Green function at a label-`k` vertex solves
//! `Γ_k = −1/(z − v_k + Σ_l M_kl Γ_l)`. [`solve_gamma`] finds the unique
//! solution in the upper half plane, [`solve_gamma_boundary`] continues it to
//! the real axis, and [`detect_bands`] scans for energies where the boundary
//! values keep a positive imaginary part.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::contraction::weights_p;
use crate::error::{Error, Result};
use crate::substitution::{cherry_sphere, LabeledTree, SubstitutionModel};

/// Tuning of the fixed-point and Newton solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on `max_k |Γ_k − Φ(Γ)_k|` for an accepted solution.
    pub tol: f64,
    /// Damped fixed-point sweeps before switching to Newton.
    pub fixed_point_iters: usize,
    pub newton_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            fixed_point_iters: 400,
            newton_iters: 80,
        }
    }
}

/// Label-indexed truncated Green functions at a single energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenVector {
    pub z: Complex64,
    pub values: Vec<Complex64>,
}

impl GreenVector {
    pub fn value(&self, label: usize) -> Complex64 {
        self.values[label]
    }

    /// `max_k |Γ_k − Φ(Γ)_k|`.
    pub fn residual(&self, model: &SubstitutionModel) -> f64 {
        residual(model, self.z, &self.values)
    }

    pub fn min_im(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, g| m.min(g.im))
    }
}

/// `D_k = z − v_k + Σ_l M_kl Γ_l`.
fn denominators(model: &SubstitutionModel, z: Complex64, g: &[Complex64]) -> Vec<Complex64> {
    (0..model.alphabet_size())
        .map(|k| {
            let mut d = z - model.v_per()[k];
            for (l, &m) in model.matrix()[k].iter().enumerate() {
                if m != 0 {
                    d += f64::from(m) * g[l];
                }
            }
            d
        })
        .collect()
}

/// One application of `Φ(Γ)_k = −1/D_k`.
pub fn phi(model: &SubstitutionModel, z: Complex64, g: &[Complex64]) -> Vec<Complex64> {
    denominators(model, z, g)
        .into_iter()
        .map(|d| -1.0 / d)
        .collect()
}

pub fn residual(model: &SubstitutionModel, z: Complex64, g: &[Complex64]) -> f64 {
    phi(model, z, g)
        .iter()
        .zip(g)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

fn accepted(model: &SubstitutionModel, z: Complex64, g: &[Complex64], tol: f64) -> bool {
    g.iter().all(|x| x.im > 0.0 && x.re.is_finite() && x.im.is_finite())
        && residual(model, z, g) <= tol
}

/// Newton iteration on `F_k(Γ) = Γ_k D_k + 1`, run until the step stops
/// shrinking. Returns `None` on a singular Jacobian or divergence.
fn newton(
    model: &SubstitutionModel,
    z: Complex64,
    start: &[Complex64],
    iters: usize,
) -> Option<Vec<Complex64>> {
    let n = model.alphabet_size();
    let mut g = start.to_vec();
    let mut last_step = f64::INFINITY;
    for _ in 0..iters {
        let d = denominators(model, z, &g);
        let f = DVector::from_iterator(n, (0..n).map(|k| -(g[k] * d[k] + 1.0)));
        let jac = DMatrix::from_fn(n, n, |k, j| {
            let diag = if k == j { d[k] } else { Complex64::new(0.0, 0.0) };
            diag + g[k] * f64::from(model.entry(k, j))
        });
        let step = jac.lu().solve(&f)?;
        let size = step.iter().map(|s| s.norm()).fold(0.0, f64::max);
        if !size.is_finite() {
            return None;
        }
        for k in 0..n {
            g[k] += step[k];
        }
        let scale = g.iter().map(|x| x.norm()).fold(1.0, f64::max);
        if size <= 4.0 * f64::EPSILON * scale || (size >= last_step && size < 1e-10 * scale) {
            break;
        }
        last_step = size;
    }
    Some(g)
}

/// Solves from the given starting point without continuation.
pub fn solve_gamma_seeded(
    model: &SubstitutionModel,
    z: Complex64,
    seed: &[Complex64],
    opts: &SolverOptions,
) -> Result<GreenVector> {
    if !(z.im > 0.0) {
        return Err(Error::InvalidZ(z.im));
    }
    if seed.len() != model.alphabet_size() {
        return Err(Error::InvalidConfig("seed length differs from alphabet size".into()));
    }
    let mut g = seed.to_vec();
    let mut res = residual(model, z, &g);
    let mut damping = 1.0;
    let mut reference = res;
    for it in 0..opts.fixed_point_iters {
        if res <= opts.tol {
            break;
        }
        let next = phi(model, z, &g);
        let trial: Vec<Complex64> = g
            .iter()
            .zip(&next)
            .map(|(a, b)| (1.0 - damping) * a + damping * b)
            .collect();
        let trial_res = residual(model, z, &trial);
        if trial_res > res {
            damping *= 0.5;
            if damping < 1e-3 {
                break;
            }
        }
        g = trial;
        res = trial_res;
        // stall: less than 10% progress over 10 sweeps
        if it % 10 == 9 {
            if res > 0.9 * reference {
                break;
            }
            reference = res;
        }
    }
    if let Some(polished) = newton(model, z, &g, opts.newton_iters) {
        if accepted(model, z, &polished, opts.tol) {
            return Ok(GreenVector { z, values: polished });
        }
    }
    if accepted(model, z, &g, opts.tol) {
        return Ok(GreenVector { z, values: g });
    }
    Err(Error::NoConvergence {
        max_iter: opts.fixed_point_iters + opts.newton_iters,
        residual: residual(model, z, &g),
    })
}

/// Solves the fixed-point system at `z` with `Im z > 0`, starting from
/// `Γ ≡ i` and falling back to continuation from `Re z + i` when the direct
/// solve stalls.
pub fn solve_gamma(model: &SubstitutionModel, z: Complex64) -> Result<GreenVector> {
    solve_gamma_with(model, z, &SolverOptions::default())
}

pub fn solve_gamma_with(
    model: &SubstitutionModel,
    z: Complex64,
    opts: &SolverOptions,
) -> Result<GreenVector> {
    if !(z.im > 0.0) {
        return Err(Error::InvalidZ(z.im));
    }
    let start = vec![Complex64::new(0.0, 1.0); model.alphabet_size()];
    match solve_gamma_seeded(model, z, &start, opts) {
        Ok(g) => Ok(g),
        Err(err @ Error::NoConvergence { .. }) if z.im < 1.0 => {
            continuation(model, z.re, z.im, opts).map_err(|_| err)
        }
        Err(err) => Err(err),
    }
}

/// Step from `(E, eta_from)` with known solution to `(E, eta_to)`, bisecting
/// the step in log scale when a solve fails.
fn continue_step(
    model: &SubstitutionModel,
    e: f64,
    from: &GreenVector,
    eta_to: f64,
    opts: &SolverOptions,
    depth: usize,
) -> Result<GreenVector> {
    let z = Complex64::new(e, eta_to);
    match solve_gamma_seeded(model, z, &from.values, opts) {
        Ok(g) => Ok(g),
        Err(err) if depth >= 24 => Err(err),
        Err(_) => {
            let mid = (from.z.im * eta_to).sqrt();
            let half = continue_step(model, e, from, mid, opts, depth + 1)?;
            continue_step(model, e, &half, eta_to, opts, depth + 1)
        }
    }
}

fn continuation(
    model: &SubstitutionModel,
    e: f64,
    eta_floor: f64,
    opts: &SolverOptions,
) -> Result<GreenVector> {
    let start = vec![Complex64::new(0.0, 1.0); model.alphabet_size()];
    let mut current = solve_gamma_seeded(model, Complex64::new(e, 1.0), &start, opts)?;
    let mut eta = 1.0;
    while eta > eta_floor {
        let next = (eta * 0.5).max(eta_floor);
        current = continue_step(model, e, &current, next, opts, 0)?;
        eta = next;
    }
    Ok(current)
}

/// Boundary value at `E + i·eta_floor`, reached by halving `η` from 1 and
/// seeding each solve with the previous solution.
pub fn solve_gamma_boundary(
    model: &SubstitutionModel,
    e: f64,
    eta_floor: f64,
) -> Result<GreenVector> {
    solve_gamma_boundary_with(model, e, eta_floor, &SolverOptions::default())
}

pub fn solve_gamma_boundary_with(
    model: &SubstitutionModel,
    e: f64,
    eta_floor: f64,
    opts: &SolverOptions,
) -> Result<GreenVector> {
    if !(eta_floor > 0.0) {
        return Err(Error::InvalidZ(eta_floor));
    }
    if eta_floor >= 1.0 {
        let start = vec![Complex64::new(0.0, 1.0); model.alphabet_size()];
        return solve_gamma_seeded(model, Complex64::new(e, eta_floor), &start, opts);
    }
    continuation(model, e, eta_floor, opts)
}

/// Solutions along `E + iη` for every `η` of the halving ladder
/// `1, 1/2, …, 2^-levels`, largest first.
pub fn solve_eta_ladder(
    model: &SubstitutionModel,
    e: f64,
    levels: usize,
) -> Result<Vec<GreenVector>> {
    let opts = SolverOptions::default();
    let start = vec![Complex64::new(0.0, 1.0); model.alphabet_size()];
    let mut out = Vec::with_capacity(levels + 1);
    out.push(solve_gamma_seeded(model, Complex64::new(e, 1.0), &start, &opts)?);
    for j in 1..=levels {
        let eta = 0.5f64.powi(j as i32);
        let next = continue_step(model, e, out.last().expect("nonempty"), eta, &opts, 0)?;
        out.push(next);
    }
    Ok(out)
}

/// One grid point of a band scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandSample {
    pub energy: f64,
    pub im: Vec<f64>,
}

/// Energies where every boundary value has imaginary part above threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralBands {
    pub intervals: Vec<(f64, f64)>,
    pub eta_floor: f64,
    pub im_threshold: f64,
    pub grid_step: f64,
    #[serde(skip)]
    pub samples: Vec<BandSample>,
}

impl SpectralBands {
    /// True if `[lo, hi]` lies inside one interval with at least `margin`
    /// clearance on both sides.
    pub fn contains_with_margin(&self, lo: f64, hi: f64, margin: f64) -> bool {
        lo <= hi
            && self
                .intervals
                .iter()
                .any(|&(a, b)| lo - margin > a && hi + margin < b)
    }

    /// CSV rows `E, Im Γ_0, …` of the scan.
    pub fn scan_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("E");
        for l in labels {
            out.push_str(&format!(",im_gamma_{l}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!("{:.12e}", s.energy));
            for v in &s.im {
                out.push_str(&format!(",{v:.12e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Default scan parameters.
pub const DEFAULT_GRID_STEP: f64 = 1e-2;
pub const DEFAULT_ETA_FLOOR: f64 = 1e-6;
pub const DEFAULT_IM_THRESHOLD: f64 = 1e-3;

fn in_band(model: &SubstitutionModel, e: f64, eta_floor: f64, threshold: f64) -> Result<(bool, Vec<f64>)> {
    let g = solve_gamma_boundary(model, e, eta_floor)?;
    let im: Vec<f64> = g.values.iter().map(|v| v.im).collect();
    Ok((g.min_im() > threshold, im))
}

fn refine_edge(
    model: &SubstitutionModel,
    mut inside: f64,
    mut outside: f64,
    eta_floor: f64,
    threshold: f64,
    width: f64,
) -> Result<f64> {
    while (inside - outside).abs() > width {
        let mid = 0.5 * (inside + outside);
        if in_band(model, mid, eta_floor, threshold)?.0 {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok(0.5 * (inside + outside))
}

/// Scans `E ∈ [−L, L]` with `L` the crude norm bound and merges in-band grid
/// points into intervals whose endpoints are bisected to `grid_step / 100`.
pub fn detect_bands(
    model: &SubstitutionModel,
    grid_step: f64,
    eta_floor: f64,
    im_threshold: f64,
) -> Result<SpectralBands> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidConfig("grid_step must be positive".into()));
    }
    let bound = model.norm_bound();
    let n = (2.0 * bound / grid_step).ceil() as usize;
    let energies: Vec<f64> = (0..=n).map(|i| -bound + i as f64 * grid_step).collect();
    let flags: Vec<(bool, Vec<f64>)> = energies
        .par_iter()
        .map(|&e| in_band(model, e, eta_floor, im_threshold))
        .collect::<Result<_>>()?;
    let width = grid_step / 100.0;
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < energies.len() {
        if !flags[i].0 {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < energies.len() && flags[i + 1].0 {
            i += 1;
        }
        let lo = if start == 0 {
            energies[0]
        } else {
            refine_edge(model, energies[start], energies[start - 1], eta_floor, im_threshold, width)?
        };
        let hi = if i + 1 == energies.len() {
            energies[i]
        } else {
            refine_edge(model, energies[i], energies[i + 1], eta_floor, im_threshold, width)?
        };
        intervals.push((lo, hi));
        i += 1;
    }
    let samples = energies
        .into_iter()
        .zip(flags)
        .map(|(energy, (_, im))| BandSample { energy, im })
        .collect();
    Ok(SpectralBands {
        intervals,
        eta_floor,
        im_threshold,
        grid_step,
        samples,
    })
}

/// Stochastic label transition matrix with its left Perron eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PMatrix {
    pub entries: Vec<Vec<f64>>,
    pub left_eigenvector: Vec<f64>,
}

impl PMatrix {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    /// `(P x)_j = Σ_k P_jk x_k`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .map(|row| row.iter().zip(x).map(|(p, v)| p * v).sum())
            .collect()
    }

    /// `(Pᵀ u)_k = Σ_j u_j P_jk`.
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|k| (0..n).map(|j| u[j] * self.entries[j][k]).sum())
            .collect()
    }

    /// `‖Pᵀu − u‖∞`.
    pub fn eigen_residual(&self) -> f64 {
        self.apply_transpose(&self.left_eigenvector)
            .iter()
            .zip(&self.left_eigenvector)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `P_jk` is the total weight `p_x` of label-`k` slots in the cherry sphere
/// of a label-`j` vertex.
pub fn build_p_matrix(model: &SubstitutionModel, gamma: &GreenVector) -> Result<PMatrix> {
    let n = model.alphabet_size();
    if gamma.values.iter().any(|g| !(g.im > 0.0)) {
        return Err(Error::Degenerate("Green vector has nonpositive imaginary part".into()));
    }
    let mut entries = vec![vec![0.0; n]; n];
    for (j, row) in entries.iter_mut().enumerate() {
        let sphere = cherry_sphere(model, j)?;
        let p = weights_p(gamma, &sphere)?;
        for (slot, w) in sphere.members.iter().zip(p) {
            row[slot.label] += w;
        }
    }
    let left_eigenvector = left_perron_vector(&entries, 1e-12)?;
    Ok(PMatrix {
        entries,
        left_eigenvector,
    })
}

/// Power iteration on the lazy chain `(I + P)/2`, which has the same left
/// eigenvector and no periodic part.
fn left_perron_vector(p: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
    let n = p.len();
    let mut u = vec![1.0 / n as f64; n];
    for _ in 0..10_000_000 {
        let pu: Vec<f64> = (0..n)
            .map(|k| (0..n).map(|j| u[j] * p[j][k]).sum())
            .collect();
        let err = pu.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if err <= tol {
            return Ok(u);
        }
        let mut next: Vec<f64> = u.iter().zip(&pu).map(|(a, b)| 0.5 * (a + b)).collect();
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        u = next;
    }
    Err(Error::NoConvergence {
        max_iter: 10_000_000,
        residual: f64::NAN,
    })
}

/// Green function of the whole tree at the root, which coincides with the
/// truncated one.
pub fn full_green_at_root(model: &SubstitutionModel, gamma: &GreenVector) -> Complex64 {
    gamma.values[model.root_label()]
}

/// Green function at `x0` of the tree re-rooted at `x0`. Off-path subtrees
/// keep their forward trees and contribute the unperturbed values; the
/// root-side neighbour along the path is resolved inward from the root.
pub fn reroot_green(
    model: &SubstitutionModel,
    tree: &LabeledTree,
    x0: usize,
    gamma: &GreenVector,
) -> Result<Complex64> {
    if x0 >= tree.len() {
        return Err(Error::InsufficientDepth {
            vertex: x0,
            depth: tree.depth(),
        });
    }
    let path = tree.path_from_root(x0);
    let mut upstream: Option<Complex64> = None;
    for (i, &y) in path.iter().enumerate() {
        let next_on_path = path.get(i + 1).copied();
        let vy = tree.vertex(y);
        let mut d = gamma.z - model.v_per()[vy.label];
        if vy.is_leaf() && y != x0 {
            return Err(Error::InsufficientDepth {
                vertex: x0,
                depth: tree.depth(),
            });
        }
        if vy.is_leaf() {
            for l in model.child_labels(vy.label) {
                d += gamma.values[l];
            }
        }
        for c in vy.children() {
            if Some(c) != next_on_path {
                d += gamma.values[tree.label(c)];
            }
        }
        if let Some(u) = upstream {
            d += u;
        }
        upstream = Some(-1.0 / d);
    }
    Ok(upstream.expect("path is nonempty"))
}
