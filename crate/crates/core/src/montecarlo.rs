//! Monte Carlo estimates for the perturbed operator
//! `H^λ = Δ + λ(v + θ-hopping)` on depth-truncated trees.
//!
//! One tree is grown per root label. Each trial samples disorder on it,
//! runs the Green function recursion inward from the leaves and records
//! moments of the root value against the unperturbed `Γ`. Trials run in
//! parallel; the reduction is a compensated sum in trial order, so results
//! depend only on the configuration and the seed.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::{kappa, SphereState};
use crate::disorder::{derive_seed, sample, DisorderRealization, DisorderSpec};
use crate::error::{Error, Result};
use crate::greens::{build_p_matrix, solve_gamma, GreenVector, PMatrix};
use crate::hyperbolic::gamma;
use crate::numeric::{mean_stderr, Compensated};
use crate::substitution::{
    cherry_sphere, enumerate_permutations, grow_tree_ordered, ChildOrder, LabelPermutation,
    LabeledTree, SubstitutionModel, DEFAULT_VERTEX_CAP,
};

/// Leaf seeding of the truncated recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Leaves carry the unperturbed `Γ` of their label.
    #[default]
    Free,
    /// Leaves are childless vertices.
    Dirichlet,
}

/// Largest depth chosen automatically.
pub const MAX_AUTO_DEPTH: usize = 24;
/// Relative tolerance of the depth pilot.
pub const DEPTH_TOLERANCE: f64 = 1e-3;
/// Number of pilot realizations per depth.
pub const PILOT_TRIALS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub model: SubstitutionModel,
    pub disorder: DisorderSpec,
    pub energy: f64,
    pub eta: f64,
    pub lambda: f64,
    pub p_exp: f64,
    /// `None` picks the depth with the pilot.
    pub depth: Option<usize>,
    pub boundary: Boundary,
    pub n_trials: usize,
    pub seed: u64,
    pub child_order: ChildOrder,
    pub vertex_cap: usize,
}

impl TrialConfig {
    pub fn new(model: SubstitutionModel, disorder: DisorderSpec) -> Self {
        Self {
            model,
            disorder,
            energy: 0.0,
            eta: 0.01,
            lambda: 0.0,
            p_exp: 1.5,
            depth: None,
            boundary: Boundary::Free,
            n_trials: 1000,
            seed: 0,
            child_order: ChildOrder::Canonical,
            vertex_cap: DEFAULT_VERTEX_CAP,
        }
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.energy, self.eta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda {} not in [0, 1)", self.lambda)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidConfig(format!("eta {} not in (0, 1]", self.eta)));
        }
        if !(self.p_exp > 1.0) {
            return Err(Error::InvalidConfig(format!("p {} must exceed 1", self.p_exp)));
        }
        if let Some(d) = self.depth {
            if d < 2 {
                return Err(Error::InvalidConfig("depth must be at least 2".into()));
            }
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("need at least one trial".into()));
        }
        self.disorder.validate(&self.model)
    }
}

/// Root value of the truncated recursion on `tree` with disorder strength
/// `lambda`. The edge from `c` to its parent has `|t|² = (1 + λθ_c)²`.
pub fn truncated_green(
    model: &SubstitutionModel,
    reference: &GreenVector,
    tree: &LabeledTree,
    realization: &DisorderRealization,
    lambda: f64,
    boundary: Boundary,
) -> Complex64 {
    truncated_green_prefix(model, reference, tree, tree.len(), tree.depth(), realization, lambda, boundary)
}

/// The recursion restricted to the first `len` vertices, which form the
/// depth-`depth` tree when `tree` is deeper.
#[allow(clippy::too_many_arguments)]
fn truncated_green_prefix(
    model: &SubstitutionModel,
    reference: &GreenVector,
    tree: &LabeledTree,
    len: usize,
    depth: usize,
    realization: &DisorderRealization,
    lambda: f64,
    boundary: Boundary,
) -> Complex64 {
    let z = reference.z;
    let mut values = vec![Complex64::new(0.0, 0.0); len];
    for id in (0..len).rev() {
        let vx = tree.vertex(id);
        let mut potential = model.v_per()[vx.label] + lambda * realization.v[id];
        if id == 0 {
            potential += realization.root_potential_offset;
        }
        let leaf = vx.depth == depth || vx.is_leaf();
        values[id] = if leaf {
            match boundary {
                Boundary::Free => reference.values[vx.label],
                Boundary::Dirichlet => -1.0 / (z - potential),
            }
        } else {
            let mut d = z - potential;
            for c in vx.children() {
                let t = 1.0 + lambda * realization.theta[c];
                d += t * t * values[c];
            }
            -1.0 / d
        };
        debug_assert!(z.im <= 0.0 || values[id].im > 0.0);
    }
    values[0]
}

/// The cherry-sphere state seen from the root of a realization: slots carry
/// `(1 + λθ_x)² Γ_x` of the subtree below, `w = λv_o`, `w' = λv_{o'}` and
/// `1 + ϑ = (1 + λθ_{o'})²`.
pub fn sphere_state_at_root(
    model: &SubstitutionModel,
    reference: &GreenVector,
    tree: &LabeledTree,
    realization: &DisorderRealization,
    lambda: f64,
    boundary: Boundary,
) -> Result<SphereState> {
    let values = subtree_values(model, reference, tree, realization, lambda, boundary);
    let sphere = cherry_sphere(model, tree.label(0))?;
    if tree.depth() < 2 {
        return Err(Error::InsufficientDepth {
            vertex: 0,
            depth: tree.depth(),
        });
    }
    let root_children: Vec<usize> = tree.vertex(0).children().collect();
    let o_prime = *root_children
        .iter()
        .find(|&&c| tree.label(c) == sphere.o_prime_label)
        .expect("o' label occurs among the root's children");
    let mut outer_pool: Vec<usize> = root_children.into_iter().filter(|&c| c != o_prime).collect();
    let mut inner_pool: Vec<usize> = tree.vertex(o_prime).children().collect();
    let scaled = |x: usize| {
        let t = 1.0 + lambda * realization.theta[x];
        t * t * values[x]
    };
    let mut g = Vec::with_capacity(sphere.len());
    for slot in &sphere.members {
        let pool = match slot.half {
            crate::substitution::Half::Outer => &mut outer_pool,
            crate::substitution::Half::Inner => &mut inner_pool,
        };
        let at = pool
            .iter()
            .position(|&x| tree.label(x) == slot.label)
            .expect("slot label available");
        g.push(scaled(pool.remove(at)));
    }
    let t = 1.0 + lambda * realization.theta[o_prime];
    SphereState::on_sphere(
        model,
        reference,
        sphere,
        g,
        lambda * realization.v[0] + realization.root_potential_offset,
        lambda * realization.v[o_prime],
        t * t - 1.0,
    )
}

fn subtree_values(
    model: &SubstitutionModel,
    reference: &GreenVector,
    tree: &LabeledTree,
    realization: &DisorderRealization,
    lambda: f64,
    boundary: Boundary,
) -> Vec<Complex64> {
    let z = reference.z;
    let mut values = vec![Complex64::new(0.0, 0.0); tree.len()];
    for id in (0..tree.len()).rev() {
        let vx = tree.vertex(id);
        let mut potential = model.v_per()[vx.label] + lambda * realization.v[id];
        if id == 0 {
            potential += realization.root_potential_offset;
        }
        values[id] = if vx.is_leaf() {
            match boundary {
                Boundary::Free => reference.values[vx.label],
                Boundary::Dirichlet => -1.0 / (z - potential),
            }
        } else {
            let mut d = z - potential;
            for c in vx.children() {
                let t = 1.0 + lambda * realization.theta[c];
                d += t * t * values[c];
            }
            -1.0 / d
        };
    }
    values
}

/// Pilot deviations `|root(D) − root(D+2)|` per depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthPilot {
    pub depth: usize,
    pub deviation: f64,
    pub tolerance: f64,
}

fn trial_seed(seed: u64, label: usize, trial: usize) -> u64 {
    derive_seed(seed, ((label as u64) << 32) | trial as u64)
}

fn pilot_seed(seed: u64, label: usize, trial: usize) -> u64 {
    derive_seed(seed ^ 0x9e37_79b9_7f4a_7c15, ((label as u64) << 32) | trial as u64)
}

/// Largest pilot deviation between depth `d` and `d + 2`.
fn pilot_deviation(cfg: &TrialConfig, reference: &GreenVector, label: usize, d: usize) -> Result<f64> {
    let deep = grow_tree_ordered(&cfg.model, label, d + 2, cfg.vertex_cap, cfg.child_order)?;
    let shallow_len = deep.vertices().iter().take_while(|v| v.depth <= d).count();
    let mut worst: f64 = 0.0;
    for t in 0..PILOT_TRIALS {
        let r = sample(&cfg.disorder, &cfg.model, &deep, pilot_seed(cfg.seed, label, t))?;
        let a = truncated_green_prefix(&cfg.model, reference, &deep, shallow_len, d, &r, cfg.lambda, cfg.boundary);
        let b = truncated_green(&cfg.model, reference, &deep, &r, cfg.lambda, cfg.boundary);
        worst = worst.max((a - b).norm());
    }
    Ok(worst)
}

/// Depth for root label `label` and the pilot record that led to it.
pub fn choose_depth(
    cfg: &TrialConfig,
    reference: &GreenVector,
    label: usize,
) -> Result<(usize, Vec<DepthPilot>)> {
    let tolerance = DEPTH_TOLERANCE * (1.0 + reference.values[label].norm());
    let mut pilots = Vec::new();
    if let Some(d) = cfg.depth {
        let deviation = pilot_deviation(cfg, reference, label, d)?;
        pilots.push(DepthPilot { depth: d, deviation, tolerance });
        if deviation >= tolerance {
            return Err(Error::DepthInsufficient { depth: d, deviation, tolerance });
        }
        return Ok((d, pilots));
    }
    for d in 2..=MAX_AUTO_DEPTH {
        let deviation = match pilot_deviation(cfg, reference, label, d) {
            Ok(v) => v,
            Err(Error::SizeLimit { .. }) => break,
            Err(e) => return Err(e),
        };
        pilots.push(DepthPilot { depth: d, deviation, tolerance });
        if deviation < tolerance {
            return Ok((d, pilots));
        }
    }
    let last = pilots.last().cloned();
    Err(Error::DepthInsufficient {
        depth: last.as_ref().map_or(2, |p| p.depth),
        deviation: last.map_or(f64::INFINITY, |p| p.deviation),
        tolerance,
    })
}

/// Per-label mean of `γ(Γ_root(z, H^λ), Γ_j(z, Δ))^p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentVector {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_trials: usize,
}

/// Summary of the averaged contraction coefficient over root sphere states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaSummary {
    pub mean: f64,
    pub max: f64,
    /// Mean of the variant with `c_x` in the denominator over samples where
    /// it is defined.
    pub c_weighted_mean: Option<f64>,
    pub c_weighted_undefined: usize,
    pub degenerate: usize,
}

/// All Monte Carlo statistics of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub moment_vector: MomentVector,
    /// Per-label mean of `|Γ_root − Γ_j|^p`.
    pub euclidean: Vec<f64>,
    pub euclidean_stderr: Vec<f64>,
    /// Per-label mean of `(Im Γ_root · Im Γ_j)^p`.
    pub im_product: Vec<f64>,
    /// `√(mean γ^p · mean (Im g Im h)^p)`, an upper bound on `euclidean`.
    pub cauchy_schwarz_bound: Vec<f64>,
    pub depth: Vec<usize>,
    pub pilots: Vec<Vec<DepthPilot>>,
    pub kappa: Vec<KappaSummary>,
    pub reference: GreenVector,
}

struct TrialRecord {
    gamma_p: f64,
    euclid_p: f64,
    im_p: f64,
    kappa: Option<crate::contraction::KappaValue>,
}

fn run_label(
    cfg: &TrialConfig,
    reference: &GreenVector,
    label: usize,
    perms: &[LabelPermutation],
) -> Result<(usize, Vec<DepthPilot>, Vec<TrialRecord>)> {
    let (depth, pilots) = if cfg.lambda == 0.0 && cfg.boundary == Boundary::Free && cfg.depth.is_none() {
        (2, Vec::new())
    } else {
        choose_depth(cfg, reference, label)?
    };
    let tree = grow_tree_ordered(&cfg.model, label, depth, cfg.vertex_cap, cfg.child_order)?;
    let h = reference.values[label];
    let p = cfg.p_exp;
    let records = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let r = sample(&cfg.disorder, &cfg.model, &tree, trial_seed(cfg.seed, label, t))?;
            let g = truncated_green(&cfg.model, reference, &tree, &r, cfg.lambda, cfg.boundary);
            let state = sphere_state_at_root(&cfg.model, reference, &tree, &r, cfg.lambda, cfg.boundary)?;
            Ok(TrialRecord {
                gamma_p: gamma(g, h).powf(p),
                euclid_p: (g - h).norm().powf(p),
                im_p: (g.im * h.im).powf(p),
                kappa: Some(kappa(&state, p, perms)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((depth, pilots, records))
}

/// Runs all trials for every root label.
pub fn estimate_moments(cfg: &TrialConfig) -> Result<MomentEstimate> {
    cfg.validate()?;
    let reference = solve_gamma(&cfg.model, cfg.z())?;
    let n = cfg.model.alphabet_size();
    let mut out = MomentEstimate {
        moment_vector: MomentVector {
            mean: Vec::with_capacity(n),
            stderr: Vec::with_capacity(n),
            n_trials: cfg.n_trials,
        },
        euclidean: Vec::with_capacity(n),
        euclidean_stderr: Vec::with_capacity(n),
        im_product: Vec::with_capacity(n),
        cauchy_schwarz_bound: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        pilots: Vec::with_capacity(n),
        kappa: Vec::with_capacity(n),
        reference: reference.clone(),
    };
    for label in 0..n {
        let perms = enumerate_permutations(&cfg_sphere(cfg, label)?)?;
        let (depth, pilots, records) = run_label(cfg, &reference, label, &perms)?;
        let gp: Vec<f64> = records.iter().map(|r| r.gamma_p).collect();
        let ep: Vec<f64> = records.iter().map(|r| r.euclid_p).collect();
        let ip: Vec<f64> = records.iter().map(|r| r.im_p).collect();
        let (gm, gs) = mean_stderr(&gp);
        let (em, es) = mean_stderr(&ep);
        let (im, _) = mean_stderr(&ip);
        out.moment_vector.mean.push(gm);
        out.moment_vector.stderr.push(gs);
        out.euclidean.push(em);
        out.euclidean_stderr.push(es);
        out.im_product.push(im);
        out.cauchy_schwarz_bound.push((gm * im).sqrt());
        out.depth.push(depth);
        out.pilots.push(pilots);
        out.kappa.push(summarize_kappa(&records));
    }
    Ok(out)
}

fn cfg_sphere(cfg: &TrialConfig, label: usize) -> Result<crate::substitution::CherrySphere> {
    cherry_sphere(&cfg.model, label)
}

fn summarize_kappa(records: &[TrialRecord]) -> KappaSummary {
    let mut sum = Compensated::default();
    let mut max: f64 = 0.0;
    let mut csum = Compensated::default();
    let mut cdef = 0usize;
    let mut degenerate = 0usize;
    let mut count = 0usize;
    for k in records.iter().filter_map(|r| r.kappa) {
        count += 1;
        if k.degenerate {
            degenerate += 1;
        }
        sum.add(k.value);
        max = max.max(k.value);
        if let Some(c) = k.c_weighted {
            csum.add(c);
            cdef += 1;
        }
    }
    KappaSummary {
        mean: if count > 0 { sum.value() / count as f64 } else { 0.0 },
        max,
        c_weighted_mean: (cdef > 0).then(|| csum.value() / cdef as f64),
        c_weighted_undefined: count - cdef,
        degenerate,
    }
}

/// Moment vector only.
pub fn estimate_moment_vector(cfg: &TrialConfig) -> Result<MomentVector> {
    Ok(estimate_moments(cfg)?.moment_vector)
}

/// Mean of `|Γ_root(z, H^λ) − Γ_root(z, Δ)|^p` for the model's root label,
/// with its Cauchy–Schwarz bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EuclideanMoment {
    pub mean: f64,
    pub stderr: f64,
    pub cauchy_schwarz_bound: f64,
}

pub fn euclidean_moment(cfg: &TrialConfig) -> Result<EuclideanMoment> {
    let est = estimate_moments(cfg)?;
    Ok(euclidean_from(&est, cfg.model.root_label()))
}

pub fn euclidean_from(est: &MomentEstimate, label: usize) -> EuclideanMoment {
    EuclideanMoment {
        mean: est.euclidean[label],
        stderr: est.euclidean_stderr[label],
        cauchy_schwarz_bound: est.cauchy_schwarz_bound[label],
    }
}

/// Quantities of the vector inequality `Eγ ≤ (1 − δ) P Eγ + C`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorInequalityReport {
    pub e_gamma: Vec<f64>,
    pub p_e_gamma: Vec<f64>,
    /// `P Eγ − Eγ` per label.
    pub slack: Vec<f64>,
    /// `⟨u, Eγ⟩`.
    pub u_e_gamma: f64,
    /// `⟨u, P Eγ⟩`, equal to `⟨u, Eγ⟩` up to the eigenvector residual.
    pub u_p_e_gamma: f64,
    /// `⟨u, Eγ⟩ / u_j`, an upper bound on each `Eγ_j`.
    pub u_bound: Vec<f64>,
    pub left_eigenvector: Vec<f64>,
    pub kappa: Vec<KappaSummary>,
}

pub fn vector_inequality_from(est: &MomentEstimate, pmatrix: &PMatrix) -> VectorInequalityReport {
    let e = est.moment_vector.mean.clone();
    let pe = pmatrix.apply(&e);
    let u = &pmatrix.left_eigenvector;
    let dot = |a: &[f64]| a.iter().zip(u).map(|(x, y)| x * y).sum::<f64>();
    let ue = dot(&e);
    VectorInequalityReport {
        slack: pe.iter().zip(&e).map(|(a, b)| a - b).collect(),
        u_e_gamma: ue,
        u_p_e_gamma: dot(&pe),
        u_bound: u.iter().map(|&uj| ue / uj).collect(),
        left_eigenvector: u.clone(),
        kappa: est.kappa.clone(),
        e_gamma: e,
        p_e_gamma: pe,
    }
}

pub fn verify_vector_inequality(cfg: &TrialConfig, pmatrix: &PMatrix) -> Result<VectorInequalityReport> {
    let est = estimate_moments(cfg)?;
    Ok(vector_inequality_from(&est, pmatrix))
}

/// Moments together with the transition matrix at the same energy.
pub fn vector_inequality(cfg: &TrialConfig) -> Result<(MomentEstimate, VectorInequalityReport)> {
    let est = estimate_moments(cfg)?;
    let p = build_p_matrix(&cfg.model, &est.reference)?;
    let report = vector_inequality_from(&est, &p);
    Ok((est, report))
}
