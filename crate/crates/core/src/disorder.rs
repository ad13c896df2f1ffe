//! Random potentials `v_x` and hopping perturbations `θ_x` on finite trees.
//!
//! Values at a vertex are drawn from a ChaCha stream keyed by
//! `(seed, vertex id)`, so a realization is a pure function of the spec, the
//! seed and the tree, and vertices never share random bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substitution::{grow_tree, LabeledTree, SubstitutionModel};

/// A bounded law on `(−1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", content = "params", rename_all = "snake_case")]
pub enum Law {
    /// Uniform on `(−w, w)`.
    Uniform { w: f64 },
    /// `±w` with probability 1/2 each.
    TwoPoint { w: f64 },
    /// Centred normal with standard deviation `sigma`, conditioned on `(−1, 1)`.
    TruncatedNormal { sigma: f64 },
    Constant { value: f64 },
}

impl Law {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Law::Uniform { w } | Law::TwoPoint { w } => (0.0..1.0).contains(&w),
            Law::TruncatedNormal { sigma } => sigma > 0.0 && sigma.is_finite(),
            Law::Constant { value } => value.abs() < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SupportViolation(format!("{self:?} is not supported inside (-1, 1)")))
        }
    }

    /// Supremum of `|X|` over the support.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            Law::Uniform { w } | Law::TwoPoint { w } => w,
            Law::TruncatedNormal { .. } => 1.0,
            Law::Constant { value } => value.abs(),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Uniform { w } => {
                if w == 0.0 {
                    0.0
                } else {
                    rng.random_range(-w..w)
                }
            }
            Law::TwoPoint { w } => {
                if rng.random::<bool>() {
                    w
                } else {
                    -w
                }
            }
            Law::TruncatedNormal { sigma } => loop {
                let x: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
                if x.abs() < 1.0 {
                    break x;
                }
            },
            Law::Constant { value } => value,
        }
    }
}

/// How per-vertex draws become `(v, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderMode {
    IidPotential,
    IidHopping,
    IidBoth,
    /// `v_x = (w_x + Σ_{c child of x} v_c) / k` with `k` the largest row sum
    /// and iid `w`; no hopping disorder.
    CorrelatedDecay,
    /// `v_x = θ_x + Σ_{c child of x} θ_c` with iid `θ`.
    EdgeWeightLaplacian,
}

/// Replaces the law of a single vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexOverride {
    pub vertex: usize,
    pub law: Law,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderSpec {
    pub mode: DisorderMode,
    pub per_label: Vec<Law>,
    /// Per-vertex laws; these break label equidistribution.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vertex_overrides: Vec<VertexOverride>,
}

impl DisorderSpec {
    pub fn new(mode: DisorderMode, per_label: Vec<Law>) -> Self {
        Self {
            mode,
            per_label,
            vertex_overrides: Vec::new(),
        }
    }

    /// The same law on every label.
    pub fn uniform_labels(mode: DisorderMode, law: Law, model: &SubstitutionModel) -> Self {
        Self::new(mode, vec![law; model.alphabet_size()])
    }

    /// Checks law support and model compatibility.
    pub fn validate(&self, model: &SubstitutionModel) -> Result<()> {
        if self.per_label.len() != model.alphabet_size() {
            return Err(Error::SpecModelMismatch(format!(
                "{} laws for {} labels",
                self.per_label.len(),
                model.alphabet_size()
            )));
        }
        for law in self.per_label.iter().chain(self.vertex_overrides.iter().map(|o| &o.law)) {
            law.validate()?;
        }
        if self.mode == DisorderMode::EdgeWeightLaplacian {
            for k in 0..model.alphabet_size() {
                let deg = model.row_sum(k) as f64 + 1.0;
                if (model.v_per()[k] + deg).abs() > 1e-12 {
                    return Err(Error::SpecModelMismatch(format!(
                        "edge_weight_laplacian needs v_per[{k}] = {}, found {}",
                        -deg,
                        model.v_per()[k]
                    )));
                }
            }
            let sup = self.sup_abs();
            let fan_in = model.max_row_sum() as f64 + 1.0;
            if sup * fan_in >= 1.0 {
                return Err(Error::SupportViolation(format!(
                    "edge sums reach {} >= 1",
                    sup * fan_in
                )));
            }
        }
        Ok(())
    }

    fn sup_abs(&self) -> f64 {
        self.per_label
            .iter()
            .chain(self.vertex_overrides.iter().map(|o| &o.law))
            .map(Law::sup_abs)
            .fold(0.0, f64::max)
    }

    fn law_for(&self, tree: &LabeledTree, id: usize) -> Law {
        self.vertex_overrides
            .iter()
            .rev()
            .find(|o| o.vertex == id)
            .map(|o| o.law)
            .unwrap_or(self.per_label[tree.label(id)])
    }
}

/// Per-vertex values of one disorder sample. `θ_x` is the value on the edge
/// from `x` to its parent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisorderRealization {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Added to `v^per` at the root only.
    pub root_potential_offset: f64,
}

impl DisorderRealization {
    pub fn zero(n: usize) -> Self {
        Self {
            v: vec![0.0; n],
            theta: vec![0.0; n],
            root_potential_offset: 0.0,
        }
    }
}

/// Independent 64-bit seed for stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

fn vertex_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Largest possible `|v_x|` in the decay mode: `sup|w| · Σ_d N_d(x) k^-(d+1)`
/// with `N_d(x)` the number of descendants at distance `d`.
fn decay_worst_case(tree: &LabeledTree, k: f64, sup: f64) -> f64 {
    let mut bound = vec![0.0; tree.len()];
    for id in (0..tree.len()).rev() {
        let below: f64 = tree.vertex(id).children().map(|c| bound[c]).sum();
        bound[id] = (sup + below) / k;
    }
    bound.into_iter().fold(0.0, f64::max)
}

/// Draws one realization on `tree`.
pub fn sample(
    spec: &DisorderSpec,
    model: &SubstitutionModel,
    tree: &LabeledTree,
    seed: u64,
) -> Result<DisorderRealization> {
    spec.validate(model)?;
    if tree.is_empty() {
        return Err(Error::InvalidConfig("empty tree".into()));
    }
    let n = tree.len();
    let mut out = DisorderRealization::zero(n);
    match spec.mode {
        DisorderMode::IidPotential | DisorderMode::IidHopping | DisorderMode::IidBoth => {
            for id in 0..n {
                let law = spec.law_for(tree, id);
                let mut rng = vertex_rng(seed, id);
                let a = law.sample(&mut rng);
                let b = law.sample(&mut rng);
                match spec.mode {
                    DisorderMode::IidPotential => out.v[id] = a,
                    DisorderMode::IidHopping => out.theta[id] = a,
                    _ => {
                        out.v[id] = a;
                        out.theta[id] = b;
                    }
                }
            }
        }
        DisorderMode::CorrelatedDecay => {
            let k = model.max_row_sum() as f64;
            let worst = decay_worst_case(tree, k, spec.sup_abs());
            if worst >= 1.0 {
                return Err(Error::SupportViolation(format!(
                    "decay potential can reach {worst} on a depth {} tree",
                    tree.depth()
                )));
            }
            let w: Vec<f64> = (0..n)
                .map(|id| spec.law_for(tree, id).sample(&mut vertex_rng(seed, id)))
                .collect();
            for id in (0..n).rev() {
                let below: f64 = tree.vertex(id).children().map(|c| out.v[c]).sum();
                out.v[id] = (w[id] + below) / k;
            }
        }
        DisorderMode::EdgeWeightLaplacian => {
            for id in 0..n {
                out.theta[id] = spec.law_for(tree, id).sample(&mut vertex_rng(seed, id));
            }
            for id in 0..n {
                let below: f64 = tree.vertex(id).children().map(|c| out.theta[c]).sum();
                out.v[id] = out.theta[id] + below;
            }
            out.root_potential_offset = 1.0;
        }
    }
    if let Some(bad) = out.v.iter().chain(&out.theta).find(|x| !(x.abs() < 1.0)) {
        return Err(Error::SupportViolation(format!("sampled value {bad} outside (-1, 1)")));
    }
    Ok(out)
}

/// Outcome of the equidistribution and independence checks for one vertex
/// pair with disjoint forward trees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStat {
    pub a: usize,
    pub b: usize,
    pub label: usize,
    pub depth: usize,
    pub ks_v: f64,
    pub ks_theta: f64,
    pub corr_v: f64,
    pub corr_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatReport {
    pub n_trials: usize,
    pub pairs: Vec<PairStat>,
    /// Kolmogorov–Smirnov threshold at level 0.01, Bonferroni corrected
    /// over all pairs and both coordinates.
    pub ks_critical: f64,
    /// `√(2 ln(2/α)) / √n` with the same corrected level `α`; a Gaussian
    /// tail bound for each correlation.
    pub corr_bound: f64,
    /// Equidistribution test passed.
    pub p2_pass: bool,
    /// Independence test passed.
    pub p1_pass: bool,
    /// Correlation of `v` between a depth-1 vertex and its first child.
    pub ancestor_correlation: f64,
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Pearson correlation; zero if either sample is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Depth of the tree used by [`check_p1_p2`].
pub const CHECK_DEPTH: usize = 2;

/// Empirical check of label equidistribution and independence across disjoint
/// forward trees. Every vertex at depth 1 and 2 is compared with the first
/// vertex of the same label and depth.
pub fn check_p1_p2(
    spec: &DisorderSpec,
    model: &SubstitutionModel,
    n_trials: usize,
    seed: u64,
) -> Result<StatReport> {
    if n_trials < 1000 {
        return Err(Error::InvalidConfig("check_p1_p2 needs at least 1000 trials".into()));
    }
    let tree = grow_tree(model, model.root_label(), CHECK_DEPTH)?;
    let n = tree.len();
    let mut v = vec![Vec::with_capacity(n_trials); n];
    let mut th = vec![Vec::with_capacity(n_trials); n];
    for t in 0..n_trials {
        let r = sample(spec, model, &tree, derive_seed(seed, t as u64))?;
        for id in 0..n {
            v[id].push(r.v[id]);
            th[id].push(r.theta[id]);
        }
    }
    let mut pairs = Vec::new();
    for depth in 1..=CHECK_DEPTH {
        let level: Vec<usize> = tree.level(depth).collect();
        for label in 0..model.alphabet_size() {
            let group: Vec<usize> = level.iter().copied().filter(|&x| tree.label(x) == label).collect();
            for &b in group.iter().skip(1) {
                let a = group[0];
                pairs.push(PairStat {
                    a,
                    b,
                    label,
                    depth,
                    ks_v: ks_statistic(&v[a], &v[b]),
                    ks_theta: ks_statistic(&th[a], &th[b]),
                    corr_v: correlation(&v[a], &v[b]),
                    corr_theta: correlation(&th[a], &th[b]),
                });
            }
        }
    }
    let tests = (2 * pairs.len()).max(1) as f64;
    let alpha = 0.01 / tests;
    let nf = n_trials as f64;
    let ks_critical = (-(alpha / 2.0).ln() / 2.0).sqrt() * (2.0 / nf).sqrt();
    let corr_bound = (2.0 * (2.0 / alpha).ln()).sqrt() / nf.sqrt();
    let p2_pass = pairs.iter().all(|p| p.ks_v <= ks_critical && p.ks_theta <= ks_critical);
    let p1_pass = pairs
        .iter()
        .all(|p| p.corr_v.abs() < corr_bound && p.corr_theta.abs() < corr_bound);
    let first = tree.vertex(0).children().next();
    let ancestor_correlation = first
        .and_then(|a| tree.vertex(a).children().next().map(|c| correlation(&v[a], &v[c])))
        .unwrap_or(0.0);
    Ok(StatReport {
        n_trials,
        pairs,
        ks_critical,
        corr_bound,
        p2_pass,
        p1_pass,
        ancestor_correlation,
    })
}
