//! Contraction quantities on a cherry sphere.
//!
//! A [`SphereState`] assigns a value `g_x` in the upper half plane to every
//! slot of a [`CherrySphere`] together with the perturbations `w`, `w'`, `ϑ`.
//! Two applications of the Green function recursion map it to `g_{o'}` and
//! `g_o`. The quantities below measure how much that map contracts the
//! semi-metric `γ` relative to the unperturbed values `Γ`.
//!
//! The `S_o` level always contains `o'` itself, represented by the aggregate
//! `(1 + ϑ) g_{o'}` with reference `Γ_{o'}`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::greens::{solve_gamma_boundary, solve_eta_ladder, GreenVector, SpectralBands};
use crate::hyperbolic::{c0_bound, gamma};
use crate::substitution::{cherry_sphere, CherrySphere, Half, LabelPermutation, SubstitutionModel};

/// Relative tolerance used when judging an inequality `lhs ≤ rhs`.
pub const INEQUALITY_RTOL: f64 = 1e-10;
/// Absolute tolerance used when judging an inequality `lhs ≤ rhs`.
pub const INEQUALITY_ATOL: f64 = 1e-14;

/// `lhs ≤ rhs` up to [`INEQUALITY_RTOL`] and [`INEQUALITY_ATOL`].
pub fn holds_with_tolerance(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + INEQUALITY_RTOL * rhs.abs().max(lhs.abs()) + INEQUALITY_ATOL
}

/// How the `S_o` factor enters the contraction quantity of an inner slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerFactor {
    /// `max(c^o_{o'}, 0)`, the form for which the two-step bound holds.
    #[default]
    PositivePart,
    /// The signed product, kept as a diagnostic.
    Signed,
}

/// Values on a cherry sphere together with the perturbations of `o` and `o'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereState {
    sphere: CherrySphere,
    z: Complex64,
    g: Vec<Complex64>,
    w: f64,
    w_prime: f64,
    vartheta: f64,
    reference: Vec<Complex64>,
    gamma_o: Complex64,
    gamma_o_prime: Complex64,
    v_o: f64,
    v_o_prime: f64,
    p: Vec<f64>,
}

impl SphereState {
    /// State on the cherry sphere of a label-`k` vertex.
    pub fn new(
        model: &SubstitutionModel,
        reference: &GreenVector,
        k: usize,
        g: Vec<Complex64>,
        w: f64,
        w_prime: f64,
        vartheta: f64,
    ) -> Result<Self> {
        let sphere = cherry_sphere(model, k)?;
        Self::on_sphere(model, reference, sphere, g, w, w_prime, vartheta)
    }

    pub fn on_sphere(
        model: &SubstitutionModel,
        reference: &GreenVector,
        sphere: CherrySphere,
        g: Vec<Complex64>,
        w: f64,
        w_prime: f64,
        vartheta: f64,
    ) -> Result<Self> {
        if g.len() != sphere.len() {
            return Err(Error::InvalidConfig(format!(
                "{} values for a sphere of {} slots",
                g.len(),
                sphere.len()
            )));
        }
        if let Some(bad) = g.iter().find(|x| !(x.im > 0.0)) {
            return Err(Error::Degenerate(format!("slot value {bad} not in the upper half plane")));
        }
        if !(1.0 + vartheta > 0.0) {
            return Err(Error::InvalidConfig("1 + vartheta must be positive".into()));
        }
        let p = weights_p(reference, &sphere)?;
        let ref_slots = sphere.members.iter().map(|s| reference.values[s.label]).collect();
        Ok(Self {
            z: reference.z,
            g,
            w,
            w_prime,
            vartheta,
            reference: ref_slots,
            gamma_o: reference.values[sphere.o_label],
            gamma_o_prime: reference.values[sphere.o_prime_label],
            v_o: model.v_per()[sphere.o_label],
            v_o_prime: model.v_per()[sphere.o_prime_label],
            sphere,
            p,
        })
    }

    /// All slots at their unperturbed values and no perturbation.
    pub fn unperturbed(model: &SubstitutionModel, reference: &GreenVector, k: usize) -> Result<Self> {
        let sphere = cherry_sphere(model, k)?;
        let g = sphere.members.iter().map(|s| reference.values[s.label]).collect();
        Self::on_sphere(model, reference, sphere, g, 0.0, 0.0, 0.0)
    }

    /// Same sphere and perturbations with new slot values.
    pub fn with_g(&self, g: Vec<Complex64>) -> Self {
        assert_eq!(g.len(), self.g.len());
        Self { g, ..self.clone() }
    }

    /// The state `g ∘ π`, i.e. slot `x` carries `g_{π(x)}`.
    pub fn permuted(&self, pi: &LabelPermutation) -> Self {
        self.with_g(pi.mapping.iter().map(|&y| self.g[y]).collect())
    }

    pub fn sphere(&self) -> &CherrySphere {
        &self.sphere
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    pub fn g(&self) -> &[Complex64] {
        &self.g
    }

    pub fn reference(&self) -> &[Complex64] {
        &self.reference
    }

    pub fn gamma_o(&self) -> Complex64 {
        self.gamma_o
    }

    pub fn gamma_o_prime(&self) -> Complex64 {
        self.gamma_o_prime
    }

    pub fn perturbations(&self) -> (f64, f64, f64) {
        (self.w, self.w_prime, self.vartheta)
    }

    /// The weights `p_x`.
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// `(1 + ϑ) g_{o'}`, the value `o'` carries on the `S_o` level.
    pub fn o_prime_aggregate(&self) -> Complex64 {
        (1.0 + self.vartheta) * propagate(self).0
    }

    fn outer_level(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut g: Vec<Complex64> = self.sphere.outer().map(|x| self.g[x]).collect();
        let mut h: Vec<Complex64> = self.sphere.outer().map(|x| self.reference[x]).collect();
        g.push(self.o_prime_aggregate());
        h.push(self.gamma_o_prime);
        (g, h)
    }

    fn inner_level(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let g = self.sphere.inner().map(|x| self.g[x]).collect();
        let h = self.sphere.inner().map(|x| self.reference[x]).collect();
        (g, h)
    }
}

/// `(g_{o'}, g_o)` from two steps of the recursion.
pub fn propagate(s: &SphereState) -> (Complex64, Complex64) {
    let inner: Complex64 = s.sphere.inner().map(|x| s.g[x]).sum();
    let g_op = -1.0 / (s.z - s.v_o_prime - s.w_prime + inner);
    let outer: Complex64 = s.sphere.outer().map(|x| s.g[x]).sum();
    let g_o = -1.0 / (s.z - s.v_o - s.w + (1.0 + s.vartheta) * g_op + outer);
    (g_op, g_o)
}

/// `γ(g_x, Γ_x)` per slot.
pub fn gamma_per_slot(s: &SphereState) -> Vec<f64> {
    s.g.iter().zip(&s.reference).map(|(&g, &h)| gamma(g, h)).collect()
}

/// `q_y = Im g_y / Σ_{u in half} Im g_u` on the slots of `half`, zero on the
/// other half.
pub fn weights_q(s: &SphereState, half: Half) -> Vec<f64> {
    let total: f64 = s
        .sphere
        .members
        .iter()
        .zip(&s.g)
        .filter(|(m, _)| m.half == half)
        .map(|(_, g)| g.im)
        .sum();
    s.sphere
        .members
        .iter()
        .zip(&s.g)
        .map(|(m, g)| if m.half == half { g.im / total } else { 0.0 })
        .collect()
}

/// Geometric over arithmetic mean of `Im g_x Im Γ_y γ_y` and
/// `Im g_y Im Γ_x γ_x`; zero when either slot is unperturbed.
pub fn mean_ratio(gx: Complex64, hx: Complex64, gy: Complex64, hy: Complex64) -> f64 {
    let gam_x = gamma(gx, hx);
    let gam_y = gamma(gy, hy);
    if gam_x == 0.0 || gam_y == 0.0 {
        return 0.0;
    }
    let a = gx.im * hy.im * gam_y;
    let b = gy.im * hx.im * gam_x;
    ((a * b).sqrt() / (0.5 * (a + b))).min(1.0)
}

/// `ρ_{x,y} = (Im g_x Im Γ_y γ_y) / (Im g_y Im Γ_x γ_x)`.
pub fn rho_pair(gx: Complex64, hx: Complex64, gy: Complex64, hy: Complex64) -> f64 {
    (gx.im * hy.im * gamma(gy, hy)) / (gy.im * hx.im * gamma(gx, hx))
}

/// Cosine of `arg((g_x − Γ_x) conj(g_y − Γ_y))`; zero when either slot is
/// unperturbed.
pub fn cos_pair(gx: Complex64, hx: Complex64, gy: Complex64, hy: Complex64) -> f64 {
    let dx = gx - hx;
    let dy = gy - hy;
    let norm = dx.norm() * dy.norm();
    if norm == 0.0 {
        return 0.0;
    }
    ((dx * dy.conj()).re / norm).clamp(-1.0, 1.0)
}

/// `Q_{x,y}` for two slots of the same half.
pub fn ratio_q(s: &SphereState, x: usize, y: usize) -> f64 {
    mean_ratio(s.g[x], s.reference[x], s.g[y], s.reference[y])
}

pub fn rho(s: &SphereState, x: usize, y: usize) -> f64 {
    rho_pair(s.g[x], s.reference[x], s.g[y], s.reference[y])
}

/// `cos α_{x,y}` for two slots of the same half.
pub fn cos_alpha(s: &SphereState, x: usize, y: usize) -> f64 {
    cos_pair(s.g[x], s.reference[x], s.g[y], s.reference[y])
}

/// `Σ_y q_y Q_{x,y} cos α_{x,y}` for every `x` of one level.
pub fn level_factors(g: &[Complex64], h: &[Complex64]) -> Vec<f64> {
    let total: f64 = g.iter().map(|v| v.im).sum();
    (0..g.len())
        .map(|x| {
            (0..g.len())
                .map(|y| {
                    (g[y].im / total) * mean_ratio(g[x], h[x], g[y], h[y]) * cos_pair(g[x], h[x], g[y], h[y])
                })
                .sum()
        })
        .collect()
}

/// Contraction quantities `c_x` with the default inner factor.
pub fn contraction_c(s: &SphereState) -> Vec<f64> {
    contraction_c_with(s, InnerFactor::PositivePart)
}

/// Outer slots take their `S_o`-level factor. Inner slots take their
/// `S_{o'}`-level factor multiplied by the `S_o`-level factor of `o'`.
pub fn contraction_c_with(s: &SphereState, mode: InnerFactor) -> Vec<f64> {
    let (gi, hi) = s.inner_level();
    let inner = level_factors(&gi, &hi);
    let (go, ho) = s.outer_level();
    let outer = level_factors(&go, &ho);
    let through = outer[outer.len() - 1];
    let through = match mode {
        InnerFactor::PositivePart => through.max(0.0),
        InnerFactor::Signed => through,
    };
    let mut c = vec![0.0; s.sphere.len()];
    for (j, x) in s.sphere.outer().enumerate() {
        c[x] = outer[j];
    }
    for (j, x) in s.sphere.inner().enumerate() {
        c[x] = through * inner[j];
    }
    c
}

fn p_from_im(sphere: &CherrySphere, im: &[f64], im_o_prime: f64) -> Vec<f64> {
    let outer_total: f64 = sphere.outer().map(|x| im[x]).sum::<f64>() + im_o_prime;
    let inner_total: f64 = sphere.inner().map(|x| im[x]).sum();
    let through = im_o_prime / outer_total;
    sphere
        .members
        .iter()
        .enumerate()
        .map(|(x, m)| match m.half {
            Half::Outer => im[x] / outer_total,
            Half::Inner => through * im[x] / inner_total,
        })
        .collect()
}

/// Weights `p_x`: `Im Γ_x / Σ_{S_o} Im Γ` on outer slots and
/// `(Im Γ_{o'} / Σ_{S_o} Im Γ)(Im Γ_x / Σ_{S_{o'}} Im Γ)` on inner slots.
pub fn weights_p(reference: &GreenVector, sphere: &CherrySphere) -> Result<Vec<f64>> {
    if reference.values.iter().any(|g| !(g.im > 0.0)) {
        return Err(Error::Degenerate("reference Green function has nonpositive imaginary part".into()));
    }
    let im: Vec<f64> = sphere.members.iter().map(|s| reference.values[s.label].im).collect();
    Ok(p_from_im(sphere, &im, reference.values[sphere.o_prime_label].im))
}

/// Both forms of the averaged contraction coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaValue {
    /// Denominator `Σ_π Σ_x p_x (γ_x^π)^p`.
    pub value: f64,
    /// Denominator `Σ_π Σ_x p_x c_x^π (γ_x^π)^p`; `None` when it is not
    /// positive.
    pub c_weighted: Option<f64>,
    /// True when `g = Γ` on every slot and the value is set to 0.
    pub degenerate: bool,
}

/// Averaged contraction coefficient over the given permutations. The
/// numerator uses `max(Σ_x p_x c_x γ_x, 0)^p`.
pub fn kappa(s: &SphereState, p_exp: f64, permutations: &[LabelPermutation]) -> KappaValue {
    kappa_with(s, p_exp, permutations, InnerFactor::PositivePart)
}

pub fn kappa_with(
    s: &SphereState,
    p_exp: f64,
    permutations: &[LabelPermutation],
    mode: InnerFactor,
) -> KappaValue {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut den_c = 0.0;
    for pi in permutations {
        let sp = s.permuted(pi);
        let c = contraction_c_with(&sp, mode);
        let gam = gamma_per_slot(&sp);
        let mut lin = 0.0;
        for x in 0..gam.len() {
            lin += s.p[x] * c[x] * gam[x];
            let gp = gam[x].powf(p_exp);
            den += s.p[x] * gp;
            den_c += s.p[x] * c[x] * gp;
        }
        num += lin.max(0.0).powf(p_exp);
    }
    if den == 0.0 {
        return KappaValue {
            value: 0.0,
            c_weighted: None,
            degenerate: true,
        };
    }
    KappaValue {
        value: num / den,
        c_weighted: (den_c > 0.0).then(|| num / den_c),
        degenerate: false,
    }
}

/// Outcome of a single inequality evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: holds_with_tolerance(lhs, rhs),
        }
    }

    /// `lhs − rhs`, positive on violation.
    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// One recursion step without perturbation:
/// `γ(−1/(z − v + Σg), −1/(z − v + Σh)) ≤ Σ_x (Im h_x / Σ Im h) c_x γ_x`
/// with `c_x` the level factor.
pub fn one_step_check(z: Complex64, v: f64, g: &[Complex64], h: &[Complex64]) -> InequalityCheck {
    let sg: Complex64 = g.iter().sum();
    let sh: Complex64 = h.iter().sum();
    let lhs = gamma(-1.0 / (z - v + sg), -1.0 / (z - v + sh));
    let factors = level_factors(g, h);
    let total: f64 = h.iter().map(|x| x.im).sum();
    let rhs = (0..g.len())
        .map(|x| h[x].im / total * factors[x] * gamma(g[x], h[x]))
        .sum();
    InequalityCheck::new(lhs, rhs)
}

/// Additive constant of the two-step bound when `|w|, |w'|, |ϑ| < λ`.
///
/// Three perturbation bounds are composed: the shift by `w'` before the
/// inversion at `o'`, the scaling of `g_{o'}` by `1 + ϑ`, and the shift by
/// `w` before the inversion at `o`. The result is
/// `(1 + a₁)(1 + a₂)(1 + a₃) − 1`.
pub fn composed_c(lambda: f64, gamma_o: Complex64, gamma_o_prime: Complex64) -> f64 {
    let a1 = c0_bound(lambda, 0.0, 1.0, -1.0 / gamma_o_prime);
    let a2 = c0_bound(lambda, 1.0, 0.0, gamma_o_prime);
    let a3 = c0_bound(lambda, 0.0, 1.0, -1.0 / gamma_o);
    (1.0 + a1) * (1.0 + a2) * (1.0 + a3) - 1.0
}

/// `γ(g_o, Γ_o) ≤ (1 + c) Σ_x p_x c_x γ_x + c`.
pub fn two_step_check(s: &SphereState, lambda: f64, c_of_lambda: f64) -> InequalityCheck {
    two_step_check_with(s, lambda, c_of_lambda, InnerFactor::PositivePart)
}

pub fn two_step_check_with(
    s: &SphereState,
    _lambda: f64,
    c_of_lambda: f64,
    mode: InnerFactor,
) -> InequalityCheck {
    let (_, g_o) = propagate(s);
    let lhs = gamma(g_o, s.gamma_o);
    let c = contraction_c_with(s, mode);
    let gam = gamma_per_slot(s);
    let t: f64 = (0..gam.len()).map(|x| s.p[x] * c[x] * gam[x]).sum();
    InequalityCheck::new(lhs, (1.0 + c_of_lambda) * t + c_of_lambda)
}

/// Visible slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Visibility {
    /// Slots with `γ_x > ε γ_y` for every slot `y`.
    pub vis_gamma: Vec<usize>,
    /// Inner slots with `Im g_x > ε Im g_y` for every inner slot `y`.
    pub vis_im_inner: Vec<usize>,
    /// Outer slots with `Im g_x > ε Im g_y` for every `y` of the `S_o` level.
    pub vis_im_outer: Vec<usize>,
    /// Whether the aggregate of `o'` is visible on the `S_o` level.
    pub o_prime_visible: bool,
}

fn visible(values: &[f64], eps: f64) -> Vec<bool> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|&v| v > eps * max).collect()
}

pub fn visibility(s: &SphereState, eps: f64) -> Visibility {
    let gam = gamma_per_slot(s);
    let vis_gamma = visible(&gam, eps)
        .into_iter()
        .enumerate()
        .filter(|&(_, b)| b)
        .map(|(x, _)| x)
        .collect();
    let inner_ids: Vec<usize> = s.sphere.inner().collect();
    let inner_im: Vec<f64> = inner_ids.iter().map(|&x| s.g[x].im).collect();
    let vis_im_inner = inner_ids
        .iter()
        .zip(visible(&inner_im, eps))
        .filter(|&(_, b)| b)
        .map(|(&x, _)| x)
        .collect();
    let outer_ids: Vec<usize> = s.sphere.outer().collect();
    let mut outer_im: Vec<f64> = outer_ids.iter().map(|&x| s.g[x].im).collect();
    outer_im.push(s.o_prime_aggregate().im);
    let flags = visible(&outer_im, eps);
    let vis_im_outer = outer_ids
        .iter()
        .zip(&flags)
        .filter(|&(_, &b)| b)
        .map(|(&x, _)| x)
        .collect();
    Visibility {
        vis_gamma,
        vis_im_inner,
        vis_im_outer,
        o_prime_visible: flags[flags.len() - 1],
    }
}

/// Everything computed on one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub q: Vec<f64>,
    /// `Q_{x,y}`; zero for slots in different halves.
    pub ratio_q: Vec<Vec<f64>>,
    /// `cos α_{x,y}`; zero for slots in different halves.
    pub cos_alpha: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub p: Vec<f64>,
    pub kappa: KappaValue,
    pub gamma_per_slot: Vec<f64>,
}

pub fn contraction_report(s: &SphereState, p_exp: f64, permutations: &[LabelPermutation]) -> ContractionReport {
    let n = s.sphere.len();
    let qo = weights_q(s, Half::Outer);
    let qi = weights_q(s, Half::Inner);
    let q = qo.iter().zip(&qi).map(|(a, b)| a + b).collect();
    let same = |x: usize, y: usize| s.sphere.members[x].half == s.sphere.members[y].half;
    let ratio = (0..n)
        .map(|x| (0..n).map(|y| if same(x, y) { ratio_q(s, x, y) } else { 0.0 }).collect())
        .collect();
    let cosines = (0..n)
        .map(|x| (0..n).map(|y| if same(x, y) { cos_alpha(s, x, y) } else { 0.0 }).collect())
        .collect();
    ContractionReport {
        q,
        ratio_q: ratio,
        cos_alpha: cosines,
        c: contraction_c(s),
        p: s.p.clone(),
        kappa: kappa(s, p_exp, permutations),
        gamma_per_slot: gamma_per_slot(s),
    }
}

/// Sampling grid for the interval constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantsGrid {
    pub energies: usize,
    /// `η` runs over `1, 1/2, …, 2^-eta_levels`.
    pub eta_levels: usize,
    /// Clearance from band edges demanded of the interval.
    pub margin: f64,
}

impl Default for ConstantsGrid {
    fn default() -> Self {
        Self {
            energies: 200,
            eta_levels: 20,
            margin: 2.0 * crate::greens::DEFAULT_GRID_STEP,
        }
    }
}

/// Interval constants, minimised or maximised over the sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constants {
    pub eps0: f64,
    pub eps1: f64,
    pub delta0: f64,
    pub c1: f64,
    pub c2: f64,
    /// `ε₁ δ₀ / (1 + δ₀)`.
    pub lambda0: f64,
    pub p_exp: f64,
    pub interval: (f64, f64),
    pub grid: ConstantsGrid,
    /// The Green vectors the minima were taken over.
    #[serde(skip)]
    pub samples: Vec<GreenVector>,
}

impl Constants {
    /// Radius `η₁⁻¹((1 + δ₀) λ / δ₀)` outside of which uniform contraction
    /// is expected.
    pub fn radius(&self, lambda: f64) -> Result<f64> {
        crate::hyperbolic::eta1_inverse((1.0 + self.delta0) * lambda / self.delta0, self.eps1)
    }
}

/// Constants over `I + i(0, 1]` for all cherry spheres of the model.
pub fn constants(
    model: &SubstitutionModel,
    interval: (f64, f64),
    p_exp: f64,
    bands: &SpectralBands,
    grid: ConstantsGrid,
) -> Result<Constants> {
    let (lo, hi) = interval;
    if !bands.contains_with_margin(lo, hi, grid.margin) {
        return Err(Error::DegenerateInterval {
            lo,
            hi,
            margin: grid.margin,
        });
    }
    if grid.energies == 0 {
        return Err(Error::InvalidConfig("constants grid needs energies".into()));
    }
    let spheres: Vec<CherrySphere> = (0..model.alphabet_size())
        .map(|k| cherry_sphere(model, k))
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    for i in 0..grid.energies {
        let e = if grid.energies == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (grid.energies - 1) as f64
        };
        samples.extend(solve_eta_ladder(model, e, grid.eta_levels)?);
        samples.push(solve_gamma_boundary(model, e, 0.5f64.powi(grid.eta_levels as i32 + 4))?);
    }
    let mut eps0 = f64::INFINITY;
    let mut eps1 = f64::INFINITY;
    let mut delta0 = f64::INFINITY;
    let mut worst_ratio: f64 = 0.0;
    let mut c2 = f64::INFINITY;
    for gv in &samples {
        for sphere in &spheres {
            let im: Vec<f64> = sphere.members.iter().map(|s| gv.values[s.label].im).collect();
            if im.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::DegenerateInterval {
                    lo,
                    hi,
                    margin: grid.margin,
                });
            }
            let (min_im, max_im) = im
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            eps0 = eps0.min(min_im / max_im);
            eps1 = eps1.min(min_im);
            for s in &sphere.members {
                let arg = gv.values[s.label].arg();
                delta0 = delta0.min(0.25 * arg.min(std::f64::consts::PI - arg));
            }
            let p = weights_p(gv, sphere)?;
            let p_min = p.iter().cloned().fold(f64::INFINITY, f64::min);
            for &px in &p {
                worst_ratio = worst_ratio.max((1.0 - px) / p_min);
                let shape = (p_exp * (p_exp - 1.0) / 2.0 * px).min(1.0 - (1.0 - px).powf(p_exp - 1.0));
                c2 = c2.min((1.0 - px) * shape);
            }
        }
    }
    let c1 = 1.0 / worst_ratio;
    Ok(Constants {
        eps0,
        eps1,
        delta0,
        c1,
        c2,
        lambda0: eps1 * delta0 / (1.0 + delta0),
        p_exp,
        interval,
        grid,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::{detect_bands, solve_gamma};
    use crate::substitution::enumerate_permutations;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn binary() -> SubstitutionModel {
        SubstitutionModel::regular(2, 0.0).unwrap()
    }

    fn two_label() -> SubstitutionModel {
        SubstitutionModel::new(vec![vec![1, 1], vec![1, 1]], vec![0.0, 0.0], 0).unwrap()
    }

    fn asym() -> SubstitutionModel {
        SubstitutionModel::new(vec![vec![2, 1], vec![1, 1]], vec![0.0, 0.3], 0).unwrap()
    }

    #[test]
    fn propagate_unperturbed_is_fixed_point() {
        for (m, z) in [(binary(), c(0.0, 1.0)), (asym(), c(0.2, 0.05))] {
            let gv = solve_gamma(&m, z).unwrap();
            for k in 0..m.alphabet_size() {
                let s = SphereState::unperturbed(&m, &gv, k).unwrap();
                let (gop, go) = propagate(&s);
                assert!((gop - gv.values[s.sphere().o_prime_label]).norm() <= 1e-12);
                assert!((go - gv.values[k]).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn propagate_binary_example() {
        let m = binary();
        let gv = solve_gamma(&m, c(0.0, 1.0)).unwrap();
        let s = SphereState::new(&m, &gv, 0, vec![c(0.0, 0.5); 3], 0.0, 0.0, 0.0).unwrap();
        assert!((propagate(&s).0 - c(0.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn weights_q_examples() {
        let m = binary();
        let gv = solve_gamma(&m, c(0.0, 1.0)).unwrap();
        let s = SphereState::new(&m, &gv, 0, vec![c(0.1, 0.4), c(0.3, 0.4), c(-1.0, 0.4)], 0.0, 0.0, 0.0)
            .unwrap();
        let q = weights_q(&s, Half::Inner);
        assert_eq!(q, vec![0.0, 0.5, 0.5]);
        let s = s.with_g(vec![c(0.0, 1.0), c(0.0, 1e6), c(0.0, 1e-6)]);
        let q = weights_q(&s, Half::Inner);
        assert!(q[1] > 1.0 - 1e-11);
        assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
        assert_eq!(weights_q(&s, Half::Outer)[0], 1.0);
    }

    #[test]
    fn ratio_examples() {
        let h = c(0.0, 1.0);
        let g = c(0.5, 1.0);
        assert_relative_eq!(mean_ratio(g, h, g, h), 1.0, epsilon = 1e-15);
        assert_eq!(mean_ratio(h, h, g, h), 0.0);
        // ρ = 4: Im g_x = 4 Im g_y with equal γ and equal references.
        let gx = c(2.0, 4.0);
        let gam_gx = gamma(gx, h);
        // Im g_y = 1 and |g_y − i|² = γ_x give γ_y = γ_x.
        let gy = c(gam_gx.sqrt(), 1.0);
        assert_relative_eq!(gamma(gy, h), gam_gx, epsilon = 1e-12);
        assert_relative_eq!(rho_pair(gx, h, gy, h), 4.0, epsilon = 1e-12);
        assert_relative_eq!(mean_ratio(gx, h, gy, h), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn cos_examples() {
        let h = c(0.0, 1.0);
        assert_relative_eq!(cos_pair(c(1.0, 1.0), h, c(1.0, 1.0), h), 1.0);
        assert!(cos_pair(c(1.0, 1.0), h, c(0.0, 2.0), h).abs() < 1e-15);
        assert_relative_eq!(cos_pair(c(1.0, 1.0), h, c(-1.0, 1.0), h), -1.0);
        assert_eq!(cos_pair(h, h, c(1.0, 1.0), h), 0.0);
    }

    #[test]
    fn contraction_examples() {
        let m = two_label();
        let gv = solve_gamma(&m, c(0.3, 0.2)).unwrap();
        let s = SphereState::unperturbed(&m, &gv, 0).unwrap();
        assert!(contraction_c(&s).iter().all(|&x| x == 0.0));

        // Equal positive multiples of one direction with equal imaginary
        // parts give ρ ≡ 1 and cos ≡ 1 on the inner level.
        let m = binary();
        let gv = solve_gamma(&m, c(0.0, 1.0)).unwrap();
        let shift = c(0.0, 0.3);
        let g = vec![gv.values[0] + shift; 3];
        let s = SphereState::new(&m, &gv, 0, g, 0.0, 0.0, 0.0).unwrap();
        let (gi, hi) = s.inner_level();
        assert!(level_factors(&gi, &hi).iter().all(|&f| (f - 1.0).abs() < 1e-12));
    }

    #[test]
    fn full_alignment_gives_unit_contraction() {
        // Single-label binary tree at z = i, Γ = i/2. Choose inner values
        // g = i/2 + t i and the outer value so that the aggregate o' and the
        // outer slot coincide; then every level is aligned with ρ = 1.
        let m = binary();
        let gv = solve_gamma(&m, c(0.0, 1.0)).unwrap();
        let t = 0.2;
        let gi = c(0.0, 0.5 + t);
        let gop = -1.0 / (c(0.0, 1.0) + 2.0 * gi);
        let s = SphereState::new(&m, &gv, 0, vec![gop, gi, gi], 0.0, 0.0, 0.0).unwrap();
        let cs = contraction_c(&s);
        assert!(cs.iter().all(|&x| (x - 1.0).abs() < 1e-12), "{cs:?}");
        let perms = enumerate_permutations(s.sphere()).unwrap();
        let k = kappa(&s, 2.0, &perms);
        assert!(k.value <= 1.0 + 1e-12);
    }

    #[test]
    fn weights_p_examples() {
        let m = binary();
        let gv = solve_gamma(&m, c(0.4, 0.3)).unwrap();
        let sphere = cherry_sphere(&m, 0).unwrap();
        let p = weights_p(&gv, &sphere).unwrap();
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(p[2], 0.25, epsilon = 1e-15);
        for m in [two_label(), asym()] {
            let gv = solve_gamma(&m, c(0.1, 0.05)).unwrap();
            for k in 0..2 {
                let p = weights_p(&gv, &cherry_sphere(&m, k).unwrap()).unwrap();
                assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn kappa_examples() {
        let m = binary();
        let gv = solve_gamma(&m, c(0.0, 1.0)).unwrap();
        let s = SphereState::unperturbed(&m, &gv, 0).unwrap();
        let perms = enumerate_permutations(s.sphere()).unwrap();
        let k = kappa(&s, 1.5, &perms);
        assert!(k.degenerate);
        assert_eq!(k.value, 0.0);
    }

    #[test]
    fn visibility_examples() {
        let m = binary();
        let gv = solve_gamma(&m, c(0.0, 1.0)).unwrap();
        let h = gv.values[0];
        let d = c(0.1, 0.05);
        let s = SphereState::new(&m, &gv, 0, vec![h + d, h + d, h + d], 0.0, 0.0, 0.0).unwrap();
        assert_eq!(visibility(&s, 0.5).vis_gamma, vec![0, 1, 2]);
        let v = visibility(&s, 1.0);
        assert!(v.vis_gamma.is_empty() && v.vis_im_inner.is_empty() && v.vis_im_outer.is_empty());
        assert!(!v.o_prime_visible);

        let eps: f64 = 0.3;
        // γ of slot 2 equal to ε² times the others
        let s2 = s.with_g(vec![h + d, h + d, h + d * eps]);
        let gam = gamma_per_slot(&s2);
        assert!(gam[2] < eps * gam[0]);
        assert_eq!(visibility(&s2, eps).vis_gamma, vec![0, 1]);
    }

    #[test]
    fn two_step_at_unperturbed_values() {
        let m = asym();
        let gv = solve_gamma(&m, c(0.1, 0.05)).unwrap();
        let s = SphereState::unperturbed(&m, &gv, 0).unwrap();
        let lam = 0.05;
        let cl = composed_c(lam, s.gamma_o(), s.gamma_o_prime());
        let s = SphereState::new(&m, &gv, 0, s.g().to_vec(), 0.04, -0.03, 0.02).unwrap();
        let chk = two_step_check(&s, lam, cl);
        assert!(chk.lhs <= cl, "{chk:?} c = {cl}");
        assert!(chk.holds);
    }

    #[test]
    fn constants_examples() {
        let m = binary();
        let bands = detect_bands(&m, 1e-2, 1e-6, 1e-3).unwrap();
        let grid = ConstantsGrid {
            energies: 21,
            eta_levels: 20,
            margin: 2e-2,
        };
        let k = constants(&m, (-1.0, 1.0), 2.0, &bands, grid).unwrap();
        assert_eq!(k.eps0, 1.0);
        assert_relative_eq!(k.c1, 1.0 / 3.0, epsilon = 1e-12);
        assert!(k.delta0 > 0.0 && k.delta0 <= std::f64::consts::PI / 8.0 + 1e-12);
        // E = 0 sits on the grid, where Γ(0 + iη) is purely imaginary.
        let at_zero = constants(&m, (0.0, 0.0), 2.0, &bands, ConstantsGrid { energies: 1, ..grid }).unwrap();
        assert_relative_eq!(at_zero.delta0, std::f64::consts::PI / 8.0, epsilon = 1e-12);
        // Im Γ on [−1, 1] is smallest at the interval ends for η → 0.
        let oracle = |e: f64| (8.0 - e * e).sqrt() / 4.0;
        assert!(k.eps1 <= oracle(1.0) + 1e-6 && k.eps1 > 0.0);
        assert!(k.c2 > 0.0 && k.lambda0 > 0.0);
        assert!(matches!(
            constants(&m, (-2.82, 1.0), 2.0, &bands, grid),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    fn upper_near(h: Complex64) -> impl Strategy<Value = Complex64> {
        (-3.0..3.0f64, 0.0..std::f64::consts::TAU).prop_filter_map("upper half plane", move |(lr, phi)| {
            let g = h + 10f64.powf(lr) * Complex64::from_polar(1.0, phi);
            (g.im > 0.0).then_some(g)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn ranges_and_identities(
            g0 in upper_near(c(0.2, 0.4)),
            g1 in upper_near(c(0.2, 0.4)),
            g2 in upper_near(c(0.2, 0.4)),
            w in -0.1..0.1f64, wp in -0.1..0.1f64, th in -0.1..0.1f64,
        ) {
            let m = binary();
            let gv = solve_gamma(&m, c(0.3, 0.2)).unwrap();
            let s = SphereState::new(&m, &gv, 0, vec![g0, g1, g2], w, wp, th).unwrap();
            let (gop, go) = propagate(&s);
            prop_assert!(gop.im > 0.0 && go.im > 0.0);
            for x in 0..3 {
                for y in 0..3 {
                    let q = ratio_q(&s, x, y);
                    prop_assert!((0.0..=1.0).contains(&q));
                    let r = rho(&s, x, y);
                    prop_assert!((q - 2.0 * r.sqrt() / (1.0 + r)).abs() <= 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&cos_alpha(&s, x, y)));
                }
            }
            for cx in contraction_c_with(&s, InnerFactor::Signed) {
                prop_assert!(cx.abs() <= 1.0 + 1e-12);
            }
            let perms = enumerate_permutations(s.sphere()).unwrap();
            prop_assert!(kappa(&s, 1.5, &perms).value <= 1.0 + 1e-12);
        }
    }
}
