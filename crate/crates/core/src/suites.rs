//! Seeded randomized checks of the scalar and sphere-level inequalities.
//!
//! Each suite draws its samples in fixed chunks, one ChaCha stream per chunk,
//! and reduces in chunk order, so a report depends only on the seed and the
//! sample count.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::contraction::{
    composed_c, constants, contraction_report, gamma_per_slot, kappa, kappa_with, one_step_check,
    two_step_check, two_step_check_with, visibility, Constants, ConstantsGrid, ContractionReport,
    InequalityCheck, InnerFactor, SphereState,
};
use crate::error::Result;
use crate::greens::{GreenVector, SpectralBands};
use crate::hyperbolic::{c0_bound, c0_bound_inverse_scale, gamma, jensen_delta, mobius_step};
use crate::substitution::{cherry_sphere, enumerate_permutations, CherrySphere, LabelPermutation, SubstitutionModel};

const CHUNK: usize = 1024;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub samples: usize,
    pub counterexamples: usize,
    /// Largest `lhs − rhs` seen; negative when every sample holds strictly.
    pub worst_excess: f64,
    /// Parameters of the sample attaining `worst_excess`.
    pub worst_sample: Vec<f64>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.counterexamples == 0
    }
}

struct Acc {
    counterexamples: usize,
    worst: f64,
    sample: Vec<f64>,
}

impl Acc {
    fn new() -> Self {
        Self {
            counterexamples: 0,
            worst: f64::NEG_INFINITY,
            sample: Vec::new(),
        }
    }

    fn push(&mut self, check: InequalityCheck, params: impl FnOnce() -> Vec<f64>) {
        if !check.holds {
            self.counterexamples += 1;
        }
        let e = check.excess();
        if e > self.worst || e.is_nan() {
            self.worst = e;
            self.sample = params();
        }
    }

    fn merge(mut self, other: Acc) -> Acc {
        self.counterexamples += other.counterexamples;
        if other.worst > self.worst || other.worst.is_nan() {
            self.worst = other.worst;
            self.sample = other.sample;
        }
        self
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn run<F>(name: &str, samples: usize, seed: u64, f: F) -> SuiteResult
where
    F: Fn(&mut ChaCha8Rng, &mut Acc) + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut acc = Acc::new();
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                f(&mut rng, &mut acc);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::new(), Acc::merge);
    SuiteResult {
        name: name.to_string(),
        samples,
        counterexamples: acc.counterexamples,
        worst_excess: acc.worst,
        worst_sample: acc.sample,
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

/// A point of the upper half plane spread over many scales.
pub fn random_upper<R: Rng>(rng: &mut R) -> Complex64 {
    let re = log_uniform(rng, 1e-3, 1e3) * if rng.random::<bool>() { 1.0 } else { -1.0 };
    Complex64::new(re, log_uniform(rng, 1e-4, 1e3))
}

/// `h + r e^{iφ}` with log-uniform `r ∈ [10⁻³, 10³]`, redrawn until it lies
/// in the upper half plane.
pub fn perturb<R: Rng>(rng: &mut R, h: Complex64) -> Complex64 {
    loop {
        let r = log_uniform(rng, 1e-3, 1e3);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let g = h + Complex64::from_polar(r, phi);
        if g.im > 0.0 {
            return g;
        }
    }
}

fn pm<R: Rng>(rng: &mut R, lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        rng.random_range(-lambda..lambda)
    }
}

/// `γ((1+λa)g + λb, h) ≤ (1+c₀)γ(g,h) + c₀` on `λ ∈ [0,1)`, `a, b ∈ (−1,1)`.
pub fn c0_suite(samples: usize, seed: u64) -> SuiteResult {
    perturbation_suite("perturbation_bound", c0_bound, samples, seed)
}

/// [`c0_suite`] with [`c0_bound_inverse_scale`] on the same samples.
pub fn c0_inverse_scale_suite(samples: usize, seed: u64) -> SuiteResult {
    perturbation_suite("perturbation_bound_inverse_scale", c0_bound_inverse_scale, samples, seed)
}

fn perturbation_suite(
    name: &str,
    bound: fn(f64, f64, f64, Complex64) -> f64,
    samples: usize,
    seed: u64,
) -> SuiteResult {
    run(name, samples, seed, |rng, acc| {
        let lambda = rng.random::<f64>();
        let a = rng.random_range(-1.0..1.0);
        let b = rng.random_range(-1.0..1.0);
        let g = random_upper(rng);
        let h = random_upper(rng);
        let c0 = bound(lambda, a, b, h);
        let lhs = gamma((1.0 + lambda * a) * g + lambda * b, h);
        let check = InequalityCheck::new(lhs, (1.0 + c0) * gamma(g, h) + c0);
        acc.push(check, || vec![lambda, a, b, g.re, g.im, h.re, h.im]);
    })
}

/// `(λr + (1−λ)s)^p ≤ (1 − δ_p)(λr^p + (1−λ)s^p)` for `r > s ≥ 0`.
pub fn jensen_suite(samples: usize, seed: u64) -> SuiteResult {
    run("jensen_gap", samples, seed, |rng, acc| {
        let p = rng.random_range(1.0..4.0);
        let lam = rng.random::<f64>();
        let r = log_uniform(rng, 1e-3, 1e3);
        let s = r * rng.random::<f64>();
        let d = jensen_delta(p, lam, s / r);
        let lhs = (lam * r + (1.0 - lam) * s).powf(p);
        let rhs = (1.0 - d) * (lam * r.powf(p) + (1.0 - lam) * s.powf(p));
        acc.push(InequalityCheck::new(lhs, rhs), || vec![p, lam, r, s]);
    })
}

/// `γ(−1/(z+ξ), −1/(z+ζ)) ≤ γ(ξ, ζ)`.
pub fn mobius_suite(samples: usize, seed: u64) -> SuiteResult {
    run("mobius_contraction", samples, seed, |rng, acc| {
        let z = random_upper(rng);
        let xi = random_upper(rng);
        let zeta = random_upper(rng);
        let lhs = gamma(mobius_step(z, xi), mobius_step(z, zeta));
        acc.push(InequalityCheck::new(lhs, gamma(xi, zeta)), || {
            vec![z.re, z.im, xi.re, xi.im, zeta.re, zeta.im]
        });
    })
}

/// `|ξ| ≤ 4γ(ξ,ζ) Im ζ + 2|ζ|`.
pub fn euclidean_suite(samples: usize, seed: u64) -> SuiteResult {
    run("euclidean_gamma_bound", samples, seed, |rng, acc| {
        let xi = random_upper(rng);
        let zeta = if rng.random::<bool>() { random_upper(rng) } else { perturb(rng, xi) };
        let rhs = 4.0 * gamma(xi, zeta) * zeta.im + 2.0 * zeta.norm();
        acc.push(InequalityCheck::new(xi.norm(), rhs), || vec![xi.re, xi.im, zeta.re, zeta.im]);
    })
}

/// Reference Green vectors and per-label spheres used to draw sphere states.
pub struct StateSampler<'a> {
    model: &'a SubstitutionModel,
    references: &'a [GreenVector],
    spheres: Vec<CherrySphere>,
    permutations: Vec<Vec<LabelPermutation>>,
}

impl<'a> StateSampler<'a> {
    pub fn new(model: &'a SubstitutionModel, references: &'a [GreenVector]) -> Result<Self> {
        let spheres: Vec<CherrySphere> = (0..model.alphabet_size())
            .map(|k| cherry_sphere(model, k))
            .collect::<Result<_>>()?;
        let permutations = spheres.iter().map(enumerate_permutations).collect::<Result<_>>()?;
        Ok(Self {
            model,
            references,
            spheres,
            permutations,
        })
    }

    /// A state whose slots pass `accept`, with `w, w', ϑ` uniform in
    /// `(−λ, λ)`. Returns the label of the sphere as well.
    pub fn draw<R: Rng>(
        &self,
        rng: &mut R,
        lambda: f64,
        accept: impl Fn(Complex64, Complex64) -> bool,
    ) -> (usize, SphereState) {
        let gv = &self.references[rng.random_range(0..self.references.len())];
        let k = rng.random_range(0..self.spheres.len());
        let sphere = &self.spheres[k];
        let g = sphere
            .members
            .iter()
            .map(|s| {
                let h = gv.values[s.label];
                loop {
                    let x = perturb(rng, h);
                    if accept(x, h) {
                        return x;
                    }
                }
            })
            .collect();
        let (w, w_prime, vartheta) = (pm(rng, lambda), pm(rng, lambda), pm(rng, lambda));
        let s = SphereState::on_sphere(self.model, gv, sphere.clone(), g, w, w_prime, vartheta)
            .expect("sampled state is admissible");
        (k, s)
    }

    pub fn permutations(&self, k: usize) -> &[LabelPermutation] {
        &self.permutations[k]
    }
}

fn state_params(s: &SphereState) -> Vec<f64> {
    let (w, wp, t) = s.perturbations();
    let mut v = vec![s.z().re, s.z().im, w, wp, t];
    for g in s.g() {
        v.extend([g.re, g.im]);
    }
    v
}

/// `max(Σ p c γ, 0)^p ≤ Σ p γ^p ≤ max γ^p` for several exponents.
pub fn power_chain_suite(sampler: &StateSampler, p_exps: &[f64], samples: usize, seed: u64) -> SuiteResult {
    run("weighted_power_chain", samples, seed, |rng, acc| {
        let (_, s) = sampler.draw(rng, 0.05, |_, _| true);
        let c = crate::contraction::contraction_c(&s);
        let gam = gamma_per_slot(&s);
        for &p in p_exps {
            let lin: f64 = (0..gam.len()).map(|x| s.p()[x] * c[x] * gam[x]).sum();
            let mid: f64 = (0..gam.len()).map(|x| s.p()[x] * gam[x].powf(p)).sum();
            let top = gam.iter().cloned().fold(0.0, f64::max).powf(p);
            let first = InequalityCheck::new(lin.max(0.0).powf(p), mid);
            let second = InequalityCheck::new(mid, top);
            let check = if first.excess() >= second.excess() { first } else { second };
            acc.push(check, || {
                let mut v = vec![p];
                v.extend(state_params(&s));
                v
            });
        }
    })
}

/// One unperturbed recursion step at a vertex of random label with random
/// child values.
pub fn one_step_suite(
    model: &SubstitutionModel,
    references: &[GreenVector],
    samples: usize,
    seed: u64,
) -> SuiteResult {
    let children: Vec<Vec<usize>> = (0..model.alphabet_size())
        .map(|k| model.child_labels(k).collect())
        .collect();
    run("one_step", samples, seed, |rng, acc| {
        let gv = &references[rng.random_range(0..references.len())];
        let k = rng.random_range(0..children.len());
        let h: Vec<Complex64> = children[k].iter().map(|&l| gv.values[l]).collect();
        let g: Vec<Complex64> = h.iter().map(|&x| perturb(rng, x)).collect();
        let check = one_step_check(gv.z, model.v_per()[k], &g, &h);
        acc.push(check, || {
            let mut v = vec![gv.z.re, gv.z.im, k as f64];
            for x in &g {
                v.extend([x.re, x.im]);
            }
            v
        });
    })
}

/// `γ(g_o, Γ_o) ≤ (1 + c(λ)) Σ p c γ + c(λ)` with `|w|, |w'|, |ϑ| < λ`.
pub fn two_step_suite(sampler: &StateSampler, lambda: f64, samples: usize, seed: u64) -> SuiteResult {
    run(&format!("two_step_lambda_{lambda}"), samples, seed, |rng, acc| {
        let (_, s) = sampler.draw(rng, lambda, |_, _| true);
        let c = composed_c(lambda, s.gamma_o(), s.gamma_o_prime());
        acc.push(two_step_check(&s, lambda, c), || state_params(&s));
    })
}

/// Number of two-step violations with the signed inner factor at `λ`.
pub fn signed_inner_violations(sampler: &StateSampler, lambda: f64, samples: usize, seed: u64) -> SuiteResult {
    run(&format!("two_step_signed_inner_lambda_{lambda}"), samples, seed, |rng, acc| {
        let (_, s) = sampler.draw(rng, lambda, |_, _| true);
        let c = composed_c(lambda, s.gamma_o(), s.gamma_o_prime());
        acc.push(two_step_check_with(&s, lambda, c, InnerFactor::Signed), || state_params(&s));
    })
}

/// `κ ≤ 1` on random states.
pub fn kappa_suite(sampler: &StateSampler, lambda: f64, p_exp: f64, samples: usize, seed: u64) -> SuiteResult {
    run("kappa_at_most_one", samples, seed, |rng, acc| {
        let (k, s) = sampler.draw(rng, lambda, |_, _| true);
        let kv = kappa(&s, p_exp, sampler.permutations(k));
        acc.push(InequalityCheck::new(kv.value, 1.0), || state_params(&s));
    })
}

/// `κ` on states with every slot at `γ ≥ radius`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutsideBallReport {
    pub lambda: f64,
    pub radius: f64,
    pub samples: usize,
    pub max_kappa: f64,
    /// `1 − max κ`.
    pub margin: f64,
    pub suite: SuiteResult,
}

pub fn outside_ball_suite(
    sampler: &StateSampler,
    consts: &Constants,
    samples: usize,
    seed: u64,
) -> Result<OutsideBallReport> {
    let lambda = consts.lambda0 / 2.0;
    let radius = consts.radius(lambda)?;
    let suite = run("kappa_outside_ball", samples, seed, |rng, acc| {
        let (k, s) = sampler.draw(rng, lambda, |g, h| gamma(g, h) >= radius);
        let kv = kappa(&s, consts.p_exp, sampler.permutations(k));
        let check = InequalityCheck {
            lhs: kv.value,
            rhs: 1.0,
            holds: kv.value < 1.0,
        };
        acc.push(check, || state_params(&s));
    });
    let max_kappa = suite.worst_excess + 1.0;
    Ok(OutsideBallReport {
        lambda,
        radius,
        samples,
        max_kappa,
        margin: 1.0 - max_kappa,
        suite,
    })
}

/// `κ ≤ 1 − c₂(1 − ε/c₁)²` on states with an invisible slot at level `ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvisibleReport {
    pub eps: f64,
    pub bound: f64,
    /// Samples that had an invisible slot and were checked.
    pub applicable: usize,
    pub suite: SuiteResult,
}

pub fn invisible_suite(
    sampler: &StateSampler,
    consts: &Constants,
    lambda: f64,
    samples: usize,
    seed: u64,
) -> InvisibleReport {
    let eps = consts.c1 / 2.0;
    let bound = 1.0 - consts.c2 * (1.0 - eps / consts.c1).powi(2);
    let applicable = std::sync::atomic::AtomicUsize::new(0);
    let suite = run("kappa_invisible_slot", samples, seed, |rng, acc| {
        let (k, s) = sampler.draw(rng, lambda, |_, _| true);
        if visibility(&s, eps).vis_gamma.len() == s.sphere().len() {
            return;
        }
        applicable.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let kv = kappa(&s, consts.p_exp, sampler.permutations(k));
        acc.push(InequalityCheck::new(kv.value, bound), || state_params(&s));
    });
    InvisibleReport {
        eps,
        bound,
        applicable: applicable.into_inner(),
        suite,
    }
}

/// Whether `ε = 1` leaves every visibility set empty on sampled states.
pub fn visibility_at_one_is_empty(sampler: &StateSampler, samples: usize, seed: u64) -> SuiteResult {
    run("visibility_eps_one_empty", samples, seed, |rng, acc| {
        let (_, s) = sampler.draw(rng, 0.05, |_, _| true);
        let v = visibility(&s, 1.0);
        let count = v.vis_gamma.len() + v.vis_im_inner.len() + v.vis_im_outer.len() + v.o_prime_visible as usize;
        acc.push(InequalityCheck::new(count as f64, 0.0), || state_params(&s));
    })
}

/// Settings of [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub interval: (f64, f64),
    pub p_exp: f64,
    /// Couplings of the two-step suites.
    pub lambdas: Vec<f64>,
    pub samples: usize,
    /// Samples of the sphere-state suites that need `κ`.
    pub kappa_samples: usize,
    pub seed: u64,
    pub grid: ConstantsGrid,
    /// Number of sample reports included in the output.
    pub reports: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            interval: (-1.0, 1.0),
            p_exp: 1.5,
            lambdas: vec![0.0, 0.01, 0.05],
            samples: 100_000,
            kappa_samples: 10_000,
            seed: 0,
            grid: ConstantsGrid::default(),
            reports: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaStats {
    pub min: f64,
    pub max: f64,
    pub c_weighted_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub constants: Constants,
    pub suites: Vec<SuiteResult>,
    pub outside_ball: OutsideBallReport,
    pub invisible: InvisibleReport,
    /// Reported and not counted: the signed inner factor and the
    /// perturbation bound with the inverse scale prefactor.
    pub diagnostics: Vec<SuiteResult>,
    pub kappa: KappaStats,
    pub sample_reports: Vec<ContractionReport>,
    pub counterexamples: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.counterexamples == 0
    }
}

/// Constants for the interval followed by every suite. Seeds of the suites
/// are derived from `cfg.seed`.
pub fn verify(model: &SubstitutionModel, bands: &SpectralBands, cfg: &VerifyConfig) -> Result<VerifyReport> {
    let consts = constants(model, cfg.interval, cfg.p_exp, bands, cfg.grid)?;
    let sampler = StateSampler::new(model, &consts.samples)?;
    let seed = |i: u64| crate::disorder::derive_seed(cfg.seed, i);
    let n = cfg.samples;
    let mut suites = vec![
        c0_suite(n, seed(1)),
        jensen_suite(n, seed(2)),
        power_chain_suite(&sampler, &[1.1, 1.5, 2.0, 3.0], n, seed(3)),
        mobius_suite(n, seed(4)),
        euclidean_suite(n, seed(5)),
        one_step_suite(model, &consts.samples, n, seed(6)),
    ];
    for (i, &l) in cfg.lambdas.iter().enumerate() {
        suites.push(two_step_suite(&sampler, l, n, seed(100 + i as u64)));
    }
    let kappa_lambda = consts.lambda0 / 2.0;
    suites.push(kappa_suite(&sampler, kappa_lambda, cfg.p_exp, cfg.kappa_samples, seed(7)));
    suites.push(visibility_at_one_is_empty(&sampler, cfg.kappa_samples, seed(8)));
    let outside_ball = outside_ball_suite(&sampler, &consts, cfg.kappa_samples, seed(9))?;
    let invisible = invisible_suite(&sampler, &consts, kappa_lambda, cfg.kappa_samples, seed(10));
    let diagnostics = vec![
        signed_inner_violations(&sampler, 0.0, cfg.kappa_samples, seed(11)),
        c0_inverse_scale_suite(n, seed(1)),
    ];

    let mut rng = chunk_rng(seed(12), 0);
    let mut sample_reports = Vec::new();
    let mut stats = KappaStats {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        c_weighted_max: None,
    };
    for i in 0..cfg.reports.max(64) {
        let (k, s) = sampler.draw(&mut rng, kappa_lambda, |_, _| true);
        let kv = kappa_with(&s, cfg.p_exp, sampler.permutations(k), InnerFactor::PositivePart);
        stats.min = stats.min.min(kv.value);
        stats.max = stats.max.max(kv.value);
        if let Some(c) = kv.c_weighted {
            stats.c_weighted_max = Some(stats.c_weighted_max.map_or(c, |m: f64| m.max(c)));
        }
        if i < cfg.reports {
            sample_reports.push(contraction_report(&s, cfg.p_exp, sampler.permutations(k)));
        }
    }
    let counterexamples = suites.iter().map(|s| s.counterexamples).sum::<usize>()
        + outside_ball.suite.counterexamples
        + invisible.suite.counterexamples;
    Ok(VerifyReport {
        constants: consts,
        suites,
        outside_ball,
        invisible,
        diagnostics,
        kappa: stats,
        sample_reports,
        counterexamples,
    })
}
