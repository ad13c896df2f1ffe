//! Acceptance criteria, one line per criterion. Exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use conespectra::contraction::{constants, ConstantsGrid};
use conespectra::disorder::{DisorderMode, DisorderSpec, Law};
use conespectra::greens::{
    detect_bands, solve_gamma, DEFAULT_ETA_FLOOR, DEFAULT_GRID_STEP, DEFAULT_IM_THRESHOLD,
};
use conespectra::montecarlo::{estimate_moments, vector_inequality, TrialConfig};
use conespectra::suites::{self, StateSampler};
use conespectra::{Complex64, SubstitutionModel};
use serde_json::Value;

const SAMPLES: usize = 100_000;
const SEED: u64 = 20_240_601;

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn binary() -> SubstitutionModel {
    SubstitutionModel::regular(2, 0.0).unwrap()
}

fn two_label() -> SubstitutionModel {
    SubstitutionModel::new(vec![vec![1, 1], vec![1, 1]], vec![0.0, 0.0], 0).unwrap()
}

fn bands_of(m: &SubstitutionModel) -> conespectra::SpectralBands {
    detect_bands(m, DEFAULT_GRID_STEP, DEFAULT_ETA_FLOOR, DEFAULT_IM_THRESHOLD).unwrap()
}

/// Root of `kΓ² + zΓ + 1 = 0` in the upper half plane.
fn quadratic_root(k: f64, z: Complex64) -> Complex64 {
    let d = (z * z - 4.0 * k).sqrt();
    let a = (-z + d) / (2.0 * k);
    let b = (-z - d) / (2.0 * k);
    if a.im > b.im {
        a
    } else {
        b
    }
}

fn regular_tree_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for k in [2u32, 3, 4] {
        let m = SubstitutionModel::regular(k, 0.0).unwrap();
        let edge = 4.0 * (k as f64).sqrt();
        for eta in [1.0, 0.1, 0.01] {
            for i in 0..100 {
                let e = -edge + 2.0 * edge * i as f64 / 99.0;
                let z = Complex64::new(e, eta);
                let got = solve_gamma(&m, z).unwrap().values[0];
                worst = worst.max((got - quadratic_root(k as f64, z)).norm());
            }
        }
    }
    let t = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-10 && t < 5.0,
        detail: format!("max |Δ| = {worst:.2e} over 900 points, {t:.2} s"),
    }
}

fn band_detection() -> Outcome {
    let start = Instant::now();
    let edge = 2.0 * 2f64.sqrt();
    let mut errs = Vec::new();
    let mut ok = true;
    for shift in [0.0, 5.0] {
        let b = bands_of(&SubstitutionModel::regular(2, shift).unwrap());
        ok &= b.intervals.len() == 1;
        if let Some(&(lo, hi)) = b.intervals.first() {
            let err = (lo - (shift - edge)).abs().max((hi - (shift + edge)).abs());
            errs.push(err);
            ok &= err <= 1e-2;
        }
    }
    let t = start.elapsed().as_secs_f64();
    Outcome {
        pass: ok && t < 30.0,
        detail: format!("edge errors {} (shift 0, 5), {t:.2} s", sci(&errs)),
    }
}

struct Fixture {
    model: SubstitutionModel,
    consts: conespectra::contraction::Constants,
}

fn fixture() -> Fixture {
    let model = binary();
    let bands = bands_of(&model);
    let consts = constants(&model, (-1.0, 1.0), 1.5, &bands, ConstantsGrid::default()).unwrap();
    Fixture { model, consts }
}

fn summarize(results: &[suites::SuiteResult]) -> (bool, String) {
    let pass = results.iter().all(|r| r.passed());
    let parts: Vec<String> = results
        .iter()
        .map(|r| format!("{}={}/{}", r.name, r.counterexamples, r.samples))
        .collect();
    (pass, parts.join(" "))
}

fn inequality_suites(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let sampler = StateSampler::new(&fx.model, &fx.consts.samples).unwrap();
    let results = vec![
        suites::c0_suite(SAMPLES, SEED + 1),
        suites::jensen_suite(SAMPLES, SEED + 2),
        suites::power_chain_suite(&sampler, &[1.1, 1.5, 2.0, 3.0], SAMPLES, SEED + 3),
        suites::mobius_suite(SAMPLES, SEED + 4),
        suites::euclidean_suite(SAMPLES, SEED + 5),
    ];
    let (pass, detail) = summarize(&results);
    let t = start.elapsed().as_secs_f64();
    let worst = &results[0];
    Outcome {
        pass: pass && t < 60.0,
        detail: format!(
            "{detail}, {t:.1} s; worst perturbation_bound excess {:.3e} at {:?}",
            worst.worst_excess, worst.worst_sample
        ),
    }
}

fn expansion_suites(fx: &Fixture) -> Outcome {
    let sampler = StateSampler::new(&fx.model, &fx.consts.samples).unwrap();
    let results = vec![
        suites::one_step_suite(&fx.model, &fx.consts.samples, SAMPLES, SEED + 6),
        suites::two_step_suite(&sampler, 0.01, SAMPLES, SEED + 7),
        suites::two_step_suite(&sampler, 0.05, SAMPLES, SEED + 8),
    ];
    let (pass, detail) = summarize(&results);
    Outcome { pass, detail }
}

fn kappa_contraction(fx: &Fixture) -> Outcome {
    let sampler = StateSampler::new(&fx.model, &fx.consts.samples).unwrap();
    let lambda = fx.consts.lambda0 / 2.0;
    let all = suites::kappa_suite(&sampler, lambda, fx.consts.p_exp, SAMPLES, SEED + 9);
    let ball = suites::outside_ball_suite(&sampler, &fx.consts, 10_000, SEED + 10).unwrap();
    let invis = suites::invisible_suite(&sampler, &fx.consts, lambda, 10_000, SEED + 11);
    let pass = all.passed() && ball.max_kappa < 1.0 && invis.suite.passed() && invis.applicable > 0;
    Outcome {
        pass,
        detail: format!(
            "max κ {:.4} on {} states; outside R = {:.3} at λ = {:.4}: max κ {:.4}, margin {:.4}; invisible slot bound {:.4} on {} states, {} above",
            all.worst_excess + 1.0,
            all.samples,
            ball.radius,
            ball.lambda,
            ball.max_kappa,
            ball.margin,
            invis.bound,
            invis.applicable,
            invis.suite.counterexamples
        ),
    }
}

fn trial_config(m: &SubstitutionModel, lambda: f64, eta: f64, n: usize, seed: u64) -> TrialConfig {
    let spec = DisorderSpec::uniform_labels(DisorderMode::IidBoth, Law::Uniform { w: 0.9 }, m);
    let mut cfg = TrialConfig::new(m.clone(), spec);
    cfg.energy = 0.0;
    cfg.lambda = lambda;
    cfg.eta = eta;
    cfg.p_exp = 1.5;
    cfg.n_trials = n;
    cfg.seed = seed;
    cfg
}

fn zero_coupling() -> Outcome {
    let models = [
        binary(),
        two_label(),
        SubstitutionModel::regular(3, 0.5).unwrap(),
        SubstitutionModel::new(vec![vec![2, 1], vec![1, 1]], vec![0.0, 0.3], 0).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for m in &models {
        for eta in [1.0, 0.01] {
            let e = estimate_moments(&trial_config(m, 0.0, eta, 200, SEED)).unwrap();
            worst = e.moment_vector.mean.iter().cloned().fold(worst, f64::max);
        }
    }
    Outcome {
        pass: worst <= 1e-13,
        detail: format!("max entry {worst:.2e} over {} models", models.len()),
    }
}

fn moment_continuity() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in [("[[2]]", binary()), ("[[1,1],[1,1]]", two_label())] {
        let est: Vec<_> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&l| estimate_moments(&trial_config(&m, l, 0.01, 2000, SEED)).unwrap())
            .collect();
        for j in 0..m.alphabet_size() {
            let ms: Vec<(f64, f64)> = est
                .iter()
                .map(|e| (e.moment_vector.mean[j], e.moment_vector.stderr[j]))
                .collect();
            for w in ms.windows(2) {
                pass &= w[0].0 - w[1].0 > 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
            }
            pass &= ms[2].0 < 0.25 * ms[0].0;
            parts.push(format!(
                "{name} label {j}: {:.3e}±{:.1e}, {:.3e}±{:.1e}, {:.3e}±{:.1e}",
                ms[0].0, ms[0].1, ms[1].0, ms[1].1, ms[2].0, ms[2].1
            ));
        }
    }
    let t = start.elapsed().as_secs_f64();
    Outcome {
        pass: pass && t < 600.0,
        detail: format!("{}; {t:.0} s", parts.join("; ")),
    }
}

fn vector_boundedness() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in [("[[2]]", binary()), ("[[1,1],[1,1]]", two_label())] {
        let mut values = Vec::new();
        for eta in [1.0, 0.3, 0.1, 0.03, 0.01] {
            let (est, rep) = vector_inequality(&trial_config(&m, 0.05, eta, 2000, SEED)).unwrap();
            let k = est.kappa[m.root_label()];
            parts.push(format!(
                "{name} η={eta}: <u,Eγ>={:.3e} slack={} κ mean {:.3} (c-weighted {:.3})",
                rep.u_e_gamma,
                sci(&rep.slack),
                k.mean,
                k.c_weighted_mean.unwrap_or(f64::NAN)
            ));
            values.push(rep.u_e_gamma);
        }
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        pass &= max < 3.0 * min;
        parts.push(format!("{name} spread max/min = {:.2}", max / min));
    }
    Outcome {
        pass,
        detail: parts.join("\n       "),
    }
}

fn strip_timing(v: &mut Value) {
    if let Some(o) = v.as_object_mut() {
        o.remove("runtime");
        if let Some(m) = o.get_mut("manifest").and_then(Value::as_object_mut) {
            m.remove("wall_clock");
        }
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> (Option<i32>, Value) {
    let status = Command::new(env!("CARGO_BIN_EXE_conespectra"))
        .current_dir(dir)
        .args(args)
        .status()
        .unwrap();
    let out = args.iter().position(|&a| a == "--out").map(|i| args[i + 1]).unwrap();
    let text = std::fs::read_to_string(dir.join(out)).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    strip_timing(&mut v);
    (status.code(), v)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"{
  "alphabet": ["a", "b"],
  "matrix": [[1, 1], [1, 1]],
  "v_per": [0.0, 0.0],
  "root_label": "a",
  "disorder": {"mode": "iid_both", "per_label": [{"law": "uniform", "params": {"w": 0.9}}, {"law": "uniform", "params": {"w": 0.9}}]}
}"#;
    std::fs::write(dir.path().join("model.json"), model).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let runs: [(&str, Vec<&str>); 2] = [
        (
            "simulate",
            vec![
                "simulate", "--model", "model.json", "--lambda", "0.1,0.05", "--eta", "0.1", "--trials", "200",
                "--seed", "7", "--csv", "sweep.csv", "--out",
            ],
        ),
        (
            "verify",
            vec![
                "verify", "model.json", "--samples", "3000", "--kappa-samples", "500", "--grid-energies", "20",
                "--seed", "7", "--out",
            ],
        ),
    ];
    for (name, args) in runs {
        let mut a1 = args.clone();
        a1.push("first.json");
        let mut a2 = args.clone();
        a2.push("second.json");
        let (c1, v1) = run_cli(dir.path(), &a1);
        let csv1 = std::fs::read(dir.path().join("sweep.csv")).ok();
        let (c2, v2) = run_cli(dir.path(), &a2);
        let csv2 = std::fs::read(dir.path().join("sweep.csv")).ok();
        let same = c1 == c2
            && serde_json::to_vec(&v1).unwrap() == serde_json::to_vec(&v2).unwrap()
            && csv1 == csv2;
        pass &= same;
        parts.push(format!("{name}: identical={same} exit={c1:?}"));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let fx = fixture();
    let criteria: Vec<Criterion<'_>> = vec![
        ("1 regular-tree oracle", Box::new(regular_tree_oracle)),
        ("2 band detection", Box::new(band_detection)),
        ("3 scalar inequality suites", Box::new(|| inequality_suites(&fx))),
        ("4 one-step and two-step expansion", Box::new(|| expansion_suites(&fx))),
        ("5 kappa contraction", Box::new(|| kappa_contraction(&fx))),
        ("6 zero-coupling exactness", Box::new(zero_coupling)),
        ("7 moment continuity", Box::new(moment_continuity)),
        ("8 vector-inequality boundedness", Box::new(vector_boundedness)),
        ("9 reproducibility", Box::new(reproducibility)),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
