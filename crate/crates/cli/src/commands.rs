use std::path::Path;
use std::process::ExitCode;

use conespectra::contraction::ConstantsGrid;
use conespectra::disorder::{DisorderMode, DisorderSpec, Law};
use conespectra::greens::{detect_bands, full_green_at_root, solve_gamma, SpectralBands};
use conespectra::model_file::{self, ModelFile};
use conespectra::montecarlo::{euclidean_from, vector_inequality, Boundary, TrialConfig};
use conespectra::suites::{self, VerifyConfig};
use conespectra::{Complex64, Error, SubstitutionModel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest::Recorder;
use crate::{BandArgs, BandsArgs, BoundaryArg, SimulateArgs, SolveArgs, VerifyArgs};

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_) | Error::Io(_) | Error::InvalidModel(_) | Error::InvalidConfig(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<ExitCode, Failure>;

fn load(path: &str) -> Result<ModelFile, Failure> {
    model_file::read(Path::new(path)).map_err(|e| Failure {
        message: format!("{path}: {}", Failure::from(e).message),
        code: 2,
    })
}

fn model_value(m: &SubstitutionModel) -> Value {
    serde_json::from_str(&model_file::to_json(m, None)).expect("model JSON parses")
}

fn emit(out: Option<&str>, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::usage(format!("{path}: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_csv(rec: &mut Recorder, path: &str, body: &str) -> Result<(), Failure> {
    rec.write_csv(path, body).map_err(|e| Failure::usage(format!("{path}: {e}")))
}

fn scan(model: &SubstitutionModel, a: &BandArgs) -> Result<SpectralBands, Failure> {
    Ok(detect_bands(model, a.grid_step, a.eta_floor, a.im_threshold)?)
}

fn scan_config(a: &BandArgs) -> Value {
    json!({"grid_step": a.grid_step, "eta_floor": a.eta_floor, "im_threshold": a.im_threshold})
}

pub fn validate(path: &str, out: Option<&str>) -> Outcome {
    let f = load(path)?;
    let report = f.model.report();
    let violations = report.violations();
    let rec = Recorder::start("validate", json!({"model": model_value(&f.model)}), None);
    for v in &violations {
        eprintln!("{v}");
    }
    emit(
        out,
        &json!({
            "manifest": rec.finish(),
            "report": report,
            "admissible": report.admissible(),
            "violations": violations,
        }),
    )?;
    Ok(if report.admissible() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn bands(a: &BandsArgs) -> Outcome {
    let f = load(&a.model)?;
    let mut rec = Recorder::start(
        "bands",
        json!({"model": model_value(&f.model), "scan": scan_config(&a.scan)}),
        None,
    );
    let bands = scan(&f.model, &a.scan)?;
    if let Some(csv) = &a.csv {
        write_csv(&mut rec, csv, &bands.scan_csv(f.model.alphabet()))?;
    }
    emit(a.out.as_deref(), &json!({"manifest": rec.finish(), "bands": bands}))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SolveRow {
    energy: f64,
    eta: f64,
    gamma: Vec<Complex64>,
    root_green: Complex64,
    residual: f64,
}

pub fn solve(a: &SolveArgs) -> Outcome {
    let f = load(&a.model)?;
    let m = &f.model;
    let mut rec = Recorder::start(
        "solve",
        json!({"model": model_value(m), "energy": a.energy, "eta": a.eta}),
        None,
    );
    let mut rows = Vec::with_capacity(a.energy.len());
    for &e in &a.energy {
        let g = solve_gamma(m, Complex64::new(e, a.eta))?;
        rows.push(SolveRow {
            energy: e,
            eta: a.eta,
            residual: g.residual(m),
            root_green: full_green_at_root(m, &g),
            gamma: g.values,
        });
    }
    if let Some(csv) = &a.csv {
        let mut body = String::from("energy,eta");
        for l in m.alphabet() {
            body.push_str(&format!(",re_{l},im_{l}"));
        }
        body.push_str(",residual\n");
        for r in &rows {
            body.push_str(&format!("{:.12e},{:.12e}", r.energy, r.eta));
            for g in &r.gamma {
                body.push_str(&format!(",{:.16e},{:.16e}", g.re, g.im));
            }
            body.push_str(&format!(",{:.3e}\n", r.residual));
        }
        write_csv(&mut rec, csv, &body)?;
    }
    emit(a.out.as_deref(), &json!({"manifest": rec.finish(), "rows": rows}))?;
    Ok(ExitCode::SUCCESS)
}

pub fn verify(a: &VerifyArgs) -> Outcome {
    if a.interval.len() != 2 {
        return Err(Failure::usage("--interval takes lo,hi"));
    }
    let f = load(&a.model)?;
    let cfg = VerifyConfig {
        interval: (a.interval[0], a.interval[1]),
        p_exp: a.p,
        lambdas: a.lambda.clone(),
        samples: a.samples,
        kappa_samples: a.kappa_samples,
        seed: a.seed,
        grid: ConstantsGrid {
            energies: a.grid_energies,
            eta_levels: a.eta_levels,
            ..ConstantsGrid::default()
        },
        reports: a.reports,
    };
    let rec = Recorder::start(
        "verify",
        json!({"model": model_value(&f.model), "verify": cfg, "scan": scan_config(&a.scan)}),
        Some(a.seed),
    );
    let bands = scan(&f.model, &a.scan)?;
    let report = suites::verify(&f.model, &bands, &cfg)?;
    for s in report.suites.iter().filter(|s| !s.passed()) {
        eprintln!("{}: {} counterexamples in {} samples", s.name, s.counterexamples, s.samples);
    }
    let passed = report.passed();
    emit(
        a.out.as_deref(),
        &json!({"manifest": rec.finish(), "passed": passed, "report": report}),
    )?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn parse_law(s: &str) -> Result<Law, Failure> {
    let (name, param) = s
        .split_once(':')
        .ok_or_else(|| Failure::usage(format!("law {s:?} is not name:param")))?;
    let x: f64 = param
        .parse()
        .map_err(|_| Failure::usage(format!("law parameter {param:?} is not a number")))?;
    Ok(match name {
        "uniform" => Law::Uniform { w: x },
        "two_point" => Law::TwoPoint { w: x },
        "truncated_normal" => Law::TruncatedNormal { sigma: x },
        "constant" => Law::Constant { value: x },
        _ => return Err(Failure::usage(format!("unknown law {name:?}"))),
    })
}

fn disorder_for(a: &SimulateArgs, f: &ModelFile) -> Result<DisorderSpec, Failure> {
    let mode = match &a.disorder {
        Some(m) => Some(
            serde_json::from_value::<DisorderMode>(Value::String(m.clone()))
                .map_err(|_| Failure::usage(format!("unknown disorder mode {m:?}")))?,
        ),
        None => None,
    };
    let law = a.law.as_deref().map(parse_law).transpose()?;
    match (&f.disorder, mode, law) {
        (_, Some(mode), Some(law)) => Ok(DisorderSpec::uniform_labels(mode, law, &f.model)),
        (Some(d), mode, law) => {
            let mut d = d.clone();
            if let Some(mode) = mode {
                d.mode = mode;
            }
            if let Some(law) = law {
                d.per_label = vec![law; f.model.alphabet_size()];
            }
            Ok(d)
        }
        (None, _, _) => Err(Failure::usage(
            "model file has no disorder; pass --disorder and --law",
        )),
    }
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    let f = load(&a.model)?;
    let disorder = disorder_for(a, &f)?;
    let boundary = match a.boundary {
        BoundaryArg::Free => Boundary::Free,
        BoundaryArg::Dirichlet => Boundary::Dirichlet,
    };
    let config = json!({
        "model": model_value(&f.model),
        "disorder": disorder,
        "lambda": a.lambda,
        "energy": a.energy,
        "eta": a.eta,
        "p": a.p,
        "depth": a.depth,
        "trials": a.trials,
        "boundary": boundary,
        "seed": a.seed,
    });
    let mut rec = Recorder::start("simulate", config.clone(), Some(a.seed));
    let root = f.model.root_label();
    let mut points = Vec::new();
    let mut csv = String::from("lambda,eta");
    for l in f.model.alphabet() {
        csv.push_str(&format!(",depth_{l},mean_{l},stderr_{l}"));
    }
    csv.push_str(",u_e_gamma,euclidean_root,cauchy_schwarz_root,kappa_mean_root,kappa_c_weighted_mean_root\n");
    for &lambda in &a.lambda {
        for &eta in &a.eta {
            let mut cfg = TrialConfig::new(f.model.clone(), disorder.clone());
            cfg.energy = a.energy;
            cfg.eta = eta;
            cfg.lambda = lambda;
            cfg.p_exp = a.p;
            cfg.depth = a.depth;
            cfg.boundary = boundary;
            cfg.n_trials = a.trials;
            cfg.seed = a.seed;
            let (est, vi) = vector_inequality(&cfg)?;
            let euclid = euclidean_from(&est, root);
            csv.push_str(&format!("{lambda},{eta}"));
            for j in 0..f.model.alphabet_size() {
                csv.push_str(&format!(
                    ",{},{:.12e},{:.12e}",
                    est.depth[j], est.moment_vector.mean[j], est.moment_vector.stderr[j]
                ));
            }
            let k = est.kappa[root];
            csv.push_str(&format!(
                ",{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
                vi.u_e_gamma,
                euclid.mean,
                euclid.cauchy_schwarz_bound,
                k.mean,
                k.c_weighted_mean.map_or(String::from("nan"), |v| format!("{v:.12e}"))
            ));
            points.push(json!({
                "lambda": lambda,
                "eta": eta,
                "moment_vector": est.moment_vector,
                "euclidean_moment": euclid,
                "euclidean_per_label": est.euclidean,
                "cauchy_schwarz_bound": est.cauchy_schwarz_bound,
                "depth": est.depth,
                "pilots": est.pilots,
                "kappa": est.kappa,
                "vector_inequality": vi,
                "reference_gamma": est.reference.values,
            }));
        }
    }
    if let Some(path) = &a.csv {
        write_csv(&mut rec, path, &csv)?;
    }
    let single = points.len() == 1;
    let runtime = rec.elapsed();
    let mut out = json!({
        "manifest": rec.finish(),
        "config": config,
        "points": points,
        "runtime": runtime,
    });
    if single {
        let p = &out["points"][0];
        let mv = p["moment_vector"].clone();
        let eu = p["euclidean_moment"].clone();
        out["moment_vector"] = mv["mean"].clone();
        out["stderr"] = mv["stderr"].clone();
        out["euclidean_moment"] = eu;
    }
    emit(a.out.as_deref(), &out)?;
    Ok(ExitCode::SUCCESS)
}
