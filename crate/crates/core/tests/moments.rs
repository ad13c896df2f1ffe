use conespectra::disorder::{DisorderMode, DisorderSpec, Law};
use conespectra::greens::build_p_matrix;
use conespectra::montecarlo::{estimate_moments, vector_inequality, Boundary, TrialConfig};
use conespectra::substitution::ChildOrder;
use conespectra::SubstitutionModel;

fn binary() -> SubstitutionModel {
    SubstitutionModel::regular(2, 0.0).unwrap()
}

fn two_label() -> SubstitutionModel {
    SubstitutionModel::new(vec![vec![1, 1], vec![1, 1]], vec![0.0, 0.0], 0).unwrap()
}

fn config(m: &SubstitutionModel, lambda: f64, eta: f64, n: usize, seed: u64) -> TrialConfig {
    let spec = DisorderSpec::uniform_labels(DisorderMode::IidBoth, Law::Uniform { w: 0.9 }, m);
    let mut cfg = TrialConfig::new(m.clone(), spec);
    cfg.lambda = lambda;
    cfg.eta = eta;
    cfg.n_trials = n;
    cfg.seed = seed;
    cfg
}

fn within(a: f64, sa: f64, b: f64, sb: f64, k: f64) -> bool {
    (a - b).abs() <= k * (sa * sa + sb * sb).sqrt()
}

#[test]
fn child_order_does_not_change_the_distribution() {
    let m = SubstitutionModel::new(vec![vec![1, 2], vec![1, 1]], vec![0.0, 0.2], 0).unwrap();
    let a = config(&m, 0.1, 0.1, 400, 3);
    let mut b = a.clone();
    b.child_order = ChildOrder::Reversed;
    b.seed = 4;
    let ea = estimate_moments(&a).unwrap();
    let eb = estimate_moments(&b).unwrap();
    for j in 0..2 {
        let (ma, sa) = (ea.moment_vector.mean[j], ea.moment_vector.stderr[j]);
        let (mb, sb) = (eb.moment_vector.mean[j], eb.moment_vector.stderr[j]);
        assert!(within(ma, sa, mb, sb, 3.0), "label {j}: {ma} ± {sa} vs {mb} ± {sb}");
    }
}

#[test]
fn dirichlet_and_free_boundaries_agree_at_depth() {
    let m = binary();
    let free = config(&m, 0.1, 1.0, 300, 5);
    let mut dir = free.clone();
    dir.boundary = Boundary::Dirichlet;
    let ef = estimate_moments(&free).unwrap();
    let ed = estimate_moments(&dir).unwrap();
    let (a, sa) = (ef.moment_vector.mean[0], ef.moment_vector.stderr[0]);
    let (b, sb) = (ed.moment_vector.mean[0], ed.moment_vector.stderr[0]);
    assert!(within(a, sa, b, sb, 3.0) || (a - b).abs() < 1e-3 * a.max(b), "{a} vs {b}");
}

#[test]
fn moments_grow_with_coupling() {
    for m in [binary(), two_label()] {
        let means: Vec<(f64, f64)> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&l| {
                let e = estimate_moments(&config(&m, l, 0.1, 300, 11)).unwrap();
                (e.moment_vector.mean[0], e.moment_vector.stderr[0])
            })
            .collect();
        for w in means.windows(2) {
            assert!(w[0].0 - w[1].0 > 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt(), "{means:?}");
        }
    }
}

#[test]
fn cauchy_schwarz_bound_dominates_within_errors() {
    let e = estimate_moments(&config(&two_label(), 0.1, 0.05, 400, 2)).unwrap();
    for j in 0..2 {
        assert!(e.euclidean[j] <= e.cauchy_schwarz_bound[j] + 3.0 * e.euclidean_stderr[j]);
    }
}

#[test]
fn depth_pilot_deviation_shrinks() {
    let e = estimate_moments(&config(&binary(), 0.1, 0.05, 10, 1)).unwrap();
    let pilots = &e.pilots[0];
    let first = pilots.first().unwrap().deviation;
    let last = pilots.last().unwrap();
    assert!(last.deviation < last.tolerance);
    assert!(last.deviation / first < 1.0);
}

#[test]
fn single_label_vector_inequality_is_scalar() {
    let (est, rep) = vector_inequality(&config(&binary(), 0.05, 0.1, 100, 9)).unwrap();
    let p = build_p_matrix(&binary(), &est.reference).unwrap();
    assert!((p.entries[0][0] - 1.0).abs() < 1e-14);
    assert!((rep.u_e_gamma - est.moment_vector.mean[0]).abs() < 1e-15);
    assert!(rep.slack[0].abs() < 1e-15);
    assert!((rep.u_bound[0] - rep.u_e_gamma).abs() < 1e-15);
}

#[test]
fn zero_coupling_is_exact_for_every_model() {
    let models = [
        binary(),
        two_label(),
        SubstitutionModel::regular(3, 0.5).unwrap(),
        SubstitutionModel::new(vec![vec![2, 1], vec![1, 1]], vec![0.0, 0.3], 1).unwrap(),
    ];
    for m in models {
        let e = estimate_moments(&config(&m, 0.0, 0.01, 50, 1)).unwrap();
        assert!(e.moment_vector.mean.iter().all(|&x| x <= 1e-13), "{:?}", e.moment_vector);
    }
}
