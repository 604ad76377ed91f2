//! Independent-oracle checks: the exact character against adaptive
//! quadrature of its defining iterated integral, and Wick predictions
//! against Monte-Carlo Gaussian moments.

use num_complex::Complex64;
use pfi::forest::{wick_moment, GaussianFactor, NoiseMode};
use pfi::mc::mc_gaussian_moment;
use pfi::oscillatory::FrequencyAssignment;
use pfi::sympoly::ROOT_SYMBOL;
use pfi::trees::{DecoratedTree, DispersionSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Quadrature oracle
// ---------------------------------------------------------------------------

/// 16-point Gauss-Legendre nodes and weights on [-1, 1].
const GL16_X: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL16_W: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

/// Composite Gauss-Legendre quadrature with the panel count adapted to the
/// oscillation `|phase_scale| * (b - a)`.
fn oscillatory_quadrature(
    f: &dyn Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    phase_scale: f64,
) -> Complex64 {
    let periods = (phase_scale.abs() * (b - a)) / (2.0 * std::f64::consts::PI);
    let panels = (2.0 * periods).ceil() as usize + 4;
    let h = (b - a) / panels as f64;
    let mut acc = Complex64::default();
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in GL16_X.iter().zip(GL16_W.iter()) {
            acc += (f(mid + 0.5 * h * x) + f(mid - 0.5 * h * x)) * (0.5 * h * w);
        }
    }
    acc
}

/// Total oscillation scale of a tree: the sum of |dispersion values| over
/// all edges, bounding every phase in the iterated integral.
fn phase_scale(tree: &DecoratedTree, spec: &DispersionSpec, assign: &FrequencyAssignment) -> f64 {
    let mut total = 0.0;
    tree.visit(&mut |t| {
        let k = assign.freq_value(&t.freq);
        total += (spec.dispersion_value(t.edge.label, &k) as f64).abs();
    });
    total
}

/// The defining iterated integral of the exact character, evaluated by
/// nested quadrature. Stays independent of the closed-form implementation.
fn pi_by_quadrature(
    tree: &DecoratedTree,
    spec: &DispersionSpec,
    assign: &FrequencyAssignment,
    tau: f64,
) -> Complex64 {
    let k = assign.freq_value(&tree.freq);
    let pv = spec.dispersion_value(tree.edge.label, &k) as f64;
    let phase = if tree.edge.conj { -pv } else { pv };
    if !spec.is_integrator(tree.edge.label) {
        let mut acc = Complex64::new(0.0, tau * phase).exp() * tau.powi(tree.poly_exp as i32);
        for c in &tree.children {
            acc *= pi_by_quadrature(c, spec, assign, tau);
        }
        acc
    } else {
        let pref = spec.integrator_prefactor(tree.edge.conj, &k);
        let ell = tree.poly_exp as i32;
        let children = tree.children.clone();
        let integrand = |xi: f64| -> Complex64 {
            let mut acc = Complex64::new(0.0, xi * phase).exp() * xi.powi(ell);
            for c in &children {
                acc *= pi_by_quadrature(c, spec, assign, xi);
            }
            acc
        };
        let scale = phase_scale(tree, spec, assign);
        pref * oscillatory_quadrature(&integrand, 0.0, tau, scale)
    }
}

#[test]
fn exact_character_matches_adaptive_quadrature() {
    // random trees of the Duhamel sets, random assignments with |k_i| <= 8
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for spec in [DispersionSpec::nls(), DispersionSpec::kdv()] {
        let trees = pfi::duhamel_trees(&spec, 1);
        for _ in 0..12 {
            let tree = &trees[rng.gen_range(0..trees.len())];
            let mut a = FrequencyAssignment::new(1);
            a.set(ROOT_SYMBOL, vec![rng.gen_range(-8i64..=8)]);
            let mut syms = tree.all_symbols();
            syms.retain(|&s| s != ROOT_SYMBOL);
            for s in syms {
                a.set(s, vec![rng.gen_range(-8i64..=8)]);
            }
            let tau = rng.gen_range(0.05..0.4);
            let closed = pfi::eval_pi(tree, &spec, &a).eval(tau);
            let quad = pi_by_quadrature(tree, &spec, &a, tau);
            assert!(
                (closed - quad).norm() < 1e-10,
                "{} tree with {} leaves: closed {} quad {}",
                spec.name,
                tree.leaf_count(),
                closed,
                quad
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Wick-versus-Monte-Carlo
// ---------------------------------------------------------------------------

#[test]
fn wick_predictions_match_gaussian_monte_carlo() {
    // 4-leaf configurations in both noise modes
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for mode in [NoiseMode::RealGaussian, NoiseMode::ComplexGaussian] {
        for trial in 0..6 {
            let factors: Vec<GaussianFactor> = (0..4)
                .map(|i| GaussianFactor {
                    freq: vec![rng.gen_range(-2i64..=2)],
                    conj: rng.gen_bool(0.5),
                    left_side: i < 2 && rng.gen_bool(0.5),
                })
                .collect();
            let predicted = wick_moment(&factors, mode);
            let (mean, stderr) = mc_gaussian_moment(&factors, mode, 1000 + trial, 60_000);
            assert!(
                (mean - predicted).abs() <= 3.0 * stderr.max(1e-3),
                "{:?} trial {}: predicted {} mc {} +- {}",
                mode,
                trial,
                predicted,
                mean,
                stderr
            );
        }
    }
}

#[test]
fn pairing_delta_sums_match_the_worked_moment() {
    // E(conj(eta_k) conj(eta_k1) eta_k2 eta_k3) at concrete indices equals
    // the three-delta sum
    let check = |k: i64, k1: i64, k2: i64, k3: i64| -> f64 {
        let f = |freq: i64, conj: bool| GaussianFactor {
            freq: vec![freq],
            conj,
            left_side: false,
        };
        wick_moment(
            &[f(k, true), f(k1, true), f(k2, false), f(k3, false)],
            NoiseMode::RealGaussian,
        )
    };
    let delta = |a: i64, b: i64| (a == b) as u8 as f64;
    let delta0 = |a: i64, b: i64| (a + b == 0) as u8 as f64;
    for (k, k1, k2, k3) in [(1, -1, 2, 2), (1, 1, 1, 1), (2, 1, 2, 1), (0, 0, 0, 0), (3, 1, -2, 2)] {
        let expect = delta0(k, k1) * delta0(k2, k3) + delta(k, k2) * delta(k1, k3)
            + delta(k, k3) * delta(k1, k2);
        assert_eq!(check(k, k1, k2, k3), expect, "({},{},{},{})", k, k1, k2, k3);
    }
}
