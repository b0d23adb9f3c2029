use gsn_core::force::{ForceParams, ModelKind, SprParams};
use gsn_core::graph::{compute_node_statics, random_signed_graph, Edge, NodeId, Sign, SignedGraph};
use gsn_core::gsn::{gsn_apply, GsnOptions};
use gsn_core::sim::{init_state, simulate, SimConfig, SimState};
use gsn_core::Matrix;
use proptest::prelude::*;

fn neutral_pair() -> (SignedGraph, ForceParams) {
    let e = Edge { u: NodeId(0), v: NodeId(1), true_sign: Sign::Positive, observed: None };
    let g = SignedGraph::with_numeric_labels(2, vec![e]).unwrap();
    let p = ForceParams::Spr(SprParams { l_neu: 1.0, a_neu: 1.0, beta: 0.0, ..SprParams::default() });
    (g, p)
}

fn pair_state(k: usize) -> SimState {
    let mut x = Matrix::zeros(2, k);
    x[(1, 0)] = 2.0;
    SimState { x, v: Matrix::zeros(2, k), t_step: 0 }
}

/// Scalar integration of two unit masses on a line joined by a spring.
fn reference_pair(steps: usize, dt: f64, damping: f64) -> Vec<(f64, f64, f64, f64)> {
    let (mut x0, mut x1, mut v0, mut v1) = (0.0f64, 2.0f64, 0.0f64, 0.0f64);
    let mut out = vec![(x0, x1, v0, v1)];
    for _ in 0..steps {
        let stretch = (x1 - x0).abs() - 1.0;
        let dir = (x1 - x0).signum();
        let f0 = stretch * dir;
        let (nx0, nx1) = (x0 + dt * v0, x1 + dt * v1);
        v0 = (1.0 - damping) * v0 + dt * f0;
        v1 = (1.0 - damping) * v1 - dt * f0;
        x0 = nx0;
        x1 = nx1;
        out.push((x0, x1, v0, v1));
    }
    out
}

#[test]
fn two_body_matches_scalar_reference() {
    let (g, p) = neutral_pair();
    let st = compute_node_statics(&g);
    let cfg = SimConfig { k: 2, n_steps: 1, ..SimConfig::default() };
    let reference = reference_pair(2000, cfg.dt, cfg.damping);
    let mut s = pair_state(2);
    for (t, &(x0, x1, v0, v1)) in reference.iter().enumerate().skip(1) {
        s = simulate(&s, &g, &st, &p, &cfg).unwrap();
        let err = [s.x[(0, 0)] - x0, s.x[(1, 0)] - x1, s.v[(0, 0)] - v0, s.v[(1, 0)] - v1]
            .iter()
            .fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(err <= 1e-12, "step {t}: deviation {err:e}");
        assert_eq!(s.x[(0, 1)], 0.0);
    }
}

#[test]
fn two_body_settles_at_rest_length() {
    let (g, p) = neutral_pair();
    let st = compute_node_statics(&g);
    let cfg = SimConfig { k: 2, n_steps: 5000, ..SimConfig::default() };
    let s = simulate(&pair_state(2), &g, &st, &p, &cfg).unwrap();
    let sep = s.x[(1, 0)] - s.x[(0, 0)];
    assert!((sep - 1.0).abs() < 1e-2, "separation {sep}");
}

#[test]
fn two_body_energy_never_increases() {
    let (g, p) = neutral_pair();
    let st = compute_node_statics(&g);
    let cfg = SimConfig { k: 2, n_steps: 1, ..SimConfig::default() };
    let energy = |s: &SimState| {
        let kinetic: f64 = s.v.as_slice().iter().map(|v| 0.5 * v * v).sum();
        let sep = s.x[(1, 0)] - s.x[(0, 0)];
        kinetic + 0.5 * (sep - 1.0) * (sep - 1.0)
    };
    // Starting from rest the position update lags the velocity, so the
    // first few steps gain energy. Damping wins once speeds have built up.
    let burn_in = 10;
    let mut s = simulate(&pair_state(2), &g, &st, &p, &SimConfig { n_steps: burn_in, ..cfg }).unwrap();
    let mut last = energy(&s);
    for t in burn_in..4000 {
        s = simulate(&s, &g, &st, &p, &cfg).unwrap();
        let e = energy(&s);
        assert!(e <= last, "step {t}: {e} > {last}");
        last = e;
    }
}

#[test]
fn zero_force_velocity_decays_geometrically() {
    let g = SignedGraph::with_numeric_labels(5, Vec::new()).unwrap();
    let st = compute_node_statics(&g);
    let cfg = SimConfig { k: 3, n_steps: 10, ..SimConfig::default() };
    let mut s0: SimState = init_state(5, &cfg).unwrap();
    s0.v = Matrix::from_fn(5, 3, |i, c| (i as f64 - 2.0) * 0.3 + c as f64);
    let s = simulate(&s0, &g, &st, &ForceParams::init(ModelKind::Spr, 0), &cfg).unwrap();
    for (v, v0) in s.v.as_slice().iter().zip(s0.v.as_slice()) {
        let mut expected = *v0;
        for _ in 0..10 {
            expected *= 1.0 - cfg.damping;
        }
        assert_eq!(*v, expected);
    }
}

#[test]
fn seeded_simulation_is_reproducible() {
    let g = random_signed_graph(60, 200, 0.85, 3).unwrap();
    let st = compute_node_statics(&g);
    let p = ForceParams::init(ModelKind::SprNn, 1);
    let cfg = SimConfig { k: 8, n_steps: 30, seed: 9, ..SimConfig::default() };
    let run = |parallel| {
        let cfg = SimConfig { parallel, ..cfg };
        simulate(&init_state(60, &cfg).unwrap(), &g, &st, &p, &cfg).unwrap()
    };
    let a = run(false);
    assert_eq!(a, run(false));
    assert_eq!(a, run(true));
}

/// Orthogonal matrix from a product of Givens rotations.
fn rotation(k: usize, angles: &[f64]) -> Matrix {
    let mut q = Matrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 });
    for (n, &a) in angles.iter().enumerate() {
        let (i, j) = (n % k, (n + 1) % k);
        if i == j {
            continue;
        }
        let (c, s) = (a.cos(), a.sin());
        for r in 0..k {
            let (qi, qj) = (q[(r, i)], q[(r, j)]);
            q[(r, i)] = c * qi - s * qj;
            q[(r, j)] = s * qi + c * qj;
        }
    }
    q
}

fn rotate(x: &Matrix, q: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| (0..x.cols()).map(|c| x[(i, c)] * q[(c, j)]).sum())
}

fn instance(
    seed: u64,
    n: usize,
    k: usize,
    model: ModelKind,
) -> (SignedGraph, gsn_core::graph::NodeStatics, ForceParams, Matrix) {
    let g = random_signed_graph(n, 3 * n, 0.8, seed).unwrap();
    let st = compute_node_statics(&g);
    let cfg = SimConfig { k, seed, ..SimConfig::default() };
    let x = init_state(n, &cfg).unwrap().x;
    (g, st, ForceParams::init(model, seed), x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn forces_are_translation_invariant(seed in 0u64..1000, n in 8usize..40, k in 1usize..6, shift in prop::collection::vec(-10.0f64..10.0, 6), nn in any::<bool>()) {
        let model = if nn { ModelKind::SprNn } else { ModelKind::Spr };
        let (g, st, p, x) = instance(seed, n, k, model);
        let moved = Matrix::from_fn(n, k, |i, c| x[(i, c)] + shift[c]);
        let opts = GsnOptions::default();
        let f = gsn_apply(&g, &st, &p, &x, &opts, 0).unwrap();
        let f2 = gsn_apply(&g, &st, &p, &moved, &opts, 0).unwrap();
        prop_assert!(f.max_abs_diff(&f2) <= 1e-9);
    }

    #[test]
    fn forces_rotate_with_positions(seed in 0u64..1000, n in 8usize..40, k in 2usize..6, angles in prop::collection::vec(-3.2f64..3.2, 8), nn in any::<bool>()) {
        let model = if nn { ModelKind::SprNn } else { ModelKind::Spr };
        let (g, st, p, x) = instance(seed, n, k, model);
        let q = rotation(k, &angles);
        let opts = GsnOptions::default();
        let f = gsn_apply(&g, &st, &p, &x, &opts, 0).unwrap();
        let fr = gsn_apply(&g, &st, &p, &rotate(&x, &q), &opts, 0).unwrap();
        prop_assert!(rotate(&f, &q).max_abs_diff(&fr) <= 1e-9);
    }

    #[test]
    fn unscaled_spring_forces_conserve_momentum(seed in 0u64..1000, n in 8usize..40, k in 1usize..6) {
        let (g, st, _, x) = instance(seed, n, k, ModelKind::Spr);
        let p = ForceParams::Spr(SprParams { beta: 0.0, ..SprParams::default() });
        let f = gsn_apply(&g, &st, &p, &x, &GsnOptions::default(), 0).unwrap();
        for c in 0..k {
            let total: f64 = (0..n).map(|i| f[(i, c)]).sum();
            prop_assert!(total.abs() <= 1e-9);
        }
    }
}
