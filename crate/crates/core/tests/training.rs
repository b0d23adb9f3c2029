use gsn_core::force::ModelKind;
use gsn_core::graph::{hide_signs, Edge, NodeId, Sign, SignedGraph, SplitSpec};
use gsn_core::rng;
use gsn_core::sim::{init_state, SimConfig};
use gsn_core::train::{loss, Checkpoint, LossConfig, TrainConfig, Trainer};
use gsn_core::Matrix;

/// Two factions: friendly inside, hostile across.
fn balanced_graph(n: usize, m: usize, seed: u64) -> SignedGraph {
    let mut seen = std::collections::BTreeSet::new();
    let mut edges = Vec::new();
    let mut i = 0u64;
    while edges.len() < m {
        let a = (rng::draw(seed, rng::tag::SYNTH, &[i, 0]) % n as u64) as u32;
        let b = (rng::draw(seed, rng::tag::SYNTH, &[i, 1]) % n as u64) as u32;
        i += 1;
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        let sign = if a % 2 == b % 2 { Sign::Positive } else { Sign::Negative };
        edges.push(Edge { u: NodeId(a.min(b)), v: NodeId(a.max(b)), true_sign: sign, observed: Some(sign) });
    }
    let g = SignedGraph::with_numeric_labels(n, edges).unwrap();
    hide_signs(&g, &SplitSpec::new(0.2, seed)).unwrap().0
}

fn toy_config(model: ModelKind, seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig { model, epochs, seed, sim: SimConfig { k: 8, ..SimConfig::default() }, ..TrainConfig::default() }
}

#[test]
fn toy_training_reduces_loss() {
    for model in [ModelKind::Spr, ModelKind::SprNn] {
        let mut ratios: Vec<f64> = (0..5)
            .map(|seed| {
                let g = balanced_graph(20, 60, seed);
                let (_, history) = gsn_core::train::train(&g, &toy_config(model, seed, 50)).unwrap();
                history[49].loss / history[0].loss
            })
            .collect();
        ratios.sort_by(f64::total_cmp);
        assert!(ratios[2] < 1.0, "{model}: loss ratios {ratios:?}");
    }
}

#[test]
fn resumed_training_is_bitwise_identical() {
    let g = balanced_graph(20, 60, 3);
    let cfg = toy_config(ModelKind::SprNn, 3, 8);
    let mut full = Trainer::new(&g, &cfg).unwrap();
    full.run().unwrap();

    let mut first = Trainer::new(&g, &TrainConfig { epochs: 5, ..cfg.clone() }).unwrap();
    first.run().unwrap();
    let json = first.checkpoint().to_json().unwrap();
    let mut resumed = Trainer::from_checkpoint(&g, &Checkpoint::from_json(&json).unwrap(), Some(8)).unwrap();
    resumed.run().unwrap();

    assert_eq!(resumed.params().flatten(), full.params().flatten());
    let losses = |t: &Trainer| t.history().iter().map(|r| r.loss).collect::<Vec<_>>();
    assert_eq!(losses(&resumed), losses(&full));
}

#[test]
fn loss_ignores_node_labelling() {
    let g = balanced_graph(20, 60, 9);
    let x = init_state(20, &SimConfig { k: 4, ..SimConfig::default() }).unwrap().x;
    let perm: Vec<u32> = (0..20u32).map(|i| (i * 7 + 3) % 20).collect();
    let edges =
        g.edges().iter().map(|e| Edge { u: NodeId(perm[e.u.index()]), v: NodeId(perm[e.v.index()]), ..*e }).collect();
    let pg = SignedGraph::with_numeric_labels(20, edges).unwrap();
    let mut px = Matrix::zeros(20, 4);
    for i in 0..20 {
        px.row_mut(perm[i] as usize).copy_from_slice(x.row(i));
    }
    let cfg = LossConfig::default();
    assert!((loss(&g, &x, &cfg).unwrap() - loss(&pg, &px, &cfg).unwrap()).abs() < 1e-12);
}
