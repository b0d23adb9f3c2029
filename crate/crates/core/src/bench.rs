//! Timing of the force field and the simulator on synthetic graphs.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::{ForceParams, ModelKind};
use crate::graph::{compute_node_statics, random_signed_graph, SignedGraph};
use crate::gsn::{ForceField, GsnOptions};
use crate::matrix::Matrix;
use crate::sim::{init_state, simulate_field, SimConfig, SimState};

/// Share of positive edges in synthetic graphs.
pub const SYNTHETIC_POSITIVE: f64 = 0.85;
pub const DEFAULT_REPEATS: usize = 7;
pub const DEFAULT_MIN_SAMPLE_MS: f64 = 20.0;

pub fn synthetic_graph(n_nodes: usize, n_edges: usize, seed: u64) -> Result<SignedGraph> {
    random_signed_graph(n_nodes, n_edges, SYNTHETIC_POSITIVE, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ms: f64,
    pub iqr_ms: f64,
    pub samples_ms: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Timing {
    pub fn from_samples(mut samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::invalid("no timing samples"));
        }
        samples_ms.sort_by(f64::total_cmp);
        Ok(Self {
            median_ms: quantile(&samples_ms, 0.5),
            iqr_ms: quantile(&samples_ms, 0.75) - quantile(&samples_ms, 0.25),
            samples_ms,
        })
    }
}

/// Runs `f` once untimed, then `repeats` timed runs.
pub fn time_repeated(repeats: usize, f: impl FnMut() -> Result<()>) -> Result<Timing> {
    time_batched(repeats, 0.0, f)
}

/// Like [`time_repeated`], but each sample repeats `f` until it spans at
/// least `min_sample_ms` and records the mean time per call. The untimed
/// warm-up call sizes the batch.
pub fn time_batched(repeats: usize, min_sample_ms: f64, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    let start = Instant::now();
    f()?;
    let once_ms = start.elapsed().as_secs_f64() * 1e3;
    let batch = if once_ms > 0.0 { (min_sample_ms / once_ms).ceil().clamp(1.0, 1e6) as usize } else { 1 };
    let samples = (0..repeats)
        .map(|_| {
            let start = Instant::now();
            for _ in 0..batch {
                f()?;
            }
            Ok(start.elapsed().as_secs_f64() * 1e3 / batch as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Timing::from_samples(samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchOp {
    GsnApply,
    Simulate,
}

impl BenchOp {
    pub fn name(self) -> &'static str {
        match self {
            BenchOp::GsnApply => "gsn_apply",
            BenchOp::Simulate => "simulate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub k: usize,
    pub op: BenchOp,
    pub median_ms: f64,
    pub iqr_ms: f64,
}

impl BenchPoint {
    /// Work units of the `O(Mk + Nk)` cost model.
    pub fn work(&self) -> f64 {
        ((self.n_edges + self.n_nodes) * self.k) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub model: ModelKind,
    pub seed: u64,
    pub repeats: usize,
    /// Steps per timed `simulate` call.
    pub sim_steps: usize,
    /// Shortest duration of one timing sample; short calls are batched.
    #[serde(default)]
    pub min_sample_ms: f64,
    pub parallel: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            model: ModelKind::SprNn,
            seed: 0,
            repeats: DEFAULT_REPEATS,
            sim_steps: 10,
            min_sample_ms: DEFAULT_MIN_SAMPLE_MS,
            parallel: false,
        }
    }
}

/// One grid point, prepared once so that graph generation, statics and
/// feature computation stay outside the timed region.
struct Workload {
    graph: SignedGraph,
    field: ForceField,
    sim: SimConfig,
    opts: GsnOptions,
    s0: SimState,
    out: Matrix,
}

impl Workload {
    fn new(n: usize, m: usize, k: usize, settings: &BenchSettings) -> Result<Self> {
        let graph = synthetic_graph(n, m, settings.seed)?;
        let statics = compute_node_statics(&graph);
        let field = ForceField::new(&graph, &statics, &ForceParams::init(settings.model, settings.seed))?;
        let sim = SimConfig {
            k,
            seed: settings.seed,
            n_steps: settings.sim_steps,
            parallel: settings.parallel,
            ..SimConfig::default()
        };
        let s0 = init_state::<f64>(n, &sim)?;
        Ok(Self { opts: sim.gsn_options(), out: Matrix::zeros(n, k), graph, field, sim, s0 })
    }

    fn run(&mut self, op: BenchOp) -> Result<()> {
        match op {
            BenchOp::GsnApply => self.field.apply_into(&self.graph, &self.s0.x, &self.opts, 0, &mut self.out),
            BenchOp::Simulate => simulate_field(self.s0.clone(), &self.graph, &self.field, &self.sim).map(drop),
        }
    }
}

/// Times both operations over every `(N, M, k)` in the grid.
///
/// Samples are taken round-robin over all points, so slow drift in machine
/// load spreads evenly instead of biasing whichever point ran at the time.
pub fn run_grid(grid: &[(usize, usize, usize)], settings: &BenchSettings) -> Result<Vec<BenchPoint>> {
    let mut workloads = grid.iter().map(|&(n, m, k)| Workload::new(n, m, k, settings)).collect::<Result<Vec<_>>>()?;
    let ops = [BenchOp::GsnApply, BenchOp::Simulate];
    let mut batches = Vec::new();
    for w in &mut workloads {
        for op in ops {
            let start = Instant::now();
            w.run(op)?;
            let once_ms = start.elapsed().as_secs_f64() * 1e3;
            batches.push(if once_ms > 0.0 {
                (settings.min_sample_ms / once_ms).ceil().clamp(1.0, 1e6) as usize
            } else {
                1
            });
        }
    }
    let mut samples = vec![Vec::with_capacity(settings.repeats); batches.len()];
    for _ in 0..settings.repeats {
        for (w, workload) in workloads.iter_mut().enumerate() {
            for (o, &op) in ops.iter().enumerate() {
                let slot = w * ops.len() + o;
                let start = Instant::now();
                for _ in 0..batches[slot] {
                    workload.run(op)?;
                }
                samples[slot].push(start.elapsed().as_secs_f64() * 1e3 / batches[slot] as f64);
            }
        }
    }
    let mut points = Vec::new();
    for (slot, times) in samples.into_iter().enumerate() {
        let (n, m, k) = grid[slot / ops.len()];
        let op = ops[slot % ops.len()];
        let t = Timing::from_samples(times)?;
        log::info!("{} N={n} M={m} k={k}: {:.3} ms", op.name(), t.median_ms);
        points.push(BenchPoint { n_nodes: n, n_edges: m, k, op, median_ms: t.median_ms, iqr_ms: t.iqr_ms });
    }
    Ok(points)
}

pub fn write_bench_csv<W: Write>(points: &[BenchPoint], mut out: W) -> Result<()> {
    writeln!(out, "n_nodes,n_edges,k,op,median_ms,iqr_ms")?;
    for p in points {
        writeln!(out, "{},{},{},{},{:.6},{:.6}", p.n_nodes, p.n_edges, p.k, p.op.name(), p.median_ms, p.iqr_ms)?;
    }
    Ok(())
}

/// Least-squares fit `median_ms ≈ intercept + slope (M + N) k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope_ms: f64,
    pub intercept_ms: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn fit_linear_cost(points: &[BenchPoint]) -> Option<LinearFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(BenchPoint::work).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_ms).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Some(LinearFit {
        slope_ms: slope,
        intercept_ms: intercept,
        r_squared: if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot },
        n_points: n,
    })
}
