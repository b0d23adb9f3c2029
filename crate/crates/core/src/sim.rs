//! Damped Euler integration of the spring ODE system.
//!
//! One step with force `F = gsn(X(t))`:
//!
//! ```text
//! X(t+dt) = X(t) + dt V(t)
//! V(t+dt) = (1 - d) V(t) + dt F(t)
//! ```
//!
//! Both updates read the state at time `t`. The semi-implicit variant uses
//! `V(t+dt)` in the position update instead.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::ForceParams;
use crate::graph::{NodeStatics, SignedGraph};
use crate::gsn::{ForceField, GsnOptions, DEFAULT_EPS};
use crate::matrix::{Matrix, Real};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Position update uses the old velocity.
    #[default]
    Explicit,
    /// Position update uses the new velocity (symplectic Euler).
    SemiImplicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub k: usize,
    pub dt: f64,
    pub damping: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub eps: f64,
    #[serde(default)]
    pub integrator: Integrator,
    /// Evaluate forces on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: 64,
            dt: 0.005,
            damping: 0.05,
            n_steps: 120,
            seed: 0,
            eps: DEFAULT_EPS,
            integrator: Integrator::Explicit,
            parallel: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt = {} must be positive", self.dt)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::invalid(format!("damping = {} must lie in [0, 1)", self.damping)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        if self.k == 0 {
            return Err(Error::invalid("embedding dimension k must be positive"));
        }
        Ok(())
    }

    pub fn gsn_options(&self) -> GsnOptions {
        GsnOptions { eps: self.eps, tie_seed: self.seed, parallel: self.parallel }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState<T: Real = f64> {
    pub x: Matrix<T>,
    pub v: Matrix<T>,
    pub t_step: u64,
}

impl<T: Real> SimState<T> {
    /// Final positions are the node embeddings.
    pub fn embeddings(&self) -> &Matrix<T> {
        &self.x
    }

    pub fn into_embeddings(self) -> Matrix<T> {
        self.x
    }

    /// Mean Euclidean norm of the node velocities.
    pub fn mean_abs_velocity(&self) -> f64 {
        let n = self.v.rows();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = (0..n)
            .map(|i| {
                self.v
                    .row(i)
                    .iter()
                    .map(|&x| {
                        let x = Real::to_f64(x);
                        x * x
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        total / n as f64
    }
}

/// `X(0)` entry `(i, c)` is `signed(seed, "init", [i, c])`, uniform on
/// (-1, 1); `V(0) = 0`.
pub fn init_state<T: Real>(n_nodes: usize, cfg: &SimConfig) -> Result<SimState<T>> {
    if n_nodes == 0 {
        return Err(Error::invalid("cannot simulate an empty graph"));
    }
    cfg.validate()?;
    let x = Matrix::from_fn(n_nodes, cfg.k, |i, c| {
        T::from_f64(rng::signed(cfg.seed, rng::tag::INIT, &[i as u64, c as u64]))
    });
    Ok(SimState { x, v: Matrix::zeros(n_nodes, cfg.k), t_step: 0 })
}

/// Steps a state forward with a prepared force field.
pub struct Simulator<'a, T: Real = f64> {
    graph: &'a SignedGraph,
    field: &'a ForceField<T>,
    cfg: SimConfig,
    forces: Matrix<T>,
}

impl<'a, T: Real> Simulator<'a, T> {
    pub fn new(graph: &'a SignedGraph, field: &'a ForceField<T>, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { graph, field, cfg: *cfg, forces: Matrix::zeros(graph.n_nodes(), cfg.k) })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Forces computed by the most recent step (at the pre-step positions).
    pub fn last_forces(&self) -> &Matrix<T> {
        &self.forces
    }

    pub fn step(&mut self, state: &mut SimState<T>) -> Result<()> {
        if state.x.shape() != (self.graph.n_nodes(), self.cfg.k) || state.v.shape() != state.x.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.graph.n_nodes() * self.cfg.k,
                actual: state.x.rows() * state.x.cols(),
            });
        }
        let opts = self.cfg.gsn_options();
        self.field.apply_into(self.graph, &state.x, &opts, state.t_step, &mut self.forces)?;
        let dt = T::from_f64(self.cfg.dt);
        let keep = T::from_f64(1.0 - self.cfg.damping);
        let (x, v, f) = (state.x.as_mut_slice(), state.v.as_mut_slice(), self.forces.as_slice());
        match self.cfg.integrator {
            Integrator::Explicit => {
                for ((x, v), &f) in x.iter_mut().zip(v.iter_mut()).zip(f) {
                    *x = *x + dt * *v;
                    *v = keep * *v + dt * f;
                }
            }
            Integrator::SemiImplicit => {
                for ((x, v), &f) in x.iter_mut().zip(v.iter_mut()).zip(f) {
                    *v = keep * *v + dt * f;
                    *x = *x + dt * *v;
                }
            }
        }
        state.t_step += 1;
        if !state.x.is_finite() {
            return Err(Error::Diverged { step: state.t_step, what: "position" });
        }
        if !state.v.is_finite() {
            return Err(Error::Diverged { step: state.t_step, what: "velocity" });
        }
        Ok(())
    }

    /// `n` steps, calling `observe` after each one.
    pub fn run(&mut self, state: &mut SimState<T>, n: usize, mut observe: impl FnMut(&SimState<T>)) -> Result<()> {
        for _ in 0..n {
            self.step(state)?;
            observe(state);
        }
        Ok(())
    }
}

/// One step from scratch (prepares the force field each call).
pub fn step(
    state: &SimState,
    graph: &SignedGraph,
    statics: &NodeStatics,
    params: &ForceParams,
    cfg: &SimConfig,
) -> Result<SimState> {
    let field = ForceField::new(graph, statics, params)?;
    let mut sim = Simulator::new(graph, &field, cfg)?;
    let mut next = state.clone();
    sim.step(&mut next)?;
    Ok(next)
}

/// `cfg.n_steps` steps from `state0`.
pub fn simulate(
    state0: &SimState,
    graph: &SignedGraph,
    statics: &NodeStatics,
    params: &ForceParams,
    cfg: &SimConfig,
) -> Result<SimState> {
    let field = ForceField::new(graph, statics, params)?;
    simulate_field(state0.clone(), graph, &field, cfg)
}

pub fn simulate_field<T: Real>(
    mut state: SimState<T>,
    graph: &SignedGraph,
    field: &ForceField<T>,
    cfg: &SimConfig,
) -> Result<SimState<T>> {
    let mut sim = Simulator::new(graph, field, cfg)?;
    sim.run(&mut state, cfg.n_steps, |_| {})?;
    Ok(state)
}

/// One row of a trajectory trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub mean_abs_velocity: f64,
    pub loss: Option<f64>,
}

/// Like [`simulate_field`], recording mean velocity (and a loss, when a
/// loss function is supplied) after every step.
pub fn simulate_traced<T: Real>(
    mut state: SimState<T>,
    graph: &SignedGraph,
    field: &ForceField<T>,
    cfg: &SimConfig,
    loss: Option<&dyn Fn(&Matrix<T>) -> Result<f64>>,
) -> Result<(SimState<T>, Vec<TraceRow>)> {
    let mut sim = Simulator::new(graph, field, cfg)?;
    let mut trace = Vec::with_capacity(cfg.n_steps);
    for _ in 0..cfg.n_steps {
        sim.step(&mut state)?;
        trace.push(TraceRow {
            step: state.t_step,
            mean_abs_velocity: state.mean_abs_velocity(),
            loss: loss.map(|l| l(&state.x)).transpose()?,
        });
    }
    Ok((state, trace))
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "step,mean_abs_velocity,loss")?;
    for r in rows {
        match r.loss {
            Some(l) => writeln!(out, "{},{},{}", r.step, r.mean_abs_velocity, l)?,
            None => writeln!(out, "{},{},", r.step, r.mean_abs_velocity)?,
        }
    }
    Ok(())
}

// Embedding files ------------------------------------------------------------

pub const EMBEDDING_MAGIC: [u8; 4] = *b"GSNE";
pub const EMBEDDING_VERSION: u32 = 1;

/// Text format: header `N k`, then one row of `k` floats per node. Floats are
/// printed in shortest round-trip form.
pub fn write_embeddings_text<W: Write>(x: &Matrix, mut out: W) -> Result<()> {
    writeln!(out, "{} {}", x.rows(), x.cols())?;
    let mut line = String::new();
    for i in 0..x.rows() {
        line.clear();
        for (c, v) in x.row(i).iter().enumerate() {
            if c > 0 {
                line.push(' ');
            }
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_embeddings_text<R: BufRead>(reader: R) -> Result<Matrix> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyInput)?;
    let header = header?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(1, "header must be `N k`")))
        .collect::<Result<_>>()?;
    let [n, k] = dims[..] else {
        return Err(Error::parse(1, "header must be `N k`"));
    };
    let mut data = Vec::with_capacity(n * k);
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|_| Error::parse(idx + 1, format!("`{tok}` is not a number")))?);
        }
        if data.len() - before != k {
            return Err(Error::parse(idx + 1, format!("expected {k} values")));
        }
    }
    if data.len() != n * k {
        return Err(Error::Format(format!("expected {n} rows, found {}", data.len() / k.max(1))));
    }
    Ok(Matrix::from_vec(n, k, data))
}

/// Binary format: magic `GSNE`, version (u32), N (u64), k (u64), then the
/// row-major values as f64, all little-endian.
pub fn write_embeddings_binary<W: Write>(x: &Matrix, mut out: W) -> Result<()> {
    out.write_all(&EMBEDDING_MAGIC)?;
    out.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    out.write_all(&(x.rows() as u64).to_le_bytes())?;
    out.write_all(&(x.cols() as u64).to_le_bytes())?;
    for v in x.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embeddings_binary<R: Read>(mut input: R) -> Result<Matrix> {
    let mut head = [0u8; 24];
    input.read_exact(&mut head)?;
    if head[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("bad embedding magic".into()));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported embedding version {version}")));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes")) as usize;
    let k = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes")) as usize;
    let mut bytes = vec![0u8; n * k * 8];
    input.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Matrix::from_vec(n, k, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::force::{ModelKind, SprParams};
    use crate::graph::{compute_node_statics, random_signed_graph, Edge, NodeId, Sign};

    fn toy() -> (SignedGraph, NodeStatics) {
        let g = random_signed_graph(30, 60, 0.8, 11).unwrap();
        let s = compute_node_statics(&g);
        (g, s)
    }

    #[test]
    fn init_state_contract() {
        let cfg = SimConfig { k: 5, seed: 3, ..SimConfig::default() };
        let s: SimState = init_state(40, &cfg).unwrap();
        assert_eq!(s.x.shape(), (40, 5));
        assert!(s.v.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.x.as_slice().iter().all(|&v| v > -1.0 && v < 1.0));
        assert_eq!(s, init_state(40, &cfg).unwrap());
        assert!(init_state::<f64>(0, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = [
            SimConfig { dt: 0.0, ..SimConfig::default() },
            SimConfig { damping: 1.0, ..SimConfig::default() },
            SimConfig { damping: -0.1, ..SimConfig::default() },
            SimConfig { k: 0, ..SimConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn first_step_from_rest() {
        let (g, st) = toy();
        let cfg = SimConfig { k: 3, seed: 1, ..SimConfig::default() };
        let params = ForceParams::init(ModelKind::Spr, 0);
        let s0: SimState = init_state(g.n_nodes(), &cfg).unwrap();
        let s1 = step(&s0, &g, &st, &params, &cfg).unwrap();
        assert_eq!(s1.x, s0.x);
        let f = crate::gsn::gsn_apply(&g, &st, &params, &s0.x, &cfg.gsn_options(), 0).unwrap();
        let expected: Vec<f64> = f.as_slice().iter().map(|v| cfg.dt * v).collect();
        assert_eq!(s1.v.as_slice(), expected.as_slice());
        assert_eq!(s1.t_step, 1);
    }

    #[test]
    fn zero_steps_is_identity() {
        let (g, st) = toy();
        let cfg = SimConfig { k: 4, n_steps: 0, ..SimConfig::default() };
        let s0 = init_state(g.n_nodes(), &cfg).unwrap();
        let out = simulate(&s0, &g, &st, &ForceParams::init(ModelKind::SprNn, 2), &cfg).unwrap();
        assert_eq!(out, s0);
        assert_eq!(out.embeddings(), s0.embeddings());
    }

    #[test]
    fn composition_is_associative() {
        let (g, st) = toy();
        let params = ForceParams::init(ModelKind::SprNn, 2);
        let cfg = SimConfig { k: 4, n_steps: 7, ..SimConfig::default() };
        let s0 = init_state(g.n_nodes(), &cfg).unwrap();
        let once = simulate(&s0, &g, &st, &params, &cfg).unwrap();
        let a = simulate(&s0, &g, &st, &params, &SimConfig { n_steps: 3, ..cfg }).unwrap();
        let b = simulate(&a, &g, &st, &params, &SimConfig { n_steps: 4, ..cfg }).unwrap();
        assert_eq!(once, b);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let e = Edge { u: NodeId(0), v: NodeId(1), true_sign: Sign::Positive, observed: None };
        let g = SignedGraph::with_numeric_labels(2, vec![e]).unwrap();
        let st = compute_node_statics(&g);
        let p = ForceParams::Spr(SprParams { a_neu: 1e300, ..SprParams::default() });
        let cfg = SimConfig { k: 2, n_steps: 50, dt: 1.0, ..SimConfig::default() };
        let s0 = init_state(2, &cfg).unwrap();
        match simulate(&s0, &g, &st, &p, &cfg) {
            Err(Error::Diverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn semi_implicit_moves_on_first_step() {
        let (g, st) = toy();
        let cfg = SimConfig { k: 3, integrator: Integrator::SemiImplicit, ..SimConfig::default() };
        let params = ForceParams::init(ModelKind::Spr, 0);
        let s0 = init_state(g.n_nodes(), &cfg).unwrap();
        let s1 = step(&s0, &g, &st, &params, &cfg).unwrap();
        let expected: Vec<f64> = s0.x.as_slice().iter().zip(s1.v.as_slice()).map(|(x, v)| x + cfg.dt * v).collect();
        assert_eq!(s1.x.as_slice(), expected.as_slice());
    }

    #[test]
    fn embedding_files_round_trip() {
        let cfg = SimConfig { k: 3, seed: 5, ..SimConfig::default() };
        let s: SimState = init_state(7, &cfg).unwrap();
        let mut text = Vec::new();
        write_embeddings_text(&s.x, &mut text).unwrap();
        assert!(text.starts_with(b"7 3\n"));
        assert_eq!(read_embeddings_text(text.as_slice()).unwrap(), s.x);
        let mut bin = Vec::new();
        write_embeddings_binary(&s.x, &mut bin).unwrap();
        assert_eq!(bin.len(), 24 + 7 * 3 * 8);
        assert_eq!(read_embeddings_binary(bin.as_slice()).unwrap(), s.x);
        bin[0] = b'X';
        assert!(read_embeddings_binary(bin.as_slice()).is_err());
    }

    #[test]
    fn trace_has_one_row_per_step() {
        let (g, st) = toy();
        let cfg = SimConfig { k: 3, n_steps: 5, ..SimConfig::default() };
        let field = ForceField::new(&g, &st, &ForceParams::init(ModelKind::Spr, 0)).unwrap();
        let s0 = init_state(g.n_nodes(), &cfg).unwrap();
        let (_, trace) = simulate_traced(s0, &g, &field, &cfg, None).unwrap();
        assert_eq!(trace.len(), 5);
        assert_eq!(trace[4].step, 5);
        let mut csv = Vec::new();
        write_trace_csv(&trace, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("step,mean_abs_velocity,loss\n1,"));
    }
}
