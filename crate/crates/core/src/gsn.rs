//! The Graph Spring Network layer: per-edge scalar force times unit direction,
//! summed over each node's neighbourhood and scaled per node.
//!
//! ```text
//! F_i = g(y_i) * sum_{j in N(i)} f(z_ij, d_ij) * (x_j - x_i) / d_ij
//! ```
//!
//! Hidden edges stay in `N(i)` and use the neutral force. Cost is
//! `O(M k + N k)` per evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::{DegreeFeatures, ForceParams, MlpParams, NodeFeature, SprNnParams, SprParams};
use crate::graph::{NodeStatics, Sign, SignedGraph};
use crate::matrix::{Matrix, Real};
use crate::rng;

pub const DEFAULT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsnOptions {
    /// Distances below this use a pseudo-random direction.
    pub eps: f64,
    /// Seed of the coincident-node direction stream.
    pub tie_seed: u64,
    /// Evaluate nodes on the rayon pool. Results are reproducible either way;
    /// the serial path accumulates in ascending edge order.
    pub parallel: bool,
}

impl Default for GsnOptions {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, tie_seed: 0, parallel: false }
    }
}

/// Euclidean distance.
#[inline]
pub fn pair_distance<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = q - p;
            d * d
        })
        .sum::<T>()
        .sqrt()
}

/// Unit vector used when two endpoints coincide. Component `c` is
/// `signed(seed, "tie", [edge, step, c])`, then the vector is normalised.
pub fn tie_direction(seed: u64, edge: usize, step: u64, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|c| rng::signed(seed, rng::tag::TIE, &[edge as u64, step, c as u64])).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    v
}

/// Contribution of one edge to node `i`: `f_val * (x_j - x_i) / d`, with the
/// tie-break direction when `d < eps`.
pub fn edge_force(f_val: f64, x_i: &[f64], x_j: &[f64], eps: f64, tie: (u64, usize, u64)) -> Vec<f64> {
    let d = pair_distance(x_i, x_j);
    if d < eps {
        let (seed, edge, step) = tie;
        tie_direction(seed, edge, step, x_i.len()).into_iter().map(|u| f_val * u).collect()
    } else {
        let scale = f_val / d;
        x_i.iter().zip(x_j).map(|(a, b)| scale * (*b - *a)).collect()
    }
}

#[derive(Clone, Debug)]
struct Mlp<T> {
    inputs: usize,
    hidden: usize,
    w0: Vec<T>,
    b0: Vec<T>,
    w1: Vec<T>,
    b1: T,
}

impl<T: Real> Mlp<T> {
    fn from_params(p: &MlpParams) -> Self {
        let c = |v: &[f64]| v.iter().map(|&x| T::from_f64(x)).collect();
        Self { inputs: p.inputs, hidden: p.hidden, w0: c(&p.w0), b0: c(&p.b0), w1: c(&p.w1), b1: T::from_f64(p.b1) }
    }

    /// Network of the edge force with input `[dist, statics...]`.
    #[inline]
    fn eval_edge(&self, dist: T, statics: &[T; 6]) -> T {
        let mut out = self.b1;
        for h in 0..self.hidden {
            let row = &self.w0[h * self.inputs..(h + 1) * self.inputs];
            let mut pre = self.b0[h] + row[0] * dist;
            for (w, s) in row[1..].iter().zip(statics) {
                pre = pre + *w * *s;
            }
            if pre > T::zero() {
                out = out + self.w1[h] * pre;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Kernel<T> {
    Spr {
        /// `(stiffness, rest length)` for neutral, positive, negative.
        neutral: (T, T),
        positive: (T, T),
        negative: (T, T),
    },
    SprNn {
        neutral: Mlp<T>,
        positive: Mlp<T>,
        negative: Mlp<T>,
        /// `[deg_i, deg_j, neg_i, neg_j, pos_i, pos_j]` for slot `2 e + o`,
        /// where `o = 0` is the view from `u` and `o = 1` from `v`.
        edge_statics: Vec<[T; 6]>,
    },
}

/// Force model bound to one graph: node scalings `g` and per-edge static
/// features are evaluated once and reused across simulation steps.
#[derive(Clone, Debug)]
pub struct ForceField<T: Real = f64> {
    params: ForceParams,
    g: Vec<T>,
    /// Inputs of `g` per node (SPR: degree scale only).
    node_inputs: Vec<[f64; 3]>,
    observed: Vec<Option<Sign>>,
    kernel: Kernel<T>,
}

impl ForceField<f64> {
    pub fn new(graph: &SignedGraph, statics: &NodeStatics, params: &ForceParams) -> Result<Self> {
        if statics.n_nodes() != graph.n_nodes() {
            return Err(Error::DimensionMismatch { expected: graph.n_nodes(), actual: statics.n_nodes() });
        }
        if !(statics.p80 > 0.0) {
            return Err(Error::InvalidStatics(statics.p80));
        }
        let features: Vec<NodeFeature> = (0..graph.n_nodes())
            .map(|i| NodeFeature {
                deg: statics.deg[i] as f64,
                p80: statics.p80,
                neg_frac: statics.neg_frac[i],
                pos_frac: statics.pos_frac[i],
            })
            .collect();
        let observed = graph.edges().iter().map(|e| e.observed).collect();
        let (g, node_inputs, kernel) = match params {
            ForceParams::Spr(p) => {
                let g = features.iter().map(|n| p.g(n)).collect::<Result<Vec<_>>>()?;
                let inputs = features.iter().map(|n| [n.degree_scale(), 0.0, 0.0]).collect();
                (g, inputs, spr_kernel(p))
            }
            ForceParams::SprNn(p) => {
                let mode = p.degree_features;
                let inputs: Vec<[f64; 3]> = features.iter().map(|n| n.nn_input(mode)).collect();
                let g = inputs.iter().map(|x| p.g_net.eval_unchecked(x)).collect();
                (g, inputs, nn_kernel(p, graph, &features, mode))
            }
        };
        Ok(Self { params: params.clone(), g, node_inputs, observed, kernel })
    }

    /// Same field evaluated in another precision.
    pub fn cast<U: Real>(&self) -> ForceField<U> {
        let c = |v: f64| U::from_f64(v);
        let kernel = match &self.kernel {
            Kernel::Spr { neutral, positive, negative } => Kernel::Spr {
                neutral: (c(neutral.0), c(neutral.1)),
                positive: (c(positive.0), c(positive.1)),
                negative: (c(negative.0), c(negative.1)),
            },
            Kernel::SprNn { edge_statics, .. } => {
                let ForceParams::SprNn(p) = &self.params else { unreachable!() };
                Kernel::SprNn {
                    neutral: Mlp::from_params(&p.f_neutral),
                    positive: Mlp::from_params(&p.f_positive),
                    negative: Mlp::from_params(&p.f_negative),
                    edge_statics: edge_statics.iter().map(|s| s.map(c)).collect(),
                }
            }
        };
        ForceField {
            params: self.params.clone(),
            g: self.g.iter().map(|&v| c(v)).collect(),
            node_inputs: self.node_inputs.clone(),
            observed: self.observed.clone(),
            kernel,
        }
    }
}

fn spr_kernel(p: &SprParams) -> Kernel<f64> {
    Kernel::Spr { neutral: (p.a_neu, p.l_neu), positive: (p.a_pos, p.l_pos), negative: (p.a_neg, p.l_neg) }
}

fn nn_kernel(p: &SprNnParams, graph: &SignedGraph, features: &[NodeFeature], mode: DegreeFeatures) -> Kernel<f64> {
    let mut edge_statics = Vec::with_capacity(2 * graph.n_edges());
    for e in graph.edges() {
        let (a, b) = (&features[e.u.index()], &features[e.v.index()]);
        let (da, db) = (a.degree_feature(mode), b.degree_feature(mode));
        edge_statics.push([da, db, a.neg_frac, b.neg_frac, a.pos_frac, b.pos_frac]);
        edge_statics.push([db, da, b.neg_frac, a.neg_frac, b.pos_frac, a.pos_frac]);
    }
    Kernel::SprNn {
        neutral: Mlp::from_params(&p.f_neutral),
        positive: Mlp::from_params(&p.f_positive),
        negative: Mlp::from_params(&p.f_negative),
        edge_statics,
    }
}

impl<T: Real> ForceField<T> {
    pub fn params(&self) -> &ForceParams {
        &self.params
    }

    /// Node scaling `g(y_i)`.
    pub fn node_scale(&self, node: usize) -> T {
        self.g[node]
    }

    /// Edge force of edge `e` seen from side `side` (0: `u`, 1: `v`).
    #[inline]
    pub fn edge_scalar(&self, e: usize, side: usize, dist: T) -> T {
        match &self.kernel {
            Kernel::Spr { neutral, positive, negative } => match self.observed[e] {
                None => neutral.0 * (dist - neutral.1),
                Some(Sign::Positive) => positive.0 * (dist - positive.1).max(T::zero()),
                Some(Sign::Negative) => -(negative.0 * (negative.1 - dist).max(T::zero())),
            },
            Kernel::SprNn { neutral, positive, negative, edge_statics } => {
                let net = match self.observed[e] {
                    None => neutral,
                    Some(Sign::Positive) => positive,
                    Some(Sign::Negative) => negative,
                };
                net.eval_edge(dist, &edge_statics[2 * e + side])
            }
        }
    }

    /// Unscaled sum `b_i = sum_j f_ij (x_j - x_i) / d_ij`, written into `acc`.
    #[inline]
    fn neighbourhood_sum(
        &self,
        graph: &SignedGraph,
        x: &Matrix<T>,
        i: usize,
        opts: &GsnOptions,
        step: u64,
        acc: &mut [T],
    ) {
        acc.iter_mut().for_each(|a| *a = T::zero());
        let xi = x.row(i);
        let eps = T::from_f64(opts.eps);
        for &e in graph.incident(i) {
            let e = e as usize;
            let edge = graph.edge(e);
            let (j, side) = if edge.u.index() == i { (edge.v.index(), 0) } else { (edge.u.index(), 1) };
            let xj = x.row(j);
            let d = pair_distance(xi, xj);
            let f = self.edge_scalar(e, side, d);
            if d < eps {
                let dir = tie_direction(opts.tie_seed, e, step, xi.len());
                let flip = if side == 0 { 1.0 } else { -1.0 };
                for (a, u) in acc.iter_mut().zip(dir) {
                    *a = *a + f * T::from_f64(flip * u);
                }
            } else {
                let scale = f / d;
                for ((a, &p), &q) in acc.iter_mut().zip(xi).zip(xj) {
                    *a = *a + scale * (q - p);
                }
            }
        }
    }

    /// Force matrix for positions `x` at simulation step `step`.
    pub fn apply(&self, graph: &SignedGraph, x: &Matrix<T>, opts: &GsnOptions, step: u64) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        self.apply_into(graph, x, opts, step, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(
        &self,
        graph: &SignedGraph,
        x: &Matrix<T>,
        opts: &GsnOptions,
        step: u64,
        out: &mut Matrix<T>,
    ) -> Result<()> {
        if x.rows() != graph.n_nodes() {
            return Err(Error::DimensionMismatch { expected: graph.n_nodes(), actual: x.rows() });
        }
        if out.shape() != x.shape() {
            return Err(Error::DimensionMismatch { expected: x.rows() * x.cols(), actual: out.rows() * out.cols() });
        }
        let k = x.cols();
        if k == 0 {
            return Ok(());
        }
        if opts.parallel {
            out.as_mut_slice().par_chunks_mut(k).enumerate().for_each(|(i, row)| {
                self.neighbourhood_sum(graph, x, i, opts, step, row);
                let g = self.g[i];
                row.iter_mut().for_each(|v| *v = g * *v);
            });
        } else {
            self.apply_serial(graph, x, opts, step, out);
        }
        Ok(())
    }

    /// Edge-ordered accumulation; each edge adds to both endpoints.
    fn apply_serial(&self, graph: &SignedGraph, x: &Matrix<T>, opts: &GsnOptions, step: u64, out: &mut Matrix<T>) {
        out.fill(T::zero());
        let k = x.cols();
        let eps = T::from_f64(opts.eps);
        for (e, edge) in graph.edges().iter().enumerate() {
            let (u, v) = (edge.u.index(), edge.v.index());
            let d = pair_distance(x.row(u), x.row(v));
            let f_u = self.edge_scalar(e, 0, d);
            let f_v = self.edge_scalar(e, 1, d);
            if d < eps {
                let dir = tie_direction(opts.tie_seed, e, step, k);
                for (c, &w) in dir.iter().enumerate() {
                    out[(u, c)] = out[(u, c)] + f_u * T::from_f64(w);
                    out[(v, c)] = out[(v, c)] + f_v * T::from_f64(-w);
                }
            } else {
                let (su, sv) = (f_u / d, f_v / d);
                for c in 0..k {
                    let (xu, xv) = (x[(u, c)], x[(v, c)]);
                    out[(u, c)] = out[(u, c)] + su * (xv - xu);
                    out[(v, c)] = out[(v, c)] + sv * (xu - xv);
                }
            }
        }
        for i in 0..graph.n_nodes() {
            let g = self.g[i];
            out.row_mut(i).iter_mut().for_each(|v| *v = g * *v);
        }
    }
}

/// One-shot evaluation of the layer. Prefer [`ForceField`] inside loops.
pub fn gsn_apply(
    graph: &SignedGraph,
    statics: &NodeStatics,
    params: &ForceParams,
    x: &Matrix,
    opts: &GsnOptions,
    step: u64,
) -> Result<Matrix> {
    ForceField::new(graph, statics, params)?.apply(graph, x, opts, step)
}

// Reverse pass ---------------------------------------------------------------

impl ForceField<f64> {
    /// `f` and, for cotangent `s` on `f`, accumulates `s ∂f/∂θ` into `grad`
    /// (when given) and returns `s ∂f/∂d`.
    fn edge_scalar_backward(&self, e: usize, side: usize, dist: f64, s: f64, grad: Option<&mut ForceParams>) -> f64 {
        match (&self.params, grad) {
            (ForceParams::Spr(p), grad) => {
                let obs = self.observed[e];
                if let Some(ForceParams::Spr(gp)) = grad {
                    match obs {
                        None => {
                            gp.a_neu += s * (dist - p.l_neu);
                            gp.l_neu -= s * p.a_neu;
                        }
                        Some(Sign::Positive) if dist > p.l_pos => {
                            gp.a_pos += s * (dist - p.l_pos);
                            gp.l_pos -= s * p.a_pos;
                        }
                        Some(Sign::Negative) if dist < p.l_neg => {
                            gp.a_neg -= s * (p.l_neg - dist);
                            gp.l_neg -= s * p.a_neg;
                        }
                        Some(_) => {}
                    }
                }
                s * p.df_ddist(obs, dist)
            }
            (ForceParams::SprNn(p), grad) => {
                let Kernel::SprNn { edge_statics, .. } = &self.kernel else { unreachable!() };
                let st = &edge_statics[2 * e + side];
                let z = [dist, st[0], st[1], st[2], st[3], st[4], st[5]];
                let net = p.edge_net(self.observed[e]);
                let mut dz = [0.0; 7];
                match grad {
                    Some(ForceParams::SprNn(gp)) => {
                        net.backward(&z, s, gp.edge_net_mut(self.observed[e]), &mut dz);
                    }
                    _ => {
                        let mut scratch = MlpParams::zeros(net.inputs, net.hidden);
                        net.backward(&z, s, &mut scratch, &mut dz);
                    }
                }
                dz[0]
            }
        }
    }

    /// Cotangent of `diff = x_j - x_i` for the view of edge `e` from node `i`,
    /// given `c = g_i Λ_i`. Written into `out`.
    #[allow(clippy::too_many_arguments)]
    fn side_backward(
        &self,
        graph: &SignedGraph,
        x: &Matrix,
        e: usize,
        side: usize,
        c: &[f64],
        opts: &GsnOptions,
        step: u64,
        grad: Option<&mut ForceParams>,
        out: &mut [f64],
    ) {
        let edge = graph.edge(e);
        let (i, j) = if side == 0 { (edge.u.index(), edge.v.index()) } else { (edge.v.index(), edge.u.index()) };
        let (xi, xj) = (x.row(i), x.row(j));
        let d = pair_distance(xi, xj);
        let f = self.edge_scalar(e, side, d);
        if d < opts.eps {
            let flip = if side == 0 { 1.0 } else { -1.0 };
            let dir = tie_direction(opts.tie_seed, e, step, xi.len());
            let s: f64 = c.iter().zip(&dir).map(|(a, b)| a * b * flip).sum();
            let sd = self.edge_scalar_backward(e, side, d, s, grad);
            for (o, (&p, &q)) in out.iter_mut().zip(xi.iter().zip(xj)) {
                *o = if d > 0.0 { sd * (q - p) / d } else { 0.0 };
            }
        } else {
            let inv = 1.0 / d;
            let s: f64 = c.iter().zip(xi.iter().zip(xj)).map(|(a, (&p, &q))| a * (q - p) * inv).sum();
            let sd = self.edge_scalar_backward(e, side, d, s, grad);
            let fd = f * inv;
            for ((o, &a), (&p, &q)) in out.iter_mut().zip(c).zip(xi.iter().zip(xj)) {
                let u = (q - p) * inv;
                *o = fd * (a - s * u) + sd * u;
            }
        }
    }

    /// Vector-Jacobian product of [`ForceField::apply`]: for cotangent
    /// `lambda` on the force matrix, adds `∂/∂X` into `dx` and `∂/∂θ` into
    /// `grad`.
    pub fn backward(
        &self,
        graph: &SignedGraph,
        x: &Matrix,
        lambda: &Matrix,
        opts: &GsnOptions,
        step: u64,
        dx: &mut Matrix,
        grad: &mut ForceParams,
    ) -> Result<()> {
        if lambda.shape() != x.shape() || dx.shape() != x.shape() {
            return Err(Error::DimensionMismatch {
                expected: x.rows() * x.cols(),
                actual: lambda.rows() * lambda.cols(),
            });
        }
        if opts.parallel {
            self.backward_parallel(graph, x, lambda, opts, step, dx, grad);
        } else {
            self.backward_serial(graph, x, lambda, opts, step, dx, grad);
        }
        Ok(())
    }

    fn node_scale_backward(&self, i: usize, s: f64, grad: &mut ForceParams) {
        match (&self.params, grad) {
            (ForceParams::Spr(_), ForceParams::Spr(gp)) => gp.beta += s * self.node_inputs[i][0],
            (ForceParams::SprNn(p), ForceParams::SprNn(gp)) => {
                let mut dx = [0.0; 3];
                p.g_net.backward(&self.node_inputs[i], s, &mut gp.g_net, &mut dx);
            }
            _ => unreachable!("gradient structure matches parameters"),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_serial(
        &self,
        graph: &SignedGraph,
        x: &Matrix,
        lambda: &Matrix,
        opts: &GsnOptions,
        step: u64,
        dx: &mut Matrix,
        grad: &mut ForceParams,
    ) {
        let k = x.cols();
        let mut b = vec![0.0; k];
        let mut c = vec![0.0; k];
        for i in 0..graph.n_nodes() {
            if graph.degree(i) == 0 {
                continue;
            }
            self.neighbourhood_sum(graph, x, i, opts, step, &mut b);
            let s: f64 = b.iter().zip(lambda.row(i)).map(|(p, q)| p * q).sum();
            self.node_scale_backward(i, s, grad);
        }
        let mut buf = vec![0.0; k];
        for (e, edge) in graph.edges().iter().enumerate() {
            let (u, v) = (edge.u.index(), edge.v.index());
            for (side, (i, j)) in [(u, v), (v, u)].into_iter().enumerate() {
                let g = self.g[i];
                c.iter_mut().zip(lambda.row(i)).for_each(|(c, l)| *c = g * l);
                self.side_backward(graph, x, e, side, &c, opts, step, Some(grad), &mut buf);
                for (cc, &w) in buf.iter().enumerate() {
                    dx[(j, cc)] += w;
                    dx[(i, cc)] -= w;
                }
            }
        }
    }

    /// Node-centric reverse pass. Parameter gradients are reduced over fixed
    /// node chunks in order, so the result does not depend on thread count.
    #[allow(clippy::too_many_arguments)]
    fn backward_parallel(
        &self,
        graph: &SignedGraph,
        x: &Matrix,
        lambda: &Matrix,
        opts: &GsnOptions,
        step: u64,
        dx: &mut Matrix,
        grad: &mut ForceParams,
    ) {
        const CHUNK: usize = 128;
        let k = x.cols();
        if k == 0 {
            return;
        }
        let partials: Vec<Vec<f64>> = dx
            .as_mut_slice()
            .par_chunks_mut(k * CHUNK)
            .enumerate()
            .map(|(chunk, rows)| {
                let mut local = grad.zeros_like();
                let mut b = vec![0.0; k];
                let mut c = vec![0.0; k];
                let mut buf = vec![0.0; k];
                for (r, dxi) in rows.chunks_mut(k).enumerate() {
                    let i = chunk * CHUNK + r;
                    if graph.degree(i) == 0 {
                        continue;
                    }
                    self.neighbourhood_sum(graph, x, i, opts, step, &mut b);
                    let s: f64 = b.iter().zip(lambda.row(i)).map(|(p, q)| p * q).sum();
                    self.node_scale_backward(i, s, &mut local);
                    for &e in graph.incident(i) {
                        let e = e as usize;
                        let edge = graph.edge(e);
                        let (j, side) = if edge.u.index() == i { (edge.v.index(), 0) } else { (edge.u.index(), 1) };
                        // view from i: owns the parameter gradient of this side
                        let gi = self.g[i];
                        c.iter_mut().zip(lambda.row(i)).for_each(|(c, l)| *c = gi * l);
                        self.side_backward(graph, x, e, side, &c, opts, step, Some(&mut local), &mut buf);
                        dxi.iter_mut().zip(&buf).for_each(|(a, w)| *a -= w);
                        // view from j: only its effect on x_i
                        let gj = self.g[j];
                        c.iter_mut().zip(lambda.row(j)).for_each(|(c, l)| *c = gj * l);
                        self.side_backward(graph, x, e, 1 - side, &c, opts, step, None, &mut buf);
                        dxi.iter_mut().zip(&buf).for_each(|(a, w)| *a += w);
                    }
                }
                local.flatten()
            })
            .collect();
        let mut total = grad.flatten();
        for part in partials {
            total.iter_mut().zip(part).for_each(|(t, p)| *t += p);
        }
        *grad = grad.with_flat(&total).expect("same layout");
    }
}
