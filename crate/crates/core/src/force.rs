//! Scalar force functions `f` (per edge) and `g` (per node) for the two
//! models: Hooke-style springs (SPR) and shallow ReLU networks (SPR-NN).

use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Sign;
use crate::rng;

/// Spring parameters. Flattened order: `l_pos, l_neu, l_neg, a_pos, a_neu,
/// a_neg, beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SprParams {
    pub l_pos: f64,
    pub l_neu: f64,
    pub l_neg: f64,
    pub a_pos: f64,
    pub a_neu: f64,
    pub a_neg: f64,
    pub beta: f64,
}

impl Default for SprParams {
    fn default() -> Self {
        Self { l_pos: 1.0, l_neu: 2.0, l_neg: 3.0, a_pos: 1.0, a_neu: 1.0, a_neg: 1.0, beta: 0.0 }
    }
}

impl SprParams {
    pub const LEN: usize = 7;
    pub const NAMES: [&'static str; 7] = ["l_pos", "l_neu", "l_neg", "a_pos", "a_neu", "a_neg", "beta"];

    pub fn to_array(&self) -> [f64; 7] {
        [self.l_pos, self.l_neu, self.l_neg, self.a_pos, self.a_neu, self.a_neg, self.beta]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != Self::LEN {
            return Err(Error::DimensionMismatch { expected: Self::LEN, actual: v.len() });
        }
        Ok(Self { l_pos: v[0], l_neu: v[1], l_neg: v[2], a_pos: v[3], a_neu: v[4], a_neg: v[5], beta: v[6] })
    }

    /// Edge force. Positive values attract along `x_j - x_i`.
    ///
    /// Neutral edges follow Hooke's law; positive edges only pull once
    /// stretched past `l_pos`; negative edges only push while closer than
    /// `l_neg`.
    #[inline]
    pub fn f(&self, observed: Option<Sign>, dist: f64) -> f64 {
        match observed {
            None => self.a_neu * (dist - self.l_neu),
            Some(Sign::Positive) => self.a_pos * (dist - self.l_pos).max(0.0),
            Some(Sign::Negative) => -self.a_neg * (self.l_neg - dist).max(0.0),
        }
    }

    /// `d f / d dist`, zero on the inactive side of a hinge (including the kink).
    #[inline]
    pub fn df_ddist(&self, observed: Option<Sign>, dist: f64) -> f64 {
        match observed {
            None => self.a_neu,
            Some(Sign::Positive) if dist > self.l_pos => self.a_pos,
            Some(Sign::Negative) if dist < self.l_neg => self.a_neg,
            Some(_) => 0.0,
        }
    }

    /// Node scaling `min(1, deg / p80) * beta + 1`.
    pub fn g(&self, node: &NodeFeature) -> Result<f64> {
        if !(node.p80 > 0.0) {
            return Err(Error::InvalidStatics(node.p80));
        }
        Ok(node.degree_scale() * self.beta + 1.0)
    }
}

/// One-hidden-layer perceptron `W1 · ReLU(W0 · x + b0) + b1`.
///
/// Flattened order: `W0` (row-major, hidden × inputs), `W1`, `b0`, `b1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub inputs: usize,
    pub hidden: usize,
    pub w0: Vec<f64>,
    pub b0: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: f64,
}

impl MlpParams {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self { inputs, hidden, w0: vec![0.0; inputs * hidden], b0: vec![0.0; hidden], w1: vec![0.0; hidden], b1: 0.0 }
    }

    /// Glorot-uniform weights with zero biases. Each weight draws from
    /// `signed(seed, "param", [block, flat_index])`.
    pub fn glorot(inputs: usize, hidden: usize, seed: u64, block: u64) -> Self {
        let mut p = Self::zeros(inputs, hidden);
        let s0 = (6.0 / (inputs + hidden) as f64).sqrt();
        let s1 = (6.0 / (hidden + 1) as f64).sqrt();
        for (i, w) in p.w0.iter_mut().enumerate() {
            *w = s0 * rng::signed(seed, rng::tag::PARAM, &[block, i as u64]);
        }
        let off = p.w0.len();
        for (i, w) in p.w1.iter_mut().enumerate() {
            *w = s1 * rng::signed(seed, rng::tag::PARAM, &[block, (off + i) as u64]);
        }
        p
    }

    pub fn n_params(&self) -> usize {
        self.w0.len() + self.w1.len() + self.b0.len() + 1
    }

    fn check_shape(&self) -> Result<()> {
        let ok =
            self.w0.len() == self.inputs * self.hidden && self.b0.len() == self.hidden && self.w1.len() == self.hidden;
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "mlp blocks inconsistent with declared shape ({} -> {})",
                self.inputs, self.hidden
            )))
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.inputs {
            return Err(Error::DimensionMismatch { expected: self.inputs, actual: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let mut out = self.b1;
        for h in 0..self.hidden {
            let row = &self.w0[h * self.inputs..(h + 1) * self.inputs];
            let pre = row.iter().zip(x).fold(self.b0[h], |acc, (w, xi)| acc + w * xi);
            if pre > 0.0 {
                out += self.w1[h] * pre;
            }
        }
        out
    }

    /// Reverse pass for upstream cotangent `s`: adds `s · ∂y/∂θ` into `grad`
    /// (same layout as `self`) and `s · ∂y/∂x` into `dx`.
    pub fn backward(&self, x: &[f64], s: f64, grad: &mut MlpParams, dx: &mut [f64]) {
        grad.b1 += s;
        for h in 0..self.hidden {
            let row = &self.w0[h * self.inputs..(h + 1) * self.inputs];
            let pre = row.iter().zip(x).fold(self.b0[h], |acc, (w, xi)| acc + w * xi);
            // ReLU subgradient at 0 is 0.
            if pre > 0.0 {
                grad.w1[h] += s * pre;
                let delta = s * self.w1[h];
                grad.b0[h] += delta;
                let grow = &mut grad.w0[h * self.inputs..(h + 1) * self.inputs];
                for i in 0..self.inputs {
                    grow[i] += delta * x[i];
                    dx[i] += delta * row[i];
                }
            }
        }
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w0);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b0);
        out.push(self.b1);
    }

    fn read_flat(&mut self, v: &[f64]) -> usize {
        let (a, b) = (self.w0.len(), self.w1.len());
        self.w0.copy_from_slice(&v[..a]);
        self.w1.copy_from_slice(&v[a..a + b]);
        self.b0.copy_from_slice(&v[a + b..a + 2 * b]);
        self.b1 = v[a + 2 * b];
        a + 2 * b + 1
    }

    pub fn scale_output(&self, c: f64) -> Self {
        Self { w1: self.w1.iter().map(|w| w * c).collect(), b1: self.b1 * c, ..self.clone() }
    }
}

/// How raw degrees enter the network inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeFeatures {
    /// `min(1, deg / p80)`.
    #[default]
    Normalized,
    /// Literal integer degrees.
    Raw,
}

/// Neural force model. Flattened order: `g_net, f_neutral, f_positive,
/// f_negative`, 208 scalars in total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SprNnParams {
    pub f_neutral: MlpParams,
    pub f_positive: MlpParams,
    pub f_negative: MlpParams,
    pub g_net: MlpParams,
    #[serde(default)]
    pub degree_features: DegreeFeatures,
}

impl SprNnParams {
    pub const EDGE_INPUTS: usize = 7;
    pub const EDGE_HIDDEN: usize = 7;
    pub const NODE_INPUTS: usize = 3;
    pub const NODE_HIDDEN: usize = 3;
    pub const LEN: usize = 208;

    pub fn zeros() -> Self {
        Self {
            f_neutral: MlpParams::zeros(Self::EDGE_INPUTS, Self::EDGE_HIDDEN),
            f_positive: MlpParams::zeros(Self::EDGE_INPUTS, Self::EDGE_HIDDEN),
            f_negative: MlpParams::zeros(Self::EDGE_INPUTS, Self::EDGE_HIDDEN),
            g_net: MlpParams::zeros(Self::NODE_INPUTS, Self::NODE_HIDDEN),
            degree_features: DegreeFeatures::default(),
        }
    }

    pub fn init(seed: u64) -> Self {
        Self {
            g_net: MlpParams::glorot(Self::NODE_INPUTS, Self::NODE_HIDDEN, seed, 0),
            f_neutral: MlpParams::glorot(Self::EDGE_INPUTS, Self::EDGE_HIDDEN, seed, 1),
            f_positive: MlpParams::glorot(Self::EDGE_INPUTS, Self::EDGE_HIDDEN, seed, 2),
            f_negative: MlpParams::glorot(Self::EDGE_INPUTS, Self::EDGE_HIDDEN, seed, 3),
            degree_features: DegreeFeatures::default(),
        }
    }

    #[inline]
    pub fn edge_net(&self, observed: Option<Sign>) -> &MlpParams {
        match observed {
            None => &self.f_neutral,
            Some(Sign::Positive) => &self.f_positive,
            Some(Sign::Negative) => &self.f_negative,
        }
    }

    #[inline]
    pub fn edge_net_mut(&mut self, observed: Option<Sign>) -> &mut MlpParams {
        match observed {
            None => &mut self.f_neutral,
            Some(Sign::Positive) => &mut self.f_positive,
            Some(Sign::Negative) => &mut self.f_negative,
        }
    }

    pub fn f(&self, observed: Option<Sign>, z: &EdgeFeature) -> f64 {
        self.edge_net(observed).eval_unchecked(&z.to_array())
    }

    pub fn g(&self, node: &NodeFeature) -> Result<f64> {
        if !(node.p80 > 0.0) {
            return Err(Error::InvalidStatics(node.p80));
        }
        self.g_net.eval(&node.nn_input(self.degree_features))
    }

    fn blocks(&self) -> [(&'static str, &MlpParams); 4] {
        [
            ("g_net", &self.g_net),
            ("f_neutral", &self.f_neutral),
            ("f_positive", &self.f_positive),
            ("f_negative", &self.f_negative),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut MlpParams; 4] {
        [&mut self.g_net, &mut self.f_neutral, &mut self.f_positive, &mut self.f_negative]
    }
}

/// Per-edge network input `[d, deg_i, deg_j, neg_i, neg_j, pos_i, pos_j]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeFeature {
    pub dist: f64,
    pub deg_i: f64,
    pub deg_j: f64,
    pub neg_i: f64,
    pub neg_j: f64,
    pub pos_i: f64,
    pub pos_j: f64,
}

impl EdgeFeature {
    pub fn to_array(&self) -> [f64; 7] {
        [self.dist, self.deg_i, self.deg_j, self.neg_i, self.neg_j, self.pos_i, self.pos_j]
    }
}

/// Static node descriptor. SPR reads `(deg, p80)`; SPR-NN reads the degree
/// feature and both sign fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeFeature {
    pub deg: f64,
    pub p80: f64,
    pub neg_frac: f64,
    pub pos_frac: f64,
}

impl NodeFeature {
    #[inline]
    pub fn degree_scale(&self) -> f64 {
        (self.deg / self.p80).min(1.0)
    }

    pub fn degree_feature(&self, mode: DegreeFeatures) -> f64 {
        match mode {
            DegreeFeatures::Normalized => self.degree_scale(),
            DegreeFeatures::Raw => self.deg,
        }
    }

    pub fn nn_input(&self, mode: DegreeFeatures) -> [f64; 3] {
        [self.degree_feature(mode), self.neg_frac, self.pos_frac]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Spr,
    SprNn,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spr" => Ok(ModelKind::Spr),
            "spr-nn" | "spr_nn" => Ok(ModelKind::SprNn),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Spr => "spr",
            ModelKind::SprNn => "spr-nn",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ForceParams {
    Spr(SprParams),
    SprNn(SprNnParams),
}

impl ForceParams {
    /// Initial parameters. SPR starts from ordered resting lengths (1, 2, 3),
    /// unit stiffness and `beta = 0`; SPR-NN uses Glorot-uniform weights.
    pub fn init(kind: ModelKind, seed: u64) -> Self {
        match kind {
            ModelKind::Spr => ForceParams::Spr(SprParams::default()),
            ModelKind::SprNn => ForceParams::SprNn(SprNnParams::init(seed)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ForceParams::Spr(_) => ModelKind::Spr,
            ForceParams::SprNn(_) => ModelKind::SprNn,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            ForceParams::Spr(_) => SprParams::LEN,
            ForceParams::SprNn(p) => p.blocks().iter().map(|(_, b)| b.n_params()).sum(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        match self {
            ForceParams::Spr(p) => p.to_array().to_vec(),
            ForceParams::SprNn(p) => {
                let mut out = Vec::with_capacity(SprNnParams::LEN);
                for (_, b) in p.blocks() {
                    b.flatten_into(&mut out);
                }
                out
            }
        }
    }

    /// Same structure as `self`, values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), actual: flat.len() });
        }
        Ok(match self {
            ForceParams::Spr(_) => ForceParams::Spr(SprParams::from_slice(flat)?),
            ForceParams::SprNn(p) => {
                let mut q = p.clone();
                let mut off = 0;
                for b in q.blocks_mut() {
                    off += b.read_flat(&flat[off..]);
                }
                ForceParams::SprNn(q)
            }
        })
    }

    /// All-zero parameters with the same structure (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        self.with_flat(&vec![0.0; self.n_params()]).expect("same length")
    }

    /// Human-readable name of each flattened entry.
    pub fn param_names(&self) -> Vec<String> {
        match self {
            ForceParams::Spr(_) => SprParams::NAMES.iter().map(|s| s.to_string()).collect(),
            ForceParams::SprNn(p) => {
                let mut names = Vec::with_capacity(SprNnParams::LEN);
                for (name, b) in p.blocks() {
                    for i in 0..b.w0.len() {
                        names.push(format!("{name}.w0[{},{}]", i / b.inputs, i % b.inputs));
                    }
                    for i in 0..b.w1.len() {
                        names.push(format!("{name}.w1[{i}]"));
                    }
                    for i in 0..b.b0.len() {
                        names.push(format!("{name}.b0[{i}]"));
                    }
                    names.push(format!("{name}.b1"));
                }
                names
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

pub const PARAM_FORMAT: &str = "gsn-params";
pub const PARAM_VERSION: u32 = 1;

/// One named tensor in a parameter file. `data` holds the raw IEEE-754 bits
/// of the row-major values as little-endian bytes, base64 encoded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorBlock {
    fn new(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Self {
        Self { name: name.into(), shape, data: encode_f64s(values) }
    }

    fn values(&self) -> Result<Vec<f64>> {
        let v = decode_f64s(&self.data)?;
        let expected: usize = self.shape.iter().product();
        if v.len() != expected {
            return Err(Error::Format(format!(
                "block `{}` holds {} values, shape implies {expected}",
                self.name,
                v.len()
            )));
        }
        Ok(v)
    }
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_f64s(data: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(data).map_err(|e| Error::Format(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("float data length not a multiple of 8".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

/// Versioned on-disk representation of [`ForceParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub format: String,
    pub version: u32,
    pub model: ModelKind,
    /// Embedding dimension used in training, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree_features: Option<DegreeFeatures>,
    pub blocks: Vec<TensorBlock>,
}

impl ParamFile {
    pub fn from_params(params: &ForceParams, embedding_dim: Option<usize>) -> Self {
        let blocks = match params {
            ForceParams::Spr(p) => SprParams::NAMES
                .iter()
                .zip(p.to_array())
                .map(|(name, v)| TensorBlock::new(*name, vec![1], &[v]))
                .collect(),
            ForceParams::SprNn(p) => p
                .blocks()
                .iter()
                .flat_map(|(name, b)| {
                    [
                        TensorBlock::new(format!("{name}.w0"), vec![b.hidden, b.inputs], &b.w0),
                        TensorBlock::new(format!("{name}.w1"), vec![1, b.hidden], &b.w1),
                        TensorBlock::new(format!("{name}.b0"), vec![b.hidden], &b.b0),
                        TensorBlock::new(format!("{name}.b1"), vec![1], &[b.b1]),
                    ]
                })
                .collect(),
        };
        let degree_features = match params {
            ForceParams::SprNn(p) => Some(p.degree_features),
            ForceParams::Spr(_) => None,
        };
        Self {
            format: PARAM_FORMAT.to_string(),
            version: PARAM_VERSION,
            model: params.kind(),
            embedding_dim,
            degree_features,
            blocks,
        }
    }

    pub fn to_params(&self) -> Result<ForceParams> {
        if self.format != PARAM_FORMAT {
            return Err(Error::Format(format!("unexpected format tag `{}`", self.format)));
        }
        if self.version != PARAM_VERSION {
            return Err(Error::Format(format!("unsupported version {}", self.version)));
        }
        let find = |name: &str| -> Result<Vec<f64>> {
            self.blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::Format(format!("missing block `{name}`")))?
                .values()
        };
        match self.model {
            ModelKind::Spr => {
                let mut v = Vec::with_capacity(7);
                for name in SprParams::NAMES {
                    let b = find(name)?;
                    if b.len() != 1 {
                        return Err(Error::Format(format!("block `{name}` must be scalar")));
                    }
                    v.push(b[0]);
                }
                Ok(ForceParams::Spr(SprParams::from_slice(&v)?))
            }
            ModelKind::SprNn => {
                let mut p = SprNnParams::zeros();
                p.degree_features = self.degree_features.unwrap_or_default();
                let names = ["g_net", "f_neutral", "f_positive", "f_negative"];
                for (name, mlp) in names.iter().zip(p.blocks_mut()) {
                    let w0 = self
                        .blocks
                        .iter()
                        .find(|b| b.name == format!("{name}.w0"))
                        .ok_or_else(|| Error::Format(format!("missing block `{name}.w0`")))?;
                    if w0.shape != [mlp.hidden, mlp.inputs] {
                        return Err(Error::Format(format!("block `{name}.w0` has shape {:?}", w0.shape)));
                    }
                    mlp.w0 = w0.values()?;
                    mlp.w1 = find(&format!("{name}.w1"))?;
                    mlp.b0 = find(&format!("{name}.b0"))?;
                    let b1 = find(&format!("{name}.b1"))?;
                    mlp.b1 = *b1.first().ok_or_else(|| Error::Format("empty b1".into()))?;
                    mlp.check_shape()?;
                }
                Ok(ForceParams::SprNn(p))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(deg: f64, p80: f64) -> NodeFeature {
        NodeFeature { deg, p80, neg_frac: 0.25, pos_frac: 0.5 }
    }

    #[test]
    fn spr_f_branches() {
        let p = SprParams { a_neu: 2.0, l_neu: 1.5, ..SprParams::default() };
        assert_eq!(p.f(None, 2.0), 1.0);
        assert_eq!(p.f(Some(Sign::Positive), 0.5), 0.0);
        assert_eq!(p.f(Some(Sign::Positive), 3.0), 2.0);
        assert_eq!(p.f(Some(Sign::Negative), 4.0), 0.0);
        assert_eq!(p.f(Some(Sign::Negative), 1.0), -2.0);
        let init = SprParams::default();
        assert_eq!(init.f(None, init.l_neu), 0.0);
    }

    #[test]
    fn spr_g_cases() {
        let p = SprParams { beta: 0.5, ..SprParams::default() };
        assert_eq!(p.g(&node(0.0, 4.0)).unwrap(), 1.0);
        assert_eq!(p.g(&node(9.0, 4.0)).unwrap(), 1.5);
        assert_eq!(p.g(&node(2.0, 4.0)).unwrap(), 1.25);
        assert!(matches!(p.g(&node(2.0, 0.0)), Err(Error::InvalidStatics(_))));
    }

    #[test]
    fn mlp_zero_and_identity() {
        let zero = MlpParams::zeros(7, 7);
        assert_eq!(zero.eval(&[1.0, -2.0, 3.0, 4.0, -5.0, 6.0, 7.0]).unwrap(), 0.0);

        let mut id = MlpParams::zeros(7, 7);
        for i in 0..7 {
            id.w0[i * 7 + i] = 1.0;
        }
        id.w1 = vec![1.0; 7];
        let x = [1.0, -2.0, 3.0, -4.0, 5.0, -6.0, 7.0];
        assert_eq!(id.eval(&x).unwrap(), 16.0);
        assert!(matches!(id.eval(&x[..3]), Err(Error::DimensionMismatch { expected: 7, actual: 3 })));
    }

    #[test]
    fn sprnn_dispatch() {
        let p = SprNnParams::init(5);
        let z = EdgeFeature { dist: 1.3, deg_i: 0.2, deg_j: 0.9, neg_i: 0.1, neg_j: 0.0, pos_i: 0.7, pos_j: 0.8 };
        let a = p.f(None, &z);
        let b = p.f(Some(Sign::Positive), &z);
        let c = p.f(Some(Sign::Negative), &z);
        assert!(a != b && b != c && a != c);

        let mut q = p.clone();
        q.f_neutral = MlpParams::zeros(7, 7);
        assert_eq!(q.f(None, &z), 0.0);
    }

    #[test]
    fn sprnn_g_constant_and_zero() {
        let mut p = SprNnParams::zeros();
        assert_eq!(p.g(&node(3.0, 4.0)).unwrap(), 0.0);
        p.g_net.b1 = 1.0;
        for d in [0.0, 2.0, 50.0] {
            assert_eq!(p.g(&node(d, 4.0)).unwrap(), 1.0);
        }
    }

    #[test]
    fn parameter_counts() {
        let nn = ForceParams::init(ModelKind::SprNn, 1);
        assert_eq!(nn.n_params(), 3 * (7 * 7 + 7 + 7 + 1) + (3 * 3 + 3 + 3 + 1));
        assert_eq!(nn.n_params(), SprNnParams::LEN);
        assert_eq!(nn.flatten().len(), 208);
        assert_eq!(nn.param_names().len(), 208);
        let spr = ForceParams::init(ModelKind::Spr, 1);
        assert_eq!(spr.flatten().len(), 7);
    }

    #[test]
    fn init_is_deterministic_and_glorot_bounded() {
        let a = ForceParams::init(ModelKind::SprNn, 42);
        assert_eq!(a, ForceParams::init(ModelKind::SprNn, 42));
        assert_ne!(a, ForceParams::init(ModelKind::SprNn, 43));
        let ForceParams::SprNn(p) = a else { unreachable!() };
        let s = (6.0f64 / 14.0).sqrt();
        assert!(p.f_neutral.w0.iter().all(|w| w.abs() < s));
        assert!(p.f_neutral.b0.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn flat_round_trip_preserves_layout() {
        let p = ForceParams::init(ModelKind::SprNn, 9);
        let flat = p.flatten();
        assert_eq!(p.with_flat(&flat).unwrap(), p);
        // g_net comes first: its w0 occupies the first 9 entries.
        let ForceParams::SprNn(nn) = &p else { unreachable!() };
        assert_eq!(&flat[..9], nn.g_net.w0.as_slice());
        assert_eq!(flat[9..12], nn.g_net.w1[..]);
        assert_eq!(flat[15], nn.g_net.b1);
        assert_eq!(&flat[16..16 + 49], nn.f_neutral.w0.as_slice());
        assert!(p.with_flat(&flat[1..]).is_err());
    }

    #[test]
    fn param_file_bit_exact() {
        let mut p = ForceParams::init(ModelKind::SprNn, 3);
        let mut flat = p.flatten();
        flat[0] = 0.1 + 0.2;
        flat[1] = f64::MIN_POSITIVE / 3.0;
        flat[2] = -0.0;
        p = p.with_flat(&flat).unwrap();
        let json = ParamFile::from_params(&p, Some(64)).to_json().unwrap();
        let back = ParamFile::from_json(&json).unwrap();
        assert_eq!(back.embedding_dim, Some(64));
        let q = back.to_params().unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&q.flatten()), bits(&flat));

        let spr = ForceParams::Spr(SprParams { beta: 1.0 / 3.0, ..SprParams::default() });
        let back = ParamFile::from_json(&ParamFile::from_params(&spr, None).to_json().unwrap()).unwrap();
        assert_eq!(back.to_params().unwrap(), spr);
    }

    #[test]
    fn param_file_rejects_bad_input() {
        let p = ForceParams::init(ModelKind::SprNn, 3);
        let mut file = ParamFile::from_params(&p, None);
        file.version = 99;
        assert!(file.to_params().is_err());
        let mut file = ParamFile::from_params(&p, None);
        file.blocks.retain(|b| b.name != "f_negative.b0");
        assert!(file.to_params().is_err());
        let mut file = ParamFile::from_params(&p, None);
        file.blocks[0].shape = vec![2, 3];
        assert!(file.to_params().is_err());
    }
}
