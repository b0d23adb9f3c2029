//! Signed undirected graphs: loading, undirected conversion, sign hiding and
//! the static per-node features used by the force models.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Dense node index in `[0, n_nodes)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Positive,
}

impl Sign {
    pub fn from_i64(v: i64) -> Option<Sign> {
        match v {
            1 => Some(Sign::Positive),
            -1 => Some(Sign::Negative),
            _ => None,
        }
    }

    #[inline]
    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }

    #[inline]
    pub fn as_f64(self) -> f64 {
        self.as_i8() as f64
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        self == Sign::Positive
    }
}

/// Observed sign as an integer in {-1, 0, +1}; hidden edges map to 0.
#[inline]
pub fn observed_code(s: Option<Sign>) -> i8 {
    s.map_or(0, Sign::as_i8)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeFormat {
    /// `src dst sign`, whitespace or comma separated, sign in {-1, 1}.
    Plain,
    /// `src,dst,rating[,timestamp]` with a non-zero integer rating.
    RatingCsv,
}

impl FromStr for EdgeFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(EdgeFormat::Plain),
            "rating_csv" | "rating-csv" => Ok(EdgeFormat::RatingCsv),
            other => Err(Error::invalid(format!("unknown edge format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StagedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub sign: Sign,
}

/// Directed edge list as read from disk, before undirected conversion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagedGraph {
    /// Raw identifier of each dense node id.
    pub labels: Vec<String>,
    pub edges: Vec<StagedEdge>,
}

impl StagedGraph {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn positive_fraction(&self) -> f64 {
        let pos = self.edges.iter().filter(|e| e.sign.is_positive()).count();
        pos as f64 / self.edges.len() as f64
    }
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, NodeId>,
    labels: Vec<String>,
}

impl Interner {
    fn intern(&mut self, raw: &str) -> NodeId {
        if let Some(&id) = self.ids.get(raw) {
            return id;
        }
        let id = NodeId(self.labels.len() as u32);
        self.labels.push(raw.to_owned());
        self.ids.insert(raw.to_owned(), id);
        id
    }
}

/// Reads a directed signed edge list. Raw ids are remapped to dense ids in
/// order of first appearance; edge order follows line order.
pub fn load_edge_list<R: BufRead>(reader: R, format: EdgeFormat) -> Result<StagedGraph> {
    let mut interner = Interner::default();
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (src, dst, sign) = match format {
            EdgeFormat::Plain => parse_plain(trimmed, lineno)?,
            EdgeFormat::RatingCsv => parse_rating(trimmed, lineno)?,
        };
        let src = interner.intern(src);
        let dst = interner.intern(dst);
        edges.push(StagedEdge { src, dst, sign });
    }
    if edges.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(StagedGraph { labels: interner.labels, edges })
}

fn parse_plain(line: &str, lineno: usize) -> Result<(&str, &str, Sign)> {
    let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
    if fields.len() != 3 {
        return Err(Error::parse(lineno, format!("expected `src dst sign`, found {} fields", fields.len())));
    }
    let raw: i64 =
        fields[2].parse().map_err(|_| Error::parse(lineno, format!("sign `{}` is not an integer", fields[2])))?;
    let sign = Sign::from_i64(raw).ok_or_else(|| Error::parse(lineno, format!("sign {raw} is not -1 or 1")))?;
    Ok((fields[0], fields[1], sign))
}

fn parse_rating(line: &str, lineno: usize) -> Result<(&str, &str, Sign)> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if !(3..=4).contains(&fields.len()) || fields[..3].iter().any(|f| f.is_empty()) {
        return Err(Error::parse(lineno, "expected `src,dst,rating[,timestamp]`".to_string()));
    }
    let rating: i64 =
        fields[2].parse().map_err(|_| Error::parse(lineno, format!("rating `{}` is not an integer", fields[2])))?;
    let sign = match rating.signum() {
        1 => Sign::Positive,
        -1 => Sign::Negative,
        _ => return Err(Error::parse(lineno, "rating 0 has no sign")),
    };
    Ok((fields[0], fields[1], sign))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub true_sign: Sign,
    /// `None` when the sign is hidden (neutral edge).
    pub observed: Option<Sign>,
}

impl Edge {
    /// The endpoint opposite to `node`.
    #[inline]
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.u == node {
            self.v
        } else {
            self.u
        }
    }
}

/// Immutable undirected signed graph with a CSR incidence structure.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedGraph {
    labels: Vec<String>,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    incident: Vec<u32>,
}

impl SignedGraph {
    /// Builds a graph, checking that pairs are unique, not self-loops, that
    /// endpoints are in range and that observed signs never contradict the
    /// true sign.
    pub fn new(labels: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let n = labels.len();
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        for (i, e) in edges.iter().enumerate() {
            if e.u.index() >= n || e.v.index() >= n {
                return Err(Error::invalid(format!("edge {i} references a node out of range")));
            }
            if e.u == e.v {
                return Err(Error::invalid(format!("edge {i} is a self-loop")));
            }
            if let Some(s) = e.observed {
                if s != e.true_sign {
                    return Err(Error::invalid(format!("edge {i} observed sign flips the true sign")));
                }
            }
            let key = (e.u.min(e.v), e.u.max(e.v));
            if !seen.insert(key) {
                return Err(Error::invalid(format!("edge {i} duplicates pair ({}, {})", key.0, key.1)));
            }
        }
        Ok(Self::build(labels, edges))
    }

    fn build(labels: Vec<String>, edges: Vec<Edge>) -> Self {
        let n = labels.len();
        let mut counts = vec![0usize; n + 1];
        for e in &edges {
            counts[e.u.index() + 1] += 1;
            counts[e.v.index() + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut incident = vec![0u32; 2 * edges.len()];
        // Ascending edge index within each node's slice.
        for (idx, e) in edges.iter().enumerate() {
            for node in [e.u, e.v] {
                incident[cursor[node.index()]] = idx as u32;
                cursor[node.index()] += 1;
            }
        }
        Self { labels, edges, offsets, incident }
    }

    /// Graph with `n` nodes labelled by their index.
    pub fn with_numeric_labels(n: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()).collect(), edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node.index()]
    }

    /// Indices of the edges incident to `node`, ascending.
    #[inline]
    pub fn incident(&self, node: usize) -> &[u32] {
        &self.incident[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Converts back into a staged directed list, one `u -> v` per edge.
    pub fn to_staged(&self) -> StagedGraph {
        StagedGraph {
            labels: self.labels.clone(),
            edges: self.edges.iter().map(|e| StagedEdge { src: e.u, dst: e.v, sign: e.true_sign }).collect(),
        }
    }

    /// Copy with the given observed signs replaced.
    fn with_observed(&self, observed: impl Fn(usize, &Edge) -> Option<Sign>) -> Self {
        let edges = self.edges.iter().enumerate().map(|(i, e)| Edge { observed: observed(i, e), ..*e }).collect();
        Self { labels: self.labels.clone(), edges, offsets: self.offsets.clone(), incident: self.incident.clone() }
    }

    /// Copy with every sign visible again.
    pub fn revealed(&self) -> Self {
        self.with_observed(|_, e| Some(e.true_sign))
    }

    /// Copy where exactly the listed edges are hidden and all others visible.
    pub fn with_hidden(&self, hidden: &HiddenSet) -> Result<Self> {
        let mut mask = vec![false; self.n_edges()];
        for &i in hidden.indices() {
            if i >= mask.len() {
                return Err(Error::invalid(format!("hidden edge index {i} out of range")));
            }
            mask[i] = true;
        }
        Ok(self.with_observed(|i, e| if mask[i] { None } else { Some(e.true_sign) }))
    }

    /// Edges whose observed sign is hidden.
    pub fn hidden_edges(&self) -> HiddenSet {
        HiddenSet::from_sorted(
            self.edges.iter().enumerate().filter(|(_, e)| e.observed.is_none()).map(|(i, _)| i).collect(),
        )
    }

    /// Looks up the edge index of an unordered pair.
    pub fn find_edge(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let (small, large) = if self.degree(a.index()) <= self.degree(b.index()) { (a, b) } else { (b, a) };
        self.incident(small.index()).iter().map(|&i| i as usize).find(|&i| self.edges[i].other(small) == large)
    }
}

/// Merges a directed list into an undirected graph. A pair is negative if any
/// directed instance between its endpoints is negative. Self-loops are
/// dropped and edges are sorted by `(min id, max id)`.
pub fn to_undirected(staged: &StagedGraph) -> SignedGraph {
    let mut pairs: BTreeMap<(NodeId, NodeId), Sign> = BTreeMap::new();
    for e in &staged.edges {
        if e.src == e.dst {
            continue;
        }
        let key = (e.src.min(e.dst), e.src.max(e.dst));
        pairs
            .entry(key)
            .and_modify(|s| {
                if e.sign == Sign::Negative {
                    *s = Sign::Negative;
                }
            })
            .or_insert(e.sign);
    }
    let edges = pairs.into_iter().map(|((u, v), sign)| Edge { u, v, true_sign: sign, observed: Some(sign) }).collect();
    SignedGraph::build(staged.labels.clone(), edges)
}

/// Sorted set of edge indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenSet(Vec<usize>);

impl HiddenSet {
    pub fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self(indices)
    }

    pub fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.0.binary_search(&idx).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub p_hidden: f64,
    pub seed: u64,
    /// Hide exactly `ceil(p_hidden * M)` edges (those with the smallest draws)
    /// instead of independent Bernoulli trials.
    #[serde(default)]
    pub exact: bool,
}

impl SplitSpec {
    pub fn new(p_hidden: f64, seed: u64) -> Self {
        Self { p_hidden, seed, exact: false }
    }

    pub fn exact(mut self, exact: bool) -> Self {
        self.exact = exact;
        self
    }
}

/// Hides edge signs. Edge `i` is hidden when `unit(seed, "hide", [i]) <
/// p_hidden` (Bernoulli mode); hidden edges stay in the graph with observed
/// sign 0.
pub fn hide_signs(graph: &SignedGraph, spec: &SplitSpec) -> Result<(SignedGraph, HiddenSet)> {
    let candidates: Vec<usize> = (0..graph.n_edges()).collect();
    hide_among(graph, &candidates, spec, rng::tag::HIDE)
}

/// Hides a further fraction of the currently visible edges using an
/// independent stream (`"valid"` tag). Returns the graph and the newly hidden
/// edges only.
pub fn hide_visible(graph: &SignedGraph, spec: &SplitSpec) -> Result<(SignedGraph, HiddenSet)> {
    let candidates: Vec<usize> =
        graph.edges().iter().enumerate().filter(|(_, e)| e.observed.is_some()).map(|(i, _)| i).collect();
    hide_among(graph, &candidates, spec, rng::tag::VALIDATION)
}

fn hide_among(
    graph: &SignedGraph,
    candidates: &[usize],
    spec: &SplitSpec,
    tag: u64,
) -> Result<(SignedGraph, HiddenSet)> {
    let p = spec.p_hidden;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p_hidden = {p} is outside [0, 1]")));
    }
    let draw = |i: usize| rng::unit(spec.seed, tag, &[i as u64]);
    let hidden = if spec.exact {
        let target = ((p * candidates.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut ranked: Vec<(f64, usize)> = candidates.iter().map(|&i| (draw(i), i)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        HiddenSet::from_unsorted(ranked.into_iter().take(target).map(|(_, i)| i).collect())
    } else {
        HiddenSet::from_sorted(candidates.iter().copied().filter(|&i| draw(i) < p).collect())
    };
    let mut mask = vec![false; graph.n_edges()];
    for &i in hidden.indices() {
        mask[i] = true;
    }
    let out = graph.with_observed(|i, e| if mask[i] { None } else { e.observed });
    Ok((out, hidden))
}

/// Static node features derived from the observed graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStatics {
    pub deg: Vec<u32>,
    pub neg_frac: Vec<f64>,
    pub pos_frac: Vec<f64>,
    /// Nearest-rank 80th percentile of the degree multiset, at least 1.
    pub p80: f64,
}

impl NodeStatics {
    pub fn n_nodes(&self) -> usize {
        self.deg.len()
    }

    /// `min(1, deg / p80)`.
    #[inline]
    pub fn degree_scale(&self, node: usize) -> f64 {
        (self.deg[node] as f64 / self.p80).min(1.0)
    }
}

/// Degree and observed-sign fractions per node. Fractions use the full degree
/// as denominator, so hidden edges dilute both.
pub fn compute_node_statics(graph: &SignedGraph) -> NodeStatics {
    let n = graph.n_nodes();
    let mut deg = Vec::with_capacity(n);
    let mut neg_frac = Vec::with_capacity(n);
    let mut pos_frac = Vec::with_capacity(n);
    for node in 0..n {
        let incident = graph.incident(node);
        let d = incident.len();
        let (mut neg, mut pos) = (0usize, 0usize);
        for &e in incident {
            match graph.edge(e as usize).observed {
                Some(Sign::Negative) => neg += 1,
                Some(Sign::Positive) => pos += 1,
                None => {}
            }
        }
        deg.push(d as u32);
        if d == 0 {
            neg_frac.push(0.0);
            pos_frac.push(0.0);
        } else {
            neg_frac.push(neg as f64 / d as f64);
            pos_frac.push(pos as f64 / d as f64);
        }
    }
    let p80 = nearest_rank_percentile(&deg, 80).max(1) as f64;
    NodeStatics { deg, neg_frac, pos_frac, p80 }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank_percentile(values: &[u32], percent: u32) -> u32 {
    if values.is_empty() {
        return 0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let rank = ((percent as usize * n) + 99) / 100;
    sorted[rank.clamp(1, n) - 1]
}

/// Writes the canonical dump: a `# nodes N` header followed by one
/// `u v true_sign observed_sign` line per edge using dense ids, in edge order.
pub fn write_dump<W: Write>(graph: &SignedGraph, mut out: W) -> Result<()> {
    writeln!(out, "# nodes {}", graph.n_nodes())?;
    for e in graph.edges() {
        writeln!(out, "{} {} {} {}", e.u, e.v, e.true_sign.as_i8(), observed_code(e.observed))?;
    }
    Ok(())
}

/// Reads a canonical dump. Node ids are used as-is; labels are the ids.
pub fn read_dump<R: BufRead>(reader: R) -> Result<SignedGraph> {
    let mut n_nodes: Option<usize> = None;
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let mut words = rest.split_whitespace();
            if words.next() == Some("nodes") {
                let n = words
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| Error::parse(lineno, "malformed `# nodes N` header"))?;
                n_nodes = Some(n);
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse(lineno, "expected `u v true_sign observed_sign`"));
        }
        let num = |s: &str| -> Result<i64> {
            s.parse().map_err(|_| Error::parse(lineno, format!("`{s}` is not an integer")))
        };
        let (u, v) = (num(fields[0])?, num(fields[1])?);
        if u < 0 || v < 0 {
            return Err(Error::parse(lineno, "negative node id"));
        }
        let true_sign =
            Sign::from_i64(num(fields[2])?).ok_or_else(|| Error::parse(lineno, "true sign must be -1 or 1"))?;
        let observed = match num(fields[3])? {
            0 => None,
            s => Some(Sign::from_i64(s).ok_or_else(|| Error::parse(lineno, "observed sign must be -1, 0 or 1"))?),
        };
        edges.push(Edge { u: NodeId(u as u32), v: NodeId(v as u32), true_sign, observed });
    }
    let n = match n_nodes {
        Some(n) => n,
        None => edges.iter().map(|e| e.u.index().max(e.v.index()) + 1).max().ok_or(Error::EmptyInput)?,
    };
    SignedGraph::with_numeric_labels(n, edges)
}

/// Uniform random simple graph with `n_edges` distinct pairs; each edge is
/// positive with probability `positive_ratio`. All signs are visible.
pub fn random_signed_graph(n_nodes: usize, n_edges: usize, positive_ratio: f64, seed: u64) -> Result<SignedGraph> {
    let max_pairs = n_nodes.saturating_mul(n_nodes.saturating_sub(1)) / 2;
    if n_edges > max_pairs {
        return Err(Error::invalid(format!("{n_edges} edges do not fit in a simple graph on {n_nodes} nodes")));
    }
    let mut pairs = std::collections::BTreeSet::new();
    let mut counter = 0u64;
    while pairs.len() < n_edges {
        let a = rng::draw(seed, rng::tag::SYNTH, &[counter, 0]) % n_nodes as u64;
        let b = rng::draw(seed, rng::tag::SYNTH, &[counter, 1]) % n_nodes as u64;
        counter += 1;
        if a != b {
            pairs.insert((a.min(b) as u32, a.max(b) as u32));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(u, v)| {
            let sign = if rng::unit(seed, rng::tag::SYNTH, &[u as u64, v as u64, 2]) < positive_ratio {
                Sign::Positive
            } else {
                Sign::Negative
            };
            Edge { u: NodeId(u), v: NodeId(v), true_sign: sign, observed: Some(sign) }
        })
        .collect();
    SignedGraph::with_numeric_labels(n_nodes, edges)
}
