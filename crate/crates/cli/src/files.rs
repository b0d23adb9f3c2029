use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use gsn_core::graph::{load_edge_list, read_dump, to_undirected, EdgeFormat, HiddenSet, SignedGraph};
use gsn_core::sim::{read_embeddings_binary, read_embeddings_text, EMBEDDING_MAGIC};
use gsn_core::Matrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cli::InputFormat;
use crate::error::{CliError, CliResult};

pub fn open_read(path: &Path) -> CliResult<Box<dyn BufRead>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(CliError::io(path))?))
}

/// Writes through `f` into a fresh file.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> gsn_core::Result<()>) -> CliResult<()> {
    let mut out = create(path)?;
    f(&mut out)?;
    out.flush().map_err(CliError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).map_err(CliError::io(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(CliError::io(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Format from the file name, ignoring a trailing `.gz`.
pub fn guess_format(path: &Path) -> InputFormat {
    let name = path.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    if name.ends_with(".dump") {
        InputFormat::Dump
    } else if name.ends_with(".csv") {
        InputFormat::RatingCsv
    } else {
        InputFormat::Plain
    }
}

pub struct LoadedGraph {
    pub graph: SignedGraph,
    pub format: InputFormat,
    /// Directed edge count and node count before merging (edge lists only).
    pub staged: Option<(usize, usize, f64)>,
}

pub fn load_graph(path: &Path, format: Option<InputFormat>) -> CliResult<LoadedGraph> {
    let format = format.unwrap_or_else(|| guess_format(path));
    let reader = open_read(path)?;
    let with_path = |e: gsn_core::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    match format {
        InputFormat::Dump => Ok(LoadedGraph { graph: read_dump(reader).map_err(with_path)?, format, staged: None }),
        InputFormat::Plain | InputFormat::RatingCsv => {
            let edge_format = if format == InputFormat::Plain { EdgeFormat::Plain } else { EdgeFormat::RatingCsv };
            let staged = load_edge_list(reader, edge_format).map_err(with_path)?;
            let summary = (staged.edges.len(), staged.n_nodes(), staged.positive_fraction());
            Ok(LoadedGraph { graph: to_undirected(&staged), format, staged: Some(summary) })
        }
    }
}

/// One `u v` pair of dense node ids per line, matching the dump written
/// alongside.
pub fn write_hidden(path: &Path, graph: &SignedGraph, hidden: &HiddenSet) -> CliResult<()> {
    let mut out = create(path)?;
    let io = CliError::io(path);
    (|| {
        writeln!(out, "# hidden edges {}", hidden.len())?;
        for &i in hidden.indices() {
            let e = graph.edge(i);
            writeln!(out, "{} {}", e.u, e.v)?;
        }
        out.flush()
    })()
    .map_err(io)
}

/// Reads `u v` pairs naming nodes by their labels in `graph`.
pub fn read_hidden(path: &Path, graph: &SignedGraph) -> CliResult<HiddenSet> {
    let index: std::collections::HashMap<&str, gsn_core::graph::NodeId> = (0..graph.n_nodes())
        .map(|i| {
            let id = gsn_core::graph::NodeId(i as u32);
            (graph.label(id), id)
        })
        .collect();
    let mut found = Vec::new();
    for (n, line) in open_read(path)?.lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CliError::Runtime(format!("{}:{}: expected `u v` of an existing edge", path.display(), n + 1));
        let mut parts = line.split_whitespace();
        let (a, b) = (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?);
        let (a, b) = (index.get(a).ok_or_else(bad)?, index.get(b).ok_or_else(bad)?);
        found.push(graph.find_edge(*a, *b).ok_or_else(bad)?);
    }
    Ok(HiddenSet::from_unsorted(found))
}

/// Reads text or binary embeddings, told apart by the binary magic.
pub fn read_embeddings(path: &Path) -> CliResult<Matrix> {
    let mut head = [0u8; 4];
    let is_binary = File::open(path).and_then(|mut f| f.read_exact(&mut head)).is_ok() && head == EMBEDDING_MAGIC;
    let reader = open_read(path)?;
    Ok(if is_binary { read_embeddings_binary(reader)? } else { read_embeddings_text(reader)? })
}

pub fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}
