//! Plain-text graph bundles.
//!
//! A bundle directory holds `edges.tsv` (two whitespace-separated 0-based
//! node ids per line), `features.csv` (row `i` is node `i`), `labels.csv`
//! (one class id per line) and optionally `meta.json` with declared counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gnnbench_autodiff::Matrix;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_edges: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class_names: Vec<String>,
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_features(text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err("features.csv", i + 1, format!("not a number: {field:?}")))?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(
                    "features.csv",
                    i + 1,
                    format!("ragged row: {width} values, expected {c}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, cols.unwrap_or(0), data)?)
}

fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err("labels.csv", i + 1, format!("not a class id: {l:?}")))
        })
        .collect()
}

fn parse_edges(text: &str, num_nodes: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err("edges.tsv", i + 1, "expected two node ids"));
        };
        if it.next().is_some() {
            return Err(parse_err("edges.tsv", i + 1, "expected two node ids"));
        }
        let id = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| parse_err("edges.tsv", i + 1, format!("not a node id: {s:?}")))?;
            if v >= num_nodes {
                return Err(parse_err(
                    "edges.tsv",
                    i + 1,
                    format!("node id {v} out of range 0..{num_nodes}"),
                ));
            }
            Ok(v)
        };
        let (u, v) = (id(a)?, id(b)?);
        if u == v {
            return Err(parse_err("edges.tsv", i + 1, format!("self-loop on node {u}")));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Reads and validates a bundle directory.
pub fn load_graph_bundle(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let features = parse_features(&read(dir, "features.csv")?)?;
    let labels = parse_labels(&read(dir, "labels.csv")?)?;
    let edges = parse_edges(&read(dir, "edges.tsv")?, features.rows())?;
    let meta_path = dir.join("meta.json");
    let meta: Option<BundleMeta> = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    if labels.len() != features.rows() {
        return Err(Error::Validation(format!(
            "labels.csv has {} rows, features.csv has {}",
            labels.len(),
            features.rows()
        )));
    }
    let num_classes = match &meta {
        Some(m) => m.num_classes,
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    let graph = Graph::new(features, edges, labels, num_classes)?;
    if let Some(m) = meta {
        let found = (graph.num_nodes(), graph.num_features());
        if found != (m.num_nodes, m.num_features) {
            return Err(Error::Validation(format!(
                "meta.json declares {} nodes x {} features, files hold {} x {}",
                m.num_nodes, m.num_features, found.0, found.1
            )));
        }
        if let Some(e) = m.num_edges {
            if e != graph.num_edges() {
                return Err(Error::Validation(format!(
                    "meta.json declares {e} edges, files hold {}",
                    graph.num_edges()
                )));
            }
        }
    }
    Ok(graph)
}

/// Writes `graph` as a bundle. Values use shortest round-trip formatting, so
/// loading the result reproduces the features bit for bit.
pub fn save_graph_bundle(graph: &Graph, dir: impl AsRef<Path>, meta: Option<&BundleMeta>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    };

    let mut edges = String::new();
    for (u, v) in graph.edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    write("edges.tsv", edges)?;

    let mut features = String::with_capacity(graph.num_nodes() * graph.num_features() * 2);
    for r in 0..graph.num_nodes() {
        for (j, v) in graph.features().row(r).iter().enumerate() {
            if j > 0 {
                features.push(',');
            }
            write!(features, "{v}").unwrap();
        }
        features.push('\n');
    }
    write("features.csv", features)?;

    let mut labels = String::new();
    for l in graph.labels() {
        writeln!(labels, "{l}").unwrap();
    }
    write("labels.csv", labels)?;

    let meta = match meta {
        Some(m) => m.clone(),
        None => BundleMeta {
            num_nodes: graph.num_nodes(),
            num_features: graph.num_features(),
            num_classes: graph.num_classes(),
            num_edges: Some(graph.num_edges()),
            name: None,
            class_names: Vec::new(),
        },
    };
    write("meta.json", serde_json::to_string_pretty(&meta)? + "\n")
}

/// Converts the LINQS citation release (`<name>.content`, `<name>.cites`).
///
/// Node order follows the content file; class ids follow the sorted class
/// names. Citation lines naming unknown papers or a paper citing itself are
/// skipped.
pub fn convert_linqs(content: &str, cites: &str) -> Result<(Graph, BundleMeta)> {
    let mut ids = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(parse_err("content", i + 1, "expected id, features and class"));
        }
        let values = fields[1..fields.len() - 1]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| parse_err("content", i + 1, format!("bad feature {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if ids.insert(fields[0].to_string(), rows.len()).is_some() {
            return Err(parse_err("content", i + 1, format!("duplicate paper id {}", fields[0])));
        }
        rows.push(values);
        names.push(fields[fields.len() - 1].to_string());
    }
    let classes: BTreeMap<&str, usize> = {
        let mut sorted: Vec<&str> = names.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.into_iter().enumerate().map(|(i, c)| (c, i)).collect()
    };
    let labels: Vec<usize> = names.iter().map(|c| classes[c.as_str()]).collect();
    let mut edges = Vec::new();
    let mut skipped = 0usize;
    for line in cites.lines() {
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            continue;
        };
        match (ids.get(a), ids.get(b)) {
            (Some(&u), Some(&v)) if u != v => edges.push((u, v)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} citation lines (unknown id or self-citation)");
    }
    let width = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(parse_err("content", i + 1, "ragged feature row"));
    }
    let features = Matrix::from_vec(rows.len(), width, rows.concat())?;
    let graph = Graph::new(features, edges, labels, classes.len())?;
    let meta = BundleMeta {
        num_nodes: graph.num_nodes(),
        num_features: graph.num_features(),
        num_classes: graph.num_classes(),
        num_edges: Some(graph.num_edges()),
        name: None,
        class_names: classes.keys().map(|c| c.to_string()).collect(),
    };
    Ok((graph, meta))
}
