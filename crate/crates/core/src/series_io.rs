//! JSON-lines snapshot series: one document per snapshot,
//!
//! ```text
//! {"t":1,"node_types":3,"edge_types":3,"nodes":[{"id":0,"type":0,"features":[...],"label":2}],"edges":[{"src":0,"dst":5,"etype":0}]}
//! ```
//!
//! `node_types`/`edge_types` are optional on read; when absent they are
//! inferred from the largest tags seen anywhere in the file. Feature values
//! are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::graph::{EdgeRecord, GraphError, HeteroSnapshot, NodeId, NodeRecord, TemporalSeries};

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: GraphError },
    #[error(transparent)]
    Series(#[from] GraphError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: NodeId,
    #[serde(rename = "type")]
    node_type: u32,
    features: Vec<f64>,
    label: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    src: NodeId,
    dst: NodeId,
    etype: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotDoc {
    t: i64,
    #[serde(default)]
    node_types: Option<u32>,
    #[serde(default)]
    edge_types: Option<u32>,
    nodes: Vec<NodeDoc>,
    edges: Vec<EdgeDoc>,
}

fn push_float(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to String");
}

/// One snapshot as a single JSON line (no trailing newline).
pub fn snapshot_to_line(s: &HeteroSnapshot) -> String {
    let mut out = String::new();
    write!(
        out,
        "{{\"t\":{},\"node_types\":{},\"edge_types\":{},\"nodes\":[",
        s.time_index(),
        s.node_type_count(),
        s.edge_type_count()
    )
    .expect("writing to String");
    for (i, n) in s.nodes().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{{\"id\":{},\"type\":{},\"features\":[", n.id, n.node_type).expect("writing to String");
        for (j, &f) in n.features.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            push_float(&mut out, f);
        }
        match n.label {
            Some(l) => write!(out, "],\"label\":{l}}}"),
            None => write!(out, "],\"label\":null}}"),
        }
        .expect("writing to String");
    }
    out.push_str("],\"edges\":[");
    for (i, e) in s.edges().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{{\"src\":{},\"dst\":{},\"etype\":{}}}", e.src, e.dst, e.edge_type).expect("writing to String");
    }
    out.push_str("]}");
    out
}

pub fn write_series_to<W: Write>(series: &TemporalSeries, mut out: W) -> io::Result<()> {
    for s in series.snapshots() {
        out.write_all(snapshot_to_line(s).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_series(series: &TemporalSeries, path: impl AsRef<Path>) -> Result<(), SeriesError> {
    let file = File::create(path)?;
    write_series_to(series, BufWriter::new(file))?;
    Ok(())
}

pub fn read_series_from<R: BufRead>(input: R) -> Result<TemporalSeries, SeriesError> {
    let mut docs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: SnapshotDoc = serde_json::from_str(&line)
            .map_err(|e| SeriesError::Parse { line: i + 1, message: e.to_string() })?;
        docs.push((i + 1, doc));
    }
    let max_node_type = docs.iter().flat_map(|(_, d)| d.nodes.iter().map(|n| n.node_type)).max();
    let max_edge_type = docs.iter().flat_map(|(_, d)| d.edges.iter().map(|e| e.etype)).max();
    let inferred_nodes = max_node_type.map_or(1, |m| m + 1);
    let inferred_edges = max_edge_type.map_or(1, |m| m + 1);

    let mut snapshots = Vec::with_capacity(docs.len());
    for (line, doc) in docs {
        let nodes = doc
            .nodes
            .into_iter()
            .map(|n| NodeRecord { id: n.id, node_type: n.node_type, features: n.features, label: n.label })
            .collect();
        let edges = doc.edges.into_iter().map(|e| EdgeRecord { src: e.src, dst: e.dst, edge_type: e.etype }).collect();
        let snapshot = HeteroSnapshot::new(
            doc.t,
            nodes,
            edges,
            doc.node_types.unwrap_or(inferred_nodes),
            doc.edge_types.unwrap_or(inferred_edges),
        )
        .map_err(|source| SeriesError::Invalid { line, source })?;
        snapshots.push(snapshot);
    }
    Ok(TemporalSeries::new(snapshots)?)
}

pub fn read_series(path: impl AsRef<Path>) -> Result<TemporalSeries, SeriesError> {
    read_series_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_series, GenConfig};

    fn tiny() -> TemporalSeries {
        let cfg = GenConfig { nodes_per_type: vec![9, 6, 3], time_steps: 2, feature_dim: 3, ..GenConfig::default() };
        generate_series(&cfg).unwrap()
    }

    #[test]
    fn empty_series_is_empty_file() {
        let mut buf = Vec::new();
        write_series_to(&TemporalSeries::default(), &mut buf).unwrap();
        assert!(buf.is_empty());
        assert!(read_series_from(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn round_trip_in_memory() {
        let s = tiny();
        let mut buf = Vec::new();
        write_series_to(&s, &mut buf).unwrap();
        assert_eq!(read_series_from(&buf[..]).unwrap(), s);
    }

    #[test]
    fn truncated_file_names_the_line() {
        let s = tiny();
        let mut buf = Vec::new();
        write_series_to(&s, &mut buf).unwrap();
        let cut = buf.len() - 40;
        match read_series_from(&buf[..cut]) {
            Err(SeriesError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = "{\"t\":1,\"nodes\":[{\"id\":0,\"type\":0,\"label\":null}],\"edges\":[]}\n";
        match read_series_from(text.as_bytes()) {
            Err(SeriesError::Parse { line: 1, message }) => assert!(message.contains("features"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dangling_edge_is_invalid_with_line() {
        let text = concat!(
            "{\"t\":1,\"nodes\":[{\"id\":0,\"type\":0,\"features\":[1.0],\"label\":null},",
            "{\"id\":1,\"type\":1,\"features\":[0.5],\"label\":null}],\"edges\":[{\"src\":0,\"dst\":1,\"etype\":0}]}\n",
            "{\"t\":2,\"nodes\":[{\"id\":0,\"type\":0,\"features\":[1.0],\"label\":null}],",
            "\"edges\":[{\"src\":0,\"dst\":4,\"etype\":1}]}\n"
        );
        match read_series_from(text.as_bytes()) {
            Err(SeriesError::Invalid { line: 2, source: GraphError::MissingEndpoint { missing: 4, .. } }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn features_use_seventeen_significant_digits() {
        let line = snapshot_to_line(&tiny().snapshots()[0]);
        let start = line.find("\"features\":[").unwrap() + 12;
        let first = &line[start..line[start..].find(',').unwrap() + start];
        let mantissa = first.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17, "{first}");
    }
}
