//! Readers and writers for interaction logs.
//!
//! `jodie-csv` is the public layout `user_id,item_id,timestamp,state_label,f1,...,fD`
//! with one header row. The binary format is a compact little-endian
//! container used for fast reloads:
//!
//! ```text
//! magic "TGRAPH\0\0" | version u32 | nodes u64 | node_dim u32 | edge_dim u32 | events u64
//! partition codes [u8; nodes]
//! node features   [f64; nodes * node_dim]
//! per event: source u32 | target u32 | time f64 | label i32 | features [f64; edge_dim]
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use super::store::{GraphError, NodeId, Partition, RawEvent, TemporalGraph};
use crate::numerics::Array;

const MAGIC: &[u8; 8] = b"TGRAPH\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    JodieCsv,
    Binary,
}

impl GraphFormat {
    /// Guesses the format from a file extension (`.csv` → jodie-csv).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => GraphFormat::JodieCsv,
            _ => GraphFormat::Binary,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.display().to_string(), source }
}

pub fn load_interactions(path: &Path, format: GraphFormat) -> Result<TemporalGraph, GraphError> {
    match format {
        GraphFormat::JodieCsv => {
            let file = File::open(path).map_err(io_err(path))?;
            read_jodie_csv(BufReader::new(file), &path.display().to_string())
        }
        GraphFormat::Binary => {
            let file = File::open(path).map_err(io_err(path))?;
            read_binary(&mut BufReader::new(file))
        }
    }
}

/// Parses a jodie-csv stream. Users and items get disjoint contiguous id
/// ranges (users first, each side ordered by raw id). Node features are
/// zero vectors of the edge-feature dimension.
pub fn read_jodie_csv<R: BufRead>(reader: R, name: &str) -> Result<TemporalGraph, GraphError> {
    let mut lines = reader.lines();
    let header = lines.next();
    if header.is_none() {
        return Err(GraphError::Empty { path: name.to_string() });
    }
    header
        .unwrap()
        .map_err(|source| GraphError::Io { path: name.to_string(), source })?;

    struct Row {
        user: i64,
        item: i64,
        time: f64,
        label: i32,
        features: Vec<f64>,
    }
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|source| GraphError::Io { path: name.to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| GraphError::Parse { path: name.to_string(), line: line_no, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(parse_err(format!("expected at least 4 columns, found {}", fields.len())));
        }
        let user: i64 = fields[0].parse().map_err(|e| parse_err(format!("user_id: {e}")))?;
        let item: i64 = fields[1].parse().map_err(|e| parse_err(format!("item_id: {e}")))?;
        let time: f64 = fields[2].parse().map_err(|e| parse_err(format!("timestamp: {e}")))?;
        let label: f64 = fields[3].parse().map_err(|e| parse_err(format!("state_label: {e}")))?;
        if !(time >= 0.0 && time.is_finite()) {
            return Err(parse_err(format!("timestamp {time} must be a nonnegative number")));
        }
        let features = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("feature: {e}")))?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(GraphError::RaggedFeatures {
                    path: name.to_string(),
                    line: line_no,
                    expected: d,
                    found: features.len(),
                })
            }
            _ => {}
        }
        rows.push(Row { user, item, time, label: label as i32, features });
    }
    if rows.is_empty() {
        return Err(GraphError::Empty { path: name.to_string() });
    }
    if rows.windows(2).any(|w| w[1].time < w[0].time) {
        warn!("{name}: timestamps are not monotone; re-sorting chronologically");
    }

    let users: BTreeMap<i64, NodeId> = {
        let mut ids: Vec<i64> = rows.iter().map(|r| r.user).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(i, id)| (id, i as NodeId)).collect()
    };
    let offset = users.len() as NodeId;
    let items: BTreeMap<i64, NodeId> = {
        let mut ids: Vec<i64> = rows.iter().map(|r| r.item).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(i, id)| (id, offset + i as NodeId)).collect()
    };
    let n = users.len() + items.len();
    let mut partition = vec![Partition::Source; users.len()];
    partition.extend(std::iter::repeat_n(Partition::Target, items.len()));
    let edge_dim = dim.unwrap_or(0);
    let events = rows
        .into_iter()
        .map(|r| RawEvent {
            source: users[&r.user],
            target: items[&r.item],
            time: r.time,
            label: r.label,
            features: r.features,
        })
        .collect();
    TemporalGraph::new(Array::zeros(&[n, edge_dim]), partition, events, edge_dim)
}

/// Writes the interaction log in jodie-csv layout. Source-side nodes are
/// written as users and everything else as items, with ids relative to
/// their side. Node features are not representable and are dropped.
pub fn write_jodie_csv<W: Write>(g: &TemporalGraph, mut w: W) -> std::io::Result<()> {
    let sources = g.nodes_in(Partition::Source);
    let first_other = sources.len() as NodeId;
    let side_id = |v: NodeId| -> NodeId {
        if g.partition(v) == Partition::Source {
            v
        } else {
            v - first_other
        }
    };
    write!(w, "user_id,item_id,timestamp,state_label,comma_separated_list_of_features")?;
    writeln!(w)?;
    for e in g.interactions() {
        write!(w, "{},{},{},{}", side_id(e.source), side_id(e.target), e.time, e.label)?;
        for f in g.edge_features(e.ordinal) {
            write!(w, ",{f}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_binary(g: &TemporalGraph, path: &Path) -> Result<(), GraphError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_binary(g, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_binary<W: Write>(g: &TemporalGraph, w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(g.node_count() as u64).to_le_bytes())?;
    w.write_all(&(g.node_dim() as u32).to_le_bytes())?;
    w.write_all(&(g.edge_dim() as u32).to_le_bytes())?;
    w.write_all(&(g.len() as u64).to_le_bytes())?;
    for p in g.partitions() {
        w.write_all(&[p.code()])?;
    }
    for v in 0..g.node_count() as NodeId {
        for x in g.node_features(v) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    for e in g.interactions() {
        w.write_all(&e.source.to_le_bytes())?;
        w.write_all(&e.target.to_le_bytes())?;
        w.write_all(&e.time.to_le_bytes())?;
        w.write_all(&e.label.to_le_bytes())?;
        for x in g.edge_features(e.ordinal) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], GraphError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| GraphError::Format(format!("truncated file: {e}")))?;
    Ok(buf)
}

pub fn read_binary<R: Read>(r: &mut R) -> Result<TemporalGraph, GraphError> {
    let magic: [u8; 8] = take(r)?;
    if &magic != MAGIC {
        return Err(GraphError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(r)?);
    if version != VERSION {
        return Err(GraphError::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(take(r)?) as usize;
    let node_dim = u32::from_le_bytes(take(r)?) as usize;
    let edge_dim = u32::from_le_bytes(take(r)?) as usize;
    let m = u64::from_le_bytes(take(r)?) as usize;
    let mut partition = Vec::with_capacity(n);
    for _ in 0..n {
        let [c] = take::<1, _>(r)?;
        partition.push(Partition::from_code(c).ok_or_else(|| GraphError::Format(format!("partition code {c}")))?);
    }
    let mut feats = Vec::with_capacity(n * node_dim);
    for _ in 0..n * node_dim {
        feats.push(f64::from_le_bytes(take(r)?));
    }
    let mut events = Vec::with_capacity(m);
    for _ in 0..m {
        let source = u32::from_le_bytes(take(r)?);
        let target = u32::from_le_bytes(take(r)?);
        let time = f64::from_le_bytes(take(r)?);
        let label = i32::from_le_bytes(take(r)?);
        let mut features = Vec::with_capacity(edge_dim);
        for _ in 0..edge_dim {
            features.push(f64::from_le_bytes(take(r)?));
        }
        events.push(RawEvent { source, target, time, label, features });
    }
    TemporalGraph::new(Array::matrix(n, node_dim, feats), partition, events, edge_dim)
}
