//! Event CSV ingestion and the canonical on-disk format.
//!
//! Canonical format: header `src,dst,ts[,label][,f0..fk]`, UTF-8, `ts` as a
//! decimal real. Timestamps round-trip exactly because they are written with
//! the shortest representation that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{NodeId, TemporalGraph};

/// Column mapping for loading arbitrary delimited event files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub src_col: usize,
    pub dst_col: usize,
    pub ts_col: usize,
    /// Column skipped as a per-event label (not stored).
    pub label_col: Option<usize>,
    /// Edge feature columns; `None` means every unmapped trailing column.
    pub feature_cols: Option<Vec<usize>>,
    pub has_header: bool,
    pub delimiter: char,
    /// Remap node labels to dense ids 0..num_nodes-1 in first-appearance
    /// order (file row order before sorting). With `false`, labels must
    /// already be non-negative integers and are kept as-is.
    pub densify: bool,
}

impl CsvSchema {
    /// Schema of the canonical format written by [`write_events`].
    pub fn canonical() -> Self {
        CsvSchema {
            src_col: 0,
            dst_col: 1,
            ts_col: 2,
            label_col: None,
            feature_cols: None,
            has_header: true,
            delimiter: ',',
            densify: false,
        }
    }
}

/// Loads an event file according to `schema`.
///
/// Rows are sorted stably by `(timestamp, row order)`. With densification,
/// node ids are assigned by first appearance in row order, so the mapping is
/// reproducible without a vocabulary file.
pub fn load_events(path: &Path, schema: &CsvSchema) -> Result<TemporalGraph> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    load_events_str(&text, schema)
}

pub fn load_events_str(text: &str, schema: &CsvSchema) -> Result<TemporalGraph> {
    let mut rows: Vec<(NodeId, NodeId, f64, Vec<f64>)> = Vec::new();
    let mut id_map: std::collections::HashMap<String, NodeId> = std::collections::HashMap::new();
    let mut next_id: NodeId = 0;
    let mut max_id: NodeId = 0;
    let mapped = |c: usize, s: &CsvSchema| {
        c == s.src_col || c == s.dst_col || c == s.ts_col || s.label_col == Some(c)
    };

    let mut lines = text.lines().enumerate();
    if schema.has_header {
        lines.next();
    }
    for (lineno, line) in lines {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(schema.delimiter).map(str::trim).collect();
        let need = schema
            .src_col
            .max(schema.dst_col)
            .max(schema.ts_col)
            .max(schema.label_col.unwrap_or(0));
        if fields.len() <= need {
            return Err(Error::Parse {
                row,
                msg: format!("expected at least {} columns, found {}", need + 1, fields.len()),
            });
        }
        let ts: f64 = fields[schema.ts_col].parse().map_err(|_| Error::Parse {
            row,
            msg: format!("non-numeric timestamp {:?}", fields[schema.ts_col]),
        })?;
        let mut node = |label: &str| -> Result<NodeId> {
            if schema.densify {
                if let Some(&id) = id_map.get(label) {
                    Ok(id)
                } else {
                    let id = next_id;
                    id_map.insert(label.to_string(), id);
                    next_id += 1;
                    Ok(id)
                }
            } else {
                label.parse::<NodeId>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("node label {label:?} is not a non-negative integer (use densify)"),
                })
            }
        };
        let src = node(fields[schema.src_col])?;
        let dst = node(fields[schema.dst_col])?;
        max_id = max_id.max(src).max(dst);

        let mut feats = Vec::new();
        match &schema.feature_cols {
            Some(cols) => {
                for &c in cols {
                    let f = fields.get(c).ok_or_else(|| Error::Parse {
                        row,
                        msg: format!("missing feature column {c}"),
                    })?;
                    feats.push(f.parse().map_err(|_| Error::Parse {
                        row,
                        msg: format!("non-numeric feature {f:?} in column {c}"),
                    })?);
                }
            }
            None => {
                for (c, f) in fields.iter().enumerate() {
                    if !mapped(c, schema) {
                        feats.push(f.parse().map_err(|_| Error::Parse {
                            row,
                            msg: format!("non-numeric feature {f:?} in column {c}"),
                        })?);
                    }
                }
            }
        }
        rows.push((src, dst, ts, feats));
    }
    if rows.is_empty() {
        return Err(Error::Data("event file contains no data rows".into()));
    }
    let num_nodes = if schema.densify {
        next_id as usize
    } else {
        max_id as usize + 1
    };
    TemporalGraph::new(rows, num_nodes, None)
}

/// Writes the canonical CSV form of `g`.
pub fn write_events(g: &TemporalGraph, path: &Path) -> Result<()> {
    std::fs::write(path, events_to_csv(g))?;
    Ok(())
}

/// Node-feature sidecar: header `node,f0..fk`, one row per node id.
pub fn write_node_features(g: &TemporalGraph, path: &Path) -> Result<()> {
    let Some(features) = g.node_features() else {
        return Err(Error::Data("graph has no node features to write".into()));
    };
    let d = features.first().map(|f| f.len()).unwrap_or(0);
    let mut out = String::from("node");
    for i in 0..d {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for (n, row) in features.iter().enumerate() {
        let _ = write!(out, "{n}");
        for f in row {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads a node-feature sidecar. The file must cover a dense id range
/// 0..n-1; its length defines the node count (the event CSV alone cannot
/// represent trailing isolated nodes).
pub fn load_node_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 1;
        let mut fields = line.split(',');
        let node: usize = fields
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::Parse { row, msg: "bad node id".into() })?;
        let feats: Vec<f64> = fields
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| Error::Parse { row, msg: format!("non-numeric feature {f:?}") })
            })
            .collect::<Result<_>>()?;
        rows.push((node, feats));
    }
    let n = rows.len();
    let mut out = vec![None; n];
    for (node, feats) in rows {
        let slot = out
            .get_mut(node)
            .ok_or_else(|| Error::Data(format!("node ids not dense: {node} with {n} rows")))?;
        if slot.replace(feats).is_some() {
            return Err(Error::Data(format!("duplicate features for node {node}")));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::Data(format!("missing features for node {i}"))))
        .collect()
}

pub fn events_to_csv(g: &TemporalGraph) -> String {
    let d = g.edge_feature_dim();
    let mut out = String::from("src,dst,ts");
    for i in 0..d {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for e in g.events() {
        let _ = write!(out, "{},{},{}", e.src, e.dst, e.t);
        for f in &e.edge_features {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_sorts_by_timestamp() {
        let text = "src,dst,ts\n0,1,5\n1,2,1\n2,0,3\n";
        let g = load_events_str(text, &CsvSchema::canonical()).unwrap();
        let ts: Vec<f64> = g.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn densifies_string_labels_by_first_appearance() {
        let mut schema = CsvSchema::canonical();
        schema.densify = true;
        let g = load_events_str("src,dst,ts\nb,a,2\na,b,1\n", &schema).unwrap();
        assert_eq!(g.num_nodes(), 2);
        // "b" appeared first in row order, so it becomes id 0.
        let first = &g.events()[0];
        assert_eq!((first.src, first.dst, first.t), (1, 0, 1.0));
    }

    #[test]
    fn reports_row_of_malformed_timestamp() {
        let err = load_events_str("src,dst,ts\n0,1,2\n0,1,zzz\n", &CsvSchema::canonical())
            .unwrap_err();
        match err {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(load_events_str("src,dst,ts\n", &CsvSchema::canonical()).is_err());
    }

    #[test]
    fn round_trip_preserves_events_ids_features() {
        let rows = vec![
            (3u32, 1u32, 0.5, vec![1.25, -2.0]),
            (1, 2, 0.5, vec![0.1, 0.2]),
            (2, 3, 1e-9, vec![6.02e23, 7.0]),
        ];
        let g = TemporalGraph::new(rows, 4, None).unwrap();
        let text = events_to_csv(&g);
        let g2 = load_events_str(&text, &CsvSchema::canonical()).unwrap();
        assert_eq!(g.events(), g2.events());
    }

    #[test]
    fn schema_maps_arbitrary_columns() {
        // ts in col 0, src col 2, dst col 1, label col 3, one feature col 4.
        let schema = CsvSchema {
            src_col: 2,
            dst_col: 1,
            ts_col: 0,
            label_col: Some(3),
            feature_cols: Some(vec![4]),
            has_header: false,
            delimiter: ',',
            densify: true,
        };
        let g = load_events_str("7.5,x,y,1,0.25\n", &schema).unwrap();
        let e = &g.events()[0];
        assert_eq!((e.src, e.dst, e.t), (0, 1, 7.5));
        assert_eq!(e.edge_features, vec![0.25]);
    }
}
