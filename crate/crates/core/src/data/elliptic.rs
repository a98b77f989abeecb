//! Elliptic Bitcoin dataset in its public three-file layout:
//! `elliptic_txs_features.csv` (no header; txId, time step, 165 more
//! columns), `elliptic_txs_edgelist.csv` (txId1, txId2) and
//! `elliptic_txs_classes.csv` (txId, class with `1` illicit, `2` licit,
//! `unknown`).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph};
use crate::tensor::Matrix;

/// Time step plus 165 further features.
pub const ELLIPTIC_FEATURE_DIM: usize = 166;
pub const TIME_STEPS: u8 = 49;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeLabel {
    Illicit,
    Licit,
    Unknown,
}

impl NodeLabel {
    /// Binary class index (`licit` 0, `illicit` 1); `None` for unknown.
    pub fn class(self) -> Option<usize> {
        match self {
            NodeLabel::Licit => Some(0),
            NodeLabel::Illicit => Some(1),
            NodeLabel::Unknown => None,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            NodeLabel::Illicit => "1",
            NodeLabel::Licit => "2",
            NodeLabel::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticDataset {
    pub tx_ids: Vec<u64>,
    /// Column 0 is the time step.
    pub features: FeatureMatrix,
    pub labels: Vec<NodeLabel>,
    pub time_steps: Vec<u8>,
    pub graph: Graph,
}

impl EllipticDataset {
    pub fn node_count(&self) -> usize {
        self.tx_ids.len()
    }

    pub fn illicit_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NodeLabel::Illicit).count()
    }
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

pub fn load_elliptic(features: &Path, edgelist: &Path, classes: &Path) -> Result<EllipticDataset> {
    let ffile = features.display().to_string();
    let mut tx_ids = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut values = Vec::new();
    let mut time_steps = Vec::new();
    for rec in reader(features, false)?.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let err = |msg: String| Error::Parse {
            file: ffile.clone(),
            line,
            msg,
        };
        if rec.len() != ELLIPTIC_FEATURE_DIM + 1 {
            return Err(err(format!("expected {} columns, found {}", ELLIPTIC_FEATURE_DIM + 1, rec.len())));
        }
        let id: u64 = rec[0].trim().parse().map_err(|_| err(format!("bad txId {:?}", &rec[0])))?;
        if index.insert(id, tx_ids.len()).is_some() {
            return Err(err(format!("duplicate txId {id}")));
        }
        tx_ids.push(id);
        for (c, cell) in rec.iter().skip(1).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| err(format!("non-numeric feature cell {cell:?} in column {}", c + 2)))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite feature in column {}", c + 2)));
            }
            values.push(v);
        }
        let step = values[values.len() - ELLIPTIC_FEATURE_DIM];
        if step.fract() != 0.0 || !(1.0..=TIME_STEPS as f64).contains(&step) {
            return Err(err(format!("time step {step} outside 1..=49")));
        }
        time_steps.push(step as u8);
    }
    let n = tx_ids.len();

    let efile = edgelist.display().to_string();
    let mut edges = Vec::new();
    let mut rdr = reader(edgelist, false)?;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec);
        let err = |msg: String| Error::Parse {
            file: efile.clone(),
            line,
            msg,
        };
        if rec.len() != 2 {
            return Err(err(format!("expected 2 columns, found {}", rec.len())));
        }
        let parse = |s: &str| s.trim().parse::<u64>();
        let (a, b) = match (parse(&rec[0]), parse(&rec[1])) {
            (Ok(a), Ok(b)) => (a, b),
            _ if k == 0 => continue, // header row
            _ => return Err(err("non-integer txId".into())),
        };
        let lookup = |id: u64| index.get(&id).copied().ok_or_else(|| err(format!("unknown txId {id}")));
        edges.push((lookup(a)?, lookup(b)?));
    }

    let cfile = classes.display().to_string();
    let mut labels: Vec<Option<NodeLabel>> = vec![None; n];
    let mut rows = 0usize;
    for (k, rec) in reader(classes, false)?.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec);
        let err = |msg: String| Error::Parse {
            file: cfile.clone(),
            line,
            msg,
        };
        if rec.len() != 2 {
            return Err(err(format!("expected 2 columns, found {}", rec.len())));
        }
        let id: u64 = match rec[0].trim().parse() {
            Ok(id) => id,
            Err(_) if k == 0 => continue,
            Err(_) => return Err(err(format!("bad txId {:?}", &rec[0]))),
        };
        let label = match rec[1].trim() {
            "1" => NodeLabel::Illicit,
            "2" => NodeLabel::Licit,
            "unknown" => NodeLabel::Unknown,
            other => return Err(err(format!("unknown class tag {other:?}"))),
        };
        let node = *index.get(&id).ok_or_else(|| err(format!("unknown txId {id}")))?;
        if labels[node].replace(label).is_some() {
            return Err(err(format!("duplicate class row for txId {id}")));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            file: cfile,
            line: 0,
            msg: format!("{rows} class rows for {n} feature rows"),
        });
    }
    let labels = labels.into_iter().map(|l| l.expect("every node labeled")).collect();
    Ok(EllipticDataset {
        tx_ids,
        features: FeatureMatrix::new(Matrix::from_vec(n, ELLIPTIC_FEATURE_DIM, values)?)?,
        labels,
        time_steps,
        graph: Graph::new(edges, n, true)?,
    })
}

/// Writes the three files in the public layout (with the usual headers on
/// the edge list and class files).
pub fn write_elliptic(ds: &EllipticDataset, features: &Path, edgelist: &Path, classes: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(features).map_err(|e| Error::io(features, e))?);
    let io = |e| Error::io(features, e);
    for (i, id) in ds.tx_ids.iter().enumerate() {
        write!(w, "{id}").map_err(io)?;
        for v in ds.features.values().row(i) {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let mut w = BufWriter::new(File::create(edgelist).map_err(|e| Error::io(edgelist, e))?);
    let io = |e| Error::io(edgelist, e);
    writeln!(w, "txId1,txId2").map_err(io)?;
    for &(a, b) in ds.graph.edges() {
        writeln!(w, "{},{}", ds.tx_ids[a], ds.tx_ids[b]).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let mut w = BufWriter::new(File::create(classes).map_err(|e| Error::io(classes, e))?);
    let io = |e| Error::io(classes, e);
    writeln!(w, "txId,class").map_err(io)?;
    for (id, l) in ds.tx_ids.iter().zip(&ds.labels) {
        writeln!(w, "{id},{}", l.tag()).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature_line(id: u64, step: u32, base: f64) -> String {
        let mut s = format!("{id},{step}");
        for c in 0..165 {
            s.push_str(&format!(",{}", base + c as f64 * 0.5));
        }
        s
    }

    fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
        let f = dir.join("f.csv");
        let e = dir.join("e.csv");
        let c = dir.join("c.csv");
        let lines = [feature_line(230425980, 1, -0.17), feature_line(5530458, 1, 0.25), feature_line(232022460, 43, 1.0)];
        std::fs::write(&f, lines.join("\n") + "\n").unwrap();
        std::fs::write(&e, "txId1,txId2\n230425980,5530458\n5530458,232022460\n").unwrap();
        std::fs::write(&c, "txId,class\n230425980,unknown\n5530458,1\n232022460,2\n").unwrap();
        (f, e, c)
    }

    #[test]
    fn reconstructs_tiny_graph() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e, c) = write_fixture(dir.path());
        let ds = load_elliptic(&f, &e, &c).unwrap();
        assert_eq!(ds.node_count(), 3);
        assert_eq!(ds.graph.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(ds.labels, vec![NodeLabel::Unknown, NodeLabel::Illicit, NodeLabel::Licit]);
        assert_eq!(ds.time_steps, vec![1, 1, 43]);
        assert_eq!(ds.features.dim(), ELLIPTIC_FEATURE_DIM);
        assert_eq!(ds.features.values().get(1, 0), 1.0);
        assert_eq!(ds.features.values().get(1, 2), 0.75);
        assert_eq!(ds.illicit_count(), 1);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e, c) = write_fixture(dir.path());
        let ds = load_elliptic(&f, &e, &c).unwrap();
        let (f2, e2, c2) = (dir.path().join("f2"), dir.path().join("e2"), dir.path().join("c2"));
        write_elliptic(&ds, &f2, &e2, &c2).unwrap();
        assert_eq!(load_elliptic(&f2, &e2, &c2).unwrap(), ds);
    }

    #[test]
    fn unknown_edge_endpoint_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e, c) = write_fixture(dir.path());
        std::fs::write(&e, "txId1,txId2\n230425980,5530458\n999,5530458\n").unwrap();
        match load_elliptic(&f, &e, &c) {
            Err(Error::Parse { line, msg, file }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("999"));
                assert!(file.ends_with("e.csv"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_and_bad_step() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e, c) = write_fixture(dir.path());
        let text = std::fs::read_to_string(&f).unwrap().replacen(",-0.17", ",abc", 1);
        std::fs::write(&f, text).unwrap();
        assert!(matches!(load_elliptic(&f, &e, &c), Err(Error::Parse { line: 1, .. })));

        let (f, e, c) = write_fixture(dir.path());
        let text = std::fs::read_to_string(&f).unwrap().replacen("232022460,43", "232022460,50", 1);
        std::fs::write(&f, text).unwrap();
        assert!(matches!(load_elliptic(&f, &e, &c), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn class_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e, c) = write_fixture(dir.path());
        std::fs::write(&c, "txId,class\n230425980,unknown\n5530458,1\n").unwrap();
        assert!(matches!(load_elliptic(&f, &e, &c), Err(Error::Parse { .. })));
    }
}
