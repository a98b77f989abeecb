//! Input features for the IBM transaction graph.
//!
//! Edge rows: `[ln(1+amount paid), one-hot payment currency, one-hot payment
//! format, timestamp scaled to [0,1]]`. Node rows: `[ln(1+in-degree),
//! ln(1+out-degree), ln(1+total received), ln(1+total paid)]`. Both are
//! standardized with statistics from training examples only.

use std::collections::BTreeSet;

use super::IbmDataset;
use crate::error::Result;
use crate::graph::FeatureMatrix;
use crate::tensor::Matrix;

pub const NODE_FEATURE_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct IbmFeatures {
    pub nodes: FeatureMatrix,
    pub edges: FeatureMatrix,
    pub currencies: Vec<String>,
    pub formats: Vec<String>,
}

fn vocab<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    items.cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Unstandardized edge features plus the currency and format vocabularies.
pub fn raw_edge_features(ds: &IbmDataset) -> (Matrix, Vec<String>, Vec<String>) {
    let currencies = vocab(ds.transactions.iter().map(|t| &t.payment_currency));
    let formats = vocab(ds.transactions.iter().map(|t| &t.payment_format));
    let dim = 1 + currencies.len() + formats.len() + 1;
    let (tmin, tmax) = ds
        .transactions
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t.timestamp), hi.max(t.timestamp)));
    let span = (tmax - tmin).max(0) as f64;
    let mut m = Matrix::zeros(ds.transactions.len(), dim);
    for (e, t) in ds.transactions.iter().enumerate() {
        let row = m.row_mut(e);
        row[0] = t.amount_paid.ln_1p();
        let c = currencies.binary_search(&t.payment_currency).expect("in vocab");
        row[1 + c] = 1.0;
        let f = formats.binary_search(&t.payment_format).expect("in vocab");
        row[1 + currencies.len() + f] = 1.0;
        row[dim - 1] = if span > 0.0 { (t.timestamp - tmin) as f64 / span } else { 0.0 };
    }
    (m, currencies, formats)
}

pub fn raw_node_features(ds: &IbmDataset) -> Matrix {
    let n = ds.node_count();
    let mut m = Matrix::zeros(n, NODE_FEATURE_DIM);
    let mut acc = vec![[0.0f64; NODE_FEATURE_DIM]; n];
    for t in &ds.transactions {
        acc[t.to][0] += 1.0;
        acc[t.from][1] += 1.0;
        acc[t.to][2] += t.amount_received;
        acc[t.from][3] += t.amount_paid;
    }
    for (i, a) in acc.iter().enumerate() {
        for (o, v) in m.row_mut(i).iter_mut().zip(a) {
            *o = v.ln_1p();
        }
    }
    m
}

/// Shifts and scales every column to zero mean and unit variance using the
/// statistics of `reference_rows` only. Constant columns are centered and
/// left unscaled.
pub fn standardize(m: &mut Matrix, reference_rows: &[usize]) {
    if reference_rows.is_empty() {
        return;
    }
    let cols = m.cols();
    let n = reference_rows.len() as f64;
    let mut mean = vec![0.0; cols];
    for &r in reference_rows {
        for (s, v) in mean.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    mean.iter_mut().for_each(|s| *s /= n);
    let mut var = vec![0.0; cols];
    for &r in reference_rows {
        for ((s, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *s += (v - mu) * (v - mu);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    for r in 0..m.rows() {
        for ((v, mu), k) in m.row_mut(r).iter_mut().zip(&mean).zip(&scale) {
            *v = (*v - mu) * k;
        }
    }
}

/// Builds standardized node and edge features. Edge statistics come from
/// `train_edges`; node statistics from the endpoints of those edges.
pub fn featurize_ibm(ds: &IbmDataset, train_edges: &[usize]) -> Result<IbmFeatures> {
    let (mut edges, currencies, formats) = raw_edge_features(ds);
    let mut nodes = raw_node_features(ds);
    standardize(&mut edges, train_edges);
    let mut touched = vec![false; ds.node_count()];
    for &e in train_edges {
        let t = &ds.transactions[e];
        touched[t.from] = true;
        touched[t.to] = true;
    }
    let node_rows: Vec<usize> = (0..ds.node_count()).filter(|&i| touched[i]).collect();
    standardize(&mut nodes, &node_rows);
    Ok(IbmFeatures {
        nodes: FeatureMatrix::new(nodes)?,
        edges: FeatureMatrix::new(edges)?,
        currencies,
        formats,
    })
}
