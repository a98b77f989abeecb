//! IBM AML (HI-Small layout) transactions + laundering-attempts files.
//!
//! Transactions file columns: `Timestamp, From Bank, Account, To Bank,
//! Account, Amount Received, Receiving Currency, Amount Paid, Payment
//! Currency, Payment Format, Is Laundering`. The patterns file wraps rows of
//! the same layout in `BEGIN LAUNDERING ATTEMPT - <TYPE>` / `END ...` lines.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{EdgeLabel, IbmDataset, Pattern, Transaction};
use crate::error::{Error, Result};
use crate::graph::Graph;

const TIME_FORMAT: &str = "%Y/%m/%d %H:%M";
pub const TRANSACTIONS_HEADER: &str =
    "Timestamp,From Bank,Account,To Bank,Account,Amount Received,Receiving Currency,Amount Paid,Payment Currency,Payment Format,Is Laundering";

pub fn parse_timestamp(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s.trim(), TIME_FORMAT)
        .ok()
        .map(|t| t.and_utc().timestamp() / 60)
}

pub fn format_timestamp(minutes: i64) -> String {
    DateTime::from_timestamp(minutes * 60, 0)
        .expect("timestamp in range")
        .naive_utc()
        .format(TIME_FORMAT)
        .to_string()
}

/// A parsed row before account ids are interned.
#[derive(Debug, Clone, PartialEq)]
struct RawRow {
    timestamp: i64,
    from: (String, String),
    to: (String, String),
    amount_received: f64,
    receiving_currency: String,
    amount_paid: f64,
    payment_currency: String,
    payment_format: String,
    laundering: bool,
}

type RowKey = (i64, (String, String), (String, String), u64, String, u64, String, String);

impl RawRow {
    fn key(&self) -> RowKey {
        (
            self.timestamp,
            self.from.clone(),
            self.to.clone(),
            self.amount_received.to_bits(),
            self.receiving_currency.clone(),
            self.amount_paid.to_bits(),
            self.payment_currency.clone(),
            self.payment_format.clone(),
        )
    }
}

fn parse_row<'r>(fields: impl Iterator<Item = &'r str>, file: &str, line: usize) -> Result<RawRow> {
    let f: Vec<&str> = fields.map(str::trim).collect();
    let err = |msg: String| Error::Parse {
        file: file.to_string(),
        line,
        msg,
    };
    if f.len() != 11 {
        return Err(err(format!("expected 11 columns, found {}", f.len())));
    }
    let timestamp = parse_timestamp(f[0]).ok_or_else(|| err(format!("bad timestamp {:?}", f[0])))?;
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(format!("non-numeric {what} {s:?}")));
    let amount_received = num(f[5], "amount received")?;
    let amount_paid = num(f[7], "amount paid")?;
    if !amount_received.is_finite() || !amount_paid.is_finite() || amount_received < 0.0 || amount_paid < 0.0 {
        return Err(err("amounts must be finite and non-negative".into()));
    }
    let laundering = match f[10] {
        "0" => false,
        "1" => true,
        other => return Err(err(format!("laundering flag must be 0 or 1, got {other:?}"))),
    };
    Ok(RawRow {
        timestamp,
        from: (f[1].to_string(), f[2].to_string()),
        to: (f[3].to_string(), f[4].to_string()),
        amount_received,
        receiving_currency: f[6].to_string(),
        amount_paid,
        payment_currency: f[8].to_string(),
        payment_format: f[9].to_string(),
        laundering,
    })
}

/// Reads the attempts file into `(pattern, rows)` groups.
fn read_attempts(path: &Path) -> Result<Vec<(Pattern, Vec<RawRow>)>> {
    let file = path.display().to_string();
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut out = Vec::new();
    let mut current: Option<(Pattern, Vec<RawRow>)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("BEGIN LAUNDERING ATTEMPT") {
            let tag = rest.trim_start_matches([' ', '-']).trim();
            let pattern = Pattern::from_attempt_tag(tag).ok_or_else(|| Error::UnknownPattern(tag.to_string()))?;
            if current.is_some() {
                return Err(Error::Parse {
                    file,
                    line: lineno,
                    msg: "nested BEGIN LAUNDERING ATTEMPT".into(),
                });
            }
            current = Some((pattern, Vec::new()));
        } else if trimmed.starts_with("END LAUNDERING ATTEMPT") {
            match current.take() {
                Some(group) => out.push(group),
                None => {
                    return Err(Error::Parse {
                        file,
                        line: lineno,
                        msg: "END without BEGIN".into(),
                    })
                }
            }
        } else {
            let row = parse_row(trimmed.split(','), &file, lineno)?;
            match current.as_mut() {
                Some((_, rows)) => rows.push(row),
                None => {
                    return Err(Error::Parse {
                        file,
                        line: lineno,
                        msg: "transaction outside a laundering attempt".into(),
                    })
                }
            }
        }
    }
    if current.is_some() {
        return Err(Error::Parse {
            file,
            line: 0,
            msg: "unterminated laundering attempt".into(),
        });
    }
    Ok(out)
}

/// Loads transactions as a directed multigraph over accounts. Laundering
/// rows inside a delimited attempt get that attempt's pattern; the rest are
/// `NotClassified`.
pub fn load_ibm_hismall(transactions: &Path, patterns: &Path) -> Result<IbmDataset> {
    let file = transactions.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(transactions)
        .map_err(|e| Error::Parse {
            file: file.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut node_of: HashMap<(String, String), usize> = HashMap::new();
    let mut accounts = Vec::new();
    let mut intern = |acct: (String, String)| -> usize {
        if let Some(&id) = node_of.get(&acct) {
            return id;
        }
        let id = accounts.len();
        accounts.push(acct.clone());
        node_of.insert(acct, id);
        id
    };
    let mut transactions_out = Vec::new();
    let mut laundering_rows: HashMap<RowKey, Vec<usize>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = parse_row(rec.iter(), &file, line)?;
        let idx = transactions_out.len();
        if row.laundering {
            laundering_rows.entry(row.key()).or_default().push(idx);
        }
        let from = intern(row.from);
        let to = intern(row.to);
        transactions_out.push(Transaction {
            timestamp: row.timestamp,
            from,
            to,
            amount_received: row.amount_received,
            receiving_currency: row.receiving_currency,
            amount_paid: row.amount_paid,
            payment_currency: row.payment_currency,
            payment_format: row.payment_format,
            laundering: row.laundering,
        });
    }

    let mut labels: Vec<EdgeLabel> = transactions_out
        .iter()
        .map(|t| {
            if t.laundering {
                EdgeLabel::NotClassified
            } else {
                EdgeLabel::Legitimate
            }
        })
        .collect();
    let mut unmatched = 0usize;
    for (pattern, rows) in read_attempts(patterns)? {
        for row in rows {
            let slot = laundering_rows.get_mut(&row.key()).and_then(|v| {
                // first occurrence not yet claimed by an attempt
                let pos = v.iter().position(|&e| labels[e] == EdgeLabel::NotClassified)?;
                Some(v[pos])
            });
            match slot {
                Some(e) => labels[e] = EdgeLabel::Pattern(pattern),
                None => unmatched += 1,
            }
        }
    }
    if unmatched > 0 {
        log::warn!("{unmatched} attempt rows did not match a laundering transaction");
    }
    let edges = transactions_out.iter().map(|t| (t.from, t.to)).collect();
    let graph = Graph::new(edges, accounts.len(), true)?;
    Ok(IbmDataset {
        accounts,
        transactions: transactions_out,
        labels,
        graph,
    })
}

fn row_string(ds: &IbmDataset, t: &Transaction) -> String {
    let (fb, fa) = &ds.accounts[t.from];
    let (tb, ta) = &ds.accounts[t.to];
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        format_timestamp(t.timestamp),
        fb,
        fa,
        tb,
        ta,
        t.amount_received,
        t.receiving_currency,
        t.amount_paid,
        t.payment_currency,
        t.payment_format,
        u8::from(t.laundering)
    )
}

/// Writes `ds` in the transactions + attempts layout. Each maximal run of
/// consecutive same-pattern edges becomes one attempt block; `groups`, when
/// given, overrides this with explicit per-attempt edge lists.
pub fn write_ibm(ds: &IbmDataset, transactions: &Path, patterns: &Path, groups: Option<&[(Pattern, Vec<usize>)]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(transactions).map_err(|e| Error::io(transactions, e))?);
    let io = |e| Error::io(transactions, e);
    writeln!(w, "{TRANSACTIONS_HEADER}").map_err(io)?;
    for t in &ds.transactions {
        writeln!(w, "{}", row_string(ds, t)).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let derived;
    let groups = match groups {
        Some(g) => g,
        None => {
            let mut g: Vec<(Pattern, Vec<usize>)> = Vec::new();
            for (e, l) in ds.labels.iter().enumerate() {
                if let EdgeLabel::Pattern(p) = *l {
                    match g.last_mut() {
                        Some((lp, ids)) if *lp == p && ids.last() == Some(&(e - 1)) => ids.push(e),
                        _ => g.push((p, vec![e])),
                    }
                }
            }
            derived = g;
            &derived
        }
    };
    let mut w = BufWriter::new(File::create(patterns).map_err(|e| Error::io(patterns, e))?);
    let io = |e| Error::io(patterns, e);
    for (p, ids) in groups {
        let tag = match p {
            Pattern::Cycle | Pattern::Random => format!("{}:  Max {} hops", p.attempt_tag(), ids.len()),
            _ => p.attempt_tag().to_string(),
        };
        writeln!(w, "BEGIN LAUNDERING ATTEMPT - {tag}").map_err(io)?;
        for &e in ids {
            writeln!(w, "{}", row_string(ds, &ds.transactions[e])).map_err(io)?;
        }
        writeln!(w, "END LAUNDERING ATTEMPT - {tag}").map_err(io)?;
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TX: &str = "\
Timestamp,From Bank,Account,To Bank,Account,Amount Received,Receiving Currency,Amount Paid,Payment Currency,Payment Format,Is Laundering
2022/09/01 00:20,010,8000EBD30,010,8000EBD30,3697.34,US Dollar,3697.34,US Dollar,Reinvestment,0
2022/09/01 00:20,3208,8000F4580,001,8000F5340,0.01,US Dollar,0.01,US Dollar,Cheque,0
2022/09/01 00:00,3402,80021DAD0,3402,80021DAD0,14675.57,US Dollar,14675.57,US Dollar,Reinvestment,0
2022/09/01 05:14,00952,8139F54E0,0111632,8062C56E0,5331.44,Euro,5331.44,Euro,ACH,1
2022/09/01 06:00,00952,8139F54E0,0118693,823D41C10,4123.00,Euro,4123.00,Euro,ACH,1
2022/09/02 09:00,001,8000F5340,010,8000EBD30,77.50,Yuan,77.50,Yuan,Cash,1
";
    const PAT: &str = "\
BEGIN LAUNDERING ATTEMPT - FAN-OUT
2022/09/01 05:14,00952,8139F54E0,0111632,8062C56E0,5331.44,Euro,5331.44,Euro,ACH,1
2022/09/01 06:00,00952,8139F54E0,0118693,823D41C10,4123.00,Euro,4123.00,Euro,ACH,1
END LAUNDERING ATTEMPT - FAN-OUT

";

    fn fixture(dir: &Path, tx: &str, pat: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let t = dir.join("tx.csv");
        let p = dir.join("patterns.txt");
        std::fs::write(&t, tx).unwrap();
        std::fs::write(&p, pat).unwrap();
        (t, p)
    }

    #[test]
    fn loads_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (t, p) = fixture(dir.path(), TX, PAT);
        let ds = load_ibm_hismall(&t, &p).unwrap();
        assert_eq!(ds.edge_count(), 6);
        assert_eq!(ds.node_count(), 7);
        assert_eq!(ds.graph.edge(0), (0, 0));
        assert_eq!(ds.labels[3], EdgeLabel::Pattern(Pattern::FanOut));
        assert_eq!(ds.labels[4], EdgeLabel::Pattern(Pattern::FanOut));
        assert_eq!(ds.labels[5], EdgeLabel::NotClassified);
        assert_eq!(ds.laundering_count(), 3);
        assert_eq!(ds.not_classified_count(), 1);
        assert_eq!(ds.transactions[3].payment_format, "ACH");
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (t, p) = fixture(dir.path(), TX, PAT);
        let ds = load_ibm_hismall(&t, &p).unwrap();
        let t2 = dir.path().join("tx2.csv");
        let p2 = dir.path().join("p2.txt");
        write_ibm(&ds, &t2, &p2, None).unwrap();
        assert_eq!(load_ibm_hismall(&t2, &p2).unwrap(), ds);
    }

    #[test]
    fn unknown_attempt_type_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (t, p) = fixture(dir.path(), TX, "BEGIN LAUNDERING ATTEMPT - LOOP\nEND LAUNDERING ATTEMPT - LOOP\n");
        assert!(matches!(load_ibm_hismall(&t, &p), Err(Error::UnknownPattern(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let bad = TX.replace("3697.34,US Dollar,3697.34", "abc,US Dollar,3697.34");
        let (t, p) = fixture(dir.path(), &bad, PAT);
        match load_ibm_hismall(&t, &p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn timestamps_round_trip() {
        let m = parse_timestamp("2022/09/01 05:14").unwrap();
        assert_eq!(format_timestamp(m), "2022/09/01 05:14");
        assert_eq!(parse_timestamp("2022/09/01 05:15").unwrap() - m, 1);
    }
}
