//! Step-indexed CSV tables. Floats are written with 17 significant digits,
//! which round-trips every `f64`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Column names after `t`.
    pub names: Vec<String>,
    pub t: Vec<usize>,
    /// One vector per named column, each of length `t.len()`.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(names: &[&str], columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            bail!("{} names for {} columns", names.len(), columns.len());
        }
        let len = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != len) {
            bail!("columns have different lengths");
        }
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            t: (0..len).collect(),
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["t".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (i, t) in self.t.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(self.columns.iter().map(|c| format!("{:.16e}", c[i])));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") {
            bail!("first column must be `t`");
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut t = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (line, record) in r.records().enumerate() {
            let record = record?;
            t.push(
                record[0]
                    .parse()
                    .with_context(|| format!("row {}: bad step `{}`", line + 1, &record[0]))?,
            );
            for (c, field) in columns.iter_mut().zip(record.iter().skip(1)) {
                c.push(
                    field
                        .parse()
                        .with_context(|| format!("row {}: bad number `{field}`", line + 1))?,
                );
            }
        }
        Ok(Self { names, t, columns })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_csv(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Per-column deviations between two tables on the same step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `(reference column, candidate column, max |a - b|)`.
    pub columns: Vec<(String, String, f64)>,
    /// Absolute deviation per step, one column per matched pair.
    pub per_step: Table,
    pub tolerance: f64,
    pub passed: bool,
}

impl Comparison {
    pub fn max_deviation(&self) -> f64 {
        self.columns.iter().map(|c| c.2).fold(0.0, f64::max)
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        for (a, b, dev) in &self.columns {
            out += &format!("{a} vs {b}: max deviation {dev:.6e}\n");
        }
        out += &format!(
            "{} (max deviation {:.6e}, tolerance {:.6e})\n",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_deviation(),
            self.tolerance
        );
        out
    }
}

/// Finds the candidate column for `name`: the same name, `name_mean`, or
/// the name without a `_theta` suffix plus `_mean`.
fn counterpart<'a>(name: &str, candidate: &'a Table) -> Option<&'a str> {
    let base = name.strip_suffix("_theta").unwrap_or(name);
    [name.to_string(), format!("{name}_mean"), format!("{base}_mean")]
        .into_iter()
        .find_map(|c| candidate.names.iter().find(|n| **n == c))
        .map(String::as_str)
}

pub fn compare(reference: &Table, candidate: &Table, tolerance: f64) -> Result<Comparison> {
    if reference.t != candidate.t {
        bail!(
            "step grids differ: {} rows (t = {:?}..) vs {} rows (t = {:?}..)",
            reference.len(),
            reference.t.first(),
            candidate.len(),
            candidate.t.first()
        );
    }
    let mut columns = Vec::new();
    let mut names = Vec::new();
    let mut devs = Vec::new();
    for (name, a) in reference.names.iter().zip(&reference.columns) {
        let Some(other) = counterpart(name, candidate) else {
            continue;
        };
        let b = candidate.column(other).expect("name was found");
        let dev: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
        let max = dev.iter().cloned().fold(0.0, f64::max);
        let max = if dev.iter().any(|d| d.is_nan()) { f64::NAN } else { max };
        columns.push((name.clone(), other.to_string(), max));
        names.push(format!("{name}_dev"));
        devs.push(dev);
    }
    if columns.is_empty() {
        bail!("no matching columns between the two tables");
    }
    let per_step = Table {
        names,
        t: reference.t.clone(),
        columns: devs,
    };
    let passed = columns.iter().all(|c| c.2 <= tolerance);
    Ok(Comparison {
        columns,
        per_step,
        tolerance,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        Table::new(
            &["m", "C_theta", "cosine"],
            vec![vec![0.1, 0.2], vec![1.0, 1.5], vec![0.1, 1.0 / 3.0]],
        )
        .unwrap()
    }

    #[test]
    fn writes_header_and_digits() {
        let csv = sample().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,m,C_theta,cosine"));
        assert_eq!(
            lines.next(),
            Some("0,1.0000000000000001e-1,1.0000000000000000e0,1.0000000000000001e-1")
        );
    }

    #[test]
    fn compare_maps_sim_columns() {
        let theory = sample();
        let mut sim = Table::new(
            &["m_mean", "m_sd", "C_mean", "cosine_mean"],
            vec![vec![0.1, 0.25], vec![0.0; 2], vec![1.0, 1.5], vec![0.1, 0.3]],
        )
        .unwrap();
        let c = compare(&theory, &sim, 0.04).unwrap();
        assert_eq!(c.columns.len(), 3);
        assert_eq!(c.columns[1].1, "C_mean");
        assert!(!c.passed);
        assert!((c.max_deviation() - 0.05).abs() < 1e-12);
        sim.t[1] = 2;
        assert!(compare(&theory, &sim, 0.04).is_err());
    }
}
