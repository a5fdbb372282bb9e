use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Numeric CSV with `# key = value` comment lines ahead of the column header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    /// Comment entries in file order.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table {
            meta: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::shape(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta_value(key)
            .ok_or_else(|| Error::Schema(format!("missing header entry '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::Schema(format!("header entry '{key}' has unreadable value '{raw}'")))
    }

    pub fn meta_map(&self) -> BTreeMap<&str, &str> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k} = {v}").expect("string write");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else { break };
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());
        let columns: Vec<String> = reader
            .headers()
            .map_err(|e| csv_err(&e))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_err(&e))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let row = rec
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad number '{s}'"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table { meta, columns, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Table::parse(&text)
    }
}

fn csv_err(e: &csv::Error) -> Error {
    Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

/// `prefix_1, …, prefix_n`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_meta_and_values() {
        let mut t = Table::new(vec!["a".into(), "b".into()])
            .with_meta("seed", 3)
            .with_meta("flags", "x = 1");
        t.push(vec![0.1, -2.5e-300]).unwrap();
        t.push(vec![f64::MAX, 1.0 / 3.0]).unwrap();
        let back = Table::parse(&t.to_text()).unwrap();
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.meta_parse::<u64>("seed").unwrap(), 3);
        assert_eq!(back.meta_value("flags"), Some("x = 1"));
    }

    #[test]
    fn errors_are_reported() {
        let mut t = Table::new(vec!["a".into()]);
        assert!(t.push(vec![1.0, 2.0]).is_err());
        assert!(matches!(Table::parse("a,b\n1,zz\n"), Err(Error::Parse { .. })));
        assert!(Table::parse("a,b\n1\n").is_err());
        assert!(t.column("missing").is_err());
    }
}
