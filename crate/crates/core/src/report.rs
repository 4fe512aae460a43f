//! Plain-text reports: `key=value` lines and aligned tables.

use std::fmt::{self, Display, Write as _};

use crate::error::{Error, Result};

/// Ordered `key=value` pairs. Keys may not contain `=` or whitespace and
/// values may not contain newlines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        let key = key.into();
        debug_assert!(!key.contains('=') && !key.contains(char::is_whitespace), "bad key {key:?}");
        let value = value.to_string();
        debug_assert!(!value.contains('\n'));
        self.entries.push((key, value));
        self
    }

    pub fn extend(&mut self, other: &KeyValues) -> &mut Self {
        self.entries.extend(other.entries.iter().cloned());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses the output of `Display`. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_string(),
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            kv.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(kv)
    }
}

impl Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Align {
    Left,
    Right,
}

/// A text table with a header row. Columns are padded to their widest cell.
#[derive(Clone, Debug)]
pub struct Table {
    headers: Vec<String>,
    align: Vec<Align>,
    rows: Vec<Vec<String>>,
}

impl Table {
    /// First column left-aligned, the rest right-aligned.
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        let headers: Vec<String> = headers.into_iter().map(Into::into).collect();
        let align = (0..headers.len())
            .map(|i| if i == 0 { Align::Left } else { Align::Right })
            .collect();
        Table {
            headers,
            align,
            rows: Vec::new(),
        }
    }

    pub fn align(mut self, column: usize, align: Align) -> Self {
        self.align[column] = align;
        self
    }

    pub fn row<S: ToString>(&mut self, cells: impl IntoIterator<Item = S>) -> &mut Self {
        let mut cells: Vec<String> = cells.into_iter().map(|c| c.to_string()).collect();
        cells.resize(self.headers.len(), String::new());
        self.rows.push(cells);
        self
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }
}

impl Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, cell) in cells.iter().enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let w = widths[i];
                let _ = match self.align[i] {
                    Align::Left => write!(s, "{cell:<w$}"),
                    Align::Right => write!(s, "{cell:>w$}"),
                };
            }
            s.trim_end().to_string()
        };
        writeln!(f, "{}", line(&self.headers))?;
        let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
        writeln!(f, "{}", "-".repeat(total))?;
        for row in &self.rows {
            writeln!(f, "{}", line(row))?;
        }
        Ok(())
    }
}

/// `mean ± std` with a fixed number of decimals.
pub fn mean_std(mean: f64, std: f64, decimals: usize) -> String {
    format!("{mean:.decimals$} ± {std:.decimals$}")
}

/// Population mean and standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_round_trip() {
        let mut kv = KeyValues::new();
        kv.push("seed", 3).push("err.mean", 0.125).push("name", "constant init");
        let text = kv.to_string();
        assert_eq!(text, "seed=3\nerr.mean=0.125\nname=constant init\n");
        let back = KeyValues::parse(&text, "mem").unwrap();
        assert_eq!(back, kv);
        assert_eq!(back.get_f64("err.mean"), Some(0.125));
    }

    #[test]
    fn parse_names_bad_line() {
        let err = KeyValues::parse("a=1\n\nnonsense\n", "r.txt").unwrap_err();
        assert_eq!(err.to_string(), "r.txt:3: expected key=value, got `nonsense`");
    }

    #[test]
    fn table_aligns_columns() {
        let mut t = Table::new(["op", "macs"]);
        t.row(["depthwise", "9216"]).row(["relu", "0"]);
        assert_eq!(t.to_string(), "op         macs\n---------------\ndepthwise  9216\nrelu          0\n");
    }

    #[test]
    fn mean_std_is_population() {
        let (m, s) = mean_and_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_std(m, s, 2), "2.00 ± 1.00");
    }
}
