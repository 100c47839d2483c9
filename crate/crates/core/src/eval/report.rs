//! Result tables, written as CSV and as aligned text.

use crate::error::{Error, Result};

/// C's `%.6g`.
pub fn fmt_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        strip_zeros(format!("{:.*}", (5 - exp) as usize, v))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{sign}{:02}",
            strip_zeros(mantissa.to_string()),
            exp.abs()
        )
    }
}

fn strip_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    /// Value column names (the `method` column is implicit).
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Provenance lines, written after the rows as `# ...`.
    pub footer: Vec<String>,
    /// Mark column minima instead of maxima in the text form.
    pub lower_is_better: bool,
}

impl ReportTable {
    pub fn new(columns: Vec<String>) -> Self {
        ReportTable {
            columns,
            rows: Vec::new(),
            footer: Vec::new(),
            lower_is_better: false,
        }
    }

    pub fn push(&mut self, method: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        self.rows.push(ReportRow {
            method: method.into(),
            values,
        });
        Ok(())
    }

    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.method);
            for &v in &r.values {
                out.push(',');
                out.push_str(&fmt_g6(v));
            }
            out.push('\n');
        }
        for f in &self.footer {
            out.push_str("# ");
            out.push_str(f);
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<ReportTable> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty report".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("method") {
            return Err(Error::InvalidArgument(
                "report header must start with method".into(),
            ));
        }
        let mut table = ReportTable::new(cols.map(str::to_string).collect());
        for line in lines {
            if let Some(f) = line.strip_prefix("# ") {
                table.footer.push(f.to_string());
                continue;
            }
            let mut fields = line.split(',');
            let method = fields.next().unwrap_or_default().to_string();
            let values = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("bad number {f:?} in report row {method:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table.push(method, values)?;
        }
        Ok(table)
    }

    /// Aligned text with the best entry of every column marked `*`.
    /// Negative entries (undefined values) print as `n/a`.
    pub fn to_text(&self) -> String {
        let best: Vec<f64> = (0..self.columns.len())
            .map(|j| {
                let defined = self.rows.iter().map(|r| r.values[j]).filter(|&v| v >= 0.0);
                if self.lower_is_better {
                    defined.fold(f64::INFINITY, f64::min)
                } else {
                    defined.fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .collect();
        let cell = |j: usize, v: f64| {
            if v < 0.0 {
                "n/a".to_string()
            } else {
                format!("{v:.2}{}", if v == best[j] { "*" } else { " " })
            }
        };
        let method_w = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .chain([6])
            .max()
            .unwrap();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                self.rows
                    .iter()
                    .map(|r| cell(j, r.values[j]).len())
                    .chain([c.len()])
                    .max()
                    .unwrap()
            })
            .collect();
        let mut out = format!("{:<method_w$}", "method");
        for (c, w) in self.columns.iter().zip(&widths) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<method_w$}", r.method));
            for (j, w) in widths.iter().enumerate() {
                out.push_str(&format!("  {:>w$}", cell(j, r.values[j])));
            }
            out.push('\n');
        }
        out
    }
}
