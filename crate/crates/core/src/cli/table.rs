//! CSV ingestion and output tables.

use std::path::Path;

use crate::error::{Error, Result};
use crate::forest::Dataset;
use crate::quantile::QuantilePrediction;

/// Numeric table read from a headed CSV file.
pub struct Table {
    pub headers: Vec<String>,
    /// Row-major cells.
    pub cells: Vec<f64>,
    pub rows: usize,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Table::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::MalformedCsv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::MalformedCsv("missing header row".into()));
        }
        if let Some(dup) = headers
            .iter()
            .enumerate()
            .find(|(i, h)| headers[..*i].contains(h))
        {
            return Err(Error::Schema(format!("duplicate column '{}'", dup.1)));
        }
        let mut cells = Vec::new();
        let mut rows = 0;
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::MalformedCsv(e.to_string()))?;
            for (value, column) in record.iter().zip(&headers) {
                let v: f64 = value
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| Error::NonNumeric {
                        row: r + 1,
                        column: column.clone(),
                        value: value.to_string(),
                    })?;
                cells.push(v);
            }
            rows += 1;
        }
        Ok(Table {
            headers,
            cells,
            rows,
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn value(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.headers.len() + col]
    }

    /// Splits into covariates (every column but `target`, in file order) and
    /// responses.
    pub fn into_dataset(self, target: &str) -> Result<Dataset> {
        let t = self
            .column_index(target)
            .ok_or_else(|| Error::Schema(format!("target column '{target}' not found")))?;
        let names: Vec<String> = self
            .headers
            .iter()
            .filter(|h| *h != target)
            .cloned()
            .collect();
        if names.is_empty() {
            return Err(Error::Schema(
                "no covariate columns besides the target".into(),
            ));
        }
        let y = (0..self.rows).map(|i| self.value(i, t)).collect();
        let x = (0..self.rows)
            .flat_map(|i| {
                (0..self.headers.len())
                    .filter(move |&j| j != t)
                    .map(move |j| (i, j))
            })
            .map(|(i, j)| self.value(i, j))
            .collect();
        Dataset::new(x, names.len(), y, names).map_err(|e| match e {
            Error::Data(m) | Error::InvalidInput(m) => Error::Schema(m),
            other => other,
        })
    }

    /// Query rows with columns picked by name in model order. Extra columns
    /// are ignored.
    pub fn queries(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::Schema(format!("query file lacks column '{n}'")))
            })
            .collect::<Result<_>>()?;
        Ok((0..self.rows)
            .map(|i| idx.iter().map(|&j| self.value(i, j)).collect())
            .collect())
    }
}

pub fn predictions_csv(rows: &[QuantilePrediction]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = ["q_hat", "eta_hat", "f_hat", "ci_low", "ci_high"];
    w.write_record(header).expect("in-memory write");
    for p in rows {
        w.write_record([p.q_hat, p.eta_hat, p.f_hat, p.ci_low, p.ci_high].map(|v| v.to_string()))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn per_point_csv(values: &[f64]) -> String {
    let mut out = String::from("eval_index,loss_difference\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_splits_target() {
        let t = Table::parse(b"a, y ,b\n1,2,3\n4,5,6\n").unwrap();
        assert_eq!(t.headers, vec!["a", "y", "b"]);
        let d = t.into_dataset("y").unwrap();
        assert_eq!(d.y(), &[2.0, 5.0]);
        assert_eq!(d.row(1), &[4.0, 6.0]);
        assert_eq!(d.feature_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn error_classes() {
        assert!(matches!(
            Table::parse(b"a,y\n1,2\n3\n"),
            Err(Error::MalformedCsv(_))
        ));
        assert!(matches!(
            Table::parse(b"a,y\n1,2\n3,x\n"),
            Err(Error::NonNumeric { row: 2, .. })
        ));
        assert!(matches!(
            Table::parse(b"a,y\n1,NaN\n"),
            Err(Error::NonNumeric { .. })
        ));
        assert!(matches!(Table::parse(b"a,a\n1,2\n"), Err(Error::Schema(_))));
        let t = Table::parse(b"a,b\n1,2\n3,4\n").unwrap();
        assert!(matches!(t.into_dataset("y"), Err(Error::Schema(_))));
        let t = Table::parse(b"a,y\n1,2\n").unwrap();
        assert!(matches!(t.into_dataset("y"), Err(Error::Schema(_))));
    }

    #[test]
    fn queries_follow_model_order() {
        let t = Table::parse(b"b,extra,a\n1,9,2\n").unwrap();
        let q = t.queries(&["a".into(), "b".into()]).unwrap();
        assert_eq!(q, vec![vec![2.0, 1.0]]);
        assert!(matches!(t.queries(&["c".into()]), Err(Error::Schema(_))));
    }
}
