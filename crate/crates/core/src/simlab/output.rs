//! Long-format CSV and JSON summaries of simulation results.

use std::io::Write;

use super::campaign::{Records, SimResult};
use crate::error::Result;

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

impl SimResult {
    /// `(n, beta, rep, metric, value)` rows in record order.
    pub fn long_rows(&self) -> Vec<(usize, f64, usize, String, String)> {
        let mut rows = Vec::new();
        match &self.records {
            Records::Vimp(rs) => {
                for r in rs {
                    let metrics = [
                        ("seed", r.seed.to_string()),
                        ("subsample_size", r.subsample_size.to_string()),
                        ("v_hat", r.v_hat.to_string()),
                        ("v_tilde", r.v_tilde.to_string()),
                        ("c_hat", r.c_hat.to_string()),
                        ("sigma_s_hat", r.sigma_s_hat.to_string()),
                        ("hit_raw", flag(r.hit_raw)),
                        ("hit_corrected", flag(r.hit_corrected)),
                        ("scaled_error", r.scaled_error.to_string()),
                        ("floor_fraction", r.floor_fraction.to_string()),
                    ];
                    rows.extend(
                        metrics
                            .into_iter()
                            .map(|(m, v)| (r.n, r.beta, r.rep, m.to_string(), v)),
                    );
                }
            }
            Records::Probe(rs) => {
                for r in rs {
                    let metrics = [
                        ("seed", r.seed.to_string()),
                        ("subsample_size", r.subsample_size.to_string()),
                        ("q_hat", r.q_hat.to_string()),
                        ("q_true", r.q_true.to_string()),
                        ("error", (r.q_hat - r.q_true).to_string()),
                        ("sigma_hat", r.sigma_hat.to_string()),
                        ("z", r.z.to_string()),
                        ("hit", flag(r.hit)),
                        ("degenerate", flag(r.degenerate)),
                    ];
                    rows.extend(
                        metrics
                            .into_iter()
                            .map(|(m, v)| (r.n, r.beta, r.rep, format!("probe{}.{m}", r.probe), v)),
                    );
                }
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "beta", "rep", "metric", "value"])?;
        for (n, beta, rep, metric, value) in self.long_rows() {
            w.write_record([
                n.to_string(),
                beta.to_string(),
                rep.to_string(),
                metric,
                value,
            ])?;
        }
        w.flush()
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }
}
