//! Per-iteration trace rows and their CSV form.

use std::fmt::Write as _;
use std::io::{self, Write};

/// Cumulative oracle calls split by component of a composite objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComponentCounts {
    pub grad_g: u64,
    pub hess_g: u64,
    pub grad_h: u64,
    pub hess_h: u64,
}

/// One row of a solver trace. Call counts are cumulative since the start of
/// the run; `max_grad_norm` and `max_hess_norm` are running maxima over every
/// point at which the solver queried derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub f: f64,
    pub grad_norm: f64,
    /// `‖y_k − x̃_{k−1}‖`; zero on the initial row.
    pub step_radius: f64,
    pub lambda: f64,
    /// The accumulator `A_k`.
    pub a_acc: f64,
    /// Inner iterations spent in iteration `k` (all λ trials).
    pub inner_iters: u64,
    pub n_grad: u64,
    pub n_hess: u64,
    pub max_grad_norm: f64,
    pub max_hess_norm: f64,
    /// Milliseconds since the start of the run; zero unless timing is on.
    pub wall_ms: f64,
    pub components: Option<ComponentCounts>,
}

const BASE_COLUMNS: [&str; 12] = [
    "k",
    "f",
    "grad_norm",
    "step_radius",
    "lambda",
    "A",
    "inner_iters",
    "n_grad",
    "n_hess",
    "max_grad_norm",
    "max_hess_norm",
    "wall_ms",
];

const COMPONENT_COLUMNS: [&str; 4] = ["n_grad_g", "n_hess_g", "n_grad_h", "n_hess_h"];

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

impl TraceRecord {
    pub fn csv_row(&self) -> String {
        let mut out = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.k,
            float(self.f),
            float(self.grad_norm),
            float(self.step_radius),
            float(self.lambda),
            float(self.a_acc),
            self.inner_iters,
            self.n_grad,
            self.n_hess,
            float(self.max_grad_norm),
            float(self.max_hess_norm),
            float(self.wall_ms),
        );
        if let Some(c) = self.components {
            let _ = write!(out, ",{},{},{},{}", c.grad_g, c.hess_g, c.grad_h, c.hess_h);
        }
        out
    }
}

/// Header line for a trace; component columns appear when any row has them.
pub fn csv_header(rows: &[TraceRecord]) -> String {
    let mut cols: Vec<&str> = BASE_COLUMNS.to_vec();
    if rows.iter().any(|r| r.components.is_some()) {
        cols.extend(COMPONENT_COLUMNS);
    }
    cols.join(",")
}

/// Write a trace as CSV: `# key = value` comment lines, the header, one row
/// per record, and a `# error: ...` footer when the run failed.
pub fn write_csv<W: Write>(
    mut w: W,
    meta: &[(String, String)],
    rows: &[TraceRecord],
    error: Option<&str>,
) -> io::Result<()> {
    for (k, v) in meta {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "{}", csv_header(rows))?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    if let Some(e) = error {
        writeln!(w, "# error: {}", e.replace('\n', " "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> TraceRecord {
        TraceRecord {
            k,
            f: 0.25,
            grad_norm: 1.0,
            step_radius: 0.0,
            lambda: 0.0,
            a_acc: 0.0,
            inner_iters: 0,
            n_grad: 1,
            n_hess: 0,
            max_grad_norm: 1.0,
            max_hess_norm: 0.0,
            wall_ms: 0.0,
            components: None,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let meta = vec![("method".to_string(), "hyperfast".to_string())];
        write_csv(&mut buf, &meta, &[row(0)], Some("boom")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# method = hyperfast");
        assert!(lines[1].starts_with("k,f,grad_norm"));
        assert_eq!(lines[2].split(',').count(), 12);
        assert!(lines[2].starts_with("0,2.5000000000000000e-1,"));
        assert_eq!(lines[3], "# error: boom");
    }

    #[test]
    fn component_columns() {
        let mut r = row(1);
        r.components = Some(ComponentCounts {
            grad_g: 1,
            hess_g: 2,
            grad_h: 3,
            hess_h: 4,
        });
        let h = csv_header(&[r.clone()]);
        assert!(h.ends_with("n_grad_g,n_hess_g,n_grad_h,n_hess_h"));
        assert!(r.csv_row().ends_with(",1,2,3,4"));
    }

    #[test]
    fn floats_round_trip() {
        let mut r = row(0);
        r.f = 0.1 + 0.2;
        let f: f64 = r.csv_row().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(f, 0.1 + 0.2);
    }
}
