use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::SeededStream;

/// Fraction of planted labels flipped by [`synth_logreg`].
pub const LABEL_FLIP_RATE: f64 = 0.1;

/// Binary classification data: rows `a_k` of `features`, labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidArgument(format!("label {bad} is not ±1")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    /// Number of samples.
    pub fn m(&self) -> usize {
        self.features.nrows()
    }

    /// Number of features.
    pub fn n(&self) -> usize {
        self.features.ncols()
    }
}

/// Read a LIBSVM-format file into a dense [`Dataset`].
///
/// Each non-blank line is `<label> <idx>:<val> ...` with 1-based, strictly
/// increasing indices. Labels `0`/`-1` map to `-1`, `1`/`+1` map to `+1`.
/// Lines starting with `#` are skipped.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_libsvm(&text, path)
}

/// Parse LIBSVM text; `path` is only used in error messages.
pub fn parse_libsvm(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(lineno, format!("unparseable label `{label_tok}`")))?;
        let label = match label {
            1.0 => 1.0,
            l if l == 0.0 || l == -1.0 => -1.0,
            other => return Err(err(lineno, format!("unsupported label {other}"))),
        };

        let mut row = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(lineno, format!("expected `idx:val`, got `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(lineno, format!("unparseable index `{idx}`")))?;
            if idx == 0 {
                return Err(err(lineno, "indices are 1-based; found 0".into()));
            }
            if idx <= last {
                return Err(err(
                    lineno,
                    format!("index {idx} does not increase (previous {last})"),
                ));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(lineno, format!("unparseable value `{val}`")))?;
            if !val.is_finite() {
                return Err(err(lineno, format!("non-finite value `{val}`")));
            }
            last = idx;
            row.push((idx - 1, val));
        }
        n = n.max(last);
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n == 0 {
        return Err(err(1, "no features in any row".into()));
    }

    let mut features = DMatrix::zeros(rows.len(), n);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            features[(i, j)] = v;
        }
    }
    Dataset::new(features, DVector::from_vec(labels))
}

/// Deterministic synthetic logistic-regression data.
///
/// Draw order from [`SeededStream`]`::new(seed)`: first `n` normals for the
/// planted separator `w`; then for each row, `n` normals for the features
/// followed by one uniform `u`. Rows are scaled to unit norm, the label is
/// `+1` if `⟨a, w⟩ ≥ 0` and `-1` otherwise, and it is flipped when
/// `u < 0.1`.
pub fn synth_logreg(seed: u64, m: usize, n: usize) -> Result<Dataset> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs m, n >= 1 (got m = {m}, n = {n})"
        )));
    }
    let mut stream = SeededStream::new(seed);
    let w = DVector::from_vec(stream.normals(n));
    let mut features = DMatrix::zeros(m, n);
    let mut labels = DVector::zeros(m);
    for i in 0..m {
        let mut row = DVector::from_vec(stream.normals(n));
        let u = stream.uniform();
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        } else {
            row[0] = 1.0;
        }
        let mut label = if row.dot(&w) >= 0.0 { 1.0 } else { -1.0 };
        if u < LABEL_FLIP_RATE {
            label = -label;
        }
        features.set_row(i, &row.transpose());
        labels[i] = label;
    }
    Dataset::new(features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse(text: &str) -> Result<Dataset> {
        parse_libsvm(text, Path::new("test.svm"))
    }

    #[test]
    fn single_line() {
        let d = parse("+1 1:0.5 3:-2.0\n").unwrap();
        assert_eq!(d.m(), 1);
        assert_eq!(d.n(), 3);
        assert_eq!(
            d.features().row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.5, 0.0, -2.0]
        );
        assert_eq!(d.labels()[0], 1.0);
    }

    #[test]
    fn zero_label_maps_to_minus_one() {
        let d = parse("0 2:1\n").unwrap();
        assert_eq!(d.labels()[0], -1.0);
        assert_eq!(
            d.features().row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0]
        );
    }

    #[test]
    fn ragged_rows_densify_to_max_index() {
        let d = parse("1 1:1\n-1 4:2\n\n# comment\n1 2:3 3:4\n").unwrap();
        assert_eq!((d.m(), d.n()), (3, 4));
        assert_eq!(d.features()[(1, 3)], 2.0);
        assert_eq!(d.labels().as_slice(), &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        match parse("1 1:1\n1 3:1 2:1\n") {
            Err(Error::Format { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("does not increase"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
        assert!(matches!(
            parse("1 0:1\n"),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(parse("1 a:1\n"), Err(Error::Format { .. })));
        assert!(matches!(parse("1 1-1\n"), Err(Error::Format { .. })));
        assert!(matches!(parse("2 1:1\n"), Err(Error::Format { .. })));
        assert!(matches!(parse("x 1:1\n"), Err(Error::Format { .. })));
        assert!(matches!(parse("1 1:nan\n"), Err(Error::Format { .. })));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(Error::EmptyDataset)));
        assert!(matches!(
            parse("\n# only comments\n"),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn load_from_disk() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "+1 1:0.5 3:-2.0").unwrap();
        writeln!(f, "-1 2:1.5").unwrap();
        let d = load_libsvm(f.path()).unwrap();
        assert_eq!((d.m(), d.n()), (2, 3));
        assert!(load_libsvm("/nonexistent/file.svm").is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_normalized() {
        let a = synth_logreg(1, 3, 2).unwrap();
        let b = synth_logreg(1, 3, 2).unwrap();
        assert_eq!(a, b);
        for row in a.features().row_iter() {
            assert!((row.norm() - 1.0).abs() <= 1e-12);
        }
        assert!(synth_logreg(1, 0, 2).is_err());
    }

    #[test]
    fn synthetic_has_both_classes() {
        let d = synth_logreg(7, 200, 20).unwrap();
        let pos = d.labels().iter().filter(|&&y| y > 0.0).count();
        assert!(pos > 0 && pos < 200, "{pos}");
    }
}
