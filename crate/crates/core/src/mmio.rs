//! Matrix Market reading and writing (coordinate and array formats, real).

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

fn fmt(v: f64) -> String {
    // 17 significant digits round-trip every f64
    format!("{v:.16e}")
}

pub fn write_sparse(path: impl AsRef<Path>, m: &CsrMatrix) -> Result<()> {
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (j, v) in cols.iter().zip(vals) {
            let _ = writeln!(s, "{} {} {}", i + 1, j + 1, fmt(*v));
        }
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_dense(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(s, "{} {}", m.nrows(), m.ncols());
    // column-major, as the format prescribes
    for v in m.iter() {
        s.push_str(&fmt(*v));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    write_dense(path, &DMatrix::from_column_slice(v.len(), 1, v))
}

enum Parsed {
    Sparse(CsrMatrix),
    Dense(DMatrix<f64>),
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse(text: &str, origin: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hl, header) = lines.next().ok_or_else(|| Error::EmptyMatrix(origin.into()))?;
    let h: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" {
        return Err(perr(hl, "missing %%MatrixMarket matrix header"));
    }
    let coordinate = match h[2].as_str() {
        "coordinate" => true,
        "array" => false,
        f => return Err(perr(hl, format!("unsupported format `{f}`"))),
    };
    if h[3] != "real" && h[3] != "integer" {
        return Err(perr(hl, format!("unsupported field `{}`", h[3])));
    }
    let symmetry = h[4].as_str();
    if !matches!(symmetry, "general" | "symmetric" | "skew-symmetric") {
        return Err(perr(hl, format!("unsupported symmetry `{symmetry}`")));
    }
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('%'));
    let (sl, size) = body.next().ok_or_else(|| Error::EmptyMatrix(origin.into()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| perr(sl, format!("bad size token `{t}`"))))
        .collect::<Result<_>>()?;
    let num = |l: usize, t: &str| -> Result<f64> {
        t.parse::<f64>().map_err(|_| perr(l, format!("bad number `{t}`")))
    };
    if coordinate {
        if dims.len() != 3 {
            return Err(perr(sl, "coordinate size line needs rows, cols, entries"));
        }
        let (nr, nc, nnz) = (dims[0], dims[1], dims[2]);
        let mut t = Vec::with_capacity(nnz);
        for (l, line) in body.by_ref().take(nnz) {
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() < 3 {
                return Err(perr(l, "entry needs row, col, value"));
            }
            let i: usize = tok[0].parse().map_err(|_| perr(l, "bad row index"))?;
            let j: usize = tok[1].parse().map_err(|_| perr(l, "bad column index"))?;
            if i == 0 || j == 0 || i > nr || j > nc {
                return Err(perr(l, format!("index ({i}, {j}) out of range")));
            }
            let v = num(l, tok[2])?;
            t.push((i - 1, j - 1, v));
            if i != j {
                match symmetry {
                    "symmetric" => t.push((j - 1, i - 1, v)),
                    "skew-symmetric" => t.push((j - 1, i - 1, -v)),
                    _ => {}
                }
            }
        }
        let read = t.len();
        if nnz > 0 && read == 0 {
            return Err(Error::EmptyMatrix(origin.into()));
        }
        if symmetry == "general" && read != nnz {
            return Err(perr(sl, format!("expected {nnz} entries, found {read}")));
        }
        Ok(Parsed::Sparse(CsrMatrix::from_triplets(nr, nc, &t)?))
    } else {
        if dims.len() != 2 {
            return Err(perr(sl, "array size line needs rows, cols"));
        }
        if symmetry != "general" {
            return Err(perr(sl, "only general array matrices are supported"));
        }
        let (nr, nc) = (dims[0], dims[1]);
        let mut vals = Vec::with_capacity(nr * nc);
        for (l, line) in body {
            for tok in line.split_whitespace() {
                vals.push(num(l, tok)?);
            }
        }
        if vals.is_empty() && nr * nc > 0 {
            return Err(Error::EmptyMatrix(origin.into()));
        }
        if vals.len() != nr * nc {
            return Err(perr(sl, format!("expected {} values, found {}", nr * nc, vals.len())));
        }
        Ok(Parsed::Dense(DMatrix::from_column_slice(nr, nc, &vals)))
    }
}

fn read(path: &Path) -> Result<Parsed> {
    let text = fs::read_to_string(path)?;
    parse(&text, &path.display().to_string())
}

/// Reads a matrix in either format as a sparse matrix.
pub fn read_sparse(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    Ok(match read(path.as_ref())? {
        Parsed::Sparse(m) => m,
        Parsed::Dense(d) => CsrMatrix::from_dense(&d),
    })
}

/// Reads a matrix in either format as a dense matrix.
pub fn read_dense(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    Ok(match read(path.as_ref())? {
        Parsed::Sparse(m) => m.to_dense(),
        Parsed::Dense(d) => d,
    })
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let d = read_dense(path)?;
    if d.ncols() != 1 && d.nrows() != 1 {
        return Err(Error::InvalidArgument(format!(
            "expected a vector, found a {}x{} matrix",
            d.nrows(),
            d.ncols()
        )));
    }
    Ok(d.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_carry_line() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1.0\n";
        match parse(text, "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {:?}", other.err()),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let text = "%%MatrixMarket matrix coordinate real general\n";
        assert!(matches!(parse(text, "t"), Err(Error::EmptyMatrix(_))));
        let text = "%%MatrixMarket matrix coordinate real general\n3 3 2\n";
        assert!(matches!(parse(text, "t"), Err(Error::EmptyMatrix(_))));
    }

    #[test]
    fn symmetric_storage_expands() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2.0\n2 1 -1.0\n";
        let Parsed::Sparse(m) = parse(text, "t").unwrap() else { panic!() };
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), -1.0);
    }
}
