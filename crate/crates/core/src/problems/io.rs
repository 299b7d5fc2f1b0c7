//! Problem file I/O: Matrix Market array format or a dimension-headed CSV
//! for the numeric payloads, plus a JSON sidecar with the metadata.
//!
//! A problem saved under base path `p` produces `p.json` (sidecar
//! {m, n, s, seed, noise_level, format}) and `p.A`, `p.b`, `p.xhat`,
//! `p.bnoisy` payload files with extension `.mtx` or `.csv`. Floats are
//! written with Rust's shortest round-trip formatting, so a save/load
//! round trip is bitwise lossless. On load the payload format is sniffed
//! from the file header: a `%%MatrixMarket` banner selects Matrix Market,
//! a `rows,cols` line selects CSV.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::problems::Problem;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const MM_BANNER: &str = "%%MatrixMarket matrix array real general";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixFormat {
    MatrixMarket,
    Csv,
}

impl MatrixFormat {
    fn extension(self) -> &'static str {
        match self {
            MatrixFormat::MatrixMarket => "mtx",
            MatrixFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    m: usize,
    n: usize,
    s: usize,
    seed: u64,
    noise_level: Option<f64>,
    format: MatrixFormat,
}

fn payload_path(base: &Path, part: &str, format: MatrixFormat) -> PathBuf {
    let mut os = base.as_os_str().to_owned();
    os.push(".");
    os.push(part);
    os.push(".");
    os.push(format.extension());
    PathBuf::from(os)
}

pub fn save_problem(problem: &Problem, base: &Path, format: MatrixFormat) -> Result<()> {
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let sidecar = Sidecar {
        m: problem.m(),
        n: problem.n(),
        s: problem.sparsity,
        seed: problem.seed,
        noise_level: problem.noise_level,
        format,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::format(0, 0, e.to_string()))?;
    fs::write(sidecar_path(base), json)?;

    write_matrix(&payload_path(base, "A", format), &problem.a, format)?;
    write_vector(&payload_path(base, "b", format), &problem.b, format)?;
    if let Some(xhat) = &problem.xhat {
        write_vector(&payload_path(base, "xhat", format), xhat, format)?;
    }
    if let Some(bn) = &problem.b_noisy {
        write_vector(&payload_path(base, "bnoisy", format), bn, format)?;
    }
    Ok(())
}

fn sidecar_path(base: &Path) -> PathBuf {
    let mut os = base.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Load a problem from its sidecar path (`<base>.json`) or base path.
pub fn load_problem(path: &Path) -> Result<Problem> {
    let (sidecar_file, base) = if path.extension().is_some_and(|e| e == "json") {
        (path.to_path_buf(), path.with_extension(""))
    } else {
        (sidecar_path(path), path.to_path_buf())
    };
    let text = fs::read_to_string(&sidecar_file)?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(e.line(), e.column(), e.to_string()))?;

    let a = read_matrix(&payload_path(&base, "A", sidecar.format))?;
    if a.rows() != sidecar.m || a.cols() != sidecar.n {
        return Err(Error::format(
            0,
            0,
            format!(
                "sidecar says {}x{}, matrix file is {}x{}",
                sidecar.m,
                sidecar.n,
                a.rows(),
                a.cols()
            ),
        ));
    }
    let b = read_vector(&payload_path(&base, "b", sidecar.format), sidecar.m)?;
    let xhat_path = payload_path(&base, "xhat", sidecar.format);
    let xhat = if xhat_path.exists() {
        Some(read_vector(&xhat_path, sidecar.n)?)
    } else {
        None
    };
    let bn_path = payload_path(&base, "bnoisy", sidecar.format);
    let b_noisy = if bn_path.exists() {
        Some(read_vector(&bn_path, sidecar.m)?)
    } else {
        None
    };
    let problem = Problem {
        a,
        b,
        b_noisy,
        xhat,
        noise_level: sidecar.noise_level,
        sparsity: sidecar.s,
        seed: sidecar.seed,
    };
    problem.validate()?;
    Ok(problem)
}

fn write_matrix(path: &Path, a: &DenseMatrix, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::MatrixMarket => write_matrix_market(path, a),
        MatrixFormat::Csv => write_matrix_csv(path, a),
    }
}

fn write_vector(path: &Path, v: &[f64], format: MatrixFormat) -> Result<()> {
    let col = DenseMatrix::from_rows(v.len(), 1, v.to_vec())?;
    write_matrix(path, &col, format)
}

/// Reads either payload format, sniffing the header line.
fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.starts_with("%%MatrixMarket") {
        parse_matrix_market(&first, reader)
    } else {
        parse_matrix_csv(&first, reader)
    }
}

fn read_vector(path: &Path, expect_len: usize) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.cols() != 1 || m.rows() != expect_len {
        return Err(Error::format(
            0,
            0,
            format!(
                "expected a {expect_len}x1 vector in {}, got {}x{}",
                path.display(),
                m.rows(),
                m.cols()
            ),
        ));
    }
    Ok(m.entries().to_vec())
}

/// Matrix Market array format, entries in column-major order.
pub fn write_matrix_market(path: &Path, a: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{MM_BANNER}")?;
    writeln!(w, "{} {}", a.rows(), a.cols())?;
    for j in 0..a.cols() {
        for i in 0..a.rows() {
            writeln!(w, "{}", a.get(i, j))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<DenseMatrix> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    parse_matrix_market(&first, reader)
}

fn parse_matrix_market(banner: &str, reader: impl BufRead) -> Result<DenseMatrix> {
    let tokens: Vec<String> = banner
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    let want = ["%%matrixmarket", "matrix", "array", "real", "general"];
    if tokens.len() != want.len() || tokens.iter().zip(want).any(|(t, w)| t != w) {
        return Err(Error::format(
            1,
            1,
            format!("unsupported Matrix Market banner: {}", banner.trim_end()),
        ));
    }
    let mut lines = reader.lines();
    let mut line_no = 1usize;

    // size line, after optional % comments
    let (m, n) = loop {
        line_no += 1;
        let line = match lines.next() {
            Some(l) => l?,
            None => return Err(Error::format(line_no, 1, "missing size line")),
        };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let m = parse_usize(parts.next(), line_no, 1)?;
        let n = parse_usize(parts.next(), line_no, 2)?;
        if parts.next().is_some() {
            return Err(Error::format(
                line_no,
                3,
                "array size line must contain exactly two integers",
            ));
        }
        break (m, n);
    };

    let mut entries = Vec::with_capacity(m * n);
    for line in lines {
        line_no += 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        for (col, tok) in trimmed.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::format(line_no, col + 1, format!("invalid real value '{tok}'"))
            })?;
            entries.push(v);
        }
    }
    if entries.len() != m * n {
        return Err(Error::format(
            line_no,
            1,
            format!("expected {} entries, found {}", m * n, entries.len()),
        ));
    }
    // column-major on disk, row-major in memory
    let mut data = vec![0.0; m * n];
    for j in 0..n {
        for i in 0..m {
            data[i * n + j] = entries[j * m + i];
        }
    }
    DenseMatrix::from_rows(m, n, data)
}

/// CSV payload: a `rows,cols` header line, then one row per line.
fn write_matrix_csv(path: &Path, a: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{},{}", a.rows(), a.cols())?;
    for i in 0..a.rows() {
        let row: Vec<String> = a.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_matrix_csv(header: &str, reader: impl BufRead) -> Result<DenseMatrix> {
    let mut parts = header.trim().split(',');
    let m = parse_usize(parts.next(), 1, 1)?;
    let n = parse_usize(parts.next(), 1, 2)?;
    if parts.next().is_some() {
        return Err(Error::format(1, 3, "header row must be 'rows,cols'"));
    }
    let mut data = Vec::with_capacity(m * n);
    let mut line_no = 1usize;
    for line in reader.lines() {
        line_no += 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0usize;
        for (col, tok) in line.trim().split(',').enumerate() {
            let v: f64 = tok.trim().parse().map_err(|_| {
                Error::format(line_no, col + 1, format!("invalid real value '{tok}'"))
            })?;
            data.push(v);
            count += 1;
        }
        if count != n {
            return Err(Error::format(
                line_no,
                count,
                format!("expected {n} values per row, found {count}"),
            ));
        }
    }
    if data.len() != m * n {
        return Err(Error::format(
            line_no,
            1,
            format!("expected {m} rows, found {}", data.len() / n.max(1)),
        ));
    }
    DenseMatrix::from_rows(m, n, data)
}

fn parse_usize(tok: Option<&str>, line: usize, column: usize) -> Result<usize> {
    tok.ok_or_else(|| Error::format(line, column, "missing integer"))?
        .trim()
        .parse()
        .map_err(|_| Error::format(line, column, format!("invalid integer '{}'", tok.unwrap())))
}
