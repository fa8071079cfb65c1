//! Dense row-major matrices and the text checkpoint format.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self · v`
    pub(crate) fn matvec_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `out += selfᵀ · v`
    pub(crate) fn matvec_t_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for (row, &vi) in self.data.chunks_exact(self.cols).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }

    /// `self += u vᵀ`
    pub(crate) fn outer_acc(&mut self, u: &[f64], v: &[f64]) {
        for (row, &ui) in self.data.chunks_exact_mut(self.cols).zip(u) {
            if ui == 0.0 {
                continue;
            }
            for (a, b) in row.iter_mut().zip(v) {
                *a += ui * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Serialize named tensors under `header`; 17 significant digits per value.
pub(crate) fn write_tensors<'a>(
    header: &str,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{header}");
    for (name, t) in tensors {
        let _ = writeln!(out, "tensor {name} {} {}", t.rows, t.cols);
        for r in 0..t.rows {
            let line: Vec<String> = t.row(r).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

pub(crate) fn read_tensors(header: &str, text: &str) -> Result<Vec<(String, Tensor)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((n, other)) => {
            return Err(Error::parse(n, format!("expected `{header}`, got `{other}`")))
        }
        None => return Err(Error::parse(1, "empty checkpoint")),
    }
    let mut out = Vec::new();
    while let Some((n, line)) = lines.next() {
        let mut parts = line.split_whitespace();
        let (Some("tensor"), Some(name), Some(rows), Some(cols), None) =
            (parts.next(), parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::parse(n, format!("expected `tensor <name> <rows> <cols>`, got `{line}`")));
        };
        let rows: usize = rows.parse().map_err(|_| Error::parse(n, "bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| Error::parse(n, "bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        while data.len() < rows * cols {
            let Some((n, line)) = lines.next() else {
                return Err(Error::parse(n, format!("tensor `{name}` truncated")));
            };
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(n, format!("bad number `{tok}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(n, format!("non-finite value in `{name}`")));
                }
                data.push(v);
            }
        }
        if data.len() != rows * cols {
            return Err(Error::parse(n, format!("tensor `{name}` has extra values")));
        }
        out.push((name.to_string(), Tensor { rows, cols, data }));
    }
    Ok(out)
}

pub(crate) fn take_tensor(
    tensors: &mut Vec<(String, Tensor)>,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Tensor> {
    let i = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Config(format!("checkpoint missing tensor `{name}`")))?;
    let (_, t) = tensors.swap_remove(i);
    if (t.rows, t.cols) != (rows, cols) {
        return Err(Error::Config(format!(
            "tensor `{name}` is {}x{}, expected {rows}x{cols}",
            t.rows, t.cols
        )));
    }
    Ok(t)
}
