//! Row-compressed sparse matrices and the coordinate-list text dump.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    /// Builds from per-row `(column, value)` lists. Entries are sorted by
    /// column; explicit zeros are kept so patterns stay fixed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                assert!(c < ncols, "column {c} out of range for {ncols} columns");
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows: rows.len(), ncols, row_ptr, col_idx, values }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let rows = (0..a.nrows())
            .map(|i| (0..a.ncols()).filter(|&j| a[(i, j)] != 0.0).map(|j| (j, a[(i, j)])).collect())
            .collect();
        Self::from_rows(a.ncols(), rows)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    /// Positions of row `i`'s entries in [`Self::values`].
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row_range(i).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[self.row_range(i)].iter().sum()
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    /// Same sparsity pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "value count must match the pattern");
        Self { values, ..self.clone() }
    }

    /// Entrywise sum of two matrices sharing a pattern.
    pub fn add_same_pattern(&self, other: &Self) -> Self {
        assert!(self.same_pattern(other), "patterns differ");
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.with_values(self.values.iter().map(|v| v * s).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                for j in 0..x.ncols() {
                    out[(i, j)] += v * x[(c, j)];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                a[(i, c)] += v;
            }
        }
        a
    }

    /// Coordinate-list dump: a `# rows cols nnz` header line, then one
    /// `row col value` line per stored entry, 0-based, in row-major order.
    /// Values use the shortest representation that round-trips.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                writeln!(w, "{i} {c} {v:?}")?;
            }
        }
        Ok(())
    }

    pub fn read_coo<R: BufRead>(r: R) -> Result<Self, String> {
        let mut lines = r.lines();
        let header = lines.next().ok_or("empty dump")?.map_err(|e| e.to_string())?;
        let dims: Vec<usize> = header
            .trim_start_matches('#')
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format!("bad header `{header}`")))
            .collect::<Result<_, _>>()?;
        let [nrows, ncols, nnz] = dims[..] else {
            return Err(format!("bad header `{header}`"));
        };
        let mut rows = vec![Vec::new(); nrows];
        let mut count = 0;
        for line in lines {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [i, j, v] = parts[..] else {
                return Err(format!("bad entry `{line}`"));
            };
            let i: usize = i.parse().map_err(|_| format!("bad row in `{line}`"))?;
            let j: usize = j.parse().map_err(|_| format!("bad column in `{line}`"))?;
            let v: f64 = v.parse().map_err(|_| format!("bad value in `{line}`"))?;
            if i >= nrows || j >= ncols {
                return Err(format!("entry `{line}` out of range"));
            }
            rows[i].push((j, v));
            count += 1;
        }
        if count != nnz {
            return Err(format!("header announces {nnz} entries, found {count}"));
        }
        Ok(Self::from_rows(ncols, rows))
    }
}
