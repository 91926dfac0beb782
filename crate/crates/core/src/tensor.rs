//! Dense substrate: feature maps, row-major matrices and the dense pointwise
//! convolution used as the reference for every structured fusion.
//!
//! A feature map is stored channel-major (`data[c * h * w + y * w + x]`), so its
//! matrix view `n x (h w)` shares the exact same element order. Column `j` of
//! the view is the spatial site `(j / w, j % w)`.

use crate::kernels;
use crate::{BftError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(BftError::shape(
                "FeatureMap::new",
                "positive dimensions",
                format!("{channels}x{height}x{width}"),
            ));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(BftError::shape(
                "FeatureMap::new",
                format!("{expected} values for {channels}x{height}x{width}"),
                data.len(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spatial sites, `h * w`.
    pub fn sites(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(BftError::shape(
                "DenseMatrix::new",
                "positive dimensions",
                format!("{rows}x{cols}"),
            ));
        }
        if data.len() != rows * cols {
            return Err(BftError::shape(
                "DenseMatrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "DenseMatrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// A single column vector.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(BftError::shape(
                "matmul",
                format!("rhs with {} rows (lhs is {}x{})", self.cols, self.rows, self.cols),
                format!("{}x{}", rhs.rows, rhs.cols),
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        kernels::matmul(&self.data, self.rows, self.cols, &rhs.data, rhs.cols, &mut out.data);
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(BftError::shape(
                "matvec",
                format!("vector of length {} (matrix is {}x{})", self.cols, self.rows, self.cols),
                x.len(),
            ));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(BftError::shape(
                "add",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Views a feature map as the `n x (h w)` matrix whose columns are spatial sites.
pub fn reshape_to_matrix(x: &FeatureMap) -> DenseMatrix {
    DenseMatrix {
        rows: x.channels,
        cols: x.sites(),
        data: x.data.clone(),
    }
}

/// Inverse of [`reshape_to_matrix`] for a known spatial shape.
pub fn reshape_from_matrix(m: &DenseMatrix, height: usize, width: usize) -> Result<FeatureMap> {
    if height * width != m.cols {
        return Err(BftError::shape(
            "reshape_from_matrix",
            format!("{} columns", height * width),
            format!("{}x{} matrix", m.rows, m.cols),
        ));
    }
    FeatureMap::new(m.rows, height, width, m.data.clone())
}

/// Pointwise (1x1) convolution: `Y = W X` on the matrix view.
pub fn dense_pointwise(w: &DenseMatrix, x: &FeatureMap) -> Result<FeatureMap> {
    if w.cols != x.channels {
        return Err(BftError::shape(
            "dense_pointwise",
            format!("weight {}x{} applied to {} input channels", w.rows, w.cols, w.cols),
            format!("feature map {}x{}x{}", x.channels, x.height, x.width),
        ));
    }
    let xm = reshape_to_matrix(x);
    let ym = w.matmul(&xm)?;
    reshape_from_matrix(&ym, x.height, x.width)
}
