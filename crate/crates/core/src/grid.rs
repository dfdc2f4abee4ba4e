//! Sampled fields on the periodic cube `[-L, L)^n`.
//!
//! Samples sit at `x_i = -L + i h`, `h = 2L/N`, so the origin is the grid
//! point `i = N/2` on every axis. Each sample is the midpoint of its cell and
//! the quadrature weight is the cell volume `h^n`. Flat indices are row-major
//! with axis 0 slowest; vector fields store their components one after the
//! other.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::weights::RadialWeight;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    points: usize,
    half_extent: f64,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.points == other.points
            && self.half_extent.to_bits() == other.half_extent.to_bits()
    }
}

impl Grid {
    pub fn new(dim: usize, points: usize, half_extent: f64) -> Result<Self> {
        if !(3..=MAX_DIM).contains(&dim) {
            return Err(Error::param(
                "n",
                dim as f64,
                format!("dimension must lie in 3..={MAX_DIM}"),
            ));
        }
        if points < 8 || !points.is_multiple_of(2) {
            return Err(Error::param("N", points as f64, "must be even and at least 8"));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(Error::param("L", half_extent, "half-extent must be positive"));
        }
        Ok(Self {
            dim,
            points,
            half_extent,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Samples per axis, `N`.
    pub fn points(&self) -> usize {
        self.points
    }

    /// Half-extent `L` of the cube.
    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total number of grid points, `N^n`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_extent + i as f64 * self.spacing()
    }

    /// Flat index of the grid point at the origin.
    pub fn origin_index(&self) -> usize {
        let mut idx = [self.points / 2; MAX_DIM];
        idx[self.dim..].iter_mut().for_each(|v| *v = 0);
        self.flat(&idx[..self.dim])
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points + i)
    }

    pub fn unflatten(&self, mut flat: usize, idx: &mut [usize]) {
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.points;
            flat /= self.points;
        }
    }

    /// Coordinates of the flat index `flat`.
    pub fn point(&self, flat: usize, x: &mut [f64]) {
        let mut idx = [0usize; MAX_DIM];
        self.unflatten(flat, &mut idx);
        for a in 0..self.dim {
            x[a] = self.coord(idx[a]);
        }
    }

    pub fn radius_sq(&self, flat: usize) -> f64 {
        let mut x = [0.0; MAX_DIM];
        self.point(flat, &mut x);
        x[..self.dim].iter().map(|v| v * v).sum()
    }

    /// Angular wavenumber `pi k / L` of FFT bin `i`, with `k` in `[-N/2, N/2)`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let n = self.points as i64;
        let k = if (i as i64) < n / 2 { i as i64 } else { i as i64 - n };
        std::f64::consts::PI * k as f64 / self.half_extent
    }

    /// Wavenumber used for odd (derivative) multipliers: the Nyquist bin is
    /// mapped to zero so that real fields stay real.
    pub fn deriv_wavenumber(&self, i: usize) -> f64 {
        if i == self.points / 2 {
            0.0
        } else {
            self.wavenumber(i)
        }
    }

    /// Smallest nonzero `|xi|^2` on the grid.
    pub fn kappa_min(&self) -> f64 {
        (std::f64::consts::PI / self.half_extent).powi(2)
    }

    /// Flat index of the bin at `-k` for the bin at `flat`.
    pub fn negated_index(&self, flat: usize) -> usize {
        let mut idx = [0usize; MAX_DIM];
        self.unflatten(flat, &mut idx);
        for v in idx[..self.dim].iter_mut() {
            *v = (self.points - *v) % self.points;
        }
        self.flat(&idx[..self.dim])
    }

    pub(crate) fn mode_info(&self, flat: usize) -> Mode {
        let mut idx = [0usize; MAX_DIM];
        self.unflatten(flat, &mut idx);
        let mut m = Mode {
            xi: [0.0; MAX_DIM],
            xi_d: [0.0; MAX_DIM],
            k_sq: 0.0,
            kd_sq: 0.0,
            idx,
        };
        for (a, &i) in idx[..self.dim].iter().enumerate() {
            let w = self.wavenumber(i);
            let wd = self.deriv_wavenumber(i);
            m.xi[a] = w;
            m.xi_d[a] = wd;
            m.k_sq += w * w;
            m.kd_sq += wd * wd;
        }
        m
    }
}

/// Per-bin wavenumber data for spectral multipliers.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mode {
    pub xi: [f64; MAX_DIM],
    pub xi_d: [f64; MAX_DIM],
    /// `|xi|^2` with the Nyquist bin included.
    pub k_sq: f64,
    /// `|xi_d|^2`, the symbol of `-div grad`.
    pub kd_sq: f64,
    pub idx: [usize; MAX_DIM],
}

/// Real samples of a scalar (1 component) or vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    components: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid, components: usize) -> Self {
        Self {
            grid: grid.clone(),
            components,
            data: vec![0.0; components * grid.len()],
        }
    }

    pub fn from_vec(grid: &Grid, components: usize, data: Vec<f64>) -> Result<Self> {
        if components == 0 || data.len() != components * grid.len() {
            return Err(Error::Shape(format!(
                "expected {} x {} samples, got {}",
                components,
                grid.len(),
                data.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            components,
            data,
        })
    }

    /// Sample `f(x, out)` at every grid point; `out` has `components` slots.
    pub fn from_fn<F>(grid: &Grid, components: usize, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Sync + Send,
    {
        let len = grid.len();
        let dim = grid.dim();
        let mut point_major = vec![0.0; components * len];
        exec::for_each_chunk_mut(&mut point_major, components * exec::CHUNK, |ci, chunk| {
            let mut x = [0.0; MAX_DIM];
            let first = ci * exec::CHUNK;
            for (k, out) in chunk.chunks_mut(components).enumerate() {
                grid.point(first + k, &mut x);
                f(&x[..dim], out);
            }
        });
        let mut data = vec![0.0; components * len];
        for c in 0..components {
            let dst = &mut data[c * len..(c + 1) * len];
            for (p, d) in dst.iter_mut().enumerate() {
                *d = point_major[p * components + c];
            }
        }
        Self {
            grid: grid.clone(),
            components,
            data,
        }
    }

    pub fn scalar_from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        Self::from_fn(grid, 1, |x, out| out[0] = f(x))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_scalar(&self) -> bool {
        self.components == 1
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

    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    /// Build a scalar field from component `c`.
    pub fn extract(&self, c: usize) -> Field {
        Field {
            grid: self.grid.clone(),
            components: 1,
            data: self.component(c).to_vec(),
        }
    }

    /// Stack scalar fields into one multi-component field.
    pub fn stack(parts: &[Field]) -> Result<Field> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero fields".into()))?;
        let mut data = Vec::with_capacity(parts.len() * first.grid.len());
        let mut components = 0;
        for p in parts {
            if p.grid != first.grid {
                return Err(Error::Shape("stacked fields live on different grids".into()));
            }
            data.extend_from_slice(&p.data);
            components += p.components;
        }
        Ok(Field {
            grid: first.grid.clone(),
            components,
            data,
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub(crate) fn require_vector(&self) -> Result<()> {
        if self.components != self.grid.dim() {
            return Err(Error::Shape(format!(
                "expected a vector field with {} components, got {}",
                self.grid.dim(),
                self.components
            )));
        }
        Ok(())
    }

    pub(crate) fn require_scalar(&self) -> Result<()> {
        if self.components != 1 {
            return Err(Error::Shape(format!(
                "expected a scalar field, got {} components",
                self.components
            )));
        }
        Ok(())
    }

    pub(crate) fn require_same_shape(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid || self.components != other.components {
            return Err(Error::Shape("fields differ in grid or component count".into()));
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        exec::for_each_chunk_mut(&mut self.data, exec::CHUNK, |_, c| c.iter_mut().for_each(|v| *v *= a));
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Field) -> Result<()> {
        self.require_same_shape(other)?;
        let src = &other.data;
        exec::for_each_chunk_mut(&mut self.data, exec::CHUNK, |ci, c| {
            let off = ci * exec::CHUNK;
            for (k, v) in c.iter_mut().enumerate() {
                *v += a * src[off + k];
            }
        });
        Ok(())
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    /// Pointwise multiplication of every component by the scalar field `s`.
    pub fn mul_scalar_field(&self, s: &Field) -> Result<Field> {
        if s.grid != self.grid || s.components != 1 {
            return Err(Error::Shape(
                "multiplier must be a scalar field on the same grid".into(),
            ));
        }
        let mut out = self.clone();
        let len = self.grid.len();
        for c in 0..self.components {
            out.data[c * len..(c + 1) * len]
                .iter_mut()
                .zip(&s.data)
                .for_each(|(v, w)| *v *= w);
        }
        Ok(out)
    }

    /// Euclidean magnitude of the components at every point.
    pub fn magnitudes(&self) -> Vec<f64> {
        let len = self.grid.len();
        let comps = self.components;
        let data = &self.data;
        let mut out = vec![0.0; len];
        exec::for_each_chunk_mut(&mut out, exec::CHUNK, |ci, chunk| {
            let off = ci * exec::CHUNK;
            for (k, m) in chunk.iter_mut().enumerate() {
                let p = off + k;
                let s: f64 = (0..comps).map(|c| data[c * len + p].powi(2)).sum();
                *m = s.sqrt();
            }
        });
        out
    }

    /// Unweighted L^2 norm on the grid.
    pub fn l2_norm(&self) -> f64 {
        let h_n = self.grid.cell_volume();
        let data = &self.data;
        (exec::sum_ranges(data.len(), |r| data[r].iter().map(|v| v * v).sum()) * h_n).sqrt()
    }

    /// L^2 inner product on the grid.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.require_same_shape(other)?;
        let (a, b) = (&self.data, &other.data);
        let h_n = self.grid.cell_volume();
        Ok(exec::sum_ranges(a.len(), |r| r.map(|i| a[i] * b[i]).sum::<f64>()) * h_n)
    }

    /// Grid mean of each component.
    pub fn means(&self) -> Vec<f64> {
        (0..self.components)
            .map(|c| {
                let d = self.component(c);
                exec::sum_ranges(d.len(), |r| d[r].iter().sum()) / d.len() as f64
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        let d = &self.data;
        exec::max_ranges(d.len(), |r| d[r].iter().fold(0.0, |m, v| m.max(v.abs())))
    }

    // Spectral transforms -------------------------------------------------

    /// Forward DFT of every component (unnormalized).
    pub fn to_spectral(&self) -> Result<SpectralField> {
        self.check_finite()?;
        let len = self.grid.len();
        let mut out = vec![Complex64::new(0.0, 0.0); self.components * len];
        let mut c = 0;
        while c < self.components {
            if c + 1 < self.components {
                let mut z: Vec<Complex64> = self
                    .component(c)
                    .iter()
                    .zip(self.component(c + 1))
                    .map(|(&a, &b)| Complex64::new(a, b))
                    .collect();
                fft_nd(&self.grid, &mut z, false);
                split_pair(&self.grid, &z, &mut out[c * len..(c + 2) * len]);
                c += 2;
            } else {
                let dst = &mut out[c * len..(c + 1) * len];
                for (d, &v) in dst.iter_mut().zip(self.component(c)) {
                    *d = Complex64::new(v, 0.0);
                }
                fft_nd(&self.grid, dst, false);
                c += 1;
            }
        }
        Ok(SpectralField {
            grid: self.grid.clone(),
            components: self.components,
            data: out,
        })
    }

    /// Spectral gradient of a scalar field.
    pub fn gradient(&self) -> Result<Field> {
        self.require_scalar()?;
        Ok(self.to_spectral()?.gradient()?.to_physical())
    }

    /// Spectral divergence of a vector field.
    pub fn divergence(&self) -> Result<Field> {
        self.require_vector()?;
        Ok(self.to_spectral()?.divergence()?.to_physical())
    }

    /// Full derivative tensor `d_j u_i`, stored at component `i * n + j`.
    pub fn gradient_tensor(&self) -> Result<Field> {
        Ok(self.to_spectral()?.gradient_tensor().to_physical())
    }

    /// Spectral curl of a vector field in three dimensions.
    pub fn curl(&self) -> Result<Field> {
        self.require_vector()?;
        if self.grid.dim() != 3 {
            return Err(Error::param("n", self.grid.dim() as f64, "curl needs n = 3"));
        }
        let g = self.gradient_tensor()?;
        let d = |i: usize, j: usize| g.component(i * 3 + j);
        let len = self.grid.len();
        let mut out = vec![0.0; 3 * len];
        for p in 0..len {
            out[p] = d(2, 1)[p] - d(1, 2)[p];
            out[len + p] = d(0, 2)[p] - d(2, 0)[p];
            out[2 * len + p] = d(1, 0)[p] - d(0, 1)[p];
        }
        Field::from_vec(&self.grid, 3, out)
    }

    // Binary I/O ------------------------------------------------------------

    /// Header `n, N (u64), L (f64), components (u64)`, all little-endian,
    /// followed by the samples as little-endian f64 in storage order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.grid.dim as u64).to_le_bytes())?;
        w.write_all(&(self.grid.points as u64).to_le_bytes())?;
        w.write_all(&self.grid.half_extent.to_le_bytes())?;
        w.write_all(&(self.components as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.data.len());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Field> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)
                .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let points = u64::from_le_bytes(next(&mut r)?) as usize;
        let half_extent = f64::from_le_bytes(next(&mut r)?);
        let components = u64::from_le_bytes(next(&mut r)?) as usize;
        let grid = Grid::new(dim, points, half_extent).map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
        if components == 0 || components > MAX_DIM * MAX_DIM {
            return Err(Error::Format(format!("bad component count {components}")));
        }
        let count = components * grid.len();
        let mut bytes = vec![0u8; 8 * count];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let field = Field::from_vec(&grid, components, data)?;
        field.check_finite()?;
        Ok(field)
    }
}

/// Discrete Fourier coefficients of a [`Field`], same layout.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Grid,
    components: usize,
    data: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: &Grid, components: usize) -> Self {
        Self {
            grid: grid.clone(),
            components,
            data: vec![Complex64::new(0.0, 0.0); components * grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    /// Inverse DFT; the spectrum is assumed Hermitian, so only the real
    /// part is kept.
    pub fn to_physical(&self) -> Field {
        let len = self.grid.len();
        let mut out = vec![0.0; self.components * len];
        let mut c = 0;
        while c < self.components {
            if c + 1 < self.components {
                let a = self.component(c);
                let b = self.component(c + 1);
                let mut z: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x + Complex64::new(-y.im, y.re)).collect();
                fft_nd(&self.grid, &mut z, true);
                for (p, v) in z.iter().enumerate() {
                    out[c * len + p] = v.re;
                    out[(c + 1) * len + p] = v.im;
                }
                c += 2;
            } else {
                let mut z = self.component(c).to_vec();
                fft_nd(&self.grid, &mut z, true);
                for (p, v) in z.iter().enumerate() {
                    out[c * len + p] = v.re;
                }
                c += 1;
            }
        }
        Field {
            grid: self.grid.clone(),
            components: self.components,
            data: out,
        }
    }

    /// Multiply every component by `m(mode)`.
    pub(crate) fn apply_multiplier<F>(&mut self, m: F)
    where
        F: Fn(&Mode) -> Complex64 + Sync + Send,
    {
        let len = self.grid.len();
        let grid = &self.grid;
        for c in 0..self.components {
            let comp = &mut self.data[c * len..(c + 1) * len];
            exec::for_each_chunk_mut(comp, exec::CHUNK, |ci, chunk| {
                let off = ci * exec::CHUNK;
                for (k, v) in chunk.iter_mut().enumerate() {
                    *v *= m(&grid.mode_info(off + k));
                }
            });
        }
    }

    /// Multiply every component by a real multiplier.
    pub(crate) fn apply_real_multiplier<F>(&mut self, m: F)
    where
        F: Fn(&Mode) -> f64 + Sync + Send,
    {
        self.apply_multiplier(|mode| Complex64::new(m(mode), 0.0));
    }

    pub fn gradient(&self) -> Result<SpectralField> {
        if self.components != 1 {
            return Err(Error::Shape("gradient expects a scalar field".into()));
        }
        let n = self.grid.dim();
        let len = self.grid.len();
        let mut out = SpectralField::zeros(&self.grid, n);
        let src = &self.data;
        let grid = &self.grid;
        for d in 0..n {
            exec::for_each_chunk_mut(out.component_mut(d), exec::CHUNK, |ci, chunk| {
                let off = ci * exec::CHUNK;
                for (k, v) in chunk.iter_mut().enumerate() {
                    let m = grid.mode_info(off + k);
                    *v = Complex64::new(0.0, m.xi_d[d]) * src[off + k];
                }
            });
        }
        debug_assert_eq!(out.data.len(), n * len);
        Ok(out)
    }

    pub fn divergence(&self) -> Result<SpectralField> {
        let n = self.grid.dim();
        if self.components != n {
            return Err(Error::Shape("divergence expects a vector field".into()));
        }
        let len = self.grid.len();
        let mut out = SpectralField::zeros(&self.grid, 1);
        let src = &self.data;
        let grid = &self.grid;
        exec::for_each_chunk_mut(&mut out.data, exec::CHUNK, |ci, chunk| {
            let off = ci * exec::CHUNK;
            for (k, v) in chunk.iter_mut().enumerate() {
                let p = off + k;
                let m = grid.mode_info(p);
                *v = (0..n).map(|d| Complex64::new(0.0, m.xi_d[d]) * src[d * len + p]).sum();
            }
        });
        Ok(out)
    }

    /// Derivatives `d_j` of every component, component `i * n + j`.
    pub fn gradient_tensor(&self) -> SpectralField {
        let n = self.grid.dim();
        let len = self.grid.len();
        let comps = self.components;
        let mut out = SpectralField::zeros(&self.grid, comps * n);
        let grid = &self.grid;
        for i in 0..comps {
            let src = self.component(i);
            for j in 0..n {
                let dst = &mut out.data[(i * n + j) * len..(i * n + j + 1) * len];
                exec::for_each_chunk_mut(dst, exec::CHUNK, |ci, chunk| {
                    let off = ci * exec::CHUNK;
                    for (k, v) in chunk.iter_mut().enumerate() {
                        let m = grid.mode_info(off + k);
                        *v = Complex64::new(0.0, m.xi_d[j]) * src[off + k];
                    }
                });
            }
        }
        out
    }

    /// Spectral Laplacian, consistent with `divergence(gradient(.))`.
    pub fn laplacian(&self) -> SpectralField {
        let mut out = self.clone();
        out.apply_real_multiplier(|m| -m.kd_sq);
        out
    }

    /// Sum of `|F_k|^2 / N^n` over all coefficients: equals the grid sum of
    /// squared samples by Parseval.
    pub fn parseval_sum(&self) -> f64 {
        let d = &self.data;
        exec::sum_ranges(d.len(), |r| d[r].iter().map(|z| z.norm_sqr()).sum()) / self.grid.len() as f64
    }
}

/// Separate `Z = FFT(a + i b)` into `FFT(a)` and `FFT(b)` using Hermitian
/// symmetry of real-input spectra.
fn split_pair(grid: &Grid, z: &[Complex64], out: &mut [Complex64]) {
    let len = grid.len();
    let (oa, ob) = out.split_at_mut(len);
    exec::for_each_chunk_mut(oa, exec::CHUNK, |ci, chunk| {
        let off = ci * exec::CHUNK;
        for (k, v) in chunk.iter_mut().enumerate() {
            let p = off + k;
            let zc = z[grid.negated_index(p)].conj();
            *v = (z[p] + zc) * 0.5;
        }
    });
    exec::for_each_chunk_mut(ob, exec::CHUNK, |ci, chunk| {
        let off = ci * exec::CHUNK;
        for (k, v) in chunk.iter_mut().enumerate() {
            let p = off + k;
            let zc = z[grid.negated_index(p)].conj();
            // (z - conj(z(-k))) / (2i)
            let d = z[p] - zc;
            *v = Complex64::new(d.im * 0.5, -d.re * 0.5);
        }
    });
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Arc<Plans> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Plans>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// In-place n-dimensional DFT of one component. The inverse includes the
/// `1/N^n` normalization.
///
/// Each pass transforms the contiguous last axis and then rotates the axes
/// so that the previous axis becomes last; after `n` passes every axis has
/// been transformed and the original layout is restored.
pub(crate) fn fft_nd(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.points();
    let dim = grid.dim();
    let len = grid.len();
    assert_eq!(data.len(), len);
    let plan = plans(n);
    let fft = if inverse { &plan.inverse } else { &plan.forward };
    let lines_per_task = (exec::CHUNK / n).max(1);
    let stride = len / n;
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for _ in 0..dim {
        exec::for_each_chunk_mut(data, n * lines_per_task, |_, chunk| fft.process(chunk));
        {
            let src: &[Complex64] = data;
            exec::for_each_chunk_mut(&mut buf, exec::CHUNK, |ci, chunk| {
                let off = ci * exec::CHUNK;
                for (k, v) in chunk.iter_mut().enumerate() {
                    let j = off + k;
                    *v = src[(j % stride) * n + j / stride];
                }
            });
        }
        data.copy_from_slice(&buf);
    }
    if inverse {
        let scale = 1.0 / len as f64;
        exec::for_each_chunk_mut(data, exec::CHUNK, |_, c| c.iter_mut().for_each(|v| *v *= scale));
    }
}

/// `(sum |f|^q w(x)^q h^n)^(1/q)` with `|f|` the Euclidean magnitude and
/// `w(x) = <x>^s` or `|x|^s`; `q >= 1`.
pub(crate) fn weighted_norm(f: &Field, q: f64, weight: Option<&RadialWeight>) -> f64 {
    weighted_norm_of(f.grid(), &f.magnitudes(), q, weight)
}

pub(crate) fn weighted_norm_of(grid: &Grid, mags: &[f64], q: f64, weight: Option<&RadialWeight>) -> f64 {
    let sum = exec::sum_ranges(mags.len(), |r| {
        let mut acc = 0.0;
        for p in r {
            let m = mags[p];
            if m == 0.0 {
                continue;
            }
            let w = match weight {
                Some(w) => w.eval_sq(grid.radius_sq(p)),
                None => 1.0,
            };
            acc += m.powf(q) * w.powf(q);
        }
        acc
    });
    (sum * grid.cell_volume()).powf(1.0 / q)
}

/// Weighted Lebesgue norm `||f||_{L^q_s}` by midpoint quadrature,
/// `1 < q < inf`.
pub fn integrate(f: &Field, q: f64, weight: Option<&RadialWeight>) -> Result<f64> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::param("q", q, "Lebesgue index must satisfy 1 < q < inf"));
    }
    f.check_finite()?;
    Ok(weighted_norm(f, q, weight))
}

/// Midpoint-rule integral of a scalar field.
pub fn integral(f: &Field) -> f64 {
    let d = f.component(0);
    exec::sum_ranges(d.len(), |r| d[r].iter().sum()) * f.grid().cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g(n: usize, l: f64) -> Grid {
        Grid::new(3, n, l).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(2, 16, 1.0).is_err());
        assert!(Grid::new(3, 15, 1.0).is_err());
        assert!(Grid::new(3, 6, 1.0).is_err());
        assert!(Grid::new(3, 16, 0.0).is_err());
    }

    #[test]
    fn origin_is_a_grid_point() {
        let grid = g(16, 2.0);
        assert_eq!(grid.radius_sq(grid.origin_index()), 0.0);
    }

    #[test]
    fn constant_integrates_to_cube_volume() {
        let grid = g(8, 1.0);
        let one = Field::scalar_from_fn(&grid, |_| 1.0);
        assert_eq!(integral(&one), 8.0);
        let v = integrate(&one, 2.0, None).unwrap();
        assert!((v - 8f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let grid = g(8, 1.0);
        let c = Field::scalar_from_fn(&grid, |_| 2.5);
        let s = c.to_spectral().unwrap();
        let peak = s.data()[0].norm();
        assert!((peak - 2.5 * grid.len() as f64).abs() < 1e-9);
        assert!(s.data()[1..].iter().all(|z| z.norm() <= 1e-12 * peak));
    }

    #[test]
    fn cosine_mode_has_two_coefficients() {
        let grid = g(16, 2.0);
        let l = grid.half_extent();
        let f = Field::scalar_from_fn(&grid, |x| (2.0 * PI * x[0] / (2.0 * l)).cos());
        let s = f.to_spectral().unwrap();
        let peak = s.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let big: Vec<usize> = (0..grid.len()).filter(|&p| s.data()[p].norm() > 1e-12 * peak).collect();
        assert_eq!(big.len(), 2);
        let (a, b) = (big[0], big[1]);
        assert_eq!(grid.negated_index(a), b);
        assert!((s.data()[a].norm() - s.data()[b].norm()).abs() < 1e-12 * peak);
    }

    #[test]
    fn gradient_of_sine() {
        let grid = g(16, 3.0);
        let l = grid.half_extent();
        let k = 2.0 * PI / (2.0 * l);
        let f = Field::scalar_from_fn(&grid, |x| (k * x[0]).sin());
        let grad = f.gradient().unwrap();
        let expect = Field::from_fn(&grid, 3, |x, o| {
            o[0] = k * (k * x[0]).cos();
            o[1] = 0.0;
            o[2] = 0.0;
        });
        assert!(grad.sub(&expect).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let grid = g(8, 1.0);
        let f = Field::scalar_from_fn(&grid, |_| 3.0);
        assert!(f.gradient().unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn divergence_of_curl_form_vanishes() {
        let grid = g(32, 6.0);
        let psi = Field::scalar_from_fn(&grid, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1] + x[2] * x[2])).exp());
        let gp = psi.gradient().unwrap();
        let v = Field::stack(&[gp.extract(1), gp.extract(0).scaled(-1.0), Field::zeros(&grid, 1)]).unwrap();
        let div = v.divergence().unwrap();
        assert!(div.l2_norm() <= 1e-10 * v.l2_norm());
    }

    #[test]
    fn non_finite_rejected() {
        let grid = g(8, 1.0);
        let mut f = Field::zeros(&grid, 1);
        f.data_mut()[5] = f64::NAN;
        assert!(matches!(f.to_spectral(), Err(Error::NonFinite { index: 5 })));
    }

    #[test]
    fn integrate_rejects_q_at_most_one() {
        let grid = g(8, 1.0);
        let f = Field::zeros(&grid, 1);
        assert!(integrate(&f, 1.0, None).is_err());
        assert!(integrate(&f, 0.5, None).is_err());
    }

    #[test]
    fn gaussian_l2_norm() {
        let grid = g(64, 6.0);
        let f = Field::scalar_from_fn(&grid, |x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp());
        let v = integrate(&f, 2.0, None).unwrap();
        let exact = (PI / 2.0).powf(1.5).sqrt();
        assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
    }

    #[test]
    fn binary_round_trip() {
        let grid = g(8, 1.5);
        let f = Field::from_fn(&grid, 3, |x, o| {
            o[0] = x[0];
            o[1] = x[1] * x[2];
            o[2] = -1.25;
        });
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 3 * grid.len());
        assert_eq!(&buf[0..8], &3u64.to_le_bytes());
        assert_eq!(&buf[8..16], &8u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        assert_eq!(&buf[24..32], &3u64.to_le_bytes());
        let back = Field::read_binary(&buf[..]).unwrap();
        assert_eq!(back, f);
        assert!(Field::read_binary(&buf[..40]).is_err());
    }
}
