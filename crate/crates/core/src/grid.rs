//! Uniform 2D cell-centred grids, scalar fields on them, Gaussian
//! mollification, fine/coarse transfer and the GRD1 field file format.
//!
//! Fields are stored row-major with `x` varying fastest: the value of cell
//! `(i, j)` lives at `values[j * nx + i]` and represents the cell centre
//! `(x0 + (i + 0.5) dx, y0 + (j + 0.5) dy)`. The `y` axis is depth and grows
//! downwards, so `j = 0` is the top (surface) row.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Geometry of a uniform rectilinear grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl GridGeometry {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, x0: f64, y0: f64) -> Result<Self> {
        let g = Self {
            nx,
            ny,
            dx,
            dy,
            x0,
            y0,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square grid of `n x n` cells covering `[0, side] x [0, side]`.
    pub fn square(n: usize, side: f64) -> Result<Self> {
        Self::new(n, n, side / n as f64, side / n as f64, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return invalid(format!(
                "grid must have at least one cell, got {}x{}",
                self.nx, self.ny
            ));
        }
        if !(self.dx > 0.0 && self.dx.is_finite() && self.dy > 0.0 && self.dy.is_finite()) {
            return invalid(format!(
                "grid spacing must be positive, got dx={} dy={}",
                self.dx, self.dy
            ));
        }
        if !(self.x0.is_finite() && self.y0.is_finite()) {
            return invalid("grid origin must be finite");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Physical extent `(nx dx, ny dy)`.
    pub fn extent(&self) -> (f64, f64) {
        (self.nx as f64 * self.dx, self.ny as f64 * self.dy)
    }

    pub fn area(&self) -> f64 {
        let (lx, ly) = self.extent();
        lx * ly
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + (i as f64 + 0.5) * self.dx,
            self.y0 + (j as f64 + 0.5) * self.dy,
        )
    }

    /// True when `(x, y)` lies in the closed rectangle covered by the grid.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (lx, ly) = self.extent();
        let tol = 1e-9 * (lx + ly);
        x >= self.x0 - tol
            && x <= self.x0 + lx + tol
            && y >= self.y0 - tol
            && y <= self.y0 + ly + tol
    }

    /// Whether `other` covers the same rectangle to within `tol` metres.
    pub fn same_extent(&self, other: &GridGeometry, tol: f64) -> bool {
        let (ax, ay) = self.extent();
        let (bx, by) = other.extent();
        (self.x0 - other.x0).abs() <= tol
            && (self.y0 - other.y0).abs() <= tol
            && (self.x0 + ax - other.x0 - bx).abs() <= tol
            && (self.y0 + ay - other.y0 - by).abs() <= tol
    }

    /// Bilinear interpolation stencil for a point: four `(flat index, weight)`
    /// pairs over cell centres, clamped at the outer half cell.
    pub fn bilinear_stencil(&self, x: f64, y: f64) -> [(usize, f64); 4] {
        let (i0, i1, wx) = axis_stencil((x - self.x0) / self.dx - 0.5, self.nx);
        let (j0, j1, wy) = axis_stencil((y - self.y0) / self.dy - 0.5, self.ny);
        [
            (self.index(i0, j0), (1.0 - wx) * (1.0 - wy)),
            (self.index(i1, j0), wx * (1.0 - wy)),
            (self.index(i0, j1), (1.0 - wx) * wy),
            (self.index(i1, j1), wx * wy),
        ]
    }
}

fn axis_stencil(f: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 || f <= 0.0 {
        return (0, 0, 0.0);
    }
    let max = (n - 1) as f64;
    if f >= max {
        return (n - 1, n - 1, 0.0);
    }
    let i0 = f.floor() as usize;
    (i0, i0 + 1, f - i0 as f64)
}

/// Real values on a [`GridGeometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    geometry: GridGeometry,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::InvalidInput(format!(
                "length mismatch: geometry has {} cells, got {} values",
                geometry.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn constant(geometry: GridGeometry, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            values: vec![value; geometry.len()],
            geometry,
        }
    }

    /// Evaluates `f(x, y)` at every cell centre.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(geometry.len());
        for j in 0..geometry.ny {
            for i in 0..geometry.nx {
                let (x, y) = geometry.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.geometry.index(i, j)]
    }

    /// Applies `f` pointwise. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        assert!(
            values.iter().all(|v| v.is_finite()),
            "map produced a non-finite value"
        );
        Self {
            geometry: self.geometry,
            values,
        }
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        self.geometry
            .bilinear_stencil(x, y)
            .iter()
            .map(|&(k, w)| w * self.values[k])
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Discrete L2 norm `sqrt(sum v^2 dx dy)`.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.geometry.cell_area()).sqrt()
    }
}

/// Gaussian mollifier parameters. `sigma_cells` is measured in cells of the
/// grid (or samples of the trace) the kernel is applied to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    pub sigma_cells: f64,
    /// Kernel half-width as a multiple of sigma.
    pub truncation_radius: f64,
}

impl Default for MollifierSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl MollifierSpec {
    pub fn new(sigma_cells: f64) -> Self {
        Self {
            sigma_cells,
            truncation_radius: 4.0,
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0)
    }

    pub fn is_identity(&self) -> bool {
        self.sigma_cells == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_cells >= 0.0 && self.sigma_cells.is_finite()) {
            return invalid(format!(
                "mollifier sigma must be >= 0, got {}",
                self.sigma_cells
            ));
        }
        if !(self.truncation_radius > 0.0 && self.truncation_radius.is_finite()) {
            return invalid(format!(
                "mollifier truncation radius must be > 0, got {}",
                self.truncation_radius
            ));
        }
        Ok(())
    }

    /// Unnormalized taps `exp(-k^2 / 2 sigma^2)` for `k = -r..=r`.
    pub(crate) fn taps(&self) -> Vec<f64> {
        let r = (self.truncation_radius * self.sigma_cells).ceil() as i64;
        let s2 = 2.0 * self.sigma_cells * self.sigma_cells;
        (-r..=r).map(|k| (-((k * k) as f64) / s2).exp()).collect()
    }
}

/// 1D truncated Gaussian convolution with the weights renormalized over the
/// in-range part of the support at every output position.
#[derive(Debug, Clone)]
pub(crate) struct Kernel1d {
    taps: Vec<f64>,
    radius: usize,
    /// Per-output normalization `1 / sum of in-range taps`.
    inv_norm: Vec<f64>,
}

impl Kernel1d {
    pub fn new(spec: &MollifierSpec, n: usize) -> Self {
        let taps = spec.taps();
        let radius = taps.len() / 2;
        let inv_norm = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(n - 1);
                let s: f64 = (lo..=hi).map(|j| taps[j + radius - i]).sum();
                1.0 / s
            })
            .collect();
        Self {
            taps,
            radius,
            inv_norm,
        }
    }

    /// `out = K x` over a strided lane of `n` elements.
    pub fn apply(&self, src: &[f64], dst: &mut [f64], offset: usize, stride: usize) {
        let n = self.inv_norm.len();
        let r = self.radius;
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let mut acc = 0.0;
            for j in lo..=hi {
                acc += self.taps[j + r - i] * src[offset + j * stride];
            }
            dst[offset + i * stride] = acc * self.inv_norm[i];
        }
    }

    /// `out = K^T y`; differs from [`Kernel1d::apply`] near the ends where
    /// the renormalization is position dependent.
    pub fn apply_transpose(&self, src: &[f64], dst: &mut [f64], offset: usize, stride: usize) {
        let n = self.inv_norm.len();
        let r = self.radius;
        for j in 0..n {
            let lo = j.saturating_sub(r);
            let hi = (j + r).min(n - 1);
            let mut acc = 0.0;
            for i in lo..=hi {
                acc += self.taps[j + r - i] * self.inv_norm[i] * src[offset + i * stride];
            }
            dst[offset + j * stride] = acc;
        }
    }
}

fn mollify_impl(field: &ScalarField2D, spec: &MollifierSpec, transpose: bool) -> ScalarField2D {
    if spec.is_identity() {
        return field.clone();
    }
    let g = field.geometry;
    let kx = Kernel1d::new(spec, g.nx);
    let ky = Kernel1d::new(spec, g.ny);
    let mut tmp = vec![0.0; g.len()];
    let mut out = vec![0.0; g.len()];
    let run = |k: &Kernel1d, src: &[f64], dst: &mut [f64], off: usize, stride: usize| {
        if transpose {
            k.apply_transpose(src, dst, off, stride)
        } else {
            k.apply(src, dst, off, stride)
        }
    };
    for j in 0..g.ny {
        run(&kx, &field.values, &mut tmp, j * g.nx, 1);
    }
    for i in 0..g.nx {
        run(&ky, &tmp, &mut out, i, g.nx);
    }
    ScalarField2D {
        geometry: g,
        values: out,
    }
}

/// Truncated, boundary-renormalized Gaussian convolution `K * m`.
pub fn mollify(field: &ScalarField2D, spec: &MollifierSpec) -> Result<ScalarField2D> {
    spec.validate()?;
    Ok(mollify_impl(field, spec, false))
}

/// Transpose of [`mollify`], used to pull gradients back through `K * m`.
pub fn mollify_transpose(field: &ScalarField2D, spec: &MollifierSpec) -> Result<ScalarField2D> {
    spec.validate()?;
    Ok(mollify_impl(field, spec, true))
}

/// Transfers a field onto `target`.
///
/// Integer-ratio coarsening averages blocks of source cells; everything else
/// uses bilinear interpolation at the target cell centres.
pub fn resample(field: &ScalarField2D, target: &GridGeometry) -> Result<ScalarField2D> {
    target.validate()?;
    let src = field.geometry;
    let tol = target.dx.max(target.dy);
    if !src.same_extent(target, tol) {
        return invalid(format!(
            "extent mismatch: source covers {:?} from ({}, {}), target {:?} from ({}, {})",
            src.extent(),
            src.x0,
            src.y0,
            target.extent(),
            target.x0,
            target.y0
        ));
    }
    let rx = src.nx / target.nx;
    let ry = src.ny / target.ny;
    let integer_coarsening = rx >= 1
        && ry >= 1
        && rx * target.nx == src.nx
        && ry * target.ny == src.ny
        && (rx > 1 || ry > 1)
        && src.same_extent(target, 1e-9 * (tol + 1.0));
    let values = if integer_coarsening {
        let inv = 1.0 / (rx * ry) as f64;
        let mut v = Vec::with_capacity(target.len());
        for jt in 0..target.ny {
            for it in 0..target.nx {
                let mut acc = 0.0;
                for j in jt * ry..(jt + 1) * ry {
                    let row = &field.values[j * src.nx + it * rx..j * src.nx + (it + 1) * rx];
                    acc += row.iter().sum::<f64>();
                }
                v.push(acc * inv);
            }
        }
        v
    } else {
        let mut v = Vec::with_capacity(target.len());
        for j in 0..target.ny {
            for i in 0..target.nx {
                let (x, y) = target.cell_center(i, j);
                v.push(field.sample_bilinear(x, y));
            }
        }
        v
    };
    ScalarField2D::new(*target, values)
}

const GRD_MAGIC: &str = "GRD1";

/// Encodes a field in the GRD1 layout: a 7-line text header followed by
/// little-endian f64 values.
pub fn encode_field(field: &ScalarField2D) -> Vec<u8> {
    let g = &field.geometry;
    let mut out = format!(
        "{GRD_MAGIC}\n{}\n{}\n{:?}\n{:?}\n{:?}\n{:?}\n",
        g.nx, g.ny, g.dx, g.dy, g.x0, g.y0
    )
    .into_bytes();
    out.reserve(field.values.len() * 8);
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<ScalarField2D> {
    let mut lines = Vec::with_capacity(7);
    let mut pos = 0;
    while lines.len() < 7 {
        let rel = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| {
                Error::Format(format!(
                    "malformed header: expected 7 lines, found {}",
                    lines.len()
                ))
            })?;
        let line = std::str::from_utf8(&bytes[pos..pos + rel])
            .map_err(|_| Error::Format("malformed header: not UTF-8".into()))?;
        lines.push(line.trim().to_string());
        pos += rel + 1;
    }
    if lines[0] != GRD_MAGIC {
        return Err(Error::Format(format!(
            "malformed header: bad magic {:?}",
            lines[0]
        )));
    }
    let int = |k: usize, name: &str| -> Result<usize> {
        lines[k]
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("malformed header: bad {name} {:?}", lines[k])))
    };
    let real = |k: usize, name: &str| -> Result<f64> {
        lines[k]
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("malformed header: bad {name} {:?}", lines[k])))
    };
    let geometry = GridGeometry {
        nx: int(1, "nx")?,
        ny: int(2, "ny")?,
        dx: real(3, "dx")?,
        dy: real(4, "dy")?,
        x0: real(5, "x0")?,
        y0: real(6, "y0")?,
    };
    geometry
        .validate()
        .map_err(|e| Error::Format(format!("malformed header: {e}")))?;
    let payload = &bytes[pos..];
    if payload.len() != geometry.len() * 8 {
        return Err(Error::Format(format!(
            "length mismatch: header declares {} values, payload holds {} bytes",
            geometry.len(),
            payload.len()
        )));
    }
    let mut values = Vec::with_capacity(geometry.len());
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at index {i}")));
        }
        values.push(v);
    }
    Ok(ScalarField2D { geometry, values })
}

pub fn write_field(field: &ScalarField2D, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_field(field))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<ScalarField2D> {
    decode_field(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::square(n, 1.0).unwrap()
    }

    /// Direct 2D double loop over the truncated kernel, renormalized over the
    /// in-domain part of the support.
    fn brute_force_mollify(field: &ScalarField2D, sigma: f64, trunc: f64) -> Vec<f64> {
        let g = field.geometry();
        let r = (trunc * sigma).ceil() as i64;
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny as i64 {
            for i in 0..g.nx as i64 {
                let (mut acc, mut norm) = (0.0, 0.0);
                for dj in -r..=r {
                    for di in -r..=r {
                        let (ii, jj) = (i + di, j + dj);
                        if ii < 0 || jj < 0 || ii >= g.nx as i64 || jj >= g.ny as i64 {
                            continue;
                        }
                        let w = (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
                        acc += w * field.get(ii as usize, jj as usize);
                        norm += w;
                    }
                }
                out[g.index(i as usize, j as usize)] = acc / norm;
            }
        }
        out
    }

    #[test]
    fn mollify_constant_is_fixed_point() {
        let f = ScalarField2D::constant(geom(40), 5.0);
        let m = mollify(&f, &MollifierSpec::new(10.0)).unwrap();
        for v in m.values() {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mollify_zero_sigma_is_identity() {
        let f = ScalarField2D::from_fn(geom(17), |x, y| (7.0 * x).sin() + y * y).unwrap();
        assert_eq!(mollify(&f, &MollifierSpec::identity()).unwrap(), f);
    }

    #[test]
    fn mollify_impulse_matches_double_loop() {
        let g = geom(101);
        let mut v = vec![0.0; g.len()];
        v[g.index(50, 50)] = 1.0;
        let f = ScalarField2D::new(g, v).unwrap();
        let got = mollify(&f, &MollifierSpec::new(2.0)).unwrap();
        let want = brute_force_mollify(&f, 2.0, 4.0);
        let diff = got
            .values()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "max diff {diff}");
        // Centre value is the normalized weight at offset zero.
        let taps = MollifierSpec::new(2.0).taps();
        let s: f64 = taps.iter().sum();
        assert!((got.get(50, 50) - 1.0 / (s * s)).abs() < 1e-15);
    }

    #[test]
    fn mollify_near_boundary_matches_double_loop() {
        let f = ScalarField2D::from_fn(geom(23), |x, y| (9.0 * x).cos() * (1.0 + y)).unwrap();
        let got = mollify(&f, &MollifierSpec::new(1.7)).unwrap();
        let want = brute_force_mollify(&f, 1.7, 4.0);
        for (a, b) in got.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mollify_preserves_mean_of_interior_bump() {
        let f = ScalarField2D::from_fn(geom(120), |x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            if r2 < 0.01 {
                (1.0 - r2 / 0.01).powi(2)
            } else {
                0.0
            }
        })
        .unwrap();
        let m = mollify(&f, &MollifierSpec::new(3.0)).unwrap();
        assert!(((m.mean() - f.mean()) / f.mean()).abs() < 1e-10);
    }

    #[test]
    fn mollify_peak_is_monotone_in_sigma() {
        let f = ScalarField2D::from_fn(geom(81), |x, y| {
            (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.002).exp()
        })
        .unwrap();
        let mut last = f.max();
        for s in [0.5, 1.0, 2.0, 3.0, 5.0, 8.0] {
            let p = mollify(&f, &MollifierSpec::new(s)).unwrap().max();
            assert!(p <= last + 1e-15, "sigma {s}: {p} > {last}");
            last = p;
        }
    }

    #[test]
    fn mollify_transpose_is_adjoint() {
        let g = GridGeometry::new(13, 9, 0.1, 0.2, 0.0, 0.0).unwrap();
        let a = ScalarField2D::from_fn(g, |x, y| (3.0 * x + y).sin()).unwrap();
        let b = ScalarField2D::from_fn(g, |x, y| (x - 2.0 * y).cos()).unwrap();
        let spec = MollifierSpec::new(1.3);
        let ka = mollify(&a, &spec).unwrap();
        let ktb = mollify_transpose(&b, &spec).unwrap();
        let lhs: f64 = ka.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a
            .values()
            .iter()
            .zip(ktb.values())
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn coarsen_block_means() {
        let g = GridGeometry::square(4, 1.0).unwrap();
        let f = ScalarField2D::new(g, (1..=16).map(f64::from).collect()).unwrap();
        let c = resample(&f, &GridGeometry::square(2, 1.0).unwrap()).unwrap();
        assert_eq!(c.values(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn resample_constant_any_resolution() {
        let f = ScalarField2D::constant(geom(30), 2.5);
        for n in [1, 7, 10, 15, 30, 45, 60] {
            let r = resample(&f, &geom(n)).unwrap();
            assert!(r.values().iter().all(|v| (v - 2.5).abs() < 1e-14));
            let back = resample(&r, &geom(30)).unwrap();
            assert!(back.values().iter().all(|v| (v - 2.5).abs() < 1e-14));
        }
    }

    #[test]
    fn ramp_coarsen_refine_within_one_coarse_cell() {
        let fine = geom(100);
        let coarse = geom(20);
        let f = ScalarField2D::from_fn(fine, |x, _| x).unwrap();
        let back = resample(&resample(&f, &coarse).unwrap(), &fine).unwrap();
        let err = back
            .values()
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= coarse.dx, "error {err}");
    }

    #[test]
    fn resample_rejects_extent_mismatch() {
        let f = ScalarField2D::constant(geom(10), 1.0);
        let t = GridGeometry::square(10, 2.0).unwrap();
        let e = resample(&f, &t).unwrap_err();
        assert!(e.to_string().contains("extent mismatch"));
    }

    #[test]
    fn grd1_rejects_length_mismatch() {
        let f = ScalarField2D::constant(geom(3), 1.0);
        let mut bytes = encode_field(&f);
        bytes.truncate(bytes.len() - 8);
        let e = decode_field(&bytes).unwrap_err();
        assert!(e.to_string().contains("length mismatch"), "{e}");
    }

    #[test]
    fn grd1_rejects_nan_payload() {
        let f = ScalarField2D::constant(geom(3), 1.0);
        let mut bytes = encode_field(&f);
        let start = bytes.len() - 9 * 8 + 4 * 8;
        bytes[start..start + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        let e = decode_field(&bytes).unwrap_err();
        assert!(e.to_string().contains("non-finite value at index 4"), "{e}");
    }

    #[test]
    fn grd1_rejects_bad_magic() {
        let f = ScalarField2D::constant(geom(2), 1.0);
        let mut bytes = encode_field(&f);
        bytes[3] = b'9';
        assert!(decode_field(&bytes)
            .unwrap_err()
            .to_string()
            .contains("malformed header"));
    }

    #[test]
    fn grd1_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.grd");
        let f = ScalarField2D::from_fn(
            GridGeometry::new(5, 3, 0.1, 0.3, -1.0, 2.0).unwrap(),
            |x, y| x / 3.0 + y,
        )
        .unwrap();
        write_field(&f, &p).unwrap();
        assert_eq!(read_field(&p).unwrap(), f);
    }

    proptest! {
        #[test]
        fn grd1_roundtrip_bit_exact(
            nx in 1usize..6, ny in 1usize..6,
            dx in 1e-6f64..10.0, x0 in -100f64..100.0,
            seed in proptest::collection::vec(-1e300f64..1e300, 36)
        ) {
            let g = GridGeometry::new(nx, ny, dx, dx * 1.5, x0, -x0 / 3.0).unwrap();
            let f = ScalarField2D::new(g, seed[..nx * ny].to_vec()).unwrap();
            let back = decode_field(&encode_field(&f)).unwrap();
            prop_assert_eq!(back.geometry(), f.geometry());
            for (a, b) in back.values().iter().zip(f.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
