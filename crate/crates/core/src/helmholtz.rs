//! Frequency-domain solver for `-(Lap + k^2 n_s) u = f` with complex index
//! `n_s`, and the Monte Carlo study of `E |u_eps - u|^2` against the
//! homogenized index.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::GridGeometry;
use crate::medium::{
    derive_seed, probability_from_density, sample_cloud, sediment_mask, DensityField,
    MediumConstants, ProbabilityField,
};

/// Complex values on a grid, row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    geometry: GridGeometry,
    values: Vec<C64>,
}

impl ComplexField2D {
    pub fn new(geometry: GridGeometry, values: Vec<C64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return invalid(format!(
                "{} values for a {}x{} grid",
                values.len(),
                geometry.nx,
                geometry.ny
            ));
        }
        if let Some(k) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return invalid(format!("non-finite value at index {k}"));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self {
            values: vec![C64::new(0.0, 0.0); geometry.len()],
            geometry,
        }
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(f64, f64) -> C64) -> Result<Self> {
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

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.values[self.geometry.index(i, j)]
    }

    /// Discrete `L2` norm with cell-area weights.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.geometry.cell_area()).sqrt()
    }

    /// Squared `L2` distance to a field on the same grid.
    pub fn l2_distance_sq(&self, other: &ComplexField2D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            * self.geometry.cell_area()
    }

    /// Infimum of the imaginary part.
    pub fn min_imag(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.im)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelmholtzConfig {
    /// Wavenumber in water (1/m).
    pub k: f64,
    /// Real index of sediment, `c0 / c1`.
    pub n1: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    /// Absorbing padding on each side; `None` spans 1.5 wavelengths, capped
    /// at a quarter of the grid and at least 8 cells.
    pub pad_cells: Option<usize>,
    /// Amplitude decay across the padding.
    pub decay: f64,
    /// Relative residual of the linear solves.
    pub tolerance: f64,
}

impl HelmholtzConfig {
    /// `n1 = c0 / c1` and absorptions of 0.1.
    pub fn new(k: f64, constants: &MediumConstants) -> Self {
        Self {
            k,
            n1: constants.c0 / constants.c1,
            kappa0: 0.1,
            kappa1: 0.1,
            pad_cells: None,
            decay: 1e-6,
            tolerance: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return invalid(format!("wavenumber must be positive, got {}", self.k));
        }
        if !(self.kappa0 > 0.0 && self.kappa1 > 0.0) {
            return invalid(format!(
                "absorptions must be positive, got {} and {}",
                self.kappa0, self.kappa1
            ));
        }
        if !(self.n1 > 0.0) {
            return invalid("sediment index must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) || !(self.tolerance > 0.0) {
            return invalid("padding decay must lie in (0, 1) and the tolerance be positive");
        }
        Ok(())
    }

    /// `1 + i kappa0`.
    pub fn ns0(&self) -> C64 {
        C64::new(1.0, self.kappa0)
    }

    /// `n1^2 + i kappa1`.
    pub fn ns1(&self) -> C64 {
        C64::new(self.n1 * self.n1, self.kappa1)
    }

    fn pad(&self, g: &GridGeometry) -> usize {
        self.pad_cells.unwrap_or_else(|| {
            let wavelengths = (1.5 * std::f64::consts::TAU / self.k / g.dx.min(g.dy)).ceil();
            (wavelengths as usize).min(g.nx.max(g.ny) / 4).max(8)
        })
    }

    /// Peak imaginary index of the padding ramp for which the
    /// water attenuation `k Im sqrt(1 + i eta)` integrates to `ln(1/decay)`
    /// across `width`.
    fn ramp_peak(&self, width: f64) -> f64 {
        let target = (1.0 / self.decay).ln();
        let attenuation = |peak: f64| {
            let n = 64;
            let rate = |s: f64| self.k * C64::new(1.0, peak * s.powf(RAMP_POWER)).sqrt().im;
            let mut sum = rate(0.0) + rate(1.0);
            for i in 1..n {
                sum += rate(i as f64 / n as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            sum / (3.0 * n as f64) * width
        };
        let mut hi = 1.0;
        while attenuation(hi) < target {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if attenuation(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Exponent of the padding profile `eta_max (d / width)^p`.
const RAMP_POWER: f64 = 3.0;

/// Real source `exp(-|x - center|^2 / (2 width^2))`.
pub fn gaussian_source(
    geometry: GridGeometry,
    center: (f64, f64),
    width: f64,
) -> Result<ComplexField2D> {
    if !(width > 0.0) {
        return invalid(format!("source width must be positive, got {width}"));
    }
    ComplexField2D::from_fn(geometry, |x, y| {
        let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
        C64::new((-r2 / (2.0 * width * width)).exp(), 0.0)
    })
}

/// `mu = p ns1 + (1 - p) ns0`.
pub fn homogenized_index(prob: &ProbabilityField, cfg: &HelmholtzConfig) -> ComplexField2D {
    let (a, b) = (cfg.ns0(), cfg.ns1());
    let values = prob
        .field()
        .values()
        .iter()
        .map(|&p| b * p + a * (1.0 - p))
        .collect();
    ComplexField2D {
        geometry: *prob.geometry(),
        values,
    }
}

/// Five-point operator on the padded grid with zero Dirichlet data.
#[derive(Debug, Clone)]
struct Operator {
    nx: usize,
    ny: usize,
    pad: usize,
    cx: f64,
    cy: f64,
    diag: Vec<C64>,
}

impl Operator {
    fn new(ns: &ComplexField2D, cfg: &HelmholtzConfig) -> Result<Self> {
        cfg.validate()?;
        let g = ns.geometry;
        let inf = ns.min_imag();
        if !(inf > 0.0) {
            return invalid(format!(
                "imaginary part of the index must be positive, minimum is {inf}"
            ));
        }
        let pad = cfg.pad(&g);
        let (nx, ny) = (g.nx + 2 * pad, g.ny + 2 * pad);
        let (cx, cy) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
        let width = pad as f64 * g.dx.min(g.dy);
        let eta_max = if pad == 0 { 0.0 } else { cfg.ramp_peak(width) };
        let ramp = |k: usize, n: usize| -> f64 {
            let d = if k < pad {
                (pad - k) as f64 - 0.5
            } else if k >= pad + n {
                (k - pad - n) as f64 + 0.5
            } else {
                return 0.0;
            };
            (d / pad as f64).powf(RAMP_POWER)
        };
        let k2 = cfg.k * cfg.k;
        let mut diag = Vec::with_capacity(nx * ny);
        for jp in 0..ny {
            let j = jp.saturating_sub(pad).min(g.ny - 1);
            for ip in 0..nx {
                let i = ip.saturating_sub(pad).min(g.nx - 1);
                let eta = eta_max * (ramp(ip, g.nx) + ramp(jp, g.ny)).min(1.0);
                let n = ns.get(i, j) + C64::new(0.0, eta);
                diag.push(C64::new(2.0 * (cx + cy), 0.0) - n * k2);
            }
        }
        Ok(Self {
            nx,
            ny,
            pad,
            cx,
            cy,
            diag,
        })
    }

    fn len(&self) -> usize {
        self.nx * self.ny
    }

    fn apply(&self, u: &[C64], out: &mut [C64]) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            for i in 0..nx {
                let p = j * nx + i;
                let mut v = self.diag[p] * u[p];
                if i > 0 {
                    v -= u[p - 1] * self.cx;
                }
                if i + 1 < nx {
                    v -= u[p + 1] * self.cx;
                }
                if j > 0 {
                    v -= u[p - nx] * self.cy;
                }
                if j + 1 < ny {
                    v -= u[p + nx] * self.cy;
                }
                out[p] = v;
            }
        }
    }

    fn embed(&self, f: &ComplexField2D) -> Vec<C64> {
        let g = f.geometry;
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        for j in 0..g.ny {
            let row = (j + self.pad) * self.nx + self.pad;
            out[row..row + g.nx].copy_from_slice(&f.values[j * g.nx..(j + 1) * g.nx]);
        }
        out
    }

    fn restrict(&self, u: &[C64], g: GridGeometry) -> ComplexField2D {
        let mut values = Vec::with_capacity(g.len());
        for j in 0..g.ny {
            let row = (j + self.pad) * self.nx + self.pad;
            values.extend_from_slice(&u[row..row + g.nx]);
        }
        ComplexField2D {
            geometry: g,
            values,
        }
    }
}

/// LU factors of a banded matrix without pivoting, `2b + 1` entries per row.
#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    b: usize,
    data: Vec<C64>,
}

impl BandLu {
    fn factor(op: &Operator) -> Result<Self> {
        let (n, b) = (op.len(), op.nx);
        let w = 2 * b + 1;
        let mut data = vec![C64::new(0.0, 0.0); n * w];
        for p in 0..n {
            let (i, j) = (p % op.nx, p / op.nx);
            let row = p * w + b;
            data[row] = op.diag[p];
            if i > 0 {
                data[row - 1] = C64::new(-op.cx, 0.0);
            }
            if i + 1 < op.nx {
                data[row + 1] = C64::new(-op.cx, 0.0);
            }
            if j > 0 {
                data[row - b] = C64::new(-op.cy, 0.0);
            }
            if j + 1 < op.ny {
                data[row + b] = C64::new(-op.cy, 0.0);
            }
        }
        for k in 0..n {
            let piv = data[k * w + b];
            if piv.norm() == 0.0 {
                return Err(Error::Numerical(format!("zero pivot at row {k}")));
            }
            let inv = 1.0 / piv;
            let hi = (k + b).min(n - 1);
            let len = hi - k;
            let (head, tail) = data.split_at_mut((k + 1) * w);
            let urow = &head[k * w + b + 1..k * w + b + 1 + len];
            for i in k + 1..=hi {
                let row = &mut tail[(i - k - 1) * w..(i - k) * w];
                let off = k + b - i;
                let l = row[off] * inv;
                row[off] = l;
                if l.re == 0.0 && l.im == 0.0 {
                    continue;
                }
                for (a, u) in row[off + 1..off + 1 + len].iter_mut().zip(urow) {
                    *a -= l * u;
                }
            }
        }
        Ok(Self { n, b, data })
    }

    fn solve(&self, x: &mut [C64]) {
        let (n, b) = (self.n, self.b);
        let w = 2 * b + 1;
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let row = &self.data[i * w..];
            let mut acc = x[i];
            for j in lo..i {
                acc -= row[j + b - i] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let row = &self.data[i * w..];
            let mut acc = x[i];
            for j in i + 1..=hi {
                acc -= row[j + b - i] * x[j];
            }
            x[i] = acc / row[b];
        }
    }
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn residual(op: &Operator, x: &[C64], rhs: &[C64], r: &mut [C64]) -> f64 {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    norm(r)
}

/// Right-preconditioned restarted GMRES. Returns the final relative residual.
fn gmres(
    op: &Operator,
    pre: &BandLu,
    rhs: &[C64],
    x: &mut [C64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> f64 {
    let n = op.len();
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        return 0.0;
    }
    let mut r = vec![C64::new(0.0, 0.0); n];
    let mut z = vec![C64::new(0.0, 0.0); n];
    let mut total = 0;
    loop {
        let beta = residual(op, x, rhs, &mut r);
        if beta <= tol * bnorm || total >= max_iter {
            return beta / bnorm;
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|c| c / beta).collect()];
        let mut h = vec![vec![C64::new(0.0, 0.0); restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![C64::new(0.0, 0.0); restart];
        let mut g = vec![C64::new(0.0, 0.0); restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut m = 0;
        while m < restart && total < max_iter {
            z.copy_from_slice(&v[m]);
            pre.solve(&mut z);
            let mut w = vec![C64::new(0.0, 0.0); n];
            op.apply(&z, &mut w);
            for (i, vi) in v.iter().enumerate() {
                let hij: C64 = vi.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
                h[i][m] = hij;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm(&w);
            h[m + 1][m] = C64::new(hn, 0.0);
            for i in 0..m {
                let t = h[i][m] * cs[i] + sn[i] * h[i + 1][m];
                h[i + 1][m] = -sn[i].conj() * h[i][m] + h[i + 1][m] * cs[i];
                h[i][m] = t;
            }
            let (a, bb) = (h[m][m], h[m + 1][m]);
            let d = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if a.norm() == 0.0 {
                cs[m] = 0.0;
                sn[m] = C64::new(1.0, 0.0);
            } else {
                cs[m] = a.norm() / d;
                sn[m] = a / a.norm() * bb.conj() / d;
            }
            h[m][m] = a * cs[m] + sn[m] * bb;
            h[m + 1][m] = C64::new(0.0, 0.0);
            g[m + 1] = -sn[m].conj() * g[m];
            g[m] *= cs[m];
            m += 1;
            total += 1;
            if g[m].norm() <= 0.5 * tol * bnorm || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|c| c / hn).collect());
        }
        let mut y = vec![C64::new(0.0, 0.0); m];
        for i in (0..m).rev() {
            let mut acc = g[i];
            for k in i + 1..m {
                acc -= h[i][k] * y[k];
            }
            y[i] = acc / h[i][i];
        }
        z.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        for (yi, vi) in y.iter().zip(&v) {
            for (zk, vk) in z.iter_mut().zip(vi) {
                *zk += yi * vk;
            }
        }
        pre.solve(&mut z);
        for (xk, zk) in x.iter_mut().zip(&z) {
            *xk += zk;
        }
    }
}

/// Factorization of a reference index, reused to precondition solves with
/// nearby indices on the same grid.
#[derive(Debug, Clone)]
pub struct HelmholtzSolver {
    cfg: HelmholtzConfig,
    geometry: GridGeometry,
    reference: Operator,
    lu: BandLu,
}

const RESTART: usize = 40;
const MAX_ITER: usize = 400;

impl HelmholtzSolver {
    pub fn new(reference: &ComplexField2D, cfg: &HelmholtzConfig) -> Result<Self> {
        let op = Operator::new(reference, cfg)?;
        let lu = BandLu::factor(&op)?;
        Ok(Self {
            cfg: cfg.clone(),
            geometry: reference.geometry,
            reference: op,
            lu,
        })
    }

    pub fn config(&self) -> &HelmholtzConfig {
        &self.cfg
    }

    /// Solution for the reference index.
    pub fn solve_reference(&self, f: &ComplexField2D) -> Result<ComplexField2D> {
        self.check(f)?;
        let rhs = self.reference.embed(f);
        let mut x = rhs.clone();
        self.lu.solve(&mut x);
        let rel = gmres(
            &self.reference,
            &self.lu,
            &rhs,
            &mut x,
            self.cfg.tolerance,
            RESTART,
            MAX_ITER,
        );
        if !(rel <= self.cfg.tolerance) {
            return Err(Error::Numerical(format!(
                "reference solve stalled at relative residual {rel:e}"
            )));
        }
        Ok(self.reference.restrict(&x, self.geometry))
    }

    /// Solution for index `ns` by preconditioned GMRES, with a direct
    /// factorization when the iteration stalls.
    pub fn solve(&self, ns: &ComplexField2D, f: &ComplexField2D) -> Result<ComplexField2D> {
        self.check(f)?;
        if ns.geometry != self.geometry {
            return invalid("index and solver grids differ");
        }
        let op = Operator::new(ns, &self.cfg)?;
        let rhs = op.embed(f);
        let mut x = rhs.clone();
        self.lu.solve(&mut x);
        let mut rel = gmres(
            &op,
            &self.lu,
            &rhs,
            &mut x,
            self.cfg.tolerance,
            RESTART,
            MAX_ITER,
        );
        if !(rel <= self.cfg.tolerance) {
            log::warn!("preconditioned solve stalled at {rel:e}; factorizing directly");
            let lu = BandLu::factor(&op)?;
            x.copy_from_slice(&rhs);
            lu.solve(&mut x);
            rel = gmres(
                &op,
                &lu,
                &rhs,
                &mut x,
                self.cfg.tolerance,
                RESTART,
                MAX_ITER,
            );
        }
        if !(rel <= self.cfg.tolerance) {
            return Err(Error::Numerical(format!(
                "Helmholtz solve stalled at relative residual {rel:e}"
            )));
        }
        Ok(op.restrict(&x, self.geometry))
    }

    fn check(&self, f: &ComplexField2D) -> Result<()> {
        if f.geometry != self.geometry {
            return invalid("source and solver grids differ");
        }
        Ok(())
    }
}

/// Solves `-(Lap + k^2 ns) u = f` on the grid of `ns`, padded by an absorbing
/// layer, to the configured relative residual.
pub fn solve_helmholtz(
    ns: &ComplexField2D,
    cfg: &HelmholtzConfig,
    f: &ComplexField2D,
) -> Result<ComplexField2D> {
    HelmholtzSolver::new(ns, cfg)?.solve_reference(f)
}

/// `|u| k^2 inf(Im ns) / |f|`; at most 1 for exact solutions.
pub fn energy_bound_ratio(
    u: &ComplexField2D,
    ns: &ComplexField2D,
    f: &ComplexField2D,
    k: f64,
) -> f64 {
    let fnorm = f.l2_norm();
    if fnorm == 0.0 {
        return 0.0;
    }
    u.l2_norm() * k * k * ns.min_imag() / fnorm
}

/// Index field of one realization: `ns1` inside particles, `ns0` elsewhere.
pub fn realization_index(
    density: &DensityField,
    epsilon: f64,
    seed: u64,
    cfg: &HelmholtzConfig,
) -> Result<ComplexField2D> {
    let cloud = sample_cloud(density, epsilon, seed)?;
    let g = *density.geometry();
    let (a, b) = (cfg.ns0(), cfg.ns1());
    let values = sediment_mask(&cloud, &g)
        .into_iter()
        .map(|s| if s { b } else { a })
        .collect();
    Ok(ComplexField2D {
        geometry: g,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudySpec {
    /// Decreasing particle radii (m).
    pub epsilons: Vec<f64>,
    pub realizations: usize,
    pub density: DensityField,
    /// Declared Hölder exponent of the density.
    pub holder_alpha: f64,
    pub source: ComplexField2D,
    pub seed: u64,
    pub bootstrap_samples: usize,
}

impl ConvergenceStudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.len() < 3 {
            return invalid(format!(
                "the study needs at least 3 radii, got {}",
                self.epsilons.len()
            ));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0]))
            || !(self.epsilons.last().copied().unwrap_or(0.0) > 0.0)
        {
            return invalid("radii must be positive and strictly decreasing");
        }
        if self.realizations < 8 {
            return invalid(format!(
                "the study needs at least 8 realizations per radius, got {}",
                self.realizations
            ));
        }
        let g = self.density.geometry();
        let h = g.dx.max(g.dy);
        let smallest = *self.epsilons.last().unwrap();
        if smallest < 4.0 * h * (1.0 - 1e-9) {
            return invalid(format!(
                "radius {smallest} is resolved by fewer than 4 cells of size {h}"
            ));
        }
        if self.source.geometry != *g {
            return invalid("source and density grids differ");
        }
        if self.bootstrap_samples == 0 {
            return invalid("bootstrap needs at least one resample");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub epsilon: f64,
    pub mean_sq_error: f64,
    pub stderr: f64,
    pub realizations: usize,
    /// `|u_eps - u|^2` per realization.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    /// Least-squares slope of `ln mean_sq_error` against `ln epsilon`.
    pub slope: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `2 alpha`.
    pub theoretical_rate: f64,
    /// `|u|^2` of the homogenized solution.
    pub homogenized_norm_sq: f64,
    pub energy_bound_max_ratio: f64,
    /// Solves with `|u| > 1.05 |f| / (k^2 inf Im ns)`.
    pub energy_bound_violations: usize,
}

/// Slack allowed on the energy bound for discretization effects.
pub const ENERGY_BOUND_SLACK: f64 = 1.05;

impl StudyReport {
    /// `epsilon,mean_sq_error,stderr,M` rows and a `# slope,ci_low,ci_high` footer.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,mean_sq_error,stderr,M\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:e},{:e},{:e},{}\n",
                r.epsilon, r.mean_sq_error, r.stderr, r.realizations
            ));
        }
        s.push_str(&format!(
            "# slope,ci_low,ci_high: {},{},{}\n",
            self.slope, self.ci_low, self.ci_high
        ));
        s
    }
}

fn fit_slope(eps: &[f64], means: &[f64]) -> f64 {
    if means.iter().any(|&m| !(m > 0.0)) {
        return f64::NAN;
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean squared distance between realization solutions and the homogenized
/// solution at each radius, with a bootstrap interval for the log-log slope.
pub fn convergence_study(
    spec: &ConvergenceStudySpec,
    cfg: &HelmholtzConfig,
) -> Result<StudyReport> {
    spec.validate()?;
    cfg.validate()?;
    let prob = probability_from_density(&spec.density);
    let mu = homogenized_index(&prob, cfg);
    let solver = HelmholtzSolver::new(&mu, cfg)?;
    let u = solver.solve_reference(&spec.source)?;
    let mut ratios = vec![energy_bound_ratio(&u, &mu, &spec.source, cfg.k)];
    let m = spec.realizations;
    let jobs: Vec<(usize, usize)> = (0..spec.epsilons.len())
        .flat_map(|e| (0..m).map(move |r| (e, r)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(e, r)| {
            let seed = derive_seed(derive_seed(spec.seed, e as u64), r as u64);
            let ns = realization_index(&spec.density, spec.epsilons[e], seed, cfg)?;
            let ue = solver.solve(&ns, &spec.source)?;
            Ok((
                ue.l2_distance_sq(&u),
                energy_bound_ratio(&ue, &ns, &spec.source, cfg.k),
            ))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut rows = Vec::new();
    for (e, &eps) in spec.epsilons.iter().enumerate() {
        let errors: Vec<f64> = results[e * m..(e + 1) * m].iter().map(|r| r.0).collect();
        ratios.extend(results[e * m..(e + 1) * m].iter().map(|r| r.1));
        let mean_sq_error = mean(&errors);
        let var = errors
            .iter()
            .map(|x| (x - mean_sq_error).powi(2))
            .sum::<f64>()
            / (m as f64 - 1.0);
        rows.push(StudyRow {
            epsilon: eps,
            mean_sq_error,
            stderr: (var / m as f64).sqrt(),
            realizations: m,
            errors,
        });
    }
    let means: Vec<f64> = rows.iter().map(|r| r.mean_sq_error).collect();
    let slope = fit_slope(&spec.epsilons, &means);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, u64::MAX));
    let mut boot: Vec<f64> = (0..spec.bootstrap_samples)
        .map(|_| {
            let means: Vec<f64> = rows
                .iter()
                .map(|r| {
                    (0..m)
                        .map(|_| r.errors[rng.random_range(0..m)])
                        .sum::<f64>()
                        / m as f64
                })
                .collect();
            fit_slope(&spec.epsilons, &means)
        })
        .collect();
    let (ci_low, ci_high) = if boot.iter().all(|b| b.is_finite()) {
        boot.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (q(0.025), q(0.975))
    } else {
        (f64::NAN, f64::NAN)
    };
    let energy_bound_max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let energy_bound_violations = ratios.iter().filter(|&&r| r > ENERGY_BOUND_SLACK).count();
    if energy_bound_violations > 0 {
        log::error!("{energy_bound_violations} solves exceed the energy bound (max ratio {energy_bound_max_ratio})");
    }
    Ok(StudyReport {
        rows,
        slope,
        ci_low,
        ci_high,
        theoretical_rate: 2.0 * spec.holder_alpha,
        homogenized_norm_sq: u.l2_norm().powi(2),
        energy_bound_max_ratio,
        energy_bound_violations,
    })
}
