//! Random sediment media: Poisson clouds of particles, their rasterization
//! into velocity fields, and the pointwise maps between density `rho`,
//! coverage probability `p`, effective slowness squared `m` and velocity.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Result};
use crate::grid::{encode_field, GridGeometry, ScalarField2D};

/// P-wave speeds of water (`c0`) and sediment (`c1`) in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumConstants {
    pub c0: f64,
    pub c1: f64,
}

impl Default for MediumConstants {
    fn default() -> Self {
        Self {
            c0: 1500.0,
            c1: 3000.0,
        }
    }
}

impl MediumConstants {
    pub fn new(c0: f64, c1: f64) -> Result<Self> {
        let c = Self { c0, c1 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c1 > 0.0 && self.c0.is_finite() && self.c1.is_finite()) {
            return invalid(format!(
                "wave speeds must be positive, got c0={} c1={}",
                self.c0, self.c1
            ));
        }
        if self.c0 == self.c1 {
            return invalid("water and sediment speeds must differ");
        }
        Ok(())
    }

    /// `1 / c0^2`.
    pub fn water_slowness_sq(&self) -> f64 {
        1.0 / (self.c0 * self.c0)
    }

    /// `1 / c1^2`.
    pub fn sediment_slowness_sq(&self) -> f64 {
        1.0 / (self.c1 * self.c1)
    }
}

/// Nonnegative particle density `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField(ScalarField2D);

impl DensityField {
    pub fn new(field: ScalarField2D) -> Result<Self> {
        if let Some(i) = field.values().iter().position(|&v| v < 0.0) {
            return invalid(format!(
                "density must be nonnegative, got {} at index {i}",
                field.values()[i]
            ));
        }
        Ok(Self(field))
    }

    pub fn field(&self) -> &ScalarField2D {
        &self.0
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.0.geometry()
    }

    /// Content hash identifying this density in cloud files.
    pub fn fingerprint(&self) -> String {
        // FNV-1a over the GRD1 encoding.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in encode_field(&self.0) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Coverage probability field with values in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField(ScalarField2D);

impl ProbabilityField {
    pub fn new(field: ScalarField2D) -> Result<Self> {
        if let Some(i) = field
            .values()
            .iter()
            .position(|&v| !(0.0..1.0).contains(&v))
        {
            return invalid(format!(
                "probability must lie in [0, 1), got {} at index {i}",
                field.values()[i]
            ));
        }
        Ok(Self(field))
    }

    pub fn field(&self) -> &ScalarField2D {
        &self.0
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.0.geometry()
    }

    pub fn into_field(self) -> ScalarField2D {
        self.0
    }
}

/// `p = 1 - exp(-rho)`.
pub fn probability_from_density(density: &DensityField) -> ProbabilityField {
    ProbabilityField(density.0.map(|r| -(-r).exp_m1()))
}

/// `rho = -ln(1 - p)`.
pub fn density_from_probability(prob: &ProbabilityField) -> DensityField {
    DensityField(prob.0.map(|p| -(-p).ln_1p()))
}

/// `m = p / c1^2 + (1 - p) / c0^2`.
pub fn effective_slowness_squared(
    prob: &ProbabilityField,
    constants: &MediumConstants,
) -> ScalarField2D {
    let (mw, ms) = (
        constants.water_slowness_sq(),
        constants.sediment_slowness_sq(),
    );
    prob.0.map(|p| p * ms + (1.0 - p) * mw)
}

/// `c = m^(-1/2)`.
pub fn effective_velocity(slowness_sq: &ScalarField2D) -> Result<ScalarField2D> {
    if slowness_sq.min() <= 0.0 {
        return invalid("slowness squared must be positive");
    }
    Ok(slowness_sq.map(|m| 1.0 / m.sqrt()))
}

/// Probability recovered from an inverted slowness model.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredProbability {
    pub probability: ProbabilityField,
    /// Number of cells clamped into `[0, 1)`.
    pub clamped: usize,
}

/// Inverse of [`effective_slowness_squared`] before clamping.
pub fn probability_from_slowness_unclamped(
    m: &ScalarField2D,
    constants: &MediumConstants,
) -> ScalarField2D {
    let (mw, ms) = (
        constants.water_slowness_sq(),
        constants.sediment_slowness_sq(),
    );
    m.map(|v| (v - mw) / (ms - mw))
}

/// `p = (m - 1/c0^2) / (1/c1^2 - 1/c0^2)`, clamped into `[0, 1)`.
pub fn probability_from_slowness(
    m: &ScalarField2D,
    constants: &MediumConstants,
) -> Result<RecoveredProbability> {
    constants.validate()?;
    let raw = probability_from_slowness_unclamped(m, constants);
    let below_one = 1.0 - f64::EPSILON;
    let mut clamped = 0;
    let values = raw
        .values()
        .iter()
        .map(|&p| {
            let c = p.clamp(0.0, below_one);
            if c != p {
                clamped += 1;
            }
            c
        })
        .collect();
    let probability = ProbabilityField(ScalarField2D::new(*m.geometry(), values)?);
    Ok(RecoveredProbability {
        probability,
        clamped,
    })
}

/// `p(x) = p_max exp(-|x - x0|^2 / (2 sigma^2))`.
pub fn gaussian_profile(
    p_max: f64,
    center: (f64, f64),
    sigma: f64,
    geometry: &GridGeometry,
) -> Result<ProbabilityField> {
    if !(0.0..1.0).contains(&p_max) {
        return invalid(format!("p_max must lie in [0, 1), got {p_max}"));
    }
    if !(sigma > 0.0) {
        return invalid(format!("gaussian sigma must be positive, got {sigma}"));
    }
    let field = ScalarField2D::from_fn(*geometry, |x, y| {
        let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
        p_max * (-r2 / (2.0 * sigma * sigma)).exp()
    })?;
    ProbabilityField::new(field)
}

/// Exponent `lambda * G` of the depth profile, with
/// `G = (1 - e^-M) / (M phi)` and `phi = e^M / (e^M - 1) - 1 / M`.
pub fn chiu_exponent(m_param: f64, lambda: f64) -> f64 {
    let em = m_param.exp();
    let phi = em / (em - 1.0) - 1.0 / m_param;
    let g = (1.0 - (-m_param).exp()) / (m_param * phi);
    lambda * g
}

/// Depth profile `p_max (z / (e^M - z (e^M - 1)))^(lambda G)` evaluated at the
/// normalized depth `z` in `[0, 1]`.
pub fn chiu_value(p_max: f64, m_param: f64, lambda: f64, depth: f64) -> f64 {
    let em = m_param.exp();
    let inner = depth / (em - depth * (em - 1.0));
    p_max * inner.max(0.0).powf(chiu_exponent(m_param, lambda))
}

/// Chiu-type sediment profile: zero at the surface (`y = y0`), `p_max` at
/// the bed (`y = y0 + Ly`).
pub fn chiu_profile(
    p_max: f64,
    m_param: f64,
    lambda: f64,
    geometry: &GridGeometry,
) -> Result<ProbabilityField> {
    if !(0.0..1.0).contains(&p_max) {
        return invalid(format!("p_max must lie in [0, 1), got {p_max}"));
    }
    if !(m_param > 0.0 && lambda > 0.0) {
        return invalid(format!(
            "chiu parameters must be positive, got M={m_param} lambda={lambda}"
        ));
    }
    let (_, ly) = geometry.extent();
    let field = ScalarField2D::from_fn(*geometry, |_, y| {
        let depth = ((y - geometry.y0) / ly).clamp(0.0, 1.0);
        chiu_value(p_max, m_param, lambda, depth)
    })?;
    ProbabilityField::new(field)
}

/// Seed of stream `k` under `master`: output `k + 1` of a SplitMix64
/// generator started at `master`, computable without the earlier outputs.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    let mut z = master.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One realization of particle centres.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonCloud {
    pub epsilon: f64,
    pub centers: Vec<(f64, f64)>,
    pub seed: u64,
    pub density_ref: String,
}

/// Samples particle centres with intensity `rho / (pi eps^2)` by thinning a
/// homogeneous process of rate `rho_max / (pi eps^2)`.
pub fn sample_cloud(density: &DensityField, epsilon: f64, seed: u64) -> Result<PoissonCloud> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid(format!("particle radius must be positive, got {epsilon}"));
    }
    let g = *density.geometry();
    let field = density.field();
    let rho_max = field.max();
    let density_ref = density.fingerprint();
    let mut centers = Vec::new();
    if rho_max > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lx, ly) = g.extent();
        let mean = rho_max * lx * ly / (std::f64::consts::PI * epsilon * epsilon);
        let n = Poisson::new(mean)
            .map_err(|e| Error::InvalidInput(format!("bad Poisson mean {mean}: {e}")))?
            .sample(&mut rng) as usize;
        centers.reserve((n as f64 * field.mean() / rho_max) as usize + 16);
        for _ in 0..n {
            let x = g.x0 + lx * rng.random::<f64>();
            let y = g.y0 + ly * rng.random::<f64>();
            let keep: f64 = rng.random();
            if keep * rho_max < field.sample_bilinear(x, y) {
                centers.push((x, y));
            }
        }
    }
    Ok(PoissonCloud {
        epsilon,
        centers,
        seed,
        density_ref,
    })
}

/// Marks cells whose centre lies strictly within `epsilon` of a particle.
pub fn sediment_mask(cloud: &PoissonCloud, geometry: &GridGeometry) -> Vec<bool> {
    let g = geometry;
    let eps = cloud.epsilon;
    let eps2 = eps * eps;
    let mut mask = vec![false; g.len()];
    // Each particle paints the cells of its bounding box.
    let span = |c: f64, origin: f64, h: f64, n: usize| -> Option<(usize, usize)> {
        let lo = ((c - eps - origin) / h - 0.5).ceil().max(0.0);
        let hi = ((c + eps - origin) / h - 0.5).floor().min(n as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };
    for &(cx, cy) in &cloud.centers {
        let (Some((i0, i1)), Some((j0, j1))) =
            (span(cx, g.x0, g.dx, g.nx), span(cy, g.y0, g.dy, g.ny))
        else {
            continue;
        };
        for j in j0..=j1 {
            let dy = g.y0 + (j as f64 + 0.5) * g.dy - cy;
            let row = j * g.nx;
            for i in i0..=i1 {
                let dx = g.x0 + (i as f64 + 0.5) * g.dx - cx;
                if dx * dx + dy * dy < eps2 {
                    mask[row + i] = true;
                }
            }
        }
    }
    mask
}

/// Velocity realization: `c1` inside particles, `c0` elsewhere.
pub fn rasterize_velocity(
    cloud: &PoissonCloud,
    constants: &MediumConstants,
    geometry: &GridGeometry,
) -> ScalarField2D {
    if geometry.dx.max(geometry.dy) > cloud.epsilon / 2.0 {
        log::warn!(
            "cell size {} exceeds half the particle radius {}; particles are under-resolved",
            geometry.dx.max(geometry.dy),
            cloud.epsilon
        );
    }
    let values = sediment_mask(cloud, geometry)
        .into_iter()
        .map(|s| if s { constants.c1 } else { constants.c0 })
        .collect();
    ScalarField2D::new(*geometry, values).expect("speeds are finite")
}

/// `p_eps(x) = 1 - exp(-avg_{B(x, eps)} rho)`.
///
/// The ball average is a cell quadrature with overlap fractions estimated
/// on an 8x8 sub-grid for cells cut by the sphere, normalized over the
/// part of the ball inside the grid.
pub fn coverage_probability(density: &DensityField, epsilon: f64) -> Result<ScalarField2D> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid(format!("particle radius must be positive, got {epsilon}"));
    }
    const SUB: usize = 8;
    let g = *density.geometry();
    let rho = density.field().values();
    let ri = (epsilon / g.dx).ceil() as i64 + 1;
    let rj = (epsilon / g.dy).ceil() as i64 + 1;
    // Overlap weights depend only on the cell offset.
    let mut stencil = Vec::new();
    let (hx, hy) = (0.5 * g.dx, 0.5 * g.dy);
    for dj in -rj..=rj {
        for di in -ri..=ri {
            let (ox, oy) = (di as f64 * g.dx, dj as f64 * g.dy);
            let near = (ox.abs() - hx).max(0.0).powi(2) + (oy.abs() - hy).max(0.0).powi(2);
            if near >= epsilon * epsilon {
                continue;
            }
            let far = (ox.abs() + hx).powi(2) + (oy.abs() + hy).powi(2);
            let w = if far < epsilon * epsilon {
                1.0
            } else {
                let mut inside = 0;
                for sj in 0..SUB {
                    for si in 0..SUB {
                        let px = ox - hx + (si as f64 + 0.5) * g.dx / SUB as f64;
                        let py = oy - hy + (sj as f64 + 0.5) * g.dy / SUB as f64;
                        if px * px + py * py < epsilon * epsilon {
                            inside += 1;
                        }
                    }
                }
                inside as f64 / (SUB * SUB) as f64
            };
            if w > 0.0 {
                stencil.push((di, dj, w));
            }
        }
    }
    let mut out = Vec::with_capacity(g.len());
    for j in 0..g.ny as i64 {
        for i in 0..g.nx as i64 {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for &(di, dj, w) in &stencil {
                let (ii, jj) = (i + di, j + dj);
                if ii < 0 || jj < 0 || ii >= g.nx as i64 || jj >= g.ny as i64 {
                    continue;
                }
                acc += w * rho[jj as usize * g.nx + ii as usize];
                wsum += w;
            }
            out.push(-(-acc / wsum).exp_m1());
        }
    }
    ScalarField2D::new(g, out)
}

/// Writes a cloud as CSV: two comment lines carrying `epsilon,seed,density_ref`,
/// then an `x,y` header and one row per centre.
pub fn write_cloud(cloud: &PoissonCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::with_capacity(cloud.centers.len() * 40 + 64);
    writeln!(s, "# epsilon,seed,density_ref").unwrap();
    writeln!(
        s,
        "# {:?},{},{}",
        cloud.epsilon, cloud.seed, cloud.density_ref
    )
    .unwrap();
    writeln!(s, "x,y").unwrap();
    for (x, y) in &cloud.centers {
        writeln!(s, "{x:?},{y:?}").unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PoissonCloud> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |m: &str| Error::Format(format!("cloud file: {m}"));
    lines
        .next()
        .filter(|l| l.starts_with('#'))
        .ok_or_else(|| bad("missing header comment"))?;
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| bad("missing metadata comment"))?;
    let parts: Vec<&str> = meta.trim().split(',').collect();
    if parts.len() != 3 {
        return Err(bad("metadata must be epsilon,seed,density_ref"));
    }
    let epsilon: f64 = parts[0].parse().map_err(|_| bad("bad epsilon"))?;
    let seed: u64 = parts[1].parse().map_err(|_| bad("bad seed"))?;
    if lines.next().map(str::trim) != Some("x,y") {
        return Err(bad("missing x,y header"));
    }
    let mut centers = Vec::new();
    for (k, l) in lines.enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let (x, y) = l
            .split_once(',')
            .ok_or_else(|| bad(&format!("row {k} malformed")))?;
        let x: f64 = x
            .trim()
            .parse()
            .map_err(|_| bad(&format!("row {k} bad x")))?;
        let y: f64 = y
            .trim()
            .parse()
            .map_err(|_| bad(&format!("row {k} bad y")))?;
        centers.push((x, y));
    }
    Ok(PoissonCloud {
        epsilon,
        centers,
        seed,
        density_ref: parts[2].to_string(),
    })
}
