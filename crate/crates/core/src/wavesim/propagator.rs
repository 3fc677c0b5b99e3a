//! Explicit leapfrog kernel for
//! `m (u_tt + (sx + sy) u_t + sx sy u) = L u + div psi + f`,
//! `psi_t = -diag(sx, sy) psi + diag(sy - sx, sx - sy) grad u`,
//! with a fourth-order Laplacian, absorbing layers outside the model and the
//! exact discrete adjoint. The sponge variant drops `psi` and the `sx sy` term.

use crate::error::{invalid, Error, Result};
use crate::grid::{GridGeometry, ScalarField2D};

use super::record::{Decimator, ShotRecord};
use super::{AbsorberKind, AcquisitionGeometry, RickerSource, SolverConfig};

const GHOST: usize = 2;
const C1: f64 = 4.0 / 3.0;
const C2: f64 = -1.0 / 12.0;
const C0: f64 = -5.0 / 2.0;

/// Discretized wave operator for one model and acquisition.
#[derive(Debug, Clone)]
pub struct Propagator {
    interior: GridGeometry,
    padded: GridGeometry,
    pad: usize,
    width: usize,
    height: usize,
    dt: f64,
    n_steps: usize,
    nt_record: usize,
    record_dt: f64,
    decimator: Decimator,
    ix2: f64,
    iy2: f64,
    m: Vec<f64>,
    /// `dt^2 / (m a)`.
    cm: Vec<f64>,
    damp: Damping,
    pml: Option<Pml>,
    receivers: Vec<[(usize, f64); 4]>,
    receiver_pos: Vec<(f64, f64)>,
    memory_budget: usize,
}

/// Auxiliary-field update `psi' = e psi + f grad u` on the cells within one
/// cell of the layer. Coefficients are rebuilt from the per-axis damping.
#[derive(Debug, Clone)]
struct Pml {
    /// `(row, first column, end column)` in ghosted coordinates.
    band: Vec<(usize, usize, usize)>,
    damp: Damping,
    hx: f64,
    hy: f64,
}

/// Per-axis damping profiles on ghosted columns and rows.
#[derive(Debug, Clone)]
struct Damping {
    sx: Vec<f64>,
    sy: Vec<f64>,
    /// `(1 - dt s / 2) / (1 + dt s / 2)` and `dt / (1 + dt s / 2)` per axis.
    ex: Vec<f64>,
    rx: Vec<f64>,
    ey: Vec<f64>,
    ry: Vec<f64>,
    dt: f64,
    /// 1 for the PML, 0 for the sponge which drops the `sx sy` term.
    cross: f64,
}

impl Damping {
    /// `(a, 2 - s, b)` of the time-stepping scheme.
    #[inline(always)]
    fn scheme(&self, sx: f64, sy: f64) -> (f64, f64, f64) {
        let d = 0.5 * (sx + sy) * self.dt;
        (
            1.0 + d,
            2.0 - self.cross * self.dt * self.dt * sx * sy,
            1.0 - d,
        )
    }

    fn new(sx: Vec<f64>, sy: Vec<f64>, dt: f64, cross: f64) -> Self {
        let e = |s: &f64| (1.0 - 0.5 * dt * s) / (1.0 + 0.5 * dt * s);
        let r = |s: &f64| dt / (1.0 + 0.5 * dt * s);
        Self {
            ex: sx.iter().map(e).collect(),
            rx: sx.iter().map(r).collect(),
            ey: sy.iter().map(e).collect(),
            ry: sy.iter().map(r).collect(),
            sx,
            sy,
            dt,
            cross,
        }
    }
}

impl Pml {
    /// `psi = e psi + f grad u`.
    fn forward_update(&self, u: &[f64], px: &mut [f64], py: &mut [f64], w: usize) {
        let (hx, hy) = (self.hx, self.hy);
        let d = &self.damp;
        for &(j, c0, c1) in &self.band {
            let (s, n) = (j * w + c0, c1 - c0);
            let (sy, ey, ry) = (d.sy[j], d.ey[j], d.ry[j]);
            let (xp, xm, yp, ym) = (
                &u[s + 1..][..n],
                &u[s - 1..][..n],
                &u[s + w..][..n],
                &u[s - w..][..n],
            );
            let (sx, ex, rx) = (&d.sx[c0..c1], &d.ex[c0..c1], &d.rx[c0..c1]);
            let (px, py) = (&mut px[s..s + n], &mut py[s..s + n]);
            for i in 0..n {
                let (ex, fx) = (ex[i], (sy - sx[i]) * rx[i]);
                let fy = (sx[i] - sy) * ry;
                px[i] = ex * px[i] + fx * (xp[i] - xm[i]) * hx;
                py[i] = ey * py[i] + fy * (yp[i] - ym[i]) * hy;
            }
        }
    }

    /// `nu = e nu - grad lambda`, then `t = f nu`.
    #[allow(clippy::too_many_arguments)]
    fn adjoint_update(
        &self,
        lam: &[f64],
        nx: &mut [f64],
        ny: &mut [f64],
        tx: &mut [f64],
        ty: &mut [f64],
        w: usize,
    ) {
        let (hx, hy) = (self.hx, self.hy);
        let d = &self.damp;
        for &(j, c0, c1) in &self.band {
            let (s, n) = (j * w + c0, c1 - c0);
            let (sy, ey, ry) = (d.sy[j], d.ey[j], d.ry[j]);
            let (xp, xm, yp, ym) = (
                &lam[s + 1..][..n],
                &lam[s - 1..][..n],
                &lam[s + w..][..n],
                &lam[s - w..][..n],
            );
            let (sx, ex, rx) = (&d.sx[c0..c1], &d.ex[c0..c1], &d.rx[c0..c1]);
            let (nx, ny, tx, ty) = (
                &mut nx[s..s + n],
                &mut ny[s..s + n],
                &mut tx[s..s + n],
                &mut ty[s..s + n],
            );
            for i in 0..n {
                let (ex, fx) = (ex[i], (sy - sx[i]) * rx[i]);
                let fy = (sx[i] - sy) * ry;
                nx[i] = ex * nx[i] - (xp[i] - xm[i]) * hx;
                ny[i] = ey * ny[i] - (yp[i] - ym[i]) * hy;
                tx[i] = fx * nx[i];
                ty[i] = fy * ny[i];
            }
        }
    }
}

/// Divergence source `scale * div (qx, qy)` added inside the layer.
#[derive(Clone, Copy)]
struct Aux<'a> {
    qx: &'a [f64],
    qy: &'a [f64],
    hx: f64,
    hy: f64,
}

/// Wavefield at one step: `u^{n-1}`, `u^n` and `psi^n`.
#[derive(Debug, Clone)]
struct State {
    prev: Vec<f64>,
    cur: Vec<f64>,
    px: Vec<f64>,
    py: Vec<f64>,
}

impl State {
    fn zeros(size: usize, pml: bool) -> Self {
        let aux = if pml { size } else { 0 };
        Self {
            prev: vec![0.0; size],
            cur: vec![0.0; size],
            px: vec![0.0; aux],
            py: vec![0.0; aux],
        }
    }
}

/// Misfit, synthetic record and model gradient of one shot.
#[derive(Debug, Clone)]
pub struct ShotGradient {
    pub misfit: f64,
    pub record: ShotRecord,
    pub gradient: ScalarField2D,
}

impl Propagator {
    pub fn new(m: &ScalarField2D, acq: &AcquisitionGeometry, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        acq.validate()?;
        let g = *m.geometry();
        let (m_min, m_max) = (m.min(), m.max());
        if !(m_min > 0.0) {
            return invalid(format!(
                "slowness squared must be positive, minimum is {m_min}"
            ));
        }
        for (k, p) in acq.receivers.iter().enumerate() {
            if !g.contains(p.0, p.1) {
                return invalid(format!(
                    "receiver {k} at ({}, {}) lies outside the grid",
                    p.0, p.1
                ));
            }
        }
        for (k, s) in acq.sources.iter().enumerate() {
            if !g.contains(s.position.0, s.position.1) {
                return invalid(format!("source {k} lies outside the grid"));
            }
        }
        let c_max = cfg.c_max.unwrap_or(1.0 / m_min.sqrt());
        if 1.0 / m_min.sqrt() > c_max * (1.0 + 1e-12) {
            return invalid(format!(
                "model speed {} exceeds configured c_max {c_max}",
                1.0 / m_min.sqrt()
            ));
        }
        let c_ref = cfg.c_ref.unwrap_or(1.0 / m_max.sqrt());
        let h = g.dx.min(g.dy);
        let dt_cfl = cfg.cfl_factor * h / (c_max * std::f64::consts::SQRT_2);
        let stride = (acq.record_dt / dt_cfl * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let dt = acq.record_dt / stride as f64;
        let nt_record = acq.nt();
        let n_steps = (nt_record - 1) * stride;

        let pad = match cfg.absorber_width_cells {
            Some(w) => w,
            None => {
                let f_min = acq
                    .sources
                    .iter()
                    .map(|s| s.f0)
                    .fold(f64::INFINITY, f64::min);
                (2.0 * c_ref / f_min / h).ceil() as usize
            }
        };
        let padded = GridGeometry::new(
            g.nx + 2 * pad,
            g.ny + 2 * pad,
            g.dx,
            g.dy,
            g.x0 - pad as f64 * g.dx,
            g.y0 - pad as f64 * g.dy,
        )?;
        let width = padded.nx + 2 * GHOST;
        let height = padded.ny + 2 * GHOST;
        let size = width * height;
        let is_pml = cfg.absorber_kind == AbsorberKind::Pml && pad > 0;

        const POWER: i32 = 2;
        let layer = pad as f64 * h;
        let ln_r = (1.0 / cfg.reflection).ln();
        let damp_max = if pad == 0 {
            0.0
        } else if is_pml {
            f64::from(POWER + 1) * c_ref * ln_r / (2.0 * layer)
        } else {
            f64::from(POWER + 1) * c_ref * ln_r / layer
        };
        // Damping at padded index k along an axis with n interior cells.
        let profile = |k: usize, n: usize| -> f64 {
            let d = if k < pad {
                (pad - k) as f64 - 0.5
            } else if k >= pad + n {
                (k - pad - n) as f64 + 0.5
            } else {
                return 0.0;
            };
            damp_max * (d / pad as f64).powi(POWER)
        };
        let mut sx = vec![0.0; width];
        for (ip, v) in sx[GHOST..GHOST + padded.nx].iter_mut().enumerate() {
            *v = profile(ip, g.nx);
        }
        let mut sy = vec![0.0; height];
        for (jp, v) in sy[GHOST..GHOST + padded.ny].iter_mut().enumerate() {
            *v = profile(jp, g.ny);
        }
        let damp = Damping::new(sx, sy, dt, if is_pml { 1.0 } else { 0.0 });

        let mut mv = vec![0.0; size];
        let mut cm = vec![0.0; size];
        for jp in 0..padded.ny {
            let j = jp.saturating_sub(pad).min(g.ny - 1);
            for ip in 0..padded.nx {
                let i = ip.saturating_sub(pad).min(g.nx - 1);
                let k = (jp + GHOST) * width + ip + GHOST;
                let mm = m.get(i, j);
                let (ak, _, _) = damp.scheme(damp.sx[ip + GHOST], damp.sy[jp + GHOST]);
                mv[k] = mm;
                cm[k] = dt * dt / (mm * ak);
            }
        }
        let pml = is_pml.then(|| {
            let mut band = Vec::new();
            let reach = pad + 1;
            let (c0, c1) = (GHOST, GHOST + padded.nx);
            for jp in 0..padded.ny {
                let row = jp + GHOST;
                if jp < reach || jp + reach >= padded.ny || 2 * reach >= padded.nx {
                    band.push((row, c0, c1));
                } else {
                    band.push((row, c0, c0 + reach));
                    band.push((row, c1 - reach, c1));
                }
            }
            Pml {
                band,
                damp: damp.clone(),
                hx: 0.5 / g.dx,
                hy: 0.5 / g.dy,
            }
        });
        let to_ghost = |p: usize| (p / padded.nx + GHOST) * width + p % padded.nx + GHOST;
        let receivers = acq
            .receivers
            .iter()
            .map(|&(x, y)| padded.bilinear_stencil(x, y).map(|(p, w)| (to_ghost(p), w)))
            .collect();
        Ok(Self {
            interior: g,
            padded,
            pad,
            width,
            height,
            dt,
            n_steps,
            nt_record,
            record_dt: acq.record_dt,
            decimator: Decimator::new(stride),
            ix2: 1.0 / (g.dx * g.dx),
            iy2: 1.0 / (g.dy * g.dy),
            m: mv,
            cm,
            damp,
            pml,
            receivers,
            receiver_pos: acq.receivers.clone(),
            memory_budget: cfg.memory_budget_bytes,
        })
    }

    /// Internal time step.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Internal steps per recorded sample.
    pub fn stride(&self) -> usize {
        self.decimator.stride()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Absorbing layer width in cells on each side.
    pub fn absorber_cells(&self) -> usize {
        self.pad
    }

    fn size(&self) -> usize {
        self.width * self.height
    }

    fn source_terms(&self, src: &RickerSource) -> Vec<(usize, f64)> {
        let scale = 1.0 / (self.interior.dx * self.interior.dy);
        let to_ghost =
            |p: usize| (p / self.padded.nx + GHOST) * self.width + p % self.padded.nx + GHOST;
        self.padded
            .bilinear_stencil(src.position.0, src.position.1)
            .iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|&(p, w)| (to_ghost(p), w * scale))
            .collect()
    }

    /// Laplacian of row `j` on interior columns `i0..i1`, written to `out[i0..i1]`.
    fn laplacian_row(&self, u: &[f64], j: usize, i0: usize, i1: usize, out: &mut [f64]) {
        let w = self.width;
        let n = i1 - i0;
        let r = j * w + i0;
        let (xm2, xm1, c, xp1, xp2) = (
            &u[r..r + n],
            &u[r + 1..r + 1 + n],
            &u[r + 2..r + 2 + n],
            &u[r + 3..r + 3 + n],
            &u[r + 4..r + 4 + n],
        );
        let (ym2, ym1, yp1, yp2) = (
            &u[r - 2 * w + 2..][..n],
            &u[r - w + 2..][..n],
            &u[r + w + 2..][..n],
            &u[r + 2 * w + 2..][..n],
        );
        let out = &mut out[i0..i1];
        for i in 0..n {
            let lx = C2 * (xm2[i] + xp2[i]) + C1 * (xm1[i] + xp1[i]) + C0 * c[i];
            let ly = C2 * (ym2[i] + yp2[i]) + C1 * (ym1[i] + yp1[i]) + C0 * c[i];
            out[i] = lx * self.ix2 + ly * self.iy2;
        }
    }

    /// `prev <- ((2 - s) cur - b prev + dt^2/m (L cur + div q + src)) / a`.
    fn step(
        &self,
        prev: &mut [f64],
        cur: &[f64],
        aux: Option<Aux>,
        src: &[(usize, f64)],
        lap: &mut [f64],
    ) {
        let w = self.width;
        let n = w - 2 * GHOST;
        // Undamped cells away from the layer reduce to 2 cur - prev + cm L cur.
        let reach = if self.pad > 0 { self.pad + 1 } else { 0 };
        let (fast_lo, fast_hi) = (reach, n.saturating_sub(reach));
        for j in GHOST..self.height - GHOST {
            let jp = j - GHOST;
            let r = j * w + GHOST;
            if jp >= reach && jp + reach < self.padded.ny && fast_lo < fast_hi {
                self.general_segment(prev, cur, aux, j, 0, fast_lo, lap);
                self.fast_segment(prev, cur, r + fast_lo, fast_hi - fast_lo);
                self.general_segment(prev, cur, aux, j, fast_hi, n, lap);
            } else {
                self.general_segment(prev, cur, aux, j, 0, n, lap);
            }
        }
        for &(k, s) in src {
            prev[k] += self.cm[k] * s;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn general_segment(
        &self,
        prev: &mut [f64],
        cur: &[f64],
        aux: Option<Aux>,
        j: usize,
        i0: usize,
        i1: usize,
        lap: &mut [f64],
    ) {
        if i0 >= i1 {
            return;
        }
        let w = self.width;
        self.laplacian_row(cur, j, i0, i1, lap);
        let len = i1 - i0;
        let r = j * w + GHOST + i0;
        let d = &self.damp;
        let sy = d.sy[j];
        let sx = &d.sx[GHOST + i0..GHOST + i1];
        let cm = &self.cm[r..r + len];
        let c = &cur[r..r + len];
        let o = &mut prev[r..r + len];
        let l = &lap[i0..i1];
        match aux {
            None => {
                for i in 0..len {
                    let (a, two_s, b) = d.scheme(sx[i], sy);
                    o[i] = (two_s * c[i] - b * o[i]) / a + cm[i] * l[i];
                }
            }
            Some(q) => {
                let (xp, xm, yp, ym) = (
                    &q.qx[r + 1..][..len],
                    &q.qx[r - 1..][..len],
                    &q.qy[r + w..][..len],
                    &q.qy[r - w..][..len],
                );
                for i in 0..len {
                    let (a, two_s, b) = d.scheme(sx[i], sy);
                    let div = (xp[i] - xm[i]) * q.hx + (yp[i] - ym[i]) * q.hy;
                    o[i] = (two_s * c[i] - b * o[i]) / a + cm[i] * (l[i] + div);
                }
            }
        }
    }

    fn fast_segment(&self, prev: &mut [f64], cur: &[f64], k0: usize, len: usize) {
        let w = self.width;
        let u = cur;
        let (xm2, xm1, c, xp1, xp2) = (
            &u[k0 - 2..][..len],
            &u[k0 - 1..][..len],
            &u[k0..][..len],
            &u[k0 + 1..][..len],
            &u[k0 + 2..][..len],
        );
        let (ym2, ym1, yp1, yp2) = (
            &u[k0 - 2 * w..][..len],
            &u[k0 - w..][..len],
            &u[k0 + w..][..len],
            &u[k0 + 2 * w..][..len],
        );
        let cm = &self.cm[k0..k0 + len];
        let o = &mut prev[k0..k0 + len];
        let (ix2, iy2) = (self.ix2, self.iy2);
        for i in 0..len {
            let lx = C2 * (xm2[i] + xp2[i]) + C1 * (xm1[i] + xp1[i]) + C0 * c[i];
            let ly = C2 * (ym2[i] + yp2[i]) + C1 * (ym1[i] + yp1[i]) + C0 * c[i];
            o[i] = 2.0 * c[i] - o[i] + cm[i] * (lx * ix2 + ly * iy2);
        }
    }

    fn sample(&self, u: &[f64], r: usize) -> f64 {
        self.receivers[r].iter().map(|&(k, w)| w * u[k]).sum()
    }

    fn new_record(&self, source_id: usize, traces: &[Vec<f64>]) -> Result<ShotRecord> {
        let nr = traces.len();
        let mut samples = vec![0.0; self.nt_record * nr];
        for (r, tr) in traces.iter().enumerate() {
            for (k, v) in self
                .decimator
                .apply(tr, self.nt_record)
                .into_iter()
                .enumerate()
            {
                samples[k * nr + r] = v;
            }
        }
        ShotRecord::new(
            source_id,
            self.receiver_pos.clone(),
            self.record_dt,
            self.nt_record,
            samples,
        )
    }

    /// Runs one shot and returns the decimated receiver record.
    pub fn record(&self, src: &RickerSource, source_id: usize) -> Result<ShotRecord> {
        let mut traces = vec![vec![0.0; self.n_steps + 1]; self.receivers.len()];
        self.run(src, 0, self.n_steps, None, |n, st| {
            for (r, tr) in traces.iter_mut().enumerate() {
                tr[n] = self.sample(&st.cur, r);
            }
        });
        self.new_record(source_id, &traces)
    }

    /// Steps from the state at `n0` to `n1`, calling `visit(n, state)` for
    /// every state from `n0` on.
    fn run(
        &self,
        src: &RickerSource,
        n0: usize,
        n1: usize,
        start: Option<&State>,
        mut visit: impl FnMut(usize, &State),
    ) {
        let size = self.size();
        let mut st = start
            .cloned()
            .unwrap_or_else(|| State::zeros(size, self.pml.is_some()));
        let mut lap = vec![0.0; self.width];
        let terms = self.source_terms(src);
        let mut s: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        visit(n0, &st);
        for n in n0..n1 {
            let v = src.signature(n as f64 * self.dt);
            s.clear();
            s.extend(terms.iter().map(|&(k, w)| (k, w * v)));
            let aux = self.pml.as_ref().map(|p| Aux {
                qx: &st.px,
                qy: &st.py,
                hx: p.hx,
                hy: p.hy,
            });
            self.step(&mut st.prev, &st.cur, aux, &s, &mut lap);
            std::mem::swap(&mut st.prev, &mut st.cur);
            if let Some(p) = &self.pml {
                p.forward_update(&st.cur, &mut st.px, &mut st.py, self.width);
            }
            visit(n + 1, &st);
        }
    }

    /// Discrete energy `E^{n+1/2}` for every step of a shot. Without a PML it
    /// never increases once the source is quiet.
    pub fn energy_history(&self, src: &RickerSource) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_steps);
        let mut lap_row = vec![0.0; self.width];
        let n = self.width - 2 * GHOST;
        let cell = self.interior.dx * self.interior.dy;
        self.run(src, 0, self.n_steps, None, |step, st| {
            if step == 0 {
                return;
            }
            let (prev, u) = (&st.prev, &st.cur);
            let (mut kin, mut pot) = (0.0, 0.0);
            for j in GHOST..self.height - GHOST {
                self.laplacian_row(prev, j, 0, n, &mut lap_row);
                let r = j * self.width + GHOST;
                for i in 0..n {
                    let k = r + i;
                    kin += self.m[k] * (u[k] - prev[k]).powi(2);
                    pot += lap_row[i] * u[k];
                }
            }
            out.push(0.5 * cell * (kin / (self.dt * self.dt) - pot));
        });
        out
    }

    fn checkpoint_interval(&self) -> usize {
        let per_checkpoint = if self.pml.is_some() { 4 } else { 2 };
        let snap = self.size() * 8;
        let n = self.n_steps.max(1);
        let fits = |k: usize| (per_checkpoint * n.div_ceil(k) + k + 2) * snap <= self.memory_budget;
        if fits(n) {
            return n;
        }
        (1..n).rev().find(|&k| fits(k)).unwrap_or_else(|| {
            let k = ((2 * n) as f64).sqrt().ceil() as usize;
            log::warn!("wavefield checkpoints exceed the memory budget; using interval {k}");
            k
        })
    }

    /// Misfit and exact discrete gradient with respect to the slowness-squared
    /// model. `misfit` maps the synthetic record to the objective value and its
    /// derivative with respect to every record sample.
    pub fn gradient(
        &self,
        src: &RickerSource,
        source_id: usize,
        misfit: impl FnOnce(&ShotRecord) -> Result<(f64, ShotRecord)>,
    ) -> Result<ShotGradient> {
        let size = self.size();
        let nsteps = self.n_steps;
        let k_int = self.checkpoint_interval();
        let nseg = nsteps.div_ceil(k_int).max(1);
        let last_start = (nseg - 1) * k_int;

        // Forward: traces, segment checkpoints, and every state of the last segment.
        let mut traces = vec![vec![0.0; nsteps + 1]; self.receivers.len()];
        let mut checkpoints: Vec<State> = Vec::with_capacity(nseg);
        let mut tail: Vec<Vec<f64>> = Vec::new();
        if last_start == 0 {
            tail.push(vec![0.0; size]);
        }
        self.run(src, 0, nsteps, None, |n, st| {
            for (r, tr) in traces.iter_mut().enumerate() {
                tr[n] = self.sample(&st.cur, r);
            }
            if n % k_int == 0 && n < nsteps {
                checkpoints.push(st.clone());
            }
            if n + 1 >= last_start {
                tail.push(st.cur.clone());
            }
        });
        let record = self.new_record(source_id, &traces)?;
        let (value, adj) = misfit(&record)?;
        if !value.is_finite() {
            return Err(Error::Numerical(format!("misfit is not finite: {value}")));
        }
        record.check_layout(&adj)?;
        let adj_traces: Vec<Vec<f64>> = (0..adj.nr())
            .map(|r| self.decimator.transpose(&adj.trace(r), nsteps + 1))
            .collect();

        let aux = if self.pml.is_some() { size } else { 0 };
        let mut grad = vec![0.0; size];
        let (mut lam2, mut lam1) = (vec![0.0; size], vec![0.0; size]);
        let (mut nu_x, mut nu_y) = (vec![0.0; aux], vec![0.0; aux]);
        let (mut tx, mut ty) = (vec![0.0; aux], vec![0.0; aux]);
        let mut lap = vec![0.0; self.width];
        let mut s: Vec<(usize, f64)> = Vec::new();
        let inv_dt2 = 1.0 / (self.dt * self.dt);
        let n = self.width - 2 * GHOST;
        for c in (0..nseg).rev() {
            let start = c * k_int;
            let end = (start + k_int).min(nsteps);
            // states[i] = u^{start - 1 + i}
            let states: Vec<Vec<f64>> = if c == nseg - 1 {
                std::mem::take(&mut tail)
            } else {
                let cp = &checkpoints[c];
                let mut st = vec![cp.prev.clone()];
                self.run(src, start, end, Some(cp), |_, x| st.push(x.cur.clone()));
                st
            };
            debug_assert_eq!(states.len(), end - start + 2);
            for k in (start + 1..=end).rev() {
                s.clear();
                for (r, stencil) in self.receivers.iter().enumerate() {
                    let g = adj_traces[r][k];
                    if g != 0.0 {
                        s.extend(stencil.iter().map(|&(idx, w)| (idx, -w * g * inv_dt2)));
                    }
                }
                let aux = self.pml.as_ref().map(|p| {
                    p.adjoint_update(&lam1, &mut nu_x, &mut nu_y, &mut tx, &mut ty, self.width);
                    Aux {
                        qx: &tx,
                        qy: &ty,
                        hx: -p.hx,
                        hy: -p.hy,
                    }
                });
                self.step(&mut lam2, &lam1, aux, &s, &mut lap);
                let lam = &lam2;
                let (uk, uk1, uk2) = (
                    &states[k - start + 1],
                    &states[k - start],
                    &states[k - start - 1],
                );
                for j in GHOST..self.height - GHOST {
                    let r = j * self.width + GHOST;
                    let sy = self.damp.sy[j];
                    for (c, i) in (r..r + n).enumerate() {
                        let (a, two_s, b) = self.damp.scheme(self.damp.sx[GHOST + c], sy);
                        grad[i] += lam[i] * (a * uk[i] - two_s * uk1[i] + b * uk2[i]);
                    }
                }
                std::mem::swap(&mut lam2, &mut lam1);
            }
        }
        let gradient = self.pull_back(&grad)?;
        Ok(ShotGradient {
            misfit: value,
            record,
            gradient,
        })
    }

    /// Transpose of the clamp extension from the model grid to the padded grid.
    fn pull_back(&self, padded: &[f64]) -> Result<ScalarField2D> {
        let g = self.interior;
        let mut out = vec![0.0; g.len()];
        for jp in 0..self.padded.ny {
            let j = jp.saturating_sub(self.pad).min(g.ny - 1);
            for ip in 0..self.padded.nx {
                let i = ip.saturating_sub(self.pad).min(g.nx - 1);
                out[g.index(i, j)] += padded[(jp + GHOST) * self.width + ip + GHOST];
            }
        }
        ScalarField2D::new(g, out).map_err(|_| Error::Numerical("gradient is not finite".into()))
    }
}
