use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Receiver traces of one shot, stored as `nt` rows of `nr` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub source_id: usize,
    pub receivers: Vec<(f64, f64)>,
    pub dt: f64,
    nt: usize,
    samples: Vec<f64>,
}

impl ShotRecord {
    pub fn new(
        source_id: usize,
        receivers: Vec<(f64, f64)>,
        dt: f64,
        nt: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("record dt must be positive, got {dt}"));
        }
        if samples.len() != nt * receivers.len() {
            return invalid(format!(
                "record length mismatch: {} samples for nt={nt}, nr={}",
                samples.len(),
                receivers.len()
            ));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite record sample at index {i}"
            )));
        }
        Ok(Self {
            source_id,
            receivers,
            dt,
            nt,
            samples,
        })
    }

    pub fn zeros_like(other: &ShotRecord) -> Self {
        Self {
            samples: vec![0.0; other.samples.len()],
            ..other.clone()
        }
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nr(&self) -> usize {
        self.receivers.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn sample(&self, k: usize, r: usize) -> f64 {
        self.samples[k * self.nr() + r]
    }

    pub fn trace(&self, r: usize) -> Vec<f64> {
        (0..self.nt).map(|k| self.sample(k, r)).collect()
    }

    pub fn set_trace(&mut self, r: usize, trace: &[f64]) {
        let nr = self.nr();
        for (k, v) in trace.iter().enumerate() {
            self.samples[k * nr + r] = *v;
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt).map(|k| k as f64 * self.dt).collect()
    }

    /// True when `other` has the same receivers, sampling and length.
    pub fn same_layout(&self, other: &ShotRecord) -> bool {
        self.nt == other.nt
            && self.receivers == other.receivers
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    pub fn check_layout(&self, other: &ShotRecord) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            invalid(format!(
                "record layout mismatch: nt {} vs {}, nr {} vs {}, dt {} vs {}",
                self.nt,
                other.nt,
                self.nr(),
                other.nr(),
                self.dt,
                other.dt
            ))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Samplewise mean of records sharing one layout.
pub fn average_records(records: &[ShotRecord]) -> Result<ShotRecord> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no records to average".into()))?;
    let mut out = ShotRecord::zeros_like(first);
    for r in records {
        first.check_layout(r)?;
        if r.source_id != first.source_id {
            return invalid("cannot average records of different sources");
        }
        for (o, v) in out.samples.iter_mut().zip(&r.samples) {
            *o += v;
        }
    }
    let n = records.len() as f64;
    out.samples.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Zero-phase anti-alias low-pass followed by integer-stride decimation.
#[derive(Debug, Clone)]
pub(crate) struct Decimator {
    stride: usize,
    half: usize,
    taps: Vec<f64>,
}

impl Decimator {
    pub fn new(stride: usize) -> Self {
        if stride <= 1 {
            return Self {
                stride: 1,
                half: 0,
                taps: vec![1.0],
            };
        }
        // Blackman-windowed sinc, cutoff at 0.8 of the output Nyquist.
        let half = 8 * stride;
        let fc = 0.8 * 0.5 / stride as f64;
        let n = 2 * half;
        let mut taps: Vec<f64> = (0..=n)
            .map(|k| {
                let j = k as f64 - half as f64;
                let x = 2.0 * fc * j;
                let sinc = if j == 0.0 {
                    1.0
                } else {
                    (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
                };
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let w = 0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos();
                sinc * w
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= s);
        Self { stride, half, taps }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// `out[k] = sum_j h_j x[k*stride + j]`, zero outside the input.
    pub fn apply(&self, x: &[f64], nt: usize) -> Vec<f64> {
        let h = self.half as isize;
        (0..nt)
            .map(|k| {
                let c = (k * self.stride) as isize;
                let mut acc = 0.0;
                for (t, w) in self.taps.iter().enumerate() {
                    let n = c + t as isize - h;
                    if n >= 0 && (n as usize) < x.len() {
                        acc += w * x[n as usize];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn transpose(&self, y: &[f64], n_internal: usize) -> Vec<f64> {
        let h = self.half as isize;
        let mut x = vec![0.0; n_internal];
        for (k, &g) in y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let c = (k * self.stride) as isize;
            for (t, w) in self.taps.iter().enumerate() {
                let n = c + t as isize - h;
                if n >= 0 && (n as usize) < n_internal {
                    x[n as usize] += w * g;
                }
            }
        }
        x
    }
}

/// SRC1 text form: comment header, receiver row, then one row per time sample.
pub fn encode_record(rec: &ShotRecord) -> String {
    let mut s = String::with_capacity(rec.samples.len() * 25 + 256);
    s.push_str("# SRC1\n# source_id, dt, nt, nr\n");
    writeln!(
        s,
        "# {},{:.16e},{},{}",
        rec.source_id,
        rec.dt,
        rec.nt,
        rec.nr()
    )
    .unwrap();
    let header: Vec<String> = rec
        .receivers
        .iter()
        .map(|(x, y)| format!("{x:.16e} {y:.16e}"))
        .collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for row in rec.samples.chunks(rec.nr().max(1)) {
        let cols: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

pub fn decode_record(text: &str) -> Result<ShotRecord> {
    let bad = |m: String| Error::Format(format!("SRC1: {m}"));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("# SRC1") {
        return Err(bad("bad magic".into()));
    }
    lines
        .next()
        .filter(|l| l.starts_with('#'))
        .ok_or_else(|| bad("missing field comment".into()))?;
    let meta = lines
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| bad("missing metadata".into()))?;
    let f: Vec<&str> = meta.trim().split(',').map(str::trim).collect();
    if f.len() != 4 {
        return Err(bad("metadata must be source_id,dt,nt,nr".into()));
    }
    let source_id: usize = f[0].parse().map_err(|_| bad("bad source_id".into()))?;
    let dt: f64 = f[1].parse().map_err(|_| bad("bad dt".into()))?;
    let nt: usize = f[2].parse().map_err(|_| bad("bad nt".into()))?;
    let nr: usize = f[3].parse().map_err(|_| bad("bad nr".into()))?;
    let header = lines
        .next()
        .ok_or_else(|| bad("missing receiver row".into()))?;
    let receivers = if nr == 0 {
        Vec::new()
    } else {
        header
            .split(',')
            .map(|p| {
                let mut it = p.split_whitespace().map(str::parse::<f64>);
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(x)), Some(Ok(y)), None) => Ok((x, y)),
                    _ => Err(bad(format!("bad receiver position '{p}'"))),
                }
            })
            .collect::<Result<Vec<_>>>()?
    };
    if receivers.len() != nr {
        return Err(bad(format!(
            "expected {nr} receivers, found {}",
            receivers.len()
        )));
    }
    let mut samples = Vec::with_capacity(nt * nr);
    let mut rows = 0;
    for (k, l) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let before = samples.len();
        for v in l.split(',') {
            samples.push(
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad value in row {k}")))?,
            );
        }
        if samples.len() - before != nr {
            return Err(bad(format!(
                "row {k} has {} values, expected {nr}",
                samples.len() - before
            )));
        }
        rows += 1;
    }
    if rows != nt {
        return Err(bad(format!("expected {nt} rows, found {rows}")));
    }
    ShotRecord::new(source_id, receivers, dt, nt, samples).map_err(|e| bad(e.to_string()))
}

pub fn write_record(rec: &ShotRecord, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_record(rec))?;
    Ok(())
}

pub fn read_record(path: impl AsRef<Path>) -> Result<ShotRecord> {
    decode_record(&fs::read_to_string(path)?)
}
