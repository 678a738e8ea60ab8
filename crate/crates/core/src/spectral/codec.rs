use std::hash::Hasher;
use std::ops::Range;

use fnv::FnvHasher;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use super::basis::{BasisDescriptor, BasisKind, Mode};
use super::ops::{extend_to_zero_boundary, restrict_interior};
use super::transform::{Coefficients, SpectralTransform};
use super::truncation::{TruncationKind, TruncationSet};
use crate::io::{ByteReader, ByteWriter};
use crate::{Domain, Error, FieldGrid, Result};

pub const DEFAULT_EPS_FLOOR: f64 = 1e-8;
const CODEC_MAGIC: &[u8; 8] = b"PISDCODC";
const CODEC_VERSION: u16 = 1;

/// Per-mode standard deviations aligned with a truncation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector {
    pub values: Vec<f64>,
    pub eps_floor: f64,
}

impl ScaleVector {
    pub fn new(values: Vec<f64>, eps_floor: f64) -> Result<Self> {
        if !(eps_floor > 0.0) {
            return Err(Error::invalid("eps_floor must be positive"));
        }
        if let Some(bad) = values
            .iter()
            .find(|v| !(**v >= eps_floor) || !v.is_finite())
        {
            return Err(Error::invalid(format!(
                "scale {bad} is below the floor {eps_floor}"
            )));
        }
        Ok(Self { values, eps_floor })
    }

    pub fn ones(len: usize) -> Self {
        Self {
            values: vec![1.0; len],
            eps_floor: DEFAULT_EPS_FLOOR,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Geometry of one channel: its basis, truncation rule and zero-ramp padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelSpec {
    pub basis: BasisDescriptor,
    pub truncation: TruncationKind,
    /// Rings added by [`extend_to_zero_boundary`] before the transform (0 or 4).
    pub padding: usize,
}

#[derive(Debug, Clone)]
struct ChannelCodec {
    spec: ChannelSpec,
    truncation: TruncationSet,
    transform: SpectralTransform,
    slots: usize,
}

/// Encoder/decoder between field stacks and flat scaled spectral latents.
///
/// Latent layout is lexicographic over `(time, channel, k₁, k₂, re/im)`.
#[derive(Debug, Clone)]
pub struct Codec {
    domain: Domain,
    grid_size: usize,
    time_steps: usize,
    channels: Vec<ChannelCodec>,
    scales: Vec<ScaleVector>,
    offsets: Vec<usize>,
    fingerprint: u64,
}

/// Flat latent vector tagged with the codec that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLatent {
    pub x: Vec<f64>,
    pub codec_fingerprint: u64,
}

impl Codec {
    /// Codec with unit scales; `grid_size` is the interior field size.
    pub fn new(
        domain: Domain,
        grid_size: usize,
        time_steps: usize,
        specs: Vec<ChannelSpec>,
    ) -> Result<Self> {
        if time_steps == 0 || specs.is_empty() {
            return Err(Error::invalid(
                "codec needs at least one time step and one channel",
            ));
        }
        let mut channels = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.basis.kind.domain() != domain {
                return Err(Error::invalid(format!(
                    "basis {:?} does not live on {domain:?}",
                    spec.basis.kind
                )));
            }
            if spec.padding > 0 && spec.basis.kind != BasisKind::SineDirichlet {
                return Err(Error::invalid(
                    "zero-ramp padding is only defined for sine channels",
                ));
            }
            if spec.basis.grid_size != grid_size + 2 * spec.padding {
                return Err(Error::dim(format!(
                    "basis grid {} != field grid {grid_size} + 2·{}",
                    spec.basis.grid_size, spec.padding
                )));
            }
            let truncation = TruncationSet::new(spec.truncation, &spec.basis)?;
            let slots = truncation.slot_count(&spec.basis);
            channels.push(ChannelCodec {
                spec,
                transform: SpectralTransform::new(&spec.basis),
                truncation,
                slots,
            });
        }
        let scales = (0..time_steps)
            .flat_map(|_| {
                channels
                    .iter()
                    .map(|c| ScaleVector::ones(c.truncation.len()))
            })
            .collect();
        let mut codec = Self {
            domain,
            grid_size,
            time_steps,
            channels,
            scales,
            offsets: Vec::new(),
            fingerprint: 0,
        };
        codec.refresh();
        Ok(codec)
    }

    /// Replaces the per-`(time, channel)` scale vectors.
    pub fn with_scales(mut self, scales: Vec<ScaleVector>) -> Result<Self> {
        if scales.len() != self.time_steps * self.channels.len() {
            return Err(Error::dim(format!(
                "expected {} scale vectors, got {}",
                self.time_steps * self.channels.len(),
                scales.len()
            )));
        }
        for (idx, s) in scales.iter().enumerate() {
            let want = self.channels[idx % self.channels.len()].truncation.len();
            if s.len() != want {
                return Err(Error::dim(format!(
                    "scale vector {idx} has {} entries, expected {want}",
                    s.len()
                )));
            }
        }
        self.scales = scales;
        self.refresh();
        Ok(self)
    }

    /// Fits scales on `dataset` and returns the scaled codec.
    pub fn fit(self, dataset: &[FieldGrid], eps_floor: f64) -> Result<Self> {
        let scales = fit_scales(dataset, &self, eps_floor)?;
        self.with_scales(scales)
    }

    fn refresh(&mut self) {
        let mut offsets = Vec::with_capacity(self.scales.len() + 1);
        let mut acc = 0;
        for _ in 0..self.time_steps {
            for ch in &self.channels {
                offsets.push(acc);
                acc += ch.slots;
            }
        }
        offsets.push(acc);
        self.offsets = offsets;
        let mut hasher = FnvHasher::default();
        hasher.write(&self.to_bytes());
        self.fingerprint = hasher.finish();
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    /// Total latent dimension `Σ_time Σ_channel slots`.
    pub fn latent_dim(&self) -> usize {
        *self.offsets.last().expect("offsets include the total")
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn channel_spec(&self, channel: usize) -> ChannelSpec {
        self.channels[channel].spec
    }

    pub fn truncation(&self, channel: usize) -> &TruncationSet {
        &self.channels[channel].truncation
    }

    pub fn scales(&self, time: usize, channel: usize) -> &ScaleVector {
        &self.scales[time * self.channels.len() + channel]
    }

    /// Latent index range of one `(time, channel)` slice.
    pub fn slot_range(&self, time: usize, channel: usize) -> Range<usize> {
        let idx = time * self.channels.len() + channel;
        self.offsets[idx]..self.offsets[idx + 1]
    }

    /// Mode owning every latent slot, in latent order.
    pub fn slot_modes(&self) -> Vec<Mode> {
        let mut out = Vec::with_capacity(self.latent_dim());
        for _ in 0..self.time_steps {
            for ch in &self.channels {
                for m in &ch.truncation.modes {
                    for _ in 0..TruncationSet::slots_for(&ch.spec.basis, *m) {
                        out.push(*m);
                    }
                }
            }
        }
        out
    }

    fn check_geometry(&self, field: &FieldGrid) -> Result<()> {
        let (t, c, h, _) = field.data.dim();
        if t != self.time_steps
            || c != self.channels.len()
            || h != self.grid_size
            || field.domain != self.domain
        {
            return Err(Error::dim(format!(
                "field [{t}, {c}, {h}, {h}] on {:?} does not match codec [{}, {}, {}, {}] on {:?}",
                field.domain,
                self.time_steps,
                self.channels.len(),
                self.grid_size,
                self.grid_size,
                self.domain
            )));
        }
        Ok(())
    }

    fn full_coefficients(&self, slice: ArrayView2<'_, f64>, channel: usize) -> Coefficients {
        let ch = &self.channels[channel];
        if ch.spec.padding > 0 {
            let extended = extend_to_zero_boundary(slice, ch.spec.padding);
            ch.transform.forward(extended.view())
        } else {
            ch.transform.forward(slice)
        }
    }

    /// Unscaled coefficients of the retained modes of one interior slice.
    pub fn mode_coefficients(&self, slice: ArrayView2<'_, f64>, channel: usize) -> Vec<Complex64> {
        let ch = &self.channels[channel];
        let full = self.full_coefficients(slice, channel);
        ch.truncation
            .modes
            .iter()
            .map(|m| match &full {
                Coefficients::Sine(c) => {
                    Complex64::new(c[[m.k1 as usize - 1, m.k2 as usize - 1]], 0.0)
                }
                Coefficients::Fourier(c) => {
                    c[[
                        ch.spec.basis.storage_index(m.k1),
                        ch.spec.basis.storage_index(m.k2),
                    ]]
                }
            })
            .collect()
    }

    pub fn encode(&self, field: &FieldGrid) -> Result<SpectralLatent> {
        self.check_geometry(field)?;
        let mut x = vec![0.0; self.latent_dim()];
        for t in 0..self.time_steps {
            for c in 0..self.channels.len() {
                let coeffs = self.mode_coefficients(field.slice(t, c), c);
                let ch = &self.channels[c];
                let scales = self.scales(t, c);
                let out = &mut x[self.slot_range(t, c)];
                let mut slot = 0;
                for (j, (mode, z)) in ch.truncation.modes.iter().zip(&coeffs).enumerate() {
                    let s = scales.values[j];
                    out[slot] = z.re / s;
                    slot += 1;
                    if TruncationSet::slots_for(&ch.spec.basis, *mode) == 2 {
                        out[slot] = z.im / s;
                        slot += 1;
                    }
                }
            }
        }
        Ok(SpectralLatent {
            x,
            codec_fingerprint: self.fingerprint,
        })
    }

    /// Scaled full coefficient array of one slice of a raw latent vector.
    pub fn slice_coefficients(&self, x: &[f64], time: usize, channel: usize) -> Coefficients {
        let ch = &self.channels[channel];
        let scales = self.scales(time, channel);
        let slots = &x[self.slot_range(time, channel)];
        let n = ch.spec.basis.grid_size;
        let mut slot = 0;
        match ch.spec.basis.kind {
            BasisKind::SineDirichlet => {
                let mut c = Array2::zeros((n, n));
                for (j, m) in ch.truncation.modes.iter().enumerate() {
                    c[[m.k1 as usize - 1, m.k2 as usize - 1]] = scales.values[j] * slots[j];
                }
                Coefficients::Sine(c)
            }
            BasisKind::FourierPeriodic => {
                let mut c = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
                let b = ch.spec.basis;
                for (j, m) in ch.truncation.modes.iter().enumerate() {
                    let s = scales.values[j];
                    if m.k1 == 0 && m.k2 == 0 {
                        c[[0, 0]] = Complex64::new(s * slots[slot], 0.0);
                        slot += 1;
                        continue;
                    }
                    let z = Complex64::new(s * slots[slot], s * slots[slot + 1]);
                    slot += 2;
                    c[[b.storage_index(m.k1), b.storage_index(m.k2)]] = z;
                    c[[b.storage_index(-m.k1), b.storage_index(-m.k2)]] = z.conj();
                }
                Coefficients::Fourier(c)
            }
        }
    }

    /// Interior grid values of one slice of a raw latent vector.
    pub fn decode_slice(&self, x: &[f64], time: usize, channel: usize) -> Array2<f64> {
        let ch = &self.channels[channel];
        let grid = ch
            .transform
            .inverse(&self.slice_coefficients(x, time, channel));
        if ch.spec.padding > 0 {
            restrict_interior(grid.view(), ch.spec.padding)
        } else {
            grid
        }
    }

    /// Accumulates `(∂ decode_slice / ∂x)ᵀ · cotangent` into `grad`, where
    /// `cotangent` holds pointwise partials with respect to interior grid values.
    pub fn decode_slice_adjoint(
        &self,
        cotangent: ArrayView2<'_, f64>,
        time: usize,
        channel: usize,
        grad: &mut [f64],
    ) {
        let ch = &self.channels[channel];
        let scales = self.scales(time, channel);
        let range = self.slot_range(time, channel);
        let out = &mut grad[range];
        match &ch.transform {
            SpectralTransform::Sine(t) => {
                let padded;
                let g = if ch.spec.padding > 0 {
                    let n = ch.spec.basis.grid_size;
                    let p = ch.spec.padding;
                    let mut buf = Array2::zeros((n, n));
                    buf.slice_mut(ndarray::s![p..n - p, p..n - p])
                        .assign(&cotangent);
                    padded = buf;
                    padded.view()
                } else {
                    cotangent
                };
                let back = t.inverse_adjoint(g);
                for (j, m) in ch.truncation.modes.iter().enumerate() {
                    out[j] += scales.values[j] * back[[m.k1 as usize - 1, m.k2 as usize - 1]];
                }
            }
            SpectralTransform::Fourier(t) => {
                let n = ch.spec.basis.grid_size;
                // Σ_x G(x) e^{−2πi⟨k,x⟩}
                let sums = t.forward_real(cotangent).mapv(|v| v * (n * n) as f64);
                let b = ch.spec.basis;
                let mut slot = 0;
                for (j, m) in ch.truncation.modes.iter().enumerate() {
                    let s = scales.values[j];
                    let z = sums[[b.storage_index(m.k1), b.storage_index(m.k2)]];
                    if m.k1 == 0 && m.k2 == 0 {
                        out[slot] += s * z.re;
                        slot += 1;
                    } else {
                        out[slot] += 2.0 * s * z.re;
                        out[slot + 1] += 2.0 * s * z.im;
                        slot += 2;
                    }
                }
            }
        }
    }

    /// Decodes a raw latent vector without a fingerprint check.
    pub fn decode_values(&self, x: &[f64]) -> Result<FieldGrid> {
        if x.len() != self.latent_dim() {
            return Err(Error::dim(format!(
                "latent has {} entries, codec expects {}",
                x.len(),
                self.latent_dim()
            )));
        }
        let mut field = FieldGrid::zeros(
            self.time_steps,
            self.channels.len(),
            self.grid_size,
            self.domain,
        );
        for t in 0..self.time_steps {
            for c in 0..self.channels.len() {
                field.slice_mut(t, c).assign(&self.decode_slice(x, t, c));
            }
        }
        Ok(field)
    }

    pub fn decode(&self, latent: &SpectralLatent) -> Result<FieldGrid> {
        if latent.codec_fingerprint != self.fingerprint {
            return Err(Error::Fingerprint {
                expected: self.fingerprint,
                found: latent.codec_fingerprint,
            });
        }
        self.decode_values(&latent.x)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CODEC_MAGIC);
        w.u16(CODEC_VERSION);
        w.i32(self.domain.code() as i32);
        w.i32(self.grid_size as i32);
        w.i32(self.time_steps as i32);
        w.i32(self.channels.len() as i32);
        for ch in &self.channels {
            w.i32(ch.spec.basis.kind.code());
            w.i32(ch.spec.basis.grid_size as i32);
            w.i32(ch.spec.padding as i32);
            match ch.spec.truncation {
                TruncationKind::Cube(c) => {
                    w.i32(0);
                    w.i32(c as i32);
                    w.i32(-1);
                }
                TruncationKind::Hyperbolic { c, axis_max } => {
                    w.i32(1);
                    w.i32(c as i32);
                    w.i32(axis_max.map_or(-1, |a| a as i32));
                }
            }
            w.i32(ch.truncation.len() as i32);
            for m in &ch.truncation.modes {
                w.i32(m.k1);
                w.i32(m.k2);
            }
        }
        for s in &self.scales {
            w.f64(s.eps_floor);
            w.i32(s.len() as i32);
            for v in &s.values {
                w.f64(*v);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(CODEC_MAGIC)?;
        let version = r.u16()?;
        if version != CODEC_VERSION {
            return Err(Error::Format(format!(
                "unsupported codec version {version}"
            )));
        }
        let domain = Domain::from_code(r.i32()? as u8)?;
        let grid_size = r.usize_i32()?;
        let time_steps = r.usize_i32()?;
        let n_channels = r.usize_i32()?;
        let mut specs = Vec::with_capacity(n_channels);
        let mut stored_modes = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let kind = BasisKind::from_code(r.i32()?)?;
            let basis = BasisDescriptor {
                kind,
                grid_size: r.usize_i32()?,
            };
            let padding = r.usize_i32()?;
            let trunc_kind = r.i32()?;
            let c = r.i32()? as u32;
            let axis = r.i32()?;
            let truncation = match trunc_kind {
                0 => TruncationKind::Cube(c),
                1 => TruncationKind::Hyperbolic {
                    c,
                    axis_max: (axis >= 0).then_some(axis as u32),
                },
                other => return Err(Error::Format(format!("unknown truncation kind {other}"))),
            };
            let count = r.usize_i32()?;
            let mut modes = Vec::with_capacity(count);
            for _ in 0..count {
                modes.push(Mode::new(r.i32()?, r.i32()?));
            }
            specs.push(ChannelSpec {
                basis,
                truncation,
                padding,
            });
            stored_modes.push(modes);
        }
        let codec = Codec::new(domain, grid_size, time_steps, specs)?;
        for (ch, modes) in codec.channels.iter().zip(&stored_modes) {
            if &ch.truncation.modes != modes {
                return Err(Error::Format(
                    "stored mode list disagrees with its truncation rule".into(),
                ));
            }
        }
        let mut scales = Vec::with_capacity(time_steps * n_channels);
        for _ in 0..time_steps * n_channels {
            let eps = r.f64()?;
            let len = r.usize_i32()?;
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                values.push(r.f64()?);
            }
            scales.push(ScaleVector::new(values, eps)?);
        }
        r.finish()?;
        codec.with_scales(scales)
    }
}

/// Population standard deviation of every retained coefficient over `dataset`,
/// one [`ScaleVector`] per `(time, channel)` slice. Complex modes pool real and
/// imaginary parts into one complex variance. Entries are clamped at `eps_floor`.
pub fn fit_scales(
    dataset: &[FieldGrid],
    codec: &Codec,
    eps_floor: f64,
) -> Result<Vec<ScaleVector>> {
    if dataset.len() < 2 {
        return Err(Error::invalid(format!(
            "fit_scales needs at least two samples, got {}",
            dataset.len()
        )));
    }
    for f in dataset {
        codec.check_geometry(f)?;
    }
    let count = dataset.len() as f64;
    let mut out = Vec::with_capacity(codec.time_steps * codec.channels.len());
    for t in 0..codec.time_steps {
        for c in 0..codec.channels.len() {
            let rows: Vec<Vec<Complex64>> = dataset
                .iter()
                .map(|f| codec.mode_coefficients(f.slice(t, c), c))
                .collect();
            let l = codec.channels[c].truncation.len();
            let mut values = Vec::with_capacity(l);
            for j in 0..l {
                let mean = rows.iter().map(|r| r[j]).sum::<Complex64>() / count;
                let var = rows.iter().map(|r| (r[j] - mean).norm_sqr()).sum::<f64>() / count;
                values.push(var.sqrt().max(eps_floor));
            }
            out.push(ScaleVector::new(values, eps_floor)?);
        }
    }
    Ok(out)
}
