//! Event-level Monte Carlo of the apparatus and the coincidence analyses
//! run on its timestamp streams.
//!
//! Every laser period carries two excitation pulses separated by the
//! interferometer delay `d`. Each pulse drives one cascade, `XX` first and
//! `X` after it. Times are picoseconds on a common clock.
//!
//! Channel assignments per arrangement:
//! - `Hbt`: one pulse per period, one spectral line split onto channels 0 and 1.
//! - `Hom`: both `XX` photons through an unbalanced interferometer onto 0 and 1.
//! - `Swap`: 0 = BSM output 1 behind `H`, 1 = BSM output 2 behind `V`,
//!   2 = Alice (`X1`), 3 = Bob (`X2`).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::interference::{detection_povm, BsmParams, Convention, FWHM_TO_SIGMA, OUTCOMES};
use crate::source::SourceParams;
use crate::swap::source_state;
use crate::tomography::{MeasurementSetting, Pol, TomographyRun};

pub const N_CHANNELS: usize = 4;

const BLOCK_PERIODS: u64 = 1 << 16;
const PULSE_ORIGIN_PS: f64 = 1000.0;
const BACKGROUND_WINDOW_PS: f64 = 2000.0;

/// Alice and Bob windows relative to their expected arrival. Truncating the
/// `X` decay tail must stay negligible, otherwise acceptance depends on the
/// `XX1`–`XX2` emission difference and biases the heralded overlap.
const X_WINDOW_PS: (f64, f64) = (-500.0, 2500.0);
const CONTROL_WINDOW_PS: f64 = 2500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Line {
    X,
    Xx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arrangement {
    Hbt { line: Line },
    Hom { copolarized: bool },
    Swap { alice: Pol, bob: Pol },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApparatusConfig {
    pub rep_rate_mhz: f64,
    pub mzi_delay_ns: f64,
    /// Per-channel detection efficiency; `None` tunes each channel to
    /// `target_rate_cps` for the arrangement being simulated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<[f64; N_CHANNELS]>,
    pub jitter_fwhm_ps: f64,
    pub dark_rate_hz: f64,
    /// Laser-leak photons per signal photon, per spectral line.
    pub background_ratio: f64,
    pub dead_time_ns: f64,
    pub target_rate_cps: f64,
    /// Extra delay of `XX1` relative to `XX2` at the BSM (and of the long
    /// interferometer arm relative to `d`).
    pub delay_offset_ps: f64,
}

impl Default for ApparatusConfig {
    fn default() -> Self {
        Self {
            rep_rate_mhz: 76.0,
            mzi_delay_ns: 2.0,
            efficiency: None,
            jitter_fwhm_ps: 50.0,
            dark_rate_hz: 100.0,
            background_ratio: 0.002_25,
            dead_time_ns: 20.0,
            target_rate_cps: 0.5e6,
            delay_offset_ps: 0.0,
        }
    }
}

impl ApparatusConfig {
    pub fn period_ps(&self) -> f64 {
        1e6 / self.rep_rate_mhz
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.rep_rate_mhz > 0.0 && self.rep_rate_mhz.is_finite()) {
            return bad(format!("repetition rate {} MHz", self.rep_rate_mhz));
        }
        let d_ps = self.mzi_delay_ns * 1e3;
        if !(d_ps > 0.0) || 2.0 * d_ps + BACKGROUND_WINDOW_PS >= self.period_ps() {
            return bad(format!("interferometer delay {} ns does not fit the laser period", self.mzi_delay_ns));
        }
        if let Some(eff) = self.efficiency {
            if eff.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return bad(format!("efficiencies {eff:?} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("jitter", self.jitter_fwhm_ps),
            ("dark rate", self.dark_rate_hz),
            ("background ratio", self.background_ratio),
            ("dead time", self.dead_time_ns),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if !(self.target_rate_cps > 0.0) {
            return bad(format!("target rate {} must be positive", self.target_rate_cps));
        }
        if !(self.delay_offset_ps.abs() < 0.5 * d_ps) {
            return bad(format!("delay offset {} ps must stay within ±d/2", self.delay_offset_ps));
        }
        Ok(())
    }
}

/// Everything the simulation needs: the emitted state, the interference
/// model and the apparatus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Setup {
    pub source: SourceParams,
    pub bsm: BsmParams,
    pub apparatus: ApparatusConfig,
}

impl Setup {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.bsm.validate()?;
        self.apparatus.validate()?;
        if self.apparatus.jitter_fwhm_ps != self.bsm.jitter_ps {
            return Err(Error::InvalidParameter(format!(
                "apparatus jitter {} ps differs from the BSM model's {} ps",
                self.apparatus.jitter_fwhm_ps, self.bsm.jitter_ps
            )));
        }
        Ok(())
    }

    pub fn hash(&self, arrangement: &Arrangement) -> Result<String> {
        let text = serde_json::to_string(&(self, arrangement))?;
        Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Photons reaching each channel per laser period, before efficiency.
fn channel_flux(arrangement: &Arrangement, background: f64) -> [f64; N_CHANNELS] {
    let per_line = 1.0 + background;
    match arrangement {
        Arrangement::Hbt { .. } => [0.5 * per_line, 0.5 * per_line, 0.0, 0.0],
        Arrangement::Hom { .. } => [per_line, per_line, 0.0, 0.0],
        // each XX photon: one output, one polarizer
        Arrangement::Swap { .. } => [0.5 * per_line, 0.5 * per_line, 0.5 * per_line, 0.5 * per_line],
    }
}

/// Efficiencies giving `target_rate_cps` registered counts per channel
/// after non-paralyzable dead time; unused channels get 0.
pub fn tuned_efficiency(apparatus: &ApparatusConfig, arrangement: &Arrangement) -> Result<[f64; N_CHANNELS]> {
    apparatus.validate()?;
    let tau_s = apparatus.dead_time_ns * 1e-9;
    let target = apparatus.target_rate_cps;
    if target * tau_s >= 1.0 {
        return Err(Error::InvalidParameter(format!("target rate {target} saturates the dead time")));
    }
    let incident = target / (1.0 - target * tau_s) - apparatus.dark_rate_hz;
    let flux = channel_flux(arrangement, apparatus.background_ratio);
    let mut eff = [0.0; N_CHANNELS];
    for (e, f) in eff.iter_mut().zip(flux) {
        if f == 0.0 {
            continue;
        }
        *e = incident / (apparatus.rep_rate_mhz * 1e6 * f);
        if !(0.0..=1.0).contains(e) {
            return Err(Error::InvalidParameter(format!("target rate {target} needs efficiency {e}")));
        }
    }
    Ok(eff)
}

pub fn resolved_efficiency(apparatus: &ApparatusConfig, arrangement: &Arrangement) -> Result<[f64; N_CHANNELS]> {
    match apparatus.efficiency {
        Some(e) => Ok(e),
        None => tuned_efficiency(apparatus, arrangement),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub duration_s: f64,
    pub periods: u64,
    pub period_ps: f64,
    pub mzi_delay_ps: f64,
}

/// Per-channel detection times in ps, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampStream {
    pub meta: StreamMeta,
    channels: Vec<Vec<u64>>,
}

const RECORD_BYTES: usize = 9;

impl TimestampStream {
    pub fn new(meta: StreamMeta, channels: Vec<Vec<u64>>) -> Result<Self> {
        for (c, times) in channels.iter().enumerate() {
            if times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Parse(format!("channel {c} is not strictly increasing")));
            }
        }
        Ok(Self { meta, channels })
    }

    pub fn channel(&self, c: usize) -> &[u64] {
        self.channels.get(c).map_or(&[], |v| v.as_slice())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rate_cps(&self, c: usize) -> f64 {
        self.channel(c).len() as f64 / self.meta.duration_s
    }

    /// Little-endian `{u8 channel, u64 ps}` records in time order, ties by channel.
    pub fn to_records(&self) -> Vec<u8> {
        let mut merged: Vec<(u64, u8)> =
            self.channels.iter().enumerate().flat_map(|(c, ts)| ts.iter().map(move |&t| (t, c as u8))).collect();
        merged.sort_unstable();
        let mut out = Vec::with_capacity(merged.len() * RECORD_BYTES);
        for (t, c) in merged {
            out.push(c);
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn from_records(bytes: &[u8], meta: StreamMeta) -> Result<Self> {
        if !bytes.len().is_multiple_of(RECORD_BYTES) {
            return Err(Error::Parse(format!("{} bytes is not a whole number of records", bytes.len())));
        }
        let mut channels = vec![Vec::new(); N_CHANNELS];
        for rec in bytes.chunks_exact(RECORD_BYTES) {
            let c = rec[0] as usize;
            if c >= N_CHANNELS {
                return Err(Error::Parse(format!("channel id {c} out of range")));
            }
            channels[c].push(u64::from_le_bytes(rec[1..].try_into().expect("8 bytes")));
        }
        Self::new(meta, channels)
    }
}

/// Joint outcome probabilities for the swap arrangement, affine in the
/// per-event indistinguishability. Index: `outcome·4 + alice_blocked·2 + bob_blocked`.
struct SwapTable {
    at_zero: [f64; 24],
    slope: [f64; 24],
}

impl SwapTable {
    fn new(source: &SourceParams, convention: Convention, alice: Pol, bob: Pol) -> Result<Self> {
        let rho = source_state(source)?;
        let flip = convention == Convention::PsiPlus;
        let ends = [detection_povm(0.0, flip)?, detection_povm(1.0, flip)?];
        let filters = |p: Pol| [p.projector(), p.orthogonal().projector()];
        let (fa, fb) = (filters(alice), filters(bob));
        let mut probs = [[0.0; 24]; 2];
        for (end, povm) in ends.iter().enumerate() {
            for (o, e) in povm.iter().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        let op: DMatrix<C64> = fa[a].kronecker(&fb[b]).kronecker(e);
                        probs[end][o * 4 + a * 2 + b] = (op * rho.matrix()).trace().re.max(0.0);
                    }
                }
            }
        }
        let mut slope = [0.0; 24];
        for k in 0..24 {
            slope[k] = probs[1][k] - probs[0][k];
        }
        Ok(Self { at_zero: probs[0], slope })
    }

    fn sample(&self, u: f64, overlap: f64) -> usize {
        let mut acc = 0.0;
        for k in 0..24 {
            acc += self.at_zero[k] + overlap * self.slope[k];
            if u < acc {
                return k;
            }
        }
        23
    }
}

struct Kernel {
    arrangement: Arrangement,
    period_ps: f64,
    d_ps: f64,
    offset_ps: f64,
    exp_x: Exp<f64>,
    exp_xx: Exp<f64>,
    t1_xx_ps: f64,
    /// `2γ` of the pure-dephasing model, per ps.
    dephasing_ps: f64,
    limit: f64,
    eff: [f64; N_CHANNELS],
    sigma_ps: f64,
    background: Option<Poisson<f64>>,
    dark_per_ps: f64,
    table: Option<SwapTable>,
}

type Buffers = [Vec<f64>; N_CHANNELS];

impl Kernel {
    fn new(setup: &Setup, arrangement: &Arrangement) -> Result<Self> {
        let app = &setup.apparatus;
        let temporal = setup.bsm.temporal()?;
        let exp = |t1_ns: f64| Exp::new(1.0 / (t1_ns * 1e3)).map_err(|e| Error::InvalidParameter(e.to_string()));
        let table = match arrangement {
            Arrangement::Swap { alice, bob } => {
                Some(SwapTable::new(&setup.source, setup.bsm.convention, *alice, *bob)?)
            }
            _ => None,
        };
        let background = if app.background_ratio > 0.0 {
            Some(Poisson::new(app.background_ratio).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            arrangement: *arrangement,
            period_ps: app.period_ps(),
            d_ps: app.mzi_delay_ns * 1e3,
            offset_ps: app.delay_offset_ps,
            exp_x: exp(setup.source.t1_x_ns)?,
            exp_xx: exp(setup.bsm.t1_xx_ns)?,
            t1_xx_ps: setup.bsm.t1_xx_ns * 1e3,
            dephasing_ps: 2.0 * temporal.pure_dephasing_rate() * 1e-3,
            limit: setup.bsm.intrinsic_limit,
            eff: resolved_efficiency(app, arrangement)?,
            sigma_ps: app.jitter_fwhm_ps * FWHM_TO_SIGMA,
            background,
            dark_per_ps: app.dark_rate_hz * 1e-12,
            table,
        })
    }

    /// Wavepacket overlap of two `XX` photons emitted `gap` ps apart
    /// (relative to their pulses) and mutually offset by the configured delay.
    fn overlap(&self, gap: f64) -> f64 {
        self.limit * (-self.dephasing_ps * gap.abs()).exp() * (-self.offset_ps.abs() / self.t1_xx_ps).exp()
    }

    fn detect(&self, rng: &mut ChaCha8Rng, out: &mut Buffers, ch: usize, t: f64) {
        if rng.random::<f64>() < self.eff[ch] {
            let jitter: f64 = rng.sample(StandardNormal);
            out[ch].push(t + self.sigma_ps * jitter);
        }
    }

    /// Background photon arrival offsets for one pulse and one line.
    fn background(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match &self.background {
            None => Vec::new(),
            Some(p) => {
                let n = p.sample(rng) as usize;
                (0..n).map(|_| rng.random::<f64>() * BACKGROUND_WINDOW_PS).collect()
            }
        }
    }

    fn period(&self, rng: &mut ChaCha8Rng, t0: f64, out: &mut Buffers) {
        match self.arrangement {
            Arrangement::Hbt { line } => {
                let mut t = t0 + self.exp_xx.sample(rng);
                if line == Line::X {
                    t += self.exp_x.sample(rng);
                }
                let ch = rng.random_range(0..2);
                self.detect(rng, out, ch, t);
                for dt in self.background(rng) {
                    let ch = rng.random_range(0..2);
                    self.detect(rng, out, ch, t0 + dt);
                }
            }
            Arrangement::Hom { copolarized } => {
                let long = self.d_ps + self.offset_ps;
                let (e1, e2) = (self.exp_xx.sample(rng), self.exp_xx.sample(rng));
                let (l1, l2) = (rng.random_bool(0.5), rng.random_bool(0.5));
                let a1 = t0 + e1 + if l1 { long } else { 0.0 };
                let a2 = t0 + self.d_ps + e2 + if l2 { long } else { 0.0 };
                if l1 && !l2 {
                    let overlap = if copolarized { self.overlap(e1 - e2) } else { 0.0 };
                    if rng.random::<f64>() < 0.5 * (1.0 - overlap) {
                        let ch = rng.random_range(0..2);
                        self.detect(rng, out, ch, a1);
                        self.detect(rng, out, 1 - ch, a2);
                    } else {
                        let ch = rng.random_range(0..2);
                        self.detect(rng, out, ch, a1);
                        self.detect(rng, out, ch, a2);
                    }
                } else {
                    for a in [a1, a2] {
                        let ch = rng.random_range(0..2);
                        self.detect(rng, out, ch, a);
                    }
                }
                for pulse in [t0, t0 + self.d_ps] {
                    for dt in self.background(rng) {
                        let arm = if rng.random_bool(0.5) { long } else { 0.0 };
                        let ch = rng.random_range(0..2);
                        self.detect(rng, out, ch, pulse + dt + arm);
                    }
                }
            }
            Arrangement::Swap { .. } => {
                let table = self.table.as_ref().expect("swap table");
                let (e1, x1) = (self.exp_xx.sample(rng), self.exp_x.sample(rng));
                let (e2, x2) = (self.exp_xx.sample(rng), self.exp_x.sample(rng));
                let k = table.sample(rng.random(), self.overlap(e1 - e2));
                let (n1, n2) = OUTCOMES[k / 4];
                let to_bsm = t0 + self.d_ps + self.offset_ps;
                let (a, b) = (to_bsm + e1, t0 + self.d_ps + e2);
                let (first, second) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                match (n1, n2) {
                    (1, 1) => {
                        self.detect(rng, out, 0, first);
                        self.detect(rng, out, 1, second);
                    }
                    (2, 0) | (0, 2) => {
                        let ch = if n1 == 2 { 0 } else { 1 };
                        self.detect(rng, out, ch, first);
                        self.detect(rng, out, ch, second);
                    }
                    (1, 0) => self.detect(rng, out, 0, first),
                    (0, 1) => self.detect(rng, out, 1, first),
                    _ => {}
                }
                if k & 2 == 0 {
                    self.detect(rng, out, 2, t0 + e1 + x1);
                }
                if k & 1 == 0 {
                    self.detect(rng, out, 3, t0 + self.d_ps + e2 + x2);
                }
                for base in [to_bsm, t0 + self.d_ps] {
                    for dt in self.background(rng) {
                        let u = rng.random::<f64>();
                        if u < 0.5 {
                            self.detect(rng, out, (u < 0.25) as usize, base + dt);
                        }
                    }
                }
                for (ch, pulse) in [(2, t0), (3, t0 + self.d_ps)] {
                    for dt in self.background(rng) {
                        if rng.random_bool(0.5) {
                            self.detect(rng, out, ch, pulse + dt);
                        }
                    }
                }
            }
        }
    }

    fn block(&self, seed: u64, index: u64, first: u64, last: u64) -> Vec<Vec<u64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut out: Buffers = Default::default();
        for k in first..last {
            self.period(&mut rng, PULSE_ORIGIN_PS + k as f64 * self.period_ps, &mut out);
        }
        if self.dark_per_ps > 0.0 {
            let (start, stop) = (first as f64 * self.period_ps, last as f64 * self.period_ps);
            let mean = self.dark_per_ps * (stop - start);
            let dark = Poisson::new(mean).expect("positive dark mean");
            for buf in out.iter_mut() {
                let n = dark.sample(&mut rng) as usize;
                buf.extend((0..n).map(|_| start + rng.random::<f64>() * (stop - start)));
            }
        }
        out.into_iter().map(|v| v.into_iter().map(|t| t.max(0.0).round() as u64).collect()).collect()
    }
}

/// Non-paralyzable dead time; also enforces strictly increasing times.
fn apply_dead_time(sorted: Vec<u64>, dead_ps: u64) -> Vec<u64> {
    let mut kept: Vec<u64> = Vec::with_capacity(sorted.len());
    for t in sorted {
        match kept.last() {
            Some(&last) if t < last + dead_ps.max(1) => {}
            _ => kept.push(t),
        }
    }
    kept
}

/// Seeded event-level simulation; bit-identical for identical
/// `(setup, arrangement, duration_s, seed)`.
pub fn simulate(setup: &Setup, arrangement: &Arrangement, duration_s: f64, seed: u64) -> Result<TimestampStream> {
    setup.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidParameter(format!("duration {duration_s} s must be positive")));
    }
    let app = &setup.apparatus;
    let periods = (duration_s * app.rep_rate_mhz * 1e6).round() as u64;
    if periods == 0 {
        return Err(Error::InvalidParameter(format!("duration {duration_s} s is shorter than one period")));
    }
    let kernel = Kernel::new(setup, arrangement)?;
    let n_blocks = periods.div_ceil(BLOCK_PERIODS);
    let blocks: Vec<Vec<Vec<u64>>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| kernel.block(seed, b, b * BLOCK_PERIODS, ((b + 1) * BLOCK_PERIODS).min(periods)))
        .collect();
    let dead_ps = (app.dead_time_ns * 1e3).round() as u64;
    let channels: Vec<Vec<u64>> = (0..N_CHANNELS)
        .into_par_iter()
        .map(|c| {
            let mut all: Vec<u64> = blocks.iter().flat_map(|b| b[c].iter().copied()).collect();
            all.sort_unstable();
            apply_dead_time(all, dead_ps)
        })
        .collect();
    let meta = StreamMeta {
        config: serde_json::to_value((setup, arrangement))?,
        config_hash: setup.hash(arrangement)?,
        seed,
        duration_s,
        periods,
        period_ps: app.period_ps(),
        mzi_delay_ps: app.mzi_delay_ns * 1e3,
    };
    TimestampStream::new(meta, channels)
}

/// Fixed-width histogram of delays over `[−window, window]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_ps: f64,
    pub start_ps: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn new(bin_ps: f64, window_ps: f64) -> Result<Self> {
        if !(bin_ps > 0.0 && window_ps > 0.0) {
            return Err(Error::InvalidParameter(format!("bin {bin_ps} ps / window {window_ps} ps")));
        }
        let n = (2.0 * window_ps / bin_ps).ceil() as usize;
        Ok(Self { bin_ps, start_ps: -0.5 * n as f64 * bin_ps, counts: vec![0; n] })
    }

    fn add(&mut self, tau: f64) {
        let i = ((tau - self.start_ps) / self.bin_ps).floor();
        if i >= 0.0 && (i as usize) < self.counts.len() {
            self.counts[i as usize] += 1;
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.start_ps + (i as f64 + 0.5) * self.bin_ps).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_center_ps,counts\n");
        for (c, n) in self.centers().iter().zip(&self.counts) {
            s.push_str(&format!("{c},{n}\n"));
        }
        s
    }
}

/// Calls `f(t_b − t_a)` for every pair with `|t_b − t_a| ≤ window`.
fn for_each_pair(a: &[u64], b: &[u64], window_ps: f64, mut f: impl FnMut(f64)) {
    let w = window_ps.floor() as u64;
    let mut lo = 0;
    for &ta in a {
        let start = ta.saturating_sub(w);
        while lo < b.len() && b[lo] < start {
            lo += 1;
        }
        for &tb in b[lo..].iter().take_while(|&&tb| tb <= ta + w) {
            f(tb as f64 - ta as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Result {
    pub histogram: Histogram,
    pub central_area: u64,
    /// Area of each complete side peak, keyed by period multiple.
    pub side_areas: BTreeMap<i64, u64>,
    pub g2_zero: f64,
}

/// Pulsed cross-correlation between two channels. Peaks are the delays
/// within half a period of each multiple of the period.
pub fn g2_histogram(
    stream: &TimestampStream,
    channels: (usize, usize),
    bin_ps: f64,
    window_ps: f64,
) -> Result<G2Result> {
    let period = stream.meta.period_ps;
    if window_ps < 1.5 * period {
        return Err(Error::InvalidParameter(format!("window {window_ps} ps must cover at least one side peak")));
    }
    let (a, b) = (stream.channel(channels.0), stream.channel(channels.1));
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyStream);
    }
    let max_peak = ((window_ps - 0.5 * period) / period).floor() as i64;
    let mut histogram = Histogram::new(bin_ps, window_ps)?;
    let mut areas: BTreeMap<i64, u64> = (-max_peak..=max_peak).map(|m| (m, 0)).collect();
    for_each_pair(a, b, window_ps, |tau| {
        histogram.add(tau);
        if let Some(n) = areas.get_mut(&((tau / period).round() as i64)) {
            *n += 1;
        }
    });
    let central_area = areas.remove(&0).unwrap_or(0);
    let side_mean = areas.values().sum::<u64>() as f64 / areas.len() as f64;
    if side_mean == 0.0 {
        return Err(Error::EmptyStream);
    }
    Ok(G2Result { histogram, central_area, side_areas: areas, g2_zero: central_area as f64 / side_mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomResult {
    pub co: Histogram,
    pub cross: Histogram,
    pub co_central: u64,
    pub cross_central: u64,
    pub visibility: f64,
    /// Poisson standard error of the visibility.
    pub visibility_err: f64,
    /// Offset of the outer peaks from twice the inner peak position.
    pub mismatch_ps: f64,
    /// Standard error of `mismatch_ps` from the spread within each peak.
    pub mismatch_err_ps: f64,
}

#[derive(Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn add(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Variance of the mean; infinite below two samples.
    fn mean_variance(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let n = self.n as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0) / n
    }
}

struct HomPeaks {
    histogram: Histogram,
    central: u64,
    inner: Moments,
    outer: Moments,
}

fn hom_peaks(stream: &TimestampStream, bin_ps: f64) -> Result<HomPeaks> {
    let d = stream.meta.mzi_delay_ps;
    let window = 2.5 * d;
    let mut histogram = Histogram::new(bin_ps, window)?;
    let (mut central, mut inner, mut outer) = (0u64, Moments::default(), Moments::default());
    for_each_pair(stream.channel(0), stream.channel(1), window, |tau| {
        histogram.add(tau);
        match (tau / d).round().abs() as u64 {
            0 => central += 1,
            1 => inner.add(tau.abs()),
            2 => outer.add(tau.abs()),
            _ => {}
        }
    });
    Ok(HomPeaks { histogram, central, inner, outer })
}

/// Five-peak HOM analysis of co- and cross-polarized runs with equal
/// exposure. The interferometer mismatch is read from the outer peak pair,
/// which sits at `2d + δ` while the inner pair stays at `d`. A mismatch is
/// reported only when it exceeds the tolerance by three standard errors.
pub fn hom_histogram(
    co: &TimestampStream,
    cross: &TimestampStream,
    bin_ps: f64,
    tolerance_ps: f64,
) -> Result<HomResult> {
    let (pc, px) = (hom_peaks(co, bin_ps)?, hom_peaks(cross, bin_ps)?);
    if pc.inner.n == 0 || pc.outer.n == 0 || px.central == 0 {
        return Err(Error::EmptyStream);
    }
    let mismatch_ps = pc.outer.mean() - 2.0 * pc.inner.mean();
    let mismatch_err_ps = (pc.outer.mean_variance() + 4.0 * pc.inner.mean_variance()).sqrt();
    if mismatch_ps.abs() > tolerance_ps + 3.0 * mismatch_err_ps {
        return Err(Error::MismatchedDelay { observed_ps: mismatch_ps, tolerance_ps });
    }
    let ratio = pc.central as f64 / px.central as f64;
    let visibility_err = if pc.central > 0 {
        ratio * (1.0 / pc.central as f64 + 1.0 / px.central as f64).sqrt()
    } else {
        1.0 / px.central as f64
    };
    Ok(HomResult {
        co: pc.histogram,
        cross: px.histogram,
        co_central: pc.central,
        cross_central: px.central,
        visibility: 1.0 - ratio,
        visibility_err,
        mismatch_ps,
        mismatch_err_ps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FourfoldCounts {
    pub heralds: u64,
    pub fourfolds: u64,
    /// Alice–Bob coincidences ignoring the BSM.
    pub twofolds: u64,
}

fn any_within(times: &[u64], lo: f64, hi: f64) -> bool {
    let i = times.partition_point(|&t| (t as f64) < lo);
    i < times.len() && times[i] as f64 <= hi
}

/// Counts heralds (BSM coincidences within the gate), four-folds and
/// unheralded Alice–Bob twofolds in a swap stream recorded at `delay_ps`.
/// `gate_ps = None` accepts any BSM pair within `±d/2`.
pub fn count_fourfolds(stream: &TimestampStream, delay_ps: f64, gate_ps: Option<f64>) -> Result<FourfoldCounts> {
    if stream.n_channels() < N_CHANNELS {
        return Err(Error::InvalidParameter(format!("{} channels, four required", stream.n_channels())));
    }
    if let Some(g) = gate_ps {
        if !(g > 0.0) {
            return Err(Error::InvalidParameter(format!("gate {g} ps must be positive")));
        }
    }
    let d = stream.meta.mzi_delay_ps;
    let reach = match gate_ps {
        Some(g) => delay_ps.abs() + 0.5 * g,
        None => 0.5 * d,
    };
    let accept = |dt: f64| match gate_ps {
        Some(g) => (dt.abs() - delay_ps.abs()).abs() <= 0.5 * g,
        None => dt.abs() <= 0.5 * d,
    };
    let (b1, b2, alice, bob) = (stream.channel(0), stream.channel(1), stream.channel(2), stream.channel(3));
    let mut counts = FourfoldCounts::default();
    for &t1 in b1 {
        let start = b2.partition_point(|&t| (t as f64) < t1 as f64 - reach);
        let partner =
            b2[start..].iter().take_while(|&&t| t as f64 <= t1 as f64 + reach).find(|&&t| accept(t as f64 - t1 as f64));
        let Some(&t2) = partner else { continue };
        counts.heralds += 1;
        let reference = 0.5 * (t1 as f64 + t2 as f64) - 0.5 * delay_ps;
        let (lo, hi) = X_WINDOW_PS;
        if any_within(alice, reference - d + lo, reference - d + hi) && any_within(bob, reference + lo, reference + hi)
        {
            counts.fourfolds += 1;
        }
    }
    for &ta in alice {
        let centre = ta as f64 + d;
        if any_within(bob, centre - CONTROL_WINDOW_PS, centre + CONTROL_WINDOW_PS) {
            counts.twofolds += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub delay_ps: f64,
    /// Alice and Bob both on `D`.
    pub co: FourfoldCounts,
    /// Alice on `D`, Bob on `A`.
    pub cross: FourfoldCounts,
}

/// Four-fold counts per delay from pre-recorded `(delay, co, cross)` streams.
pub fn fourfold_scan(
    streams: &[(f64, TimestampStream, TimestampStream)],
    gate_ps: Option<f64>,
) -> Result<Vec<ScanPoint>> {
    streams
        .iter()
        .map(|(delay_ps, co, cross)| {
            Ok(ScanPoint {
                delay_ps: *delay_ps,
                co: count_fourfolds(co, *delay_ps, gate_ps)?,
                cross: count_fourfolds(cross, *delay_ps, gate_ps)?,
            })
        })
        .collect()
}

pub const CO_DIAGONAL: Arrangement = Arrangement::Swap { alice: Pol::D, bob: Pol::D };
pub const CROSS_DIAGONAL: Arrangement = Arrangement::Swap { alice: Pol::D, bob: Pol::A };

/// Derived seed for the `index`-th independent run of a composite experiment.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - index);
    rng.random()
}

/// Simulates and counts co- and cross-diagonal swap runs for each delay.
pub fn simulate_delay_scan(
    setup: &Setup,
    delays_ps: &[f64],
    duration_s: f64,
    gate_ps: Option<f64>,
    seed: u64,
) -> Result<Vec<ScanPoint>> {
    delays_ps
        .par_iter()
        .enumerate()
        .map(|(i, &delay_ps)| {
            let mut s = setup.clone();
            s.apparatus.delay_offset_ps = delay_ps;
            let count = |arr: &Arrangement, k: u64| {
                count_fourfolds(&simulate(&s, arr, duration_s, sub_seed(seed, 2 * i as u64 + k))?, delay_ps, gate_ps)
            };
            Ok(ScanPoint { delay_ps, co: count(&CO_DIAGONAL, 0)?, cross: count(&CROSS_DIAGONAL, 1)? })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Four-folds: BSM herald plus Alice and Bob.
    Heralded,
    /// Alice–Bob twofolds regardless of the BSM.
    Unheralded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTomography {
    pub run: TomographyRun,
    pub heralds: u64,
}

/// One swap simulation per analyzer setting, equal exposure each.
pub fn mc_tomography(
    setup: &Setup,
    settings: &[MeasurementSetting],
    duration_per_setting_s: f64,
    gate_ps: Option<f64>,
    conditioning: Conditioning,
    seed: u64,
) -> Result<McTomography> {
    let delay = setup.apparatus.delay_offset_ps;
    let per_setting: Vec<FourfoldCounts> = settings
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let arr = Arrangement::Swap { alice: s.a, bob: s.b };
            count_fourfolds(&simulate(setup, &arr, duration_per_setting_s, sub_seed(seed, i as u64))?, delay, gate_ps)
        })
        .collect::<Result<_>>()?;
    let counts = per_setting
        .iter()
        .map(|c| match conditioning {
            Conditioning::Heralded => c.fourfolds as f64,
            Conditioning::Unheralded => c.twofolds as f64,
        })
        .collect();
    let run = TomographyRun::new(settings.to_vec(), counts, vec![duration_per_setting_s; settings.len()])?;
    Ok(McTomography { run, heralds: per_setting.iter().map(|c| c.heralds).sum() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleExpFit {
    pub amplitude: f64,
    pub center: f64,
    pub left_rate: f64,
    pub right_rate: f64,
    pub offset: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

const FIT_MAX_ITERATIONS: usize = 2000;

fn double_exp(p: &[f64; 5], x: f64) -> (f64, [f64; 5]) {
    let [a, t0, ql, qr, _] = *p;
    let (rate, q_sign) = if x < t0 { (ql.exp(), -1.0) } else { (qr.exp(), 1.0) };
    let dist = (x - t0).abs();
    let e = (-rate * dist).exp();
    // derivatives: A, t0, log-rate (left), log-rate (right), offset
    let d_t0 = a * e * rate * q_sign;
    let d_q = -a * e * dist * rate;
    let grad = if x < t0 { [e, d_t0, d_q, 0.0, 1.0] } else { [e, d_t0, 0.0, d_q, 1.0] };
    (a * e + p[4], grad)
}

fn fit_cost(p: &[f64; 5], x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (yi - double_exp(p, xi).0).powi(2)).sum()
}

/// Initial guess: median baseline, extremum amplitude, half-height
/// centroid and per-side mean distances.
fn initial_guess(x: &[f64], y: &[f64]) -> [f64; 5] {
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let c = sorted[sorted.len() / 2];
    let dev: Vec<f64> = y.iter().map(|v| v - c).collect();
    let peak = dev.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(0.0);
    let span = x[x.len() - 1] - x[0];
    if peak == 0.0 {
        return [0.0, 0.5 * (x[0] + x[x.len() - 1]), (4.0 / span).ln(), (4.0 / span).ln(), c];
    }
    let (mut w, mut wx) = (0.0, 0.0);
    for (xi, di) in x.iter().zip(&dev) {
        let s = di / peak;
        if s >= 0.5 {
            w += s;
            wx += s * xi;
        }
    }
    let t0 = wx / w;
    let side_rate = |left: bool| {
        let (mut m0, mut m1) = (0.0, 0.0);
        for (xi, di) in x.iter().zip(&dev) {
            if (*xi < t0) == left {
                let s = (di / peak).max(0.0);
                m0 += s;
                m1 += s * (xi - t0).abs();
            }
        }
        if m1 > 0.0 {
            (m0 / m1).ln()
        } else {
            (4.0 / span).ln()
        }
    };
    [peak, t0, side_rate(true), side_rate(false), c]
}

/// Levenberg–Marquardt fit of `A·exp(−|t−t₀|·r_side) + c` with separate
/// left and right rates.
pub fn fit_double_exponential(x: &[f64], y: &[f64]) -> Result<DoubleExpFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 5 {
        return Err(Error::InvalidParameter(format!("{} points, at least 5 required", x.len())));
    }
    if x.windows(2).any(|w| w[0] >= w[1]) || x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("abscissae must be finite and increasing".into()));
    }
    let mut p = initial_guess(x, y);
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    let finish = |p: [f64; 5], iterations| {
        Ok(DoubleExpFit {
            amplitude: p[0],
            center: p[1],
            left_rate: p[2].exp(),
            right_rate: p[3].exp(),
            offset: p[4],
            residual_norm: fit_cost(&p, x, y).sqrt(),
            iterations,
        })
    };
    if p[0] == 0.0 {
        let c = y.iter().sum::<f64>() / y.len() as f64;
        return finish([0.0, p[1], p[2], p[3], c], 0);
    }
    let mut cost = fit_cost(&p, x, y);
    let mut lambda = 1e-3;
    for it in 0..FIT_MAX_ITERATIONS {
        let mut jtj = nalgebra::Matrix5::<f64>::zeros();
        let mut jtr = nalgebra::Vector5::<f64>::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let (f, g) = double_exp(&p, xi);
            let g = nalgebra::Vector5::from(g);
            jtj += g * g.transpose();
            jtr += g * (yi - f);
        }
        if cost <= 1e-30 * scale || jtr.norm() <= 1e-14 * scale.sqrt() {
            return finish(p, it);
        }
        loop {
            let mut damped = jtj;
            for k in 0..5 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let step = damped.lu().solve(&jtr).unwrap_or_else(nalgebra::Vector5::zeros);
            let trial: [f64; 5] = std::array::from_fn(|k| p[k] + step[k]);
            let trial_cost = fit_cost(&trial, x, y);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel_step = (0..5).map(|k| step[k].abs() / (p[k].abs() + 1e-12)).fold(0.0, f64::max);
                let rel_gain = (cost - trial_cost) / cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                if rel_step < 1e-12 || rel_gain < 1e-15 {
                    return finish(p, it + 1);
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // no descent direction left: stationary point
                return finish(p, it + 1);
            }
        }
    }
    Err(Error::NonConvergence { iterations: FIT_MAX_ITERATIONS, grad_norm: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interference::bsm_povm;
    use crate::tomography::{mle_reconstruct, standard_settings, SettingSet};

    fn ideal_apparatus() -> ApparatusConfig {
        ApparatusConfig {
            efficiency: Some([1.0; 4]),
            dark_rate_hz: 0.0,
            background_ratio: 0.0,
            dead_time_ns: 0.0,
            ..Default::default()
        }
    }

    fn setup_with(apparatus: ApparatusConfig) -> Setup {
        Setup { apparatus, ..Default::default() }
    }

    const HBT_XX: Arrangement = Arrangement::Hbt { line: Line::Xx };

    #[test]
    fn zero_efficiency_without_darks_is_empty() {
        let app = ApparatusConfig { efficiency: Some([0.0; 4]), dark_rate_hz: 0.0, ..Default::default() };
        for arr in [HBT_XX, Arrangement::Hom { copolarized: true }, CO_DIAGONAL] {
            let s = simulate(&setup_with(app.clone()), &arr, 1e-4, 1).unwrap();
            assert!(s.is_empty());
        }
    }

    #[test]
    fn streams_are_seed_deterministic() {
        let setup = Setup::default();
        let a = simulate(&setup, &CO_DIAGONAL, 2e-3, 42).unwrap();
        let b = simulate(&setup, &CO_DIAGONAL, 2e-3, 42).unwrap();
        let c = simulate(&setup, &CO_DIAGONAL, 2e-3, 43).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_records(), b.to_records());
        assert_ne!(a.channels, c.channels);
        assert_eq!(a.meta.config_hash.len(), 64);
    }

    #[test]
    fn records_round_trip() {
        let s = simulate(&setup_with(ideal_apparatus()), &CO_DIAGONAL, 1e-4, 5).unwrap();
        let bytes = s.to_records();
        assert_eq!(bytes.len(), 9 * s.len());
        let back = TimestampStream::from_records(&bytes, s.meta.clone()).unwrap();
        assert_eq!(back, s);
        assert!(TimestampStream::from_records(&bytes[..10], s.meta.clone()).is_err());
    }

    #[test]
    fn channels_are_strictly_sorted_and_respect_dead_time() {
        let app = ApparatusConfig { efficiency: Some([1.0; 4]), ..Default::default() };
        let s = simulate(&setup_with(app), &Arrangement::Hom { copolarized: true }, 1e-4, 2).unwrap();
        for c in 0..2 {
            assert!(s.channel(c).windows(2).all(|w| w[1] - w[0] >= 20_000));
        }
    }

    #[test]
    fn tuned_rate_matches_target() {
        let setup = Setup::default();
        let s = simulate(&setup, &HBT_XX, 0.05, 9).unwrap();
        for c in 0..2 {
            let rate = s.rate_cps(c);
            assert!((rate / 0.5e6 - 1.0).abs() < 0.02, "channel {c}: {rate}");
        }
    }

    #[test]
    fn counts_scale_with_duration() {
        let setup = Setup::default();
        let n1 = simulate(&setup, &HBT_XX, 0.01, 3).unwrap().len() as f64;
        let n2 = simulate(&setup, &HBT_XX, 0.02, 4).unwrap().len() as f64;
        let ratio = n2 / n1;
        let sigma = 2.0 * (1.0 / n1 + 1.0 / n2).sqrt();
        assert!((ratio - 2.0).abs() < 5.0 * sigma, "{ratio}");
    }

    #[test]
    fn background_free_g2_vanishes_with_side_peaks_at_period_multiples() {
        let setup = setup_with(ideal_apparatus());
        let s = simulate(&setup, &HBT_XX, 2e-3, 11).unwrap();
        let period = s.meta.period_ps;
        let g = g2_histogram(&s, (0, 1), 100.0, 5.5 * period).unwrap();
        assert!(g.g2_zero < 1e-4);
        assert_eq!(g.side_areas.len(), 10);
        let side: u64 = g.side_areas.values().sum();
        assert_eq!(g.histogram.total(), g.central_area + side);
        // heaviest bins sit at integer multiples of the period
        let centers = g.histogram.centers();
        let mut idx: Vec<usize> = (0..centers.len()).collect();
        idx.sort_by_key(|&i| std::cmp::Reverse(g.histogram.counts[i]));
        for &i in &idx[..8] {
            let m = centers[i] / period;
            assert!((m - m.round()).abs() * period < 500.0 && m.round() != 0.0);
        }
    }

    #[test]
    fn g2_requires_events() {
        let app = ApparatusConfig { efficiency: Some([0.0; 4]), dark_rate_hz: 0.0, ..Default::default() };
        let s = simulate(&setup_with(app), &HBT_XX, 1e-4, 1).unwrap();
        assert!(matches!(g2_histogram(&s, (0, 1), 100.0, 30_000.0), Err(Error::EmptyStream)));
    }

    #[test]
    fn hom_cross_polarized_has_no_visibility_and_ideal_has_full() {
        let mut setup = setup_with(ideal_apparatus());
        let cross = simulate(&setup, &Arrangement::Hom { copolarized: false }, 4e-3, 1).unwrap();
        let cross2 = simulate(&setup, &Arrangement::Hom { copolarized: false }, 4e-3, 2).unwrap();
        let r = hom_histogram(&cross2, &cross, 50.0, 20.0).unwrap();
        assert!(r.visibility.abs() < 3.0 * r.visibility_err + 1e-3, "{r:?}");

        setup.bsm.indistinguishability = 1.0;
        let co = simulate(&setup, &Arrangement::Hom { copolarized: true }, 4e-3, 3).unwrap();
        let r = hom_histogram(&co, &cross, 50.0, 20.0).unwrap();
        // residual from the tails of the neighbouring peaks only
        assert!(r.visibility > 0.999, "{r:?}");
    }

    #[test]
    fn hom_detects_interferometer_mismatch() {
        let mut app = ideal_apparatus();
        app.delay_offset_ps = 300.0;
        let setup = setup_with(app);
        let co = simulate(&setup, &Arrangement::Hom { copolarized: true }, 2e-3, 1).unwrap();
        let cross = simulate(&setup, &Arrangement::Hom { copolarized: false }, 2e-3, 2).unwrap();
        match hom_histogram(&co, &cross, 50.0, 50.0) {
            Err(Error::MismatchedDelay { observed_ps, .. }) => assert!((observed_ps - 300.0).abs() < 30.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sparse_hom_data_is_not_flagged_as_mismatched() {
        let setup = Setup::default();
        for seed in 0..5 {
            let co = simulate(&setup, &Arrangement::Hom { copolarized: true }, 0.015, 2 * seed).unwrap();
            let cross = simulate(&setup, &Arrangement::Hom { copolarized: false }, 0.015, 2 * seed + 1).unwrap();
            match hom_histogram(&co, &cross, 50.0, 30.0) {
                Ok(r) => assert!(r.mismatch_err_ps > 10.0, "{}", r.mismatch_err_ps),
                Err(Error::EmptyStream) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn swap_table_matches_heralding_probability() {
        let setup = Setup::default();
        for i in [0.0, 0.569, 1.0] {
            let p_herald: f64 = [Pol::H, Pol::V]
                .iter()
                .map(|&alice| {
                    let t = SwapTable::new(&setup.source, Convention::PsiPlus, alice, Pol::D).unwrap();
                    // outcome (1,1) is index 3; sum Bob pass and block, Alice pass only
                    (0..2).map(|b| t.at_zero[12 + b] + i * t.slope[12 + b]).sum::<f64>()
                })
                .sum();
            assert!((p_herald - 0.125).abs() < 1e-12);
        }
        // ideal-coincidence operator agrees with the closed-form POVM
        let e = detection_povm(0.569, true).unwrap();
        let closed = bsm_povm(0.569, Convention::PsiPlus).unwrap();
        assert!((&e[3] - closed.matrix()).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn heralded_diagonal_ratio_tracks_fidelity() {
        let setup = setup_with(ideal_apparatus());
        let co = count_fourfolds(&simulate(&setup, &CO_DIAGONAL, 4e-3, 1).unwrap(), 0.0, None).unwrap();
        let cross = count_fourfolds(&simulate(&setup, &CROSS_DIAGONAL, 4e-3, 2).unwrap(), 0.0, None).unwrap();
        let periods = 4e-3 * 76e6;
        assert!((co.heralds as f64 / periods - 0.125).abs() < 0.005);
        let f = co.fourfolds as f64 / (co.fourfolds + cross.fourfolds) as f64;
        let n = (co.fourfolds + cross.fourfolds) as f64;
        let expected = crate::swap::swap_at(&setup.source, 0.569, Convention::PsiPlus).unwrap().fidelity;
        assert!((f - expected).abs() < 4.0 * (f * (1.0 - f) / n).sqrt(), "{f} vs {expected}");
    }

    #[test]
    fn unheralded_tomography_is_maximally_mixed() {
        let setup = setup_with(ideal_apparatus());
        let settings = standard_settings(SettingSet::Sixteen);
        let t = mc_tomography(&setup, &settings, 2e-4, None, Conditioning::Unheralded, 8).unwrap();
        let rho = mle_reconstruct(&t.run).unwrap();
        let mixed = crate::qstate::DensityMatrix::maximally_mixed(&["A", "B"]).unwrap();
        let f = crate::qstate::fidelity_mixed(&rho, &mixed).unwrap();
        assert!(f > 0.99, "{f}");
    }

    #[test]
    fn sub_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|i| sub_seed(7, i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(sub_seed(7, 3), sub_seed(7, 3));
    }

    fn synthetic(p: [f64; 5]) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (-30..=30).map(|k| 20.0 * k as f64).collect();
        let y =
            x.iter().map(|&t| p[0] * (-(t - p[1]).abs() * if t < p[1] { p[2] } else { p[3] }).exp() + p[4]).collect();
        (x, y)
    }

    #[test]
    fn noiseless_double_exponential_is_recovered() {
        for truth in [[500.0, 13.0, 0.008, 0.012, 100.0], [-300.0, -41.0, 0.01, 0.006, 800.0]] {
            let (x, y) = synthetic(truth);
            let fit = fit_double_exponential(&x, &y).unwrap();
            let got = [fit.amplitude, fit.center, fit.left_rate, fit.right_rate, fit.offset];
            for (g, t) in got.iter().zip(truth) {
                assert!((g - t).abs() <= 1e-6 * t.abs().max(1.0), "{got:?} vs {truth:?}");
            }
        }
    }

    #[test]
    fn flat_histogram_has_no_amplitude() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let fit = fit_double_exponential(&x, &[42.0; 20]).unwrap();
        assert!(fit.amplitude.abs() < 1e-9);
        assert!((fit.offset - 42.0).abs() < 1e-9);
        assert!(fit_double_exponential(&x[..4], &[1.0; 4]).is_err());
    }

    #[test]
    fn apparatus_validation() {
        let app = ApparatusConfig { efficiency: Some([1.2, 0.0, 0.0, 0.0]), ..Default::default() };
        assert!(app.validate().is_err());
        let app = ApparatusConfig { mzi_delay_ns: 7.0, ..Default::default() };
        assert!(app.validate().is_err());
        let mut setup = Setup::default();
        setup.apparatus.jitter_fwhm_ps = 30.0;
        assert!(setup.validate().is_err());
        assert!(simulate(&Setup::default(), &HBT_XX, 0.0, 1).is_err());
    }
}
