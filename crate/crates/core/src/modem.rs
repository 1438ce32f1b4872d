//! Complex-baseband signal synthesis for the nine modulation classes and
//! AWGN injection at a calibrated SNR.
//!
//! All rates are fractions of a unit sample rate. Every synthesized frame is
//! scaled to unit mean power before noise is added, so an SNR in dB maps
//! directly onto the per-sample complex noise variance.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCorpus;
use crate::error::{Error, Result};
use crate::seed;

/// Number of complex samples in every frame.
pub const FRAME_LEN: usize = 1024;

/// Taps in the truncated FIR Hilbert transformer used for single sideband.
pub const HILBERT_TAPS: usize = 129;

/// Span of the GMSK Gaussian frequency pulse, in symbols.
const GMSK_SPAN_SYMBOLS: usize = 4;

/// Message tone frequencies are drawn from this band (cycles/sample).
const MESSAGE_BAND: (f64, f64) = (0.002, 0.03);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModulationClass {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
    AmDsbSc,
    AmSsbSc,
    Fm,
    Gmsk,
}

impl ModulationClass {
    pub const COUNT: usize = 9;

    /// All classes in id order.
    pub const ALL: [ModulationClass; 9] = [
        ModulationClass::Bpsk,
        ModulationClass::Qpsk,
        ModulationClass::Psk8,
        ModulationClass::Qam16,
        ModulationClass::Qam64,
        ModulationClass::AmDsbSc,
        ModulationClass::AmSsbSc,
        ModulationClass::Fm,
        ModulationClass::Gmsk,
    ];

    /// Stable integer id in `0..9`.
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationClass::Bpsk => "BPSK",
            ModulationClass::Qpsk => "QPSK",
            ModulationClass::Psk8 => "8PSK",
            ModulationClass::Qam16 => "16QAM",
            ModulationClass::Qam64 => "64QAM",
            ModulationClass::AmDsbSc => "AM-DSB-SC",
            ModulationClass::AmSsbSc => "AM-SSB-SC",
            ModulationClass::Fm => "FM",
            ModulationClass::Gmsk => "GMSK",
        }
    }

    /// Constellation order for the linear digital schemes.
    pub fn constellation_order(self) -> Option<usize> {
        match self {
            ModulationClass::Bpsk => Some(2),
            ModulationClass::Qpsk => Some(4),
            ModulationClass::Psk8 => Some(8),
            ModulationClass::Qam16 => Some(16),
            ModulationClass::Qam64 => Some(64),
            _ => None,
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for ModulationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        Self::ALL
            .iter()
            .copied()
            .find(|c| {
                let canon: String = c.name().chars().filter(|ch| ch.is_ascii_alphanumeric()).collect();
                let alias = format!("{:?}", c).to_ascii_uppercase();
                canon == key || alias == key
            })
            .ok_or_else(|| Error::Config(format!("unknown modulation class {s:?}")))
    }
}

impl From<ModulationClass> for String {
    fn from(c: ModulationClass) -> String {
        c.name().to_string()
    }
}

impl TryFrom<String> for ModulationClass {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Pulse used by the linear digital schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    #[default]
    RootRaisedCosine,
    /// Each symbol held for `samples_per_symbol` samples. Only meant for
    /// constellation checks; it leaves symbol instants free of ISI.
    Rectangular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub samples_per_symbol: usize,
    pub rrc_rolloff: f64,
    pub rrc_span_symbols: usize,
    /// Peak FM frequency deviation as a fraction of the sample rate.
    pub fm_deviation: f64,
    pub gmsk_bt: f64,
    pub am_message_tones: usize,
    pub rng_seed: u64,
    pub pulse: PulseShape,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            samples_per_symbol: 8,
            rrc_rolloff: 0.35,
            rrc_span_symbols: 8,
            fm_deviation: 0.1,
            gmsk_bt: 0.3,
            am_message_tones: 3,
            rng_seed: 0,
            pulse: PulseShape::RootRaisedCosine,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol < 2 {
            return Err(Error::Config(format!("samples_per_symbol must be >= 2, got {}", self.samples_per_symbol)));
        }
        if !(self.rrc_rolloff > 0.0 && self.rrc_rolloff <= 1.0) {
            return Err(Error::Config(format!("rrc_rolloff must lie in (0, 1], got {}", self.rrc_rolloff)));
        }
        if self.rrc_span_symbols == 0 {
            return Err(Error::Config("rrc_span_symbols must be positive".into()));
        }
        if !(self.fm_deviation > 0.0 && self.fm_deviation < 0.5) {
            return Err(Error::Config(format!("fm_deviation must lie in (0, 0.5), got {}", self.fm_deviation)));
        }
        if !(self.gmsk_bt > 0.0 && self.gmsk_bt.is_finite()) {
            return Err(Error::Config(format!("gmsk_bt must be positive, got {}", self.gmsk_bt)));
        }
        if self.am_message_tones == 0 {
            return Err(Error::Config("am_message_tones must be positive".into()));
        }
        Ok(())
    }
}

/// One labeled signal instance.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<Complex64>,
    pub label: ModulationClass,
    /// `f64::INFINITY` marks a clean (noiseless) frame.
    pub snr_db: f64,
    pub seed: u64,
}

impl IqFrame {
    pub fn is_clean(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

/// Synthesizes a noiseless, unit-power frame. Deterministic in
/// `(class, cfg, seed)`.
pub fn synthesize(class: ModulationClass, cfg: &SynthesisConfig, seed: u64) -> Result<IqFrame> {
    cfg.validate()?;
    let mut rng = seed::rng(seed);
    let raw = match class {
        ModulationClass::Bpsk
        | ModulationClass::Qpsk
        | ModulationClass::Psk8
        | ModulationClass::Qam16
        | ModulationClass::Qam64 => {
            let points = constellation(class).expect("linear scheme");
            linear_digital(&points, cfg, &mut rng)
        }
        ModulationClass::Gmsk => gmsk(cfg, &mut rng),
        ModulationClass::Fm => fm(cfg, &mut rng),
        ModulationClass::AmDsbSc => am_dsb_sc(cfg, &mut rng),
        ModulationClass::AmSsbSc => am_ssb_sc(cfg, &mut rng),
    };
    debug_assert_eq!(raw.len(), FRAME_LEN);
    Ok(IqFrame { samples: normalize_power(raw), label: class, snr_db: f64::INFINITY, seed })
}

/// Ideal constellation for a linear digital scheme, unscaled.
///
/// PSK points sit on the unit circle (QPSK rotated by pi/4); QAM points
/// form a square grid with odd-integer coordinates.
pub fn constellation(class: ModulationClass) -> Option<Vec<Complex64>> {
    let order = class.constellation_order()?;
    let points = match class {
        ModulationClass::Bpsk | ModulationClass::Psk8 => {
            (0..order).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / order as f64)).collect()
        }
        ModulationClass::Qpsk => {
            (0..order).map(|k| Complex64::from_polar(1.0, PI / 4.0 + 2.0 * PI * k as f64 / order as f64)).collect()
        }
        _ => {
            let side = (order as f64).sqrt() as usize;
            let level = |k: usize| (2 * k) as f64 - (side as f64 - 1.0);
            (0..side).flat_map(|i| (0..side).map(move |q| Complex64::new(level(i), level(q)))).collect()
        }
    };
    Some(points)
}

fn normalize_power(mut samples: Vec<Complex64>) -> Vec<Complex64> {
    let p = mean_power(&samples);
    if p > 0.0 {
        let scale = p.sqrt().recip();
        samples.iter_mut().for_each(|s| *s *= scale);
    }
    samples
}

/// Root-raised-cosine taps over `span` symbols, normalized to unit energy.
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let half = (n / 2) as f64;
    let b = rolloff;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - half) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 + b * (4.0 / PI - 1.0)
            } else if ((4.0 * b * t).abs() - 1.0).abs() < 1e-9 {
                (b / 2f64.sqrt())
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy = taps.iter().map(|h| h * h).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|h| *h /= energy);
    taps
}

/// Gaussian frequency pulse for GMSK, normalized to unit sum.
pub fn gaussian_taps(bt: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let half = (n / 2) as f64;
    let sigma = (2f64.ln()).sqrt() / (2.0 * PI * bt);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - half) / sps as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

/// Truncated, Hamming-windowed FIR Hilbert transformer (odd length).
pub fn hilbert_taps(len: usize) -> Vec<f64> {
    let mid = (len / 2) as isize;
    (0..len)
        .map(|i| {
            let n = i as isize - mid;
            if n % 2 == 0 {
                0.0
            } else {
                let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
                w * 2.0 / (PI * n as f64)
            }
        })
        .collect()
}

/// Output sample `i` of the full convolution of `x` with `h`.
fn fir_at<T>(x: &[T], h: &[f64], i: usize) -> T
where
    T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let lo = (i + 1).saturating_sub(h.len());
    let hi = i.min(x.len() - 1);
    (lo..=hi).fold(T::default(), |acc, k| acc + x[k] * h[i - k])
}

fn linear_digital<R: Rng>(points: &[Complex64], cfg: &SynthesisConfig, rng: &mut R) -> Vec<Complex64> {
    let sps = cfg.samples_per_symbol;
    match cfg.pulse {
        PulseShape::Rectangular => {
            let n_sym = FRAME_LEN.div_ceil(sps);
            (0..n_sym)
                .flat_map(|_| {
                    let s = points[rng.random_range(0..points.len())];
                    std::iter::repeat_n(s, sps)
                })
                .take(FRAME_LEN)
                .collect()
        }
        PulseShape::RootRaisedCosine => {
            let span = cfg.rrc_span_symbols;
            let taps = rrc_taps(cfg.rrc_rolloff, sps, span);
            let n_sym = span + FRAME_LEN.div_ceil(sps) + 1;
            let mut upsampled = vec![Complex64::default(); n_sym * sps];
            for k in 0..n_sym {
                upsampled[k * sps] = points[rng.random_range(0..points.len())];
            }
            // Skip one full filter length of start-up transient.
            let start = taps.len() - 1;
            (start..start + FRAME_LEN).map(|i| fir_at(&upsampled, &taps, i)).collect()
        }
    }
}

fn gmsk<R: Rng>(cfg: &SynthesisConfig, rng: &mut R) -> Vec<Complex64> {
    let sps = cfg.samples_per_symbol;
    let taps = gaussian_taps(cfg.gmsk_bt, sps, GMSK_SPAN_SYMBOLS);
    let n_sym = GMSK_SPAN_SYMBOLS + FRAME_LEN.div_ceil(sps) + 1;
    let nrz: Vec<f64> = (0..n_sym)
        .flat_map(|_| {
            let b = if rng.random::<bool>() { 1.0 } else { -1.0 };
            std::iter::repeat_n(b, sps)
        })
        .collect();
    // Modulation index 1/2: each symbol advances the phase by +-pi/2.
    let step = PI * 0.5 / sps as f64;
    let start = taps.len() - 1;
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(FRAME_LEN);
    for i in 0..start + FRAME_LEN {
        phase += step * fir_at(&nrz, &taps, i);
        if i >= start {
            out.push(Complex64::from_polar(1.0, phase));
        }
    }
    out
}

/// Random multi-tone message with peak magnitude at most 1.
fn message<R: Rng>(len: usize, tones: usize, rng: &mut R) -> Vec<f64> {
    let params: Vec<(f64, f64, f64)> = (0..tones)
        .map(|_| {
            let f = rng.random_range(MESSAGE_BAND.0..MESSAGE_BAND.1);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.5..1.0);
            (f, phase, amp)
        })
        .collect();
    let total: f64 = params.iter().map(|p| p.2).sum();
    (0..len)
        .map(|n| params.iter().map(|&(f, ph, a)| a * (2.0 * PI * f * n as f64 + ph).cos()).sum::<f64>() / total)
        .collect()
}

fn fm<R: Rng>(cfg: &SynthesisConfig, rng: &mut R) -> Vec<Complex64> {
    let m = message(FRAME_LEN, cfg.am_message_tones, rng);
    let k = 2.0 * PI * cfg.fm_deviation;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    m.iter()
        .map(|&v| {
            phase += k * v;
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

fn am_dsb_sc<R: Rng>(cfg: &SynthesisConfig, rng: &mut R) -> Vec<Complex64> {
    let m = message(FRAME_LEN, cfg.am_message_tones, rng);
    let carrier = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    m.iter().map(|&v| carrier * v).collect()
}

fn am_ssb_sc<R: Rng>(cfg: &SynthesisConfig, rng: &mut R) -> Vec<Complex64> {
    let taps = hilbert_taps(HILBERT_TAPS);
    let delay = HILBERT_TAPS / 2;
    let m = message(FRAME_LEN + 2 * delay, cfg.am_message_tones, rng);
    let carrier = Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
    // Output index i of the Hilbert FIR aligns with message index i - delay;
    // the first and last `delay` samples are transient and dropped.
    (2 * delay..2 * delay + FRAME_LEN).map(|i| carrier * Complex64::new(m[i - delay], fir_at(&m, &taps, i))).collect()
}

/// Adds circularly-symmetric complex Gaussian noise so that the measured
/// input power over the noise variance equals `10^(snr_db/10)`.
///
/// `snr_db = +inf` returns the input unchanged.
pub fn apply_awgn(frame: &IqFrame, snr_db: f64, seed: u64) -> Result<IqFrame> {
    if frame.samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
        return Err(Error::Data("frame contains non-finite samples".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(IqFrame { snr_db, ..frame.clone() });
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("snr_db must be finite or +inf, got {snr_db}")));
    }
    let variance = noise_variance(frame.mean_power(), snr_db);
    let sigma = (variance / 2.0).sqrt();
    let mut rng = seed::rng(seed);
    let samples = frame
        .samples
        .iter()
        .map(|&s| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            s + Complex64::new(re, im) * sigma
        })
        .collect();
    Ok(IqFrame { samples, label: frame.label, snr_db, seed: frame.seed })
}

/// Per-sample complex noise variance for a signal of power `signal_power`.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// What to generate: a balanced grid of classes x SNRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub classes: Vec<ModulationClass>,
    /// `f64::INFINITY` entries produce clean frames.
    pub snr_grid: Vec<f64>,
    pub frames_per_cell: usize,
    pub cfg: SynthesisConfig,
    pub seed: u64,
}

/// Generates `|classes| * |snr_grid| * frames_per_cell` frames ordered by
/// class, then SNR, then frame index.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<LabeledCorpus> {
    if spec.classes.is_empty() {
        return Err(Error::Config("class list is empty".into()));
    }
    if spec.snr_grid.is_empty() {
        return Err(Error::Config("SNR grid is empty".into()));
    }
    if spec.frames_per_cell == 0 {
        return Err(Error::Config("frames_per_cell must be >= 1".into()));
    }
    spec.cfg.validate()?;
    for &snr in &spec.snr_grid {
        if snr.is_nan() || snr == f64::NEG_INFINITY {
            return Err(Error::Config(format!("invalid SNR grid value {snr}")));
        }
        if snr.is_finite() && !(0.0..=30.0).contains(&snr) {
            log::warn!("SNR {snr} dB lies outside the usual 0..30 dB range");
        }
    }

    let mut frames = Vec::with_capacity(spec.classes.len() * spec.snr_grid.len() * spec.frames_per_cell);
    for &class in &spec.classes {
        for (si, &snr) in spec.snr_grid.iter().enumerate() {
            for k in 0..spec.frames_per_cell {
                let tags = [class.id() as u64, si as u64, k as u64];
                let synth_seed = seed::derive(spec.seed, &[tags[0], tags[1], tags[2], 0]);
                let noise_seed = seed::derive(spec.seed, &[tags[0], tags[1], tags[2], 1]);
                let clean = synthesize(class, &spec.cfg, synth_seed)?;
                frames.push(apply_awgn(&clean, snr, noise_seed)?);
            }
        }
    }
    Ok(LabeledCorpus::new(frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rect(sps: usize) -> SynthesisConfig {
        SynthesisConfig { samples_per_symbol: sps, pulse: PulseShape::Rectangular, ..Default::default() }
    }

    #[test]
    fn class_ids_are_a_stable_bijection() {
        for (i, c) in ModulationClass::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i);
            assert_eq!(ModulationClass::from_id(i as u8), Some(*c));
            assert_eq!(c.name().parse::<ModulationClass>().unwrap(), *c);
        }
        assert_eq!(ModulationClass::from_id(9), None);
        assert_eq!(ModulationClass::Qam16.id(), 3);
        assert_eq!(ModulationClass::Qam64.id(), 4);
        assert_eq!(ModulationClass::AmDsbSc.id(), 5);
        assert_eq!(ModulationClass::AmSsbSc.id(), 6);
    }

    #[test]
    fn parse_accepts_aliases() {
        assert_eq!("qam16".parse::<ModulationClass>().unwrap(), ModulationClass::Qam16);
        assert_eq!("am_ssb_sc".parse::<ModulationClass>().unwrap(), ModulationClass::AmSsbSc);
        assert!("gfsk".parse::<ModulationClass>().is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SynthesisConfig { samples_per_symbol: 1, ..Default::default() };
        assert!(matches!(synthesize(ModulationClass::Bpsk, &cfg, 0), Err(Error::Config(_))));
        let cfg = SynthesisConfig { rrc_rolloff: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_class_is_unit_power_and_deterministic() {
        let cfg = SynthesisConfig::default();
        for class in ModulationClass::ALL {
            let a = synthesize(class, &cfg, 11).unwrap();
            let b = synthesize(class, &cfg, 11).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.samples.len(), FRAME_LEN);
            assert!((a.mean_power() - 1.0).abs() < 1e-9, "{class}");
            assert!(a.is_clean());
            assert_ne!(a.samples, synthesize(class, &cfg, 12).unwrap().samples);
        }
    }

    #[test]
    fn bpsk_rect_symbol_instants_collapse_to_two_points() {
        let frame = synthesize(ModulationClass::Bpsk, &rect(8), 7).unwrap();
        let instants: Vec<Complex64> = frame.samples.iter().step_by(8).copied().collect();
        let a = instants[0].re.abs();
        for s in &instants {
            assert!(s.im.abs() < 1e-12);
            assert!((s.re.abs() - a).abs() < 1e-6);
        }
        assert!(instants.iter().any(|s| s.re > 0.0) && instants.iter().any(|s| s.re < 0.0));
    }

    #[test]
    fn fm_and_gmsk_are_constant_envelope() {
        for class in [ModulationClass::Fm, ModulationClass::Gmsk] {
            let f = synthesize(class, &SynthesisConfig::default(), 3).unwrap();
            for s in &f.samples {
                assert_abs_diff_eq!(s.norm(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rrc_taps_are_symmetric_unit_energy() {
        let h = rrc_taps(0.35, 8, 8);
        assert_eq!(h.len(), 65);
        for i in 0..h.len() {
            assert_abs_diff_eq!(h[i], h[h.len() - 1 - i], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(h.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-12);
        // rolloff 0.25 puts t = 1 exactly on the singular point.
        assert!(rrc_taps(0.25, 4, 8).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn rrc_cascade_is_nyquist() {
        // RRC * RRC is a raised cosine: zero crossings at nonzero symbol
        // multiples (up to truncation error).
        let sps = 8;
        let h = rrc_taps(0.35, sps, 16);
        let n = h.len();
        let rc: Vec<f64> = (0..2 * n - 1).map(|i| fir_at(&h, &h, i)).collect();
        let peak = rc[n - 1];
        for k in 1..4 {
            assert!((rc[n - 1 + k * sps] / peak).abs() < 5e-3, "k={k}");
        }
    }

    #[test]
    fn hilbert_shifts_a_tone_by_quarter_cycle() {
        let taps = hilbert_taps(HILBERT_TAPS);
        let f = 0.05;
        let x: Vec<f64> = (0..600).map(|n| (2.0 * PI * f * n as f64).cos()).collect();
        let delay = HILBERT_TAPS / 2;
        for i in 200..300 {
            let y = fir_at(&x, &taps, i);
            let expected = (2.0 * PI * f * (i - delay) as f64).sin();
            assert!((y - expected).abs() < 0.02);
        }
    }

    #[test]
    fn ssb_spectrum_is_one_sided() {
        // The analytic signal correlates with positive-frequency probes only.
        let frame = synthesize(ModulationClass::AmSsbSc, &SynthesisConfig::default(), 5).unwrap();
        let probe = |f: f64| {
            frame
                .samples
                .iter()
                .enumerate()
                .map(|(n, s)| s * Complex64::from_polar(1.0, -2.0 * PI * f * n as f64))
                .sum::<Complex64>()
                .norm()
        };
        let pos: f64 = (1..40).map(|k| probe(k as f64 * 0.001)).sum();
        let neg: f64 = (1..40).map(|k| probe(-(k as f64) * 0.001)).sum();
        assert!(pos > 5.0 * neg, "pos {pos} neg {neg}");
    }

    #[test]
    fn awgn_infinite_snr_is_identity() {
        let f = synthesize(ModulationClass::Qpsk, &SynthesisConfig::default(), 1).unwrap();
        let g = apply_awgn(&f, f64::INFINITY, 9).unwrap();
        assert_eq!(f.samples, g.samples);
    }

    #[test]
    fn awgn_variance_formula() {
        assert_eq!(noise_variance(1.0, 0.0), 1.0);
        assert_abs_diff_eq!(noise_variance(2.0, 10.0), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn awgn_rejects_non_finite_input() {
        let mut f = synthesize(ModulationClass::Fm, &SynthesisConfig::default(), 1).unwrap();
        f.samples[3].re = f64::NAN;
        assert!(matches!(apply_awgn(&f, 10.0, 0), Err(Error::Data(_))));
    }

    #[test]
    fn awgn_is_deterministic_and_tags_snr() {
        let f = synthesize(ModulationClass::Gmsk, &SynthesisConfig::default(), 1).unwrap();
        let a = apply_awgn(&f, 5.0, 77).unwrap();
        assert_eq!(a, apply_awgn(&f, 5.0, 77).unwrap());
        assert_eq!(a.snr_db, 5.0);
        assert_ne!(a.samples, apply_awgn(&f, 5.0, 78).unwrap().samples);
    }

    #[test]
    fn corpus_counts_and_seeds() {
        let spec = CorpusSpec {
            classes: ModulationClass::ALL.to_vec(),
            snr_grid: vec![0.0, 10.0, 20.0],
            frames_per_cell: 10,
            cfg: SynthesisConfig::default(),
            seed: 5,
        };
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.frames.len(), 270);
        for c in ModulationClass::ALL {
            assert_eq!(corpus.frames.iter().filter(|f| f.label == c).count(), 30);
        }
        let seeds: std::collections::HashSet<u64> = corpus.frames.iter().map(|f| f.seed).collect();
        assert_eq!(seeds.len(), 270);
    }

    #[test]
    fn empty_class_list_is_config_error() {
        let spec = CorpusSpec {
            classes: vec![],
            snr_grid: vec![10.0],
            frames_per_cell: 1,
            cfg: SynthesisConfig::default(),
            seed: 0,
        };
        assert!(matches!(generate_corpus(&spec), Err(Error::Config(_))));
    }
}
