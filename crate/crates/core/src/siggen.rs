//! Synthetic baseband IQ datasets.
//!
//! Generates labeled 2-channel (I/Q) waveform datapoints for a set of digital
//! modulation schemes. Each datapoint is a length-`p` window cut at a random
//! offset from a longer modulated stream, so symbol timing and phase vary
//! across the dataset. Streams are noiseless by default; an optional AWGN
//! knob adds calibrated channel noise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng as _;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::scalar::Real;
use crate::nn::tensor::Tensor;
use crate::rng::{stream_rng, Rng};

/// Digital modulation schemes available to the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModulationScheme {
    #[serde(rename = "ASK4")]
    Ask4,
    #[serde(rename = "PAM8")]
    Pam8,
    #[serde(rename = "PSK16")]
    Psk16,
    #[serde(rename = "QAM32")]
    Qam32,
    #[serde(rename = "FSK2")]
    Fsk2,
    #[serde(rename = "OFDM")]
    Ofdm,
}

/// OFDM stand-in dimensions: QPSK payload on 64 subcarriers, cyclic prefix 16.
pub const OFDM_SUBCARRIERS: usize = 64;
pub const OFDM_CYCLIC_PREFIX: usize = 16;
/// Samples per OFDM symbol (subcarriers + cyclic prefix).
pub const OFDM_SYMBOL_LEN: usize = OFDM_SUBCARRIERS + OFDM_CYCLIC_PREFIX;
/// Bits consumed per OFDM symbol (2 per QPSK subcarrier).
pub const OFDM_BITS_PER_BLOCK: usize = 2 * OFDM_SUBCARRIERS;

impl ModulationScheme {
    pub fn name(&self) -> &'static str {
        match self {
            ModulationScheme::Ask4 => "ASK4",
            ModulationScheme::Pam8 => "PAM8",
            ModulationScheme::Psk16 => "PSK16",
            ModulationScheme::Qam32 => "QAM32",
            ModulationScheme::Fsk2 => "FSK2",
            ModulationScheme::Ofdm => "OFDM",
        }
    }

    /// Bits consumed per symbol. For OFDM this is per QPSK subcarrier symbol;
    /// a whole OFDM block consumes [`OFDM_BITS_PER_BLOCK`].
    pub fn bits_per_symbol(&self) -> usize {
        match self {
            ModulationScheme::Ask4 => 2,
            ModulationScheme::Pam8 => 3,
            ModulationScheme::Psk16 => 4,
            ModulationScheme::Qam32 => 5,
            ModulationScheme::Fsk2 => 1,
            ModulationScheme::Ofdm => 2,
        }
    }

    /// Constellation with unit mean power, `2^m` points, for the linear
    /// schemes. FSK is a tone scheme and returns `None`.
    pub fn constellation(&self) -> Option<Vec<Complex64>> {
        match self {
            ModulationScheme::Ask4 => {
                let norm = 5f64.sqrt();
                Some(
                    (0..4)
                        .map(|k| Complex64::new((2 * k as i32 - 3) as f64 / norm, 0.0))
                        .collect(),
                )
            }
            ModulationScheme::Pam8 => {
                let norm = 21f64.sqrt();
                Some(
                    (0..8)
                        .map(|k| Complex64::new((2 * k as i32 - 7) as f64 / norm, 0.0))
                        .collect(),
                )
            }
            ModulationScheme::Psk16 => Some(
                (0..16)
                    .map(|k| {
                        let th = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
                        Complex64::new(th.cos(), th.sin())
                    })
                    .collect(),
            ),
            ModulationScheme::Qam32 => {
                // Cross constellation: 6x6 grid of odd levels minus the four
                // (+-5, +-5) corners; mean power 20.
                let levels = [-5.0f64, -3.0, -1.0, 1.0, 3.0, 5.0];
                let norm = 20f64.sqrt();
                let mut pts = Vec::with_capacity(32);
                for &i in &levels {
                    for &q in &levels {
                        if i.abs() == 5.0 && q.abs() == 5.0 {
                            continue;
                        }
                        pts.push(Complex64::new(i / norm, q / norm));
                    }
                }
                Some(pts)
            }
            ModulationScheme::Fsk2 => None,
            ModulationScheme::Ofdm => {
                // Per-subcarrier QPSK payload.
                let s = 0.5f64.sqrt();
                Some(vec![
                    Complex64::new(s, s),
                    Complex64::new(s, -s),
                    Complex64::new(-s, s),
                    Complex64::new(-s, -s),
                ])
            }
        }
    }

    /// Tone frequencies in cycles per symbol for FSK (low tone first).
    pub fn tone_cycles_per_symbol(&self) -> Option<Vec<f64>> {
        match self {
            ModulationScheme::Fsk2 => Some(vec![-0.25, 0.25]),
            _ => None,
        }
    }
}

impl std::str::FromStr for ModulationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ASK4" | "4ASK" => Ok(ModulationScheme::Ask4),
            "PAM8" | "8PAM" => Ok(ModulationScheme::Pam8),
            "PSK16" | "16PSK" => Ok(ModulationScheme::Psk16),
            "QAM32" | "32QAM" | "32QAM-X" => Ok(ModulationScheme::Qam32),
            "FSK2" | "2FSK" => Ok(ModulationScheme::Fsk2),
            "OFDM" | "OFDM256" => Ok(ModulationScheme::Ofdm),
            other => Err(Error::invalid_input(format!("unknown modulation scheme {other}"))),
        }
    }
}

/// Pulse shaping applied to linear modulations. FSK keeps its constant
/// envelope and OFDM carries its own structure; both ignore shaping.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum PulseShaping {
    /// Sample-and-hold rectangular pulse.
    None,
    /// Root-raised-cosine with the given roll-off, spanning `span` symbols
    /// each side of center.
    Rrc { rolloff: f64, span: usize },
}

impl Default for PulseShaping {
    fn default() -> Self {
        PulseShaping::Rrc {
            rolloff: 0.35,
            span: 8,
        }
    }
}

/// Root-raised-cosine taps at `sps` samples per symbol, normalized so the
/// shaped stream keeps unit average power (`sum h^2 = sps`).
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Vec<f64> {
    assert!(rolloff > 0.0 && rolloff < 1.0, "rolloff in (0,1)");
    let n = 2 * span * sps + 1;
    let mut taps = Vec::with_capacity(n);
    let pi = std::f64::consts::PI;
    for i in 0..n {
        let t = (i as f64 - (span * sps) as f64) / sps as f64;
        let h = if t.abs() < 1e-12 {
            1.0 - rolloff + 4.0 * rolloff / pi
        } else if (t.abs() - 1.0 / (4.0 * rolloff)).abs() < 1e-9 {
            (rolloff / 2f64.sqrt())
                * ((1.0 + 2.0 / pi) * (pi / (4.0 * rolloff)).sin()
                    + (1.0 - 2.0 / pi) * (pi / (4.0 * rolloff)).cos())
        } else {
            ((pi * t * (1.0 - rolloff)).sin()
                + 4.0 * rolloff * t * (pi * t * (1.0 + rolloff)).cos())
                / (pi * t * (1.0 - (4.0 * rolloff * t).powi(2)))
        };
        taps.push(h);
    }
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = (sps as f64 / energy).sqrt();
    taps.iter().map(|h| h * scale).collect()
}

fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b as usize & 1))
}

/// "Same"-length convolution of a complex stream with real taps.
fn convolve_same(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    let half = taps.len() / 2;
    let mut y = vec![Complex64::default(); x.len()];
    for (n, slot) in y.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (k, &h) in taps.iter().enumerate() {
            let idx = n as isize + half as isize - k as isize;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += x[idx as usize] * h;
            }
        }
        *slot = acc;
    }
    y
}

/// Map a bit sequence onto a complex baseband waveform.
///
/// Output length is `(bits.len() / m) * sps` for single-carrier schemes. OFDM
/// consumes [`OFDM_BITS_PER_BLOCK`] bits per block of [`OFDM_SYMBOL_LEN`]
/// samples and ignores `sps`.
pub fn modulate(
    scheme: ModulationScheme,
    bits: &[u8],
    sps: usize,
    shaping: &PulseShaping,
) -> Result<Vec<Complex64>> {
    if sps == 0 {
        return Err(Error::invalid_input("samples_per_symbol must be >= 1"));
    }
    if let Some(&bad) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::invalid_input(format!("bit value {bad} is not 0/1")));
    }
    match scheme {
        ModulationScheme::Ofdm => {
            if bits.is_empty() || bits.len() % OFDM_BITS_PER_BLOCK != 0 {
                return Err(Error::invalid_input(format!(
                    "OFDM needs a positive multiple of {OFDM_BITS_PER_BLOCK} bits, got {}",
                    bits.len()
                )));
            }
            let constellation = scheme.constellation().unwrap();
            let mut planner = FftPlanner::<f64>::new();
            let ifft = planner.plan_fft_inverse(OFDM_SUBCARRIERS);
            let scale = 1.0 / (OFDM_SUBCARRIERS as f64).sqrt();
            let mut out = Vec::with_capacity(bits.len() / OFDM_BITS_PER_BLOCK * OFDM_SYMBOL_LEN);
            for block in bits.chunks(OFDM_BITS_PER_BLOCK) {
                let mut freq: Vec<Complex64> = block
                    .chunks(2)
                    .map(|b| constellation[bits_to_index(b)])
                    .collect();
                ifft.process(&mut freq);
                for v in freq.iter_mut() {
                    *v *= scale;
                }
                out.extend_from_slice(&freq[OFDM_SUBCARRIERS - OFDM_CYCLIC_PREFIX..]);
                out.extend_from_slice(&freq);
            }
            Ok(out)
        }
        ModulationScheme::Fsk2 => {
            let tones = scheme.tone_cycles_per_symbol().unwrap();
            let mut out = Vec::with_capacity(bits.len() * sps);
            let mut phase = 0.0f64;
            for &b in bits {
                let step = 2.0 * std::f64::consts::PI * tones[b as usize] / sps as f64;
                for _ in 0..sps {
                    out.push(Complex64::new(phase.cos(), phase.sin()));
                    phase += step;
                }
            }
            Ok(out)
        }
        _ => {
            let m = scheme.bits_per_symbol();
            if bits.is_empty() || bits.len() % m != 0 {
                return Err(Error::invalid_input(format!(
                    "{} needs a positive multiple of {m} bits, got {}",
                    scheme.name(),
                    bits.len()
                )));
            }
            let constellation = scheme.constellation().unwrap();
            let symbols: Vec<Complex64> = bits
                .chunks(m)
                .map(|b| constellation[bits_to_index(b)])
                .collect();
            match (shaping, sps) {
                (PulseShaping::None, 1) => Ok(symbols),
                (PulseShaping::None, _) => {
                    let mut out = Vec::with_capacity(symbols.len() * sps);
                    for s in &symbols {
                        out.extend(std::iter::repeat(*s).take(sps));
                    }
                    Ok(out)
                }
                (PulseShaping::Rrc { rolloff, span }, _) => {
                    let taps = rrc_taps(*rolloff, sps, *span);
                    let mut upsampled = vec![Complex64::default(); symbols.len() * sps];
                    for (i, s) in symbols.iter().enumerate() {
                        upsampled[i * sps] = *s;
                    }
                    Ok(convolve_same(&upsampled, &taps))
                }
            }
        }
    }
}

/// Split a complex sequence into a real `(2, len)` tensor: row 0 holds the
/// real parts (I), row 1 the imaginary parts (Q).
pub fn complex_to_2d(u: &[Complex64]) -> Result<Tensor<f64>> {
    if u.is_empty() {
        return Err(Error::invalid_input("complex_to_2d on empty input"));
    }
    let n = u.len();
    let mut data = vec![0f64; 2 * n];
    for (i, c) in u.iter().enumerate() {
        data[i] = c.re;
        data[n + i] = c.im;
    }
    Ok(Tensor::new(vec![2, n], data))
}

/// Inverse of [`complex_to_2d`]; exact.
pub fn complex_from_2d(x: &Tensor<f64>) -> Result<Vec<Complex64>> {
    match x.shape() {
        [2, n] => {
            let d = x.data();
            Ok((0..*n).map(|i| Complex64::new(d[i], d[n + i])).collect())
        }
        other => Err(Error::shape(format!("complex_from_2d on shape {:?}", other))),
    }
}

/// One physical-layer datapoint: a `(2, p)` I/Q tensor with its class label.
#[derive(Clone, Debug)]
pub struct Signal {
    pub iq: Tensor<Real>,
    pub label: u16,
}

impl Signal {
    pub fn p(&self) -> usize {
        self.iq.shape()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn stream_id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// Labeled, class-balanced collection of signals.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub signals: Vec<Signal>,
    pub class_names: Vec<String>,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn p(&self) -> usize {
        self.signals.first().map_or(0, |s| s.p())
    }
}

/// Waveform-level knobs for dataset generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveformConfig {
    pub sps: usize,
    pub shaping: PulseShaping,
    /// AWGN level in dB SNR; `None` keeps streams noiseless.
    pub snr_db: Option<f64>,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        WaveformConfig {
            sps: 4,
            shaping: PulseShaping::default(),
            snr_db: None,
        }
    }
}

/// Generate one windowed datapoint for `(scheme, split, seed, index)`.
///
/// The modulated stream is at least `4p` samples long; the window offset is
/// drawn uniformly, so datapoints differ in symbol phase and content.
fn generate_signal(
    scheme: ModulationScheme,
    label: u16,
    p: usize,
    cfg: &WaveformConfig,
    rng: &mut Rng,
) -> Result<Signal> {
    let stream_len_target = 4 * p;
    let n_bits = match scheme {
        ModulationScheme::Ofdm => {
            let blocks = stream_len_target.div_ceil(OFDM_SYMBOL_LEN) + 1;
            blocks * OFDM_BITS_PER_BLOCK
        }
        _ => {
            let m = scheme.bits_per_symbol();
            let n_syms = stream_len_target.div_ceil(cfg.sps) + 2;
            n_syms * m
        }
    };
    let bits: Vec<u8> = (0..n_bits).map(|_| rng.gen_range(0..2u8)).collect();
    let stream = modulate(scheme, &bits, cfg.sps, &cfg.shaping)?;
    if stream.len() < p {
        return Err(Error::invalid_input(format!(
            "stream of {} samples shorter than window {p}",
            stream.len()
        )));
    }
    let offset = rng.gen_range(0..=(stream.len() - p));
    let mut window: Vec<Complex64> = stream[offset..offset + p].to_vec();
    if let Some(snr_db) = cfg.snr_db {
        let noise_power = 10f64.powf(-snr_db / 10.0);
        let sigma = (noise_power / 2.0).sqrt();
        for w in window.iter_mut() {
            let g1: f64 = {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            let g2: f64 = {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            };
            *w += Complex64::new(sigma * g1, sigma * g2);
        }
    }
    let iq64 = complex_to_2d(&window)?;
    Ok(Signal {
        iq: iq64.cast::<Real>(),
        label,
    })
}

/// Build a balanced dataset: `n_per_class` windows per scheme.
///
/// Each datapoint derives its RNG stream from `(seed, split, class, index)`,
/// so generation order does not affect the result.
pub fn build_dataset(
    schemes: &[ModulationScheme],
    n_per_class: usize,
    p: usize,
    split: Split,
    seed: u64,
    cfg: &WaveformConfig,
) -> Result<Dataset> {
    if schemes.is_empty() || n_per_class == 0 {
        return Err(Error::invalid_input("need at least one scheme and one point per class"));
    }
    if p < cfg.sps {
        return Err(Error::invalid_input(format!(
            "window {p} shorter than one symbol at sps {}",
            cfg.sps
        )));
    }
    // Classes are interleaved so that any prefix slice stays balanced.
    let mut signals = Vec::with_capacity(schemes.len() * n_per_class);
    for i in 0..n_per_class {
        for (ci, &scheme) in schemes.iter().enumerate() {
            let mut rng = stream_rng(
                seed,
                "siggen",
                &[split.stream_id(), ci as u64, i as u64],
            );
            signals.push(generate_signal(scheme, ci as u16, p, cfg, &mut rng)?);
        }
    }
    Ok(Dataset {
        signals,
        class_names: schemes.iter().map(|s| s.name().to_string()).collect(),
        split,
        seed,
    })
}

/// Stack signals into a `(B, 2, p)` batch tensor.
pub fn batch_signals<'a>(signals: impl IntoIterator<Item = &'a Signal>) -> Tensor<Real> {
    let sigs: Vec<&Signal> = signals.into_iter().collect();
    assert!(!sigs.is_empty(), "batch_signals on empty slice");
    let p = sigs[0].p();
    let mut data = Vec::with_capacity(sigs.len() * 2 * p);
    for s in &sigs {
        assert_eq!(s.p(), p, "mixed signal lengths in one batch");
        data.extend_from_slice(s.iq.data());
    }
    Tensor::new(vec![sigs.len(), 2, p], data)
}

/// The desk-scale 3-class subset used for fast experiments.
pub fn desk_schemes() -> Vec<ModulationScheme> {
    vec![
        ModulationScheme::Ask4,
        ModulationScheme::Psk16,
        ModulationScheme::Fsk2,
    ]
}

/// The full 6-class set.
pub fn full_schemes() -> Vec<ModulationScheme> {
    vec![
        ModulationScheme::Ask4,
        ModulationScheme::Pam8,
        ModulationScheme::Psk16,
        ModulationScheme::Qam32,
        ModulationScheme::Fsk2,
        ModulationScheme::Ofdm,
    ]
}

const DATASET_MAGIC: &[u8; 4] = b"DSCN";
const DATASET_VERSION: u16 = 1;

/// Persist to the binary container: magic "DSCN", version u16, p u32,
/// n_classes u32, n_points u32, then per-signal f32 rows (I then Q), then
/// u16 labels; everything little-endian.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(ds.p() as u32).to_le_bytes())?;
    w.write_all(&(ds.n_classes() as u32).to_le_bytes())?;
    w.write_all(&(ds.signals.len() as u32).to_le_bytes())?;
    for s in &ds.signals {
        for v in s.iq.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for s in &ds.signals {
        w.write_all(&s.label.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load the binary container. Class names are not part of the container;
/// they default to `class{i}` and can be replaced by the caller.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Dependency(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("dataset too short for magic".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {magic:?}")));
    }
    let mut u2 = [0u8; 2];
    let mut u4 = [0u8; 4];
    r.read_exact(&mut u2)?;
    if u16::from_le_bytes(u2) != DATASET_VERSION {
        return Err(Error::Format("unsupported dataset version".into()));
    }
    r.read_exact(&mut u4)?;
    let p = u32::from_le_bytes(u4) as usize;
    r.read_exact(&mut u4)?;
    let n_classes = u32::from_le_bytes(u4) as usize;
    r.read_exact(&mut u4)?;
    let n_points = u32::from_le_bytes(u4) as usize;
    let mut signals = Vec::with_capacity(n_points);
    let mut f4 = [0u8; 4];
    let mut raw = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let mut data = vec![0f32; 2 * p];
        for slot in data.iter_mut() {
            r.read_exact(&mut f4)?;
            *slot = f32::from_le_bytes(f4);
        }
        raw.push(data);
    }
    for data in raw {
        let mut lbl = [0u8; 2];
        r.read_exact(&mut lbl)?;
        signals.push(Signal {
            iq: Tensor::new(vec![2, p], data),
            label: u16::from_le_bytes(lbl),
        });
    }
    Ok(Dataset {
        signals,
        class_names: (0..n_classes).map(|i| format!("class{i}")).collect(),
        split: Split::Train,
        seed: 0,
    })
}

/// Wide CSV for eyeballing: one row per datapoint, columns
/// `point,label,i0..,q0..`.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let p = ds.p();
    write!(w, "point,label")?;
    for i in 0..p {
        write!(w, ",i{i}")?;
    }
    for i in 0..p {
        write!(w, ",q{i}")?;
    }
    writeln!(w)?;
    for (idx, s) in ds.signals.iter().enumerate() {
        write!(w, "{idx},{}", s.label)?;
        for v in s.iq.data() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
