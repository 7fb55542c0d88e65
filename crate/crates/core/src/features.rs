//! Log-mel filterbank extraction, per-speaker mean/variance normalization,
//! and the manifest / feature-file formats.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FEATURE_MAGIC: &[u8; 6] = b"FEATv1";
/// Energies are floored here before taking the log.
pub const ENERGY_FLOOR: f64 = 1e-10;
pub const VARIANCE_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct FbankConfig {
    pub num_mel: usize,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub low_freq: f64,
    pub high_freq: f64,
}

impl Default for FbankConfig {
    /// 25 ms windows every 10 ms at 16 kHz, 40 filters over 20–7800 Hz.
    fn default() -> Self {
        Self {
            num_mel: 40,
            frame_length: 400,
            frame_shift: 160,
            fft_size: 512,
            preemphasis: 0.97,
            low_freq: 20.0,
            high_freq: 7800.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    /// `T × num_mel`
    pub features: Tensor,
    pub transcript: String,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerStats {
    pub speaker_id: String,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub frames: usize,
}

fn hz_to_mel(f: f64) -> f64 {
    1127.0 * (1.0 + f / 700.0).ln()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * ((m / 1127.0).exp() - 1.0)
}

/// Triangular mel filters over the `fft_size / 2 + 1` power-spectrum bins.
pub fn mel_filterbank(config: &FbankConfig) -> Vec<Vec<f64>> {
    let bins = config.fft_size / 2 + 1;
    let (lo, hi) = (hz_to_mel(config.low_freq), hz_to_mel(config.high_freq));
    let step = (hi - lo) / (config.num_mel + 1) as f64;
    (0..config.num_mel)
        .map(|m| {
            let (left, center, right) = (lo + m as f64 * step, lo + (m + 1) as f64 * step, lo + (m + 2) as f64 * step);
            (0..bins)
                .map(|b| {
                    let mel = hz_to_mel(b as f64 * SAMPLE_RATE as f64 / config.fft_size as f64);
                    if mel <= left || mel >= right {
                        0.0
                    } else if mel <= center {
                        (mel - left) / (center - left)
                    } else {
                        (right - mel) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Center frequency in Hz of each mel filter.
pub fn mel_centers(config: &FbankConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(config.low_freq), hz_to_mel(config.high_freq));
    let step = (hi - lo) / (config.num_mel + 1) as f64;
    (0..config.num_mel).map(|m| mel_to_hz(lo + (m + 1) as f64 * step)).collect()
}

/// Number of frames produced for `samples` input samples.
pub fn num_frames(samples: usize, config: &FbankConfig) -> usize {
    if samples < config.frame_length {
        0
    } else {
        (samples - config.frame_length) / config.frame_shift + 1
    }
}

/// Natural-log mel energies of 16 kHz mono samples, `T × num_mel`.
pub fn compute_fbank(pcm: &[f64], config: &FbankConfig) -> Result<Tensor> {
    let frames = num_frames(pcm.len(), config);
    if frames == 0 {
        return Err(Error::Dimension(format!(
            "{} samples is shorter than one {}-sample window",
            pcm.len(),
            config.frame_length
        )));
    }
    let n = config.frame_length;
    let window: Vec<f64> = (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect();
    let filters = mel_filterbank(config);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.fft_size);
    let bins = config.fft_size / 2 + 1;

    let mut out = Vec::with_capacity(frames * config.num_mel);
    let mut buf = vec![Complex::new(0.0, 0.0); config.fft_size];
    let mut power = vec![0.0; bins];
    for t in 0..frames {
        let frame = &pcm[t * config.frame_shift..t * config.frame_shift + n];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..n {
            let prev = if i == 0 { frame[0] } else { frame[i - 1] };
            buf[i].re = (frame[i] - config.preemphasis * prev) * window[i];
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf[..bins]) {
            *p = c.norm_sqr();
        }
        for filter in &filters {
            let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(e.max(ENERGY_FLOOR).ln());
        }
    }
    Tensor::new(vec![frames, config.num_mel], out)
}

/// Per-speaker mean subtraction and variance normalization.
///
/// Statistics are accumulated over all frames of a speaker in input order;
/// the returned utterances keep the input order.
pub fn accumulate_and_normalize(utterances: Vec<Utterance>) -> Result<(Vec<Utterance>, BTreeMap<String, SpeakerStats>)> {
    let mut grouped: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in &utterances {
        grouped.entry(u.speaker_id.as_str()).or_default().push(u);
    }
    let mut stats = BTreeMap::new();
    for (speaker, utts) in grouped {
        let dim = utts[0].features.cols();
        if let Some(bad) = utts.iter().find(|u| u.features.cols() != dim) {
            return Err(Error::Dimension(format!(
                "utterance {} has {} feature dims, speaker {speaker} uses {dim}",
                bad.id,
                bad.features.cols()
            )));
        }
        let frames: usize = utts.iter().map(|u| u.num_frames()).sum();
        let mut mean = vec![0.0; dim];
        for u in &utts {
            for r in 0..u.num_frames() {
                for (m, v) in mean.iter_mut().zip(u.features.row_slice(r)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= frames as f64);
        let mut variance = vec![0.0; dim];
        for u in &utts {
            for r in 0..u.num_frames() {
                for ((s, v), m) in variance.iter_mut().zip(u.features.row_slice(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        variance.iter_mut().for_each(|s| *s /= frames as f64);
        stats.insert(
            speaker.to_string(),
            SpeakerStats {
                speaker_id: speaker.to_string(),
                mean,
                variance,
                frames,
            },
        );
    }
    let normalized = utterances
        .into_iter()
        .map(|mut u| {
            let s = &stats[&u.speaker_id];
            normalize_with(&mut u.features, s);
            u
        })
        .collect();
    Ok((normalized, stats))
}

fn normalize_with(features: &mut Tensor, stats: &SpeakerStats) {
    let dim = features.cols();
    let inv: Vec<f64> = stats.variance.iter().map(|v| 1.0 / (v + VARIANCE_FLOOR).sqrt()).collect();
    for row in features.data_mut().chunks_mut(dim) {
        for ((x, m), s) in row.iter_mut().zip(&stats.mean).zip(&inv) {
            *x = (*x - m) * s;
        }
    }
}

/// Writes a `FEATv1` file: magic, `u32` T, `u32` dim, then `f32` values.
pub fn write_feature_file(path: &Path, features: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(14 + 4 * features.numel());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for &v in features.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_feature_bytes(&bytes).map_err(|msg| Error::parse(path, 0, msg))
}

fn parse_feature_bytes(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    if bytes.len() < 14 || &bytes[..6] != FEATURE_MAGIC {
        return Err("missing FEATv1 header".into());
    }
    let t = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let body = &bytes[14..];
    if body.len() != t * dim * 4 {
        return Err(format!("expected {t}×{dim} f32 values, found {} bytes", body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(vec![t, dim], data).map_err(|e| e.to_string())
}

/// Reads a 16 kHz mono WAV file as samples on the 16-bit integer scale.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::parse(path, 0, format!("cannot read WAV: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_rate != SAMPLE_RATE {
        return Err(Error::parse(
            path,
            0,
            format!("need 16 kHz mono, got {} Hz × {} channels", spec.sample_rate, spec.channels),
        ));
    }
    let wav_err = |e: hound::Error| Error::parse(path, 0, e.to_string());
    match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64 * 32768.0).map_err(wav_err))
            .collect(),
        hound::SampleFormat::Int => {
            let shift = spec.bits_per_sample.saturating_sub(16) as u32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v >> shift) as f64).map_err(wav_err))
                .collect()
        }
    }
}

/// One manifest row before its features are resolved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub line: usize,
    pub utt_id: String,
    pub speaker_id: String,
    pub source: PathBuf,
    pub transcript: String,
}

/// Parses a TSV manifest (`utt_id`, `speaker_id`, `source_path`,
/// `transcript`). Relative sources resolve against the manifest's directory.
pub fn read_manifest_rows(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::parse(path, line_no, format!("expected 4 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].is_empty() || cols[1].is_empty() || cols[2].is_empty() {
            return Err(Error::parse(path, line_no, "empty utt_id, speaker_id or source_path"));
        }
        let source = Path::new(cols[2]);
        rows.push(ManifestRow {
            line: line_no,
            utt_id: cols[0].to_string(),
            speaker_id: cols[1].to_string(),
            source: if source.is_absolute() { source.to_path_buf() } else { base.join(source) },
            transcript: cols[3].to_string(),
        });
    }
    Ok(rows)
}

/// Loads every manifest row into an [`Utterance`], in file order.
///
/// Sources ending in `.wav` are run through [`compute_fbank`]; anything else
/// is read as a `FEATv1` feature file and must have `config.num_mel` columns.
pub fn load_manifest(path: &Path, config: &FbankConfig) -> Result<Vec<Utterance>> {
    read_manifest_rows(path)?
        .into_iter()
        .map(|row| {
            let is_wav = row.source.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
            let features = if is_wav {
                compute_fbank(&read_wav(&row.source)?, config)
            } else {
                read_feature_file(&row.source)
            }
            .map_err(|e| Error::parse(path, row.line, format!("{}: {e}", row.utt_id)))?;
            if features.cols() != config.num_mel {
                return Err(Error::Dimension(format!(
                    "{}:{}: utterance {} has {}-dim features, expected {}",
                    path.display(),
                    row.line,
                    row.utt_id,
                    features.cols(),
                    config.num_mel
                )));
            }
            Ok(Utterance {
                id: row.utt_id,
                speaker_id: row.speaker_id,
                features,
                transcript: row.transcript,
            })
        })
        .collect()
}
