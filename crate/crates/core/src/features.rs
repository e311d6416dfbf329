//! Log-mel frame features at a 20 ms hop for 16 kHz mono audio.

use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
pub const WIN_LEN: usize = 400;
pub const HOP_LEN: usize = 320;
pub const FFT_LEN: usize = 512;
pub const N_MELS: usize = 40;
const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("expected {SAMPLE_RATE} Hz, got {0} Hz")]
    BadSampleRate(u32),
    #[error("expected mono audio, got {0} channels")]
    NotMono(u16),
    #[error("audio is empty")]
    EmptyAudio,
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Logmel,
    External,
}

/// `frames x dim` real features, one row per 20 ms frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>, source: FeatureSource) -> Self {
        assert_eq!(data.len(), frames * dim, "feature shape");
        FeatureMatrix { frames, dim, data, source }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Rows `range`, clamped to the available frames.
    pub fn slice(&self, start: usize, end: usize) -> FeatureMatrix {
        let end = end.min(self.frames);
        let start = start.min(end);
        FeatureMatrix {
            frames: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            source: self.source,
        }
    }

    pub fn to_matrix(&self) -> crate::tensor::Matrix {
        crate::tensor::Matrix::new(self.frames, self.dim, self.data.iter().map(|v| *v as f32).collect())
    }

    pub fn from_matrix(m: &crate::tensor::Matrix, source: FeatureSource) -> Self {
        FeatureMatrix::new(m.rows, m.cols, m.data.iter().map(|v| *v as f64).collect(), source)
    }
}

/// Number of analysis frames for `n` samples.
pub fn frame_count(n: usize) -> usize {
    if n < WIN_LEN {
        1
    } else {
        (n - WIN_LEN) / HOP_LEN + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, `N_MELS x (FFT_LEN/2 + 1)`, spanning 0 Hz to Nyquist.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let bins = FFT_LEN / 2 + 1;
    let max_mel = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(max_mel * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = |b: usize| b as f64 * SAMPLE_RATE as f64 / FFT_LEN as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|b| {
                    let f = bin_hz(b);
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Mel band edges `(lo, center, hi)` in Hz.
pub fn mel_band_edges(band: usize) -> (f64, f64, f64) {
    let max_mel = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    let e = |i: usize| mel_to_hz(max_mel * i as f64 / (N_MELS + 1) as f64);
    (e(band), e(band + 1), e(band + 2))
}

/// Unnormalized log-mel energies (25 ms Hann window, 20 ms hop, 40 bands).
/// Audio shorter than one window is zero-padded to a single frame.
pub fn log_mel(samples: &[f32]) -> Result<FeatureMatrix, FeatureError> {
    if samples.is_empty() {
        return Err(FeatureError::EmptyAudio);
    }
    let frames = frame_count(samples.len());
    let window: Vec<f64> = (0..WIN_LEN)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WIN_LEN as f64).cos())
        .collect();
    let bank = mel_filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_LEN);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
    let mut data = Vec::with_capacity(frames * N_MELS);
    for f in 0..frames {
        let start = f * HOP_LEN;
        for (i, c) in buf.iter_mut().enumerate() {
            let s = if i < WIN_LEN { samples.get(start + i).copied().unwrap_or(0.0) as f64 } else { 0.0 };
            *c = Complex::new(if i < WIN_LEN { s * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..FFT_LEN / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(FeatureMatrix::new(frames, N_MELS, data, FeatureSource::Logmel))
}

/// Per-band mean/variance normalization over the utterance. Bands with no
/// variance become zero.
pub fn normalize_per_band(m: &mut FeatureMatrix) {
    let n = m.frames as f64;
    for d in 0..m.dim {
        let mean = (0..m.frames).map(|t| m.data[t * m.dim + d]).sum::<f64>() / n;
        let var = (0..m.frames).map(|t| (m.data[t * m.dim + d] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for t in 0..m.frames {
            let v = &mut m.data[t * m.dim + d];
            *v = if sd > 1e-8 { (*v - mean) / sd } else { 0.0 };
        }
    }
}

/// Normalized log-mel features of a 16 kHz mono signal.
pub fn extract_logmel(samples: &[f32], sample_rate: u32) -> Result<FeatureMatrix, FeatureError> {
    if sample_rate != SAMPLE_RATE {
        return Err(FeatureError::BadSampleRate(sample_rate));
    }
    let mut m = log_mel(samples)?;
    normalize_per_band(&mut m);
    Ok(m)
}

/// Reads a mono wav as `f32` samples in [-1, 1].
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32), FeatureError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(FeatureError::NotMono(spec.channels));
    }
    let samples = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<Result<Vec<_>, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok((samples, spec.sample_rate))
}

pub fn write_wav(path: &Path, samples: &[f32]) -> Result<(), FeatureError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_gives_49_frames() {
        let audio = vec![0.01f32; 16_000];
        let m = extract_logmel(&audio, 16_000).unwrap();
        assert_eq!(m.frames, (16_000 - 400) / 320 + 1);
        assert_eq!(m.frames, 49);
        assert_eq!(m.dim, 40);
    }

    #[test]
    fn silence_normalizes_to_zero() {
        let m = extract_logmel(&vec![0.0; 8000], 16_000).unwrap();
        assert!(m.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tone_peaks_in_its_mel_band() {
        let audio: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin() as f32 * 0.5)
            .collect();
        let m = log_mel(&audio).unwrap();
        let mid = m.row(m.frames / 2);
        let peak = (0..N_MELS).max_by(|&a, &b| mid[a].total_cmp(&mid[b])).unwrap();
        // independent placement: the band whose center is nearest 440 Hz on the mel scale
        let target_mel = 2595.0 * (1.0f64 + 440.0 / 700.0).log10();
        let step = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10() / 41.0;
        let nearest = ((target_mel / step).round() as usize) - 1;
        assert!(peak.abs_diff(nearest) <= 1, "peak {peak} nearest {nearest}");
        let (lo, _, hi) = mel_band_edges(peak);
        assert!(lo < 440.0 && 440.0 < hi);
    }

    #[test]
    fn errors() {
        assert!(matches!(extract_logmel(&[], 16_000), Err(FeatureError::EmptyAudio)));
        assert!(matches!(extract_logmel(&[0.0; 10], 8_000), Err(FeatureError::BadSampleRate(8000))));
    }

    #[test]
    fn short_audio_is_one_frame() {
        assert_eq!(extract_logmel(&[0.1; 100], 16_000).unwrap().frames, 1);
    }
}
