//! Mel-frequency cepstral coefficients for 8 kHz mono PCM.
//!
//! Telephony-band settings: 25 ms frames with 10 ms hops, Hamming window,
//! length-256 DFT with zero padding, 26 triangular mel filters over
//! 0-4000 Hz, natural log with a floor, DCT-II keeping 13 coefficients.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FFT_LEN: usize = 256;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MfccConfig {
    /// Frame length in samples (200 = 25 ms at 8 kHz).
    pub frame_len: usize,
    /// Hop in samples (80 = 10 ms).
    pub hop: usize,
    /// Mel filter count.
    pub n_mel: usize,
    /// Cepstral coefficients kept.
    pub n_ceps: usize,
    /// Floor applied to mel energies before the log.
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_len: 200,
            hop: 80,
            n_mel: 26,
            n_ceps: 13,
            log_floor: 1e-10,
        }
    }
}

#[derive(Debug, Error)]
pub enum MfccError {
    #[error("window of {have} samples is shorter than one frame ({need})")]
    WindowTooShort { have: usize, need: usize },
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the `n_mel` triangular filters over 0-4000 Hz.
pub fn mel_filter_centers(n_mel: usize) -> Vec<f64> {
    let top = hz_to_mel(4000.0);
    (1..=n_mel)
        .map(|m| mel_to_hz(top * m as f64 / (n_mel + 1) as f64))
        .collect()
}

/// Triangular mel filterbank as per-filter weights over the `FFT_LEN/2 + 1`
/// non-negative frequency bins.
fn filterbank(n_mel: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let n_bins = FFT_LEN / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    // n_mel + 2 edge points, equally spaced on the mel scale
    let edges: Vec<f64> = (0..n_mel + 2)
        .map(|m| mel_to_hz(top * m as f64 / (n_mel + 1) as f64))
        .collect();
    (0..n_mel)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / FFT_LEN as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Plain (unscaled) DCT-II: `out[k] = sum_n x[n] cos(pi k (n + 1/2) / N)`.
pub fn dct_ii(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| v * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum()
        })
        .collect()
}

/// Per-frame mel energies (before the log), row per frame. Exposed for tests
/// that check spectral localization.
pub fn mel_energies(samples: &[i16], cfg: &MfccConfig) -> Result<Vec<Vec<f64>>, MfccError> {
    if samples.len() < cfg.frame_len {
        return Err(MfccError::WindowTooShort {
            have: samples.len(),
            need: cfg.frame_len,
        });
    }
    let bank = filterbank(cfg.n_mel, 8000.0);
    let window: Vec<f64> = (0..cfg.frame_len)
        .map(|i| {
            0.54 - 0.46
                * (2.0 * std::f64::consts::PI * i as f64 / (cfg.frame_len - 1) as f64).cos()
        })
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(FFT_LEN);

    let n_frames = (samples.len() - cfg.frame_len) / cfg.hop + 1;
    let mut out = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
    for frame in 0..n_frames {
        let start = frame * cfg.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let v = if i < cfg.frame_len {
                samples[start + i] as f64 * window[i]
            } else {
                0.0
            };
            *c = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..FFT_LEN / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        let energies: Vec<f64> = bank
            .iter()
            .map(|filt| filt.iter().zip(&power).map(|(w, p)| w * p).sum())
            .collect();
        out.push(energies);
    }
    Ok(out)
}

/// MFCC matrix, one row of `cfg.n_ceps` coefficients per frame.
pub fn mfcc(samples: &[i16], cfg: &MfccConfig) -> Result<Vec<Vec<f64>>, MfccError> {
    let energies = mel_energies(samples, cfg)?;
    Ok(energies
        .into_iter()
        .map(|row| {
            let logs: Vec<f64> = row.iter().map(|&e| e.max(cfg.log_floor).ln()).collect();
            dct_ii(&logs, cfg.n_ceps)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_yields_constant_floor_frames() {
        let cfg = MfccConfig::default();
        let samples = vec![0i16; 2000];
        let coeffs = mfcc(&samples, &cfg).unwrap();
        let expected = dct_ii(&vec![cfg.log_floor.ln(); cfg.n_mel], cfg.n_ceps);
        for frame in &coeffs {
            for (a, b) in frame.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_sine_localizes_to_its_mel_filter() {
        let cfg = MfccConfig::default();
        let samples: Vec<i16> = (0..8000)
            .map(|i| {
                (8000.0 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 8000.0).sin()) as i16
            })
            .collect();
        let energies = mel_energies(&samples, &cfg).unwrap();
        // filter whose center is nearest 1 kHz
        let centers = mel_filter_centers(cfg.n_mel);
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - 1000.0).abs().partial_cmp(&(b.1 - 1000.0).abs()).unwrap()
            })
            .unwrap()
            .0;
        for row in &energies {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(
                argmax == expected || argmax == expected + 1 || argmax + 1 == expected,
                "argmax {argmax}, filter containing 1 kHz is {expected}"
            );
        }
    }

    #[test]
    fn window_too_short_is_an_error() {
        let cfg = MfccConfig::default();
        assert!(matches!(
            mfcc(&[0i16; 100], &cfg),
            Err(MfccError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn dct_matches_naive_definition() {
        let x: Vec<f64> = (0..26).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let got = dct_ii(&x, 13);
        for (k, g) in got.iter().enumerate() {
            let mut expect = 0.0;
            for (n, &v) in x.iter().enumerate() {
                expect += v
                    * (std::f64::consts::PI * k as f64 * (n as f64 + 0.5) / x.len() as f64).cos();
            }
            assert!((g - expect).abs() < 1e-9);
        }
    }
}
