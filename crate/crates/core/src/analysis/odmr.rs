//! Peak extraction from sampled spectra.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frequency: f64,
    pub amplitude: f64,
}

/// Local maxima refined by a parabola through the three neighbouring
/// samples, largest first. The grid must be strictly increasing.
pub fn find_peaks(freqs: &[f64], signal: &[f64]) -> Result<Vec<Peak>> {
    if freqs.len() != signal.len() {
        return Err(Error::param("signal", "length differs from the frequency grid"));
    }
    if freqs.len() < 3 {
        return Err(Error::param("freqs", "need at least three samples"));
    }
    if freqs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("freqs", "grid must be strictly increasing"));
    }
    let mut peaks = Vec::new();
    for i in 1..signal.len() - 1 {
        let (l, c, r) = (signal[i - 1], signal[i], signal[i + 1]);
        if c > l && c >= r {
            let (x0, x1, x2) = (freqs[i - 1], freqs[i], freqs[i + 1]);
            let d01 = (c - l) / (x1 - x0);
            let d12 = (r - c) / (x2 - x1);
            let curvature = (d12 - d01) / (x2 - x0);
            let peak = if curvature < 0.0 {
                let x = 0.5 * (x0 + x1) - d01 / (2.0 * curvature);
                let x = x.clamp(x0, x2);
                // Newton form of the interpolating parabola.
                let y = l + d01 * (x - x0) + curvature * (x - x0) * (x - x1);
                Peak {
                    frequency: x,
                    amplitude: y,
                }
            } else {
                Peak {
                    frequency: x1,
                    amplitude: c,
                }
            };
            peaks.push(peak);
        }
    }
    peaks.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    Ok(peaks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakPair {
    pub major: Peak,
    pub minor: Peak,
    pub ratio: f64,
    pub separation: f64,
}

/// The two strongest peaks of a spectrum.
pub fn major_minor(freqs: &[f64], signal: &[f64]) -> Result<PeakPair> {
    let peaks = find_peaks(freqs, signal)?;
    match peaks.as_slice() {
        [major, minor, ..] => Ok(PeakPair {
            major: *major,
            minor: *minor,
            ratio: minor.amplitude / major.amplitude,
            separation: (major.frequency - minor.frequency).abs(),
        }),
        _ => Err(Error::param(
            "signal",
            format!("spectrum has {} peak(s), need two", peaks.len()),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_vertex_is_exact() {
        let freqs: Vec<f64> = (0..21).map(|i| i as f64 * 0.1).collect();
        let signal: Vec<f64> = freqs.iter().map(|f| 3.0 - (f - 1.23) * (f - 1.23)).collect();
        let p = find_peaks(&freqs, &signal).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p[0].frequency - 1.23).abs() < 1e-12);
        assert!((p[0].amplitude - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_peaks() {
        let freqs: Vec<f64> = (0..200).map(|i| -10.0 + i as f64 * 0.1).collect();
        let g = |f: f64, c: f64| (-(f - c) * (f - c)).exp();
        let signal: Vec<f64> = freqs.iter().map(|&f| g(f, -4.0) + 0.1 * g(f, 4.0)).collect();
        let pair = major_minor(&freqs, &signal).unwrap();
        assert!((pair.separation - 8.0).abs() < 0.1);
        assert!((pair.ratio - 0.1).abs() < 0.01);
        assert!(major_minor(&freqs[..50], &signal[..50]).is_err());
    }
}
