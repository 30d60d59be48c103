//! Normalised regulation signals and their windowed energy content.
//!
//! The energy content of a window is the absolute value of the signal's
//! time average over that window: the net fraction of the contracted
//! capacity requested over the slot. Incomplete trailing windows are
//! dropped. Percentiles use the nearest-rank rule, so every reported
//! percentile is one of the observed window contents.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeio;

/// Regulation signal sample period, s.
pub const DEFAULT_PERIOD_S: f64 = 4.0;

/// Scheduling slot over which energy content is measured, s.
pub const DEFAULT_WINDOW_S: f64 = 900.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationSignal {
    /// Time of the first sample, seconds since the Unix epoch.
    pub start: f64,
    pub period_s: f64,
    pub samples: Vec<f64>,
}

impl RegulationSignal {
    pub fn new(start: f64, period_s: f64, samples: Vec<f64>) -> Result<Self> {
        if !(period_s > 0.0 && period_s.is_finite()) {
            return Err(Error::invalid("period_s", format!("must be positive, got {period_s}")));
        }
        if let Some((i, w)) = samples.iter().enumerate().find(|(_, w)| !(w.abs() <= 1.0)) {
            return Err(Error::BadSignalRow { row: i + 2, reason: format!("w = {w} outside [-1, 1]") });
        }
        Ok(Self { start, period_s, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 * self.period_s
    }

    /// Sample in force at `t` seconds after `start` (zero past the end).
    pub fn at(&self, t: f64) -> f64 {
        let i = (t / self.period_s).floor();
        if i < 0.0 {
            return 0.0;
        }
        self.samples.get(i as usize).copied().unwrap_or(0.0)
    }

    pub fn negated(&self) -> Self {
        Self { samples: self.samples.iter().map(|w| -w).collect(), ..self.clone() }
    }
}

#[derive(Deserialize)]
struct SignalRow {
    timestamp: String,
    w: String,
}

/// Reads a CSV with header `timestamp,w`. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn load_signal(path: &Path) -> Result<RegulationSignal> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp", "w"] {
        return Err(Error::BadSignalRow { row: 1, reason: format!("expected header `timestamp,w`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")) });
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (i, rec) in rdr.deserialize::<SignalRow>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::BadSignalRow { row, reason: e.to_string() })?;
        let t = timeio::parse_timestamp(&rec.timestamp).map_err(|reason| Error::BadSignalRow { row, reason })?;
        let w: f64 = rec.w.trim().parse().map_err(|_| Error::BadSignalRow { row, reason: format!("unparseable w `{}`", rec.w) })?;
        if !(w.abs() <= 1.0) {
            return Err(Error::BadSignalRow { row, reason: format!("w = {w} outside [-1, 1]") });
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::BadSignalRow { row, reason: "timestamps must increase".into() });
            }
        }
        times.push(t);
        samples.push(w);
    }
    let period_s = if times.len() >= 2 { times[1] - times[0] } else { DEFAULT_PERIOD_S };
    RegulationSignal::new(times.first().copied().unwrap_or(0.0), period_s, samples)
}

pub fn save_signal(signal: &RegulationSignal, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    wtr.write_record(["timestamp", "w"]).map_err(|e| Error::csv(path, e))?;
    for (k, w) in signal.samples.iter().enumerate() {
        let t = signal.start + k as f64 * signal.period_s;
        wtr.write_record([timeio::format_timestamp(t), w.to_string()]).map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyContentStats {
    pub window_s: f64,
    pub samples_per_window: usize,
    /// Content of each complete window, in signal order.
    pub contents: Vec<f64>,
    /// Sorted contents (CDF abscissae).
    pub cdf_values: Vec<f64>,
    /// CDF ordinates `(i + 1) / n`.
    pub cdf_probs: Vec<f64>,
    pub median: f64,
    pub p95: f64,
    pub p97_5: f64,
    pub p99: f64,
    pub max: f64,
}

impl EnergyContentStats {
    /// Nearest-rank percentile, `p` in (0, 100].
    pub fn percentile(&self, p: f64) -> Result<f64> {
        if self.cdf_values.is_empty() {
            return Err(Error::InsufficientData("no complete windows".into()));
        }
        if !(p > 0.0 && p <= 100.0) {
            return Err(Error::invalid("percentile", format!("must lie in (0, 100], got {p}")));
        }
        Ok(nearest_rank(&self.cdf_values, p))
    }
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn energy_content(signal: &RegulationSignal, window_s: f64) -> Result<EnergyContentStats> {
    if !(window_s > 0.0) {
        return Err(Error::invalid("window_s", "must be positive"));
    }
    let per = (window_s / signal.period_s).round() as usize;
    if per == 0 {
        return Err(Error::invalid("window_s", "shorter than one sample"));
    }
    let windows = signal.len() / per;
    if windows == 0 {
        return Err(Error::InsufficientData(format!(
            "signal of {} samples is shorter than one {window_s} s window ({per} samples)",
            signal.len()
        )));
    }
    let contents: Vec<f64> = signal
        .samples
        .chunks_exact(per)
        .map(|c| (c.iter().sum::<f64>() / per as f64).abs())
        .collect();
    let mut sorted = contents.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let cdf_probs = (1..=n).map(|i| i as f64 / n as f64).collect();
    Ok(EnergyContentStats {
        window_s,
        samples_per_window: per,
        median: nearest_rank(&sorted, 50.0),
        p95: nearest_rank(&sorted, 95.0),
        p97_5: nearest_rank(&sorted, 97.5),
        p99: nearest_rank(&sorted, 99.0),
        max: sorted[n - 1],
        contents,
        cdf_values: sorted,
        cdf_probs,
    })
}

/// Energy limit `w_lim` as the `p`-th percentile of window contents.
pub fn wlim_from_percentile(stats: &EnergyContentStats, p: f64) -> Result<f64> {
    let w = stats.percentile(p)?;
    if w <= 0.0 {
        return Err(Error::invalid("w_lim", format!("{p}th percentile of energy content is zero")));
    }
    Ok(w)
}

/// Band-limited Gaussian noise at the 4 s regulation cadence, scaled so the
/// largest magnitude is one. Deterministic per seed.
pub fn generate_synthetic(seed: u64, duration_s: f64, band: [f64; 2]) -> Result<RegulationSignal> {
    let period = DEFAULT_PERIOD_S;
    let nyquist = 0.5 / period;
    let [f_lo, f_hi] = band;
    if !(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyquist) {
        return Err(Error::invalid("band", format!("need 0 <= f_lo < f_hi <= {nyquist} Hz, got [{f_lo}, {f_hi}]")));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::invalid("duration_s", "must be positive"));
    }
    let n = (duration_s / period).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0)).collect();

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * period);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * df;
        if f < f_lo || f > f_hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let raw: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::invalid("band", format!("no frequency bins of a {duration_s} s signal fall in the band")));
    }
    let samples = raw.iter().map(|v| (v / peak).clamp(-1.0, 1.0)).collect();
    RegulationSignal::new(0.0, period, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sig(samples: Vec<f64>) -> RegulationSignal {
        RegulationSignal::new(0.0, 4.0, samples).unwrap()
    }

    #[test]
    fn constant_signal() {
        let s = energy_content(&sig(vec![1.0; 225 * 4]), 900.0).unwrap();
        assert_eq!(s.contents, vec![1.0; 4]);
        for p in [s.median, s.p95, s.p97_5, s.p99, s.max] {
            assert_eq!(p, 1.0);
        }
        for p in [1.0, 50.0, 100.0] {
            assert_eq!(wlim_from_percentile(&s, p).unwrap(), 1.0);
        }
    }

    #[test]
    fn full_period_sinusoid_has_no_content() {
        let n = 225;
        let w: Vec<f64> = (0..3 * n).map(|k| (2.0 * PI * k as f64 / n as f64).sin()).collect();
        let s = energy_content(&sig(w), 900.0).unwrap();
        assert!(s.contents.iter().all(|c| c.abs() <= 1e-12));
    }

    #[test]
    fn trailing_window_dropped_and_short_signal_rejected() {
        let s = energy_content(&sig(vec![0.5; 225 * 2 + 100]), 900.0).unwrap();
        assert_eq!(s.contents.len(), 2);
        assert!(matches!(energy_content(&sig(vec![0.5; 100]), 900.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn percentile_rules() {
        let mut w = Vec::new();
        for m in [0.1, 0.4, 0.2, 0.3] {
            w.extend(std::iter::repeat(-m).take(225));
        }
        let s = energy_content(&sig(w), 900.0).unwrap();
        assert_eq!(wlim_from_percentile(&s, 100.0).unwrap(), s.max);
        assert!(s.contents.iter().all(|&c| c <= s.max));
        assert!((s.median - 0.2).abs() < 1e-15);
        assert!(wlim_from_percentile(&s, 0.0).is_err());
        assert!(wlim_from_percentile(&s, 101.0).is_err());
        let zeros = energy_content(&sig(vec![0.0; 450]), 900.0).unwrap();
        assert!(wlim_from_percentile(&zeros, 50.0).is_err());
    }

    #[test]
    fn csv_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let s = RegulationSignal::new(1_447_632_000.0, 4.0, vec![0.0, 0.25, -1.0, 1.0, 0.1234567890123]).unwrap();
        save_signal(&s, &path).unwrap();
        assert_eq!(load_signal(&path).unwrap(), s);

        let zeros = RegulationSignal::new(0.0, 4.0, vec![0.0; 10]).unwrap();
        save_signal(&zeros, &path).unwrap();
        assert_eq!(load_signal(&path).unwrap().samples, vec![0.0; 10]);

        std::fs::write(&path, "timestamp,w\n0,0.1\n4,1.5\n8,0\n").unwrap();
        match load_signal(&path) {
            Err(Error::BadSignalRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "timestamp,w\n0,0.1\n4,abc\n").unwrap();
        assert!(matches!(load_signal(&path), Err(Error::BadSignalRow { row: 3, .. })));
        std::fs::write(&path, "timestamp,w\n4,0.1\n0,0.2\n").unwrap();
        assert!(matches!(load_signal(&path), Err(Error::BadSignalRow { row: 3, .. })));
    }

    #[test]
    fn synthetic_signals() {
        let a = generate_synthetic(11, 7200.0, [1.0 / 600.0, 1.0 / 8.0]).unwrap();
        let b = generate_synthetic(11, 7200.0, [1.0 / 600.0, 1.0 / 8.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1800);
        assert!(a.samples.iter().all(|w| w.abs() <= 1.0));
        assert!(generate_synthetic(1, 100.0, [0.1, 0.05]).is_err());
        assert!(generate_synthetic(1, 100.0, [0.0, 0.25]).is_err());
    }

    #[test]
    fn higher_band_has_less_energy_content() {
        let median = |band: [f64; 2]| {
            let meds: Vec<f64> = (0..10)
                .map(|seed| energy_content(&generate_synthetic(seed, 86_400.0, band).unwrap(), 900.0).unwrap().median)
                .collect();
            meds.iter().sum::<f64>() / meds.len() as f64
        };
        let wide = median([1.0 / 3600.0, 1.0 / 8.0]);
        let high = median([1.0 / 60.0, 1.0 / 8.0]);
        assert!(high < wide, "{high} vs {wide}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sign_flip_and_percentile_monotonicity(w in proptest::collection::vec(-1.0f64..1.0, 225..2000), p1 in 0.1f64..100.0, p2 in 0.1f64..100.0) {
                let s = sig(w);
                let a = energy_content(&s, 900.0).unwrap();
                let b = energy_content(&s.negated(), 900.0).unwrap();
                prop_assert_eq!(&a.contents, &b.contents);
                let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
                prop_assert!(a.percentile(lo).unwrap() <= a.percentile(hi).unwrap());
            }
        }
    }
}
