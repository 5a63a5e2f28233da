//! Accelerometer preprocessing: 10 Hz resampling, windowing, min-max scaling
//! and block-mean decimation.
//!
//! Windows are stored channel-major: `data[c * len + j]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::AccelTrace;
use crate::eval::DevSet;

pub const TARGET_RATE_HZ: f64 = 10.0;
pub const CHANNELS: usize = 3;
/// Raw gaps longer than this are held rather than interpolated.
pub const MAX_INTERPOLATION_GAP_SECS: f64 = 5.0;
/// Windows whose grid is less than this fraction covered are rejected.
pub const MIN_COVERAGE: f64 = 0.5;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["x", "y", "z"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("coverage {coverage:.3} below {MIN_COVERAGE}")]
    InsufficientCoverage { coverage: f64 },
    #[error("empty resampling interval [{start}, {end})")]
    EmptyInterval { start: f64, end: f64 },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("channel {channel} is degenerate (min = max = {value})")]
    DegenerateChannel { channel: &'static str, value: f64 },
    #[error("no development windows to fit scale on")]
    NoDevelopmentData,
    #[error("window length {len} not divisible by factor {factor}")]
    NotDivisible { len: usize, factor: usize },
    #[error("downsample factor must be 1, 2 or 4, got {0}")]
    UnsupportedFactor(usize),
}

/// Number of 10 Hz grid points in a window of `hours`.
pub fn samples_per_window(hours: f64) -> usize {
    (hours * 3600.0 * TARGET_RATE_HZ).round() as usize
}

/// A resampled but unscaled window.
#[derive(Clone, Debug, PartialEq)]
pub struct RawWindow {
    pub patient_id: String,
    pub assessment_time: f64,
    pub len: usize,
    pub coverage: f64,
    pub data: Vec<f64>,
}

impl AsRef<RawWindow> for RawWindow {
    fn as_ref(&self) -> &RawWindow {
        self
    }
}

impl RawWindow {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }
}

/// Resamples `trace` onto the grid `t_start + j/10` for `t_start ≤ t < t_end`.
///
/// Grid points between two raw samples at most 5 s apart are linearly
/// interpolated and count as covered. Inside longer gaps, and past either
/// edge of the trace, the nearest earlier value is held (the first value
/// before the trace starts) and the point is uncovered.
pub fn resample_to_10hz(trace: &AccelTrace, t_start: f64, t_end: f64) -> Result<RawWindow, SignalError> {
    let n = ((t_end - t_start) * TARGET_RATE_HZ).round();
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(n >= 1.0) {
        return Err(SignalError::EmptyInterval { start: t_start, end: t_end });
    }
    let n = n as usize;
    let s = trace.samples();
    if s.is_empty() {
        return Err(SignalError::EmptyTrace);
    }
    let mut data = vec![0.0; CHANNELS * n];
    let mut covered = 0usize;
    // `next` is the index of the first raw sample strictly after the grid point.
    let mut next = s.partition_point(|p| p.t <= t_start);
    for j in 0..n {
        let t = t_start + j as f64 / TARGET_RATE_HZ;
        while next < s.len() && s[next].t <= t {
            next += 1;
        }
        let mut put = |f: &dyn Fn(usize) -> f64| {
            for c in 0..CHANNELS {
                data[c * n + j] = f(c);
            }
        };
        if next == 0 {
            put(&|c| s[0].channel(c));
            continue;
        }
        let prev = &s[next - 1];
        if prev.t == t {
            put(&|c| prev.channel(c));
            covered += 1;
        } else if next < s.len() && s[next].t - prev.t <= MAX_INTERPOLATION_GAP_SECS {
            let after = &s[next];
            let w = (t - prev.t) / (after.t - prev.t);
            put(&|c| prev.channel(c) + (after.channel(c) - prev.channel(c)) * w);
            covered += 1;
        } else {
            put(&|c| prev.channel(c));
        }
    }
    let coverage = covered as f64 / n as f64;
    if coverage < MIN_COVERAGE {
        return Err(SignalError::InsufficientCoverage { coverage });
    }
    Ok(RawWindow {
        patient_id: trace.patient_id().to_string(),
        assessment_time: t_end,
        len: n,
        coverage,
        data,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RejectReason {
    /// The window would start before enrollment.
    InsufficientHistory,
    InsufficientCoverage { coverage: f64 },
    NoSamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRejection {
    pub patient_id: String,
    pub assessment_time: f64,
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowCut {
    pub accepted: Vec<RawWindow>,
    pub rejected: Vec<WindowRejection>,
}

/// One candidate window `[a − window_hours, a)` per assessment time.
pub fn cut_windows(trace: &AccelTrace, assessments: &[f64], window_hours: f64) -> WindowCut {
    let span = window_hours * 3600.0;
    let mut cut = WindowCut::default();
    for &a in assessments {
        let reject = |reason| WindowRejection {
            patient_id: trace.patient_id().to_string(),
            assessment_time: a,
            reason,
        };
        if a - span < 0.0 {
            cut.rejected.push(reject(RejectReason::InsufficientHistory));
            continue;
        }
        match resample_to_10hz(trace, a - span, a) {
            Ok(w) => cut.accepted.push(w),
            Err(SignalError::InsufficientCoverage { coverage }) => {
                cut.rejected.push(reject(RejectReason::InsufficientCoverage { coverage }))
            }
            Err(_) => cut.rejected.push(reject(RejectReason::NoSamples)),
        }
    }
    cut
}

/// Per-channel min and max of the development windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub min: [f64; CHANNELS],
    pub max: [f64; CHANNELS],
}

impl ScaleParams {
    pub fn new(min: [f64; CHANNELS], max: [f64; CHANNELS]) -> Result<Self, SignalError> {
        for c in 0..CHANNELS {
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(max[c] > min[c]) {
                return Err(SignalError::DegenerateChannel {
                    channel: CHANNEL_NAMES[c],
                    value: min[c],
                });
            }
        }
        Ok(Self { min, max })
    }

    pub fn scale(&self, channel: usize, v: f64) -> f64 {
        ((v - self.min[channel]) / (self.max[channel] - self.min[channel])).clamp(0.0, 1.0)
    }
}

pub fn fit_scale<W: AsRef<RawWindow>>(dev: &DevSet<W>) -> Result<ScaleParams, SignalError> {
    if dev.is_empty() {
        return Err(SignalError::NoDevelopmentData);
    }
    let mut min = [f64::INFINITY; CHANNELS];
    let mut max = [f64::NEG_INFINITY; CHANNELS];
    for w in dev.items().iter().map(AsRef::as_ref) {
        for c in 0..CHANNELS {
            for &v in w.channel(c) {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    }
    ScaleParams::new(min, max)
}

/// A scaled window ready for a model; values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub patient_id: String,
    pub assessment_time: f64,
    pub downsample_factor: usize,
    len: usize,
    data: Vec<f32>,
}

impl SampleWindow {
    pub fn new(
        patient_id: impl Into<String>,
        assessment_time: f64,
        downsample_factor: usize,
        data: Vec<f32>,
    ) -> Self {
        assert_eq!(data.len() % CHANNELS, 0, "window data must hold {CHANNELS} channels");
        let len = data.len() / CHANNELS;
        Self {
            patient_id: patient_id.into(),
            assessment_time,
            downsample_factor,
            len,
            data,
        }
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    /// Seconds between consecutive samples.
    pub fn sample_period(&self) -> f64 {
        self.downsample_factor as f64 / TARGET_RATE_HZ
    }
}

pub fn apply_scale(window: &RawWindow, params: &ScaleParams) -> SampleWindow {
    let mut data = Vec::with_capacity(window.data.len());
    for c in 0..CHANNELS {
        data.extend(window.channel(c).iter().map(|&v| params.scale(c, v) as f32));
    }
    SampleWindow::new(window.patient_id.clone(), window.assessment_time, 1, data)
}

/// Non-overlapping block means over `factor` consecutive values.
pub fn block_mean(values: &[f64], factor: usize) -> Vec<f64> {
    values
        .chunks_exact(factor)
        .map(|b| b.iter().sum::<f64>() / factor as f64)
        .collect()
}

/// Block-mean decimation of an undecimated window by 1, 2 or 4.
pub fn decimate(window: &SampleWindow, factor: usize) -> Result<SampleWindow, SignalError> {
    if ![1, 2, 4].contains(&factor) || window.downsample_factor * factor > 4 {
        return Err(SignalError::UnsupportedFactor(window.downsample_factor * factor));
    }
    if !window.len.is_multiple_of(factor) {
        return Err(SignalError::NotDivisible {
            len: window.len,
            factor,
        });
    }
    if factor == 1 {
        return Ok(window.clone());
    }
    let mut data = Vec::with_capacity(window.data.len() / factor);
    for c in 0..CHANNELS {
        data.extend(window.channel(c).chunks_exact(factor).map(|b| {
            let sum: f64 = b.iter().map(|&v| f64::from(v)).sum();
            (sum / factor as f64) as f32
        }));
    }
    Ok(SampleWindow::new(
        window.patient_id.clone(),
        window.assessment_time,
        window.downsample_factor * factor,
        data,
    ))
}

/// Writes `t,x,y,z` rows for plotting, with `t` in seconds since enrollment.
pub fn write_window_csv<W: Write>(window: &SampleWindow, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "z"])?;
    let start = window.assessment_time - window.len as f64 * window.sample_period();
    for j in 0..window.len {
        let t = start + j as f64 * window.sample_period();
        w.write_record([
            t.to_string(),
            window.channel(0)[j].to_string(),
            window.channel(1)[j].to_string(),
            window.channel(2)[j].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::AccelSample;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(samples: Vec<AccelSample>) -> AccelTrace {
        AccelTrace::new("P", samples).unwrap()
    }

    fn uniform(t0: f64, rate: f64, n: usize, f: impl Fn(f64) -> [f64; 3]) -> Vec<AccelSample> {
        (0..n)
            .map(|i| {
                let t = t0 + i as f64 / rate;
                let [x, y, z] = f(t);
                AccelSample { t, x, y, z }
            })
            .collect()
    }

    #[test]
    fn constant_input_gives_constant_output() {
        let tr = trace(uniform(0.0, 32.0, 32 * 20, |_| [0.0, 0.0, 1.0]));
        let w = resample_to_10hz(&tr, 2.0, 12.0).unwrap();
        assert_eq!(w.len, 100);
        assert!(w.channel(0).iter().all(|&v| v == 0.0));
        assert!(w.channel(2).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn aligned_ten_hertz_input_is_reproduced() {
        let tr = trace(uniform(0.0, 10.0, 200, |t| [t.sin(), t.cos(), t]));
        let w = resample_to_10hz(&tr, 3.0, 13.0).unwrap();
        for j in 0..100 {
            let raw = &tr.samples()[30 + j];
            assert!((w.channel(0)[j] - raw.x).abs() < 1e-12);
            assert!((w.channel(2)[j] - raw.z).abs() < 1e-12);
        }
    }

    #[test]
    fn jittered_sine_is_tracked_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = 0.0;
        let mut samples = Vec::new();
        while t < 30.0 {
            let x = (2.0 * std::f64::consts::PI * t).sin();
            samples.push(AccelSample { t, x, y: 0.0, z: 1.0 });
            t += (1.0 / 32.0) * rng.random_range(0.95..1.05);
        }
        let w = resample_to_10hz(&trace(samples), 5.0, 25.0).unwrap();
        for j in 0..w.len {
            let tj = 5.0 + j as f64 / 10.0;
            let truth = (2.0 * std::f64::consts::PI * tj).sin();
            assert!((w.channel(0)[j] - truth).abs() < 5e-3, "t={tj}");
        }
    }

    #[test]
    fn long_gap_is_held_and_low_coverage_rejected() {
        let mut s = uniform(0.0, 10.0, 50, |_| [1.0, 1.0, 1.0]);
        s.extend(uniform(30.0, 10.0, 10, |_| [3.0, 3.0, 3.0]));
        let tr = trace(s);
        let w = resample_to_10hz(&tr, 0.0, 10.0).unwrap();
        assert_eq!(w.channel(0)[70], 1.0, "inside the gap the last value is held");
        assert!((w.coverage - 0.5).abs() < 1e-9);
        assert!(matches!(
            resample_to_10hz(&tr, 0.0, 20.0),
            Err(SignalError::InsufficientCoverage { .. })
        ));
    }

    #[test]
    fn cutting_follows_assessments() {
        let tr = trace(uniform(0.0, 10.0, 6 * 3600 * 10, |_| [0.0, 0.0, 1.0]));
        let cut = cut_windows(&tr, &[3600.0, 4.0 * 3600.0], 4.0);
        assert_eq!(cut.rejected.len(), 1);
        assert_eq!(cut.rejected[0].reason, RejectReason::InsufficientHistory);
        assert_eq!(cut.accepted.len(), 1);
        assert_eq!(cut.accepted[0].assessment_time, 4.0 * 3600.0);
        assert_eq!(cut.accepted[0].len, samples_per_window(4.0));
    }

    fn raw(values: [Vec<f64>; 3]) -> RawWindow {
        let len = values[0].len();
        RawWindow {
            patient_id: "P".into(),
            assessment_time: 0.0,
            len,
            coverage: 1.0,
            data: values.concat(),
        }
    }

    #[test]
    fn scale_fit_and_apply() {
        let dev = DevSet::whole(vec![raw([vec![-1.0, 0.0, 3.0], vec![0.0, 1.0, 2.0], vec![5.0, 6.0, 7.0]])]);
        let p = fit_scale(&dev).unwrap();
        assert_eq!((p.min[0], p.max[0]), (-1.0, 3.0));
        assert_eq!(p.scale(0, -1.0), 0.0);
        assert_eq!(p.scale(0, 3.0), 1.0);
        assert_eq!(p.scale(0, 1.0), 0.5);
        assert_eq!(p.scale(0, -7.0), 0.0);
        let degenerate = DevSet::whole(vec![raw([vec![1.0, 2.0], vec![4.0, 4.0], vec![0.0, 1.0]])]);
        assert_eq!(
            fit_scale(&degenerate).unwrap_err(),
            SignalError::DegenerateChannel { channel: "y", value: 4.0 }
        );
    }

    #[test]
    fn decimation_by_hand() {
        let w = SampleWindow::new("P", 0.0, 1, vec![0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.2, 0.4, 0.6, 0.8]);
        let d = decimate(&w, 2).unwrap();
        assert_eq!(d.channel(0), &[0.5, 0.5]);
        assert_eq!(d.len(), 2);
        assert_eq!(d.downsample_factor, 2);
        assert_eq!(decimate(&w, 1).unwrap(), w);
        let odd = SampleWindow::new("P", 0.0, 1, vec![0.0; 9]);
        assert!(matches!(decimate(&odd, 2), Err(SignalError::NotDivisible { .. })));
        assert!(matches!(decimate(&w, 3), Err(SignalError::UnsupportedFactor(3))));
    }

    #[test]
    fn alternating_tone_is_removed() {
        let alt: Vec<f64> = (0..16).map(|i| 0.5 + if i % 2 == 0 { 0.25 } else { -0.25 }).collect();
        assert!(block_mean(&alt, 2).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn debug_dump_has_header_and_rows() {
        let w = SampleWindow::new("P", 10.0, 2, vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0]);
        let mut buf = Vec::new();
        write_window_csv(&w, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,x,y,z"));
        assert_eq!(text.lines().nth(1), Some("9.6,0,0.5,1"));
    }

    fn irregular_trace(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = rng.random_range(0.0..0.2);
        let mut ts = Vec::new();
        while t < 40.0 {
            ts.push(t);
            t += rng.random_range(0.01..0.3);
        }
        ts
    }

    proptest! {
        #[test]
        fn resampling_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let ts = irregular_trace(seed);
            let xs: Vec<f64> = ts.iter().map(|t| (t * 1.3).sin()).collect();
            let ys: Vec<f64> = ts.iter().map(|t| (t * 0.7).cos() * t).collect();
            let mk = |f: &dyn Fn(usize) -> f64| trace(ts.iter().enumerate().map(|(i, &t)| AccelSample { t, x: f(i), y: 0.0, z: 0.0 }).collect());
            let rx = resample_to_10hz(&mk(&|i| xs[i]), 1.0, 39.0).unwrap();
            let ry = resample_to_10hz(&mk(&|i| ys[i]), 1.0, 39.0).unwrap();
            let rc = resample_to_10hz(&mk(&|i| a * xs[i] + b * ys[i]), 1.0, 39.0).unwrap();
            for j in 0..rc.len {
                let expect = a * rx.channel(0)[j] + b * ry.channel(0)[j];
                prop_assert!((rc.channel(0)[j] - expect).abs() < 1e-9);
            }
        }

        #[test]
        fn accepted_windows_have_exact_length(seed in any::<u64>(), hours in 0.001f64..0.01) {
            let ts = irregular_trace(seed);
            let tr = trace(ts.iter().map(|&t| AccelSample { t, x: t, y: 0.0, z: 1.0 }).collect());
            let cut = cut_windows(&tr, &[20.0, 39.0], hours);
            for w in &cut.accepted {
                prop_assert_eq!(w.len, samples_per_window(hours));
                prop_assert_eq!(w.data.len(), 3 * samples_per_window(hours));
            }
        }

        #[test]
        fn decimation_never_increases_variance(
            base in 0.0f64..1.0,
            amp in 0.0f64..0.5,
            factor in prop::sample::select(vec![2usize, 4]),
            n in 1usize..20,
        ) {
            let signal: Vec<f64> = (0..n * 4).map(|i| base + if i % 2 == 0 { amp } else { -amp }).collect();
            let var = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
            };
            prop_assert!(var(&block_mean(&signal, factor)) <= var(&signal) + 1e-15);
        }

        #[test]
        fn unit_scale_is_identity_on_unit_interval(v in 0.0f64..=1.0) {
            let p = ScaleParams::new([0.0; 3], [1.0; 3]).unwrap();
            prop_assert_eq!(p.scale(1, v), v);
        }
    }
}
