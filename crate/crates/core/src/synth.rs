//! Synthetic ICU cohorts with a tunable link between movement, demographics
//! and acuity.
//!
//! Each patient is generated from its own derived seed, so patients can be
//! produced on worker threads and the result is a pure function of the
//! configuration. Therapy events are placed first and labeled with the
//! phenotype rules; movement, clinical values and SOFA are then drawn given
//! those labels. At `effect_size = 0` nothing but therapy and SOFA depends on
//! the labels.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    save_cohort, AccelSample, AccelTrace, AcuityLabel, ClinicalEvent, ClinicalKind, ClinicalValue, CognitiveStatus,
    Cohort, Comorbidity, DataError, Ethnicity, PatientRecord, Race, Sex, TherapyEvent, TherapyKind, MAX_SOFA,
};
use crate::phenotype::{assessment_times, PhenotypeRules, HOUR};
use crate::seed::{derive_indexed, rng_for};

const DAY: f64 = 86_400.0;
/// Activity bursts per minute in a stable window.
const BURSTS_PER_MINUTE: f64 = 3.0;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth configuration: {0}")]
    InvalidConfig(String),
    #[error("transfusion span must be non-negative, got {0} h")]
    NegativeSpan(f64),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Carried for downstream splitting; generation does not use it.
    pub dev_fraction: f64,
    pub seed: u64,
    pub window_hours: f64,
    pub assessment_period_hours: f64,
    pub effect_size: f64,
    /// Target share of assessment windows that are unstable. Half of the
    /// patients' windows fall in an episode on average, so about twice this
    /// share of patients is ever unstable.
    pub unstable_patient_fraction: f64,
    pub max_days: f64,
    /// Nominal device rates in Hz; each patient wears one device.
    pub nominal_rates: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 86,
            dev_fraction: 60.0 / 86.0,
            seed: 0,
            window_hours: 4.0,
            assessment_period_hours: 4.0,
            effect_size: 1.0,
            unstable_patient_fraction: 28.0 / 110.0,
            max_days: 7.0,
            nominal_rates: vec![32.0, 100.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_patients < 4 {
            return fail(format!(
                "n_patients = {} is too small to populate both classes (need at least 4)",
                self.n_patients
            ));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return fail(format!("dev_fraction = {} must lie in (0, 1)", self.dev_fraction));
        }
        if !(self.effect_size >= 0.0 && self.effect_size.is_finite()) {
            return fail(format!("effect_size = {} must be finite and non-negative", self.effect_size));
        }
        if !(self.unstable_patient_fraction > 0.0 && self.unstable_patient_fraction < 1.0) {
            return fail("unstable_patient_fraction must lie in (0, 1)".into());
        }
        if !(self.window_hours > 0.0 && self.window_hours <= self.assessment_period_hours) {
            return fail("window_hours must be positive and no longer than the assessment period".into());
        }
        if !(self.max_days > 0.0 && self.max_days <= 7.0) {
            return fail("max_days must lie in (0, 7]".into());
        }
        if self.max_days * 24.0 < 2.0 * self.assessment_period_hours {
            return fail("max_days must cover at least two assessment periods".into());
        }
        if self.nominal_rates.is_empty() || self.nominal_rates.iter().any(|&r| !(r >= 1.0 && r.is_finite())) {
            return fail("nominal_rates must be a nonempty list of rates >= 1 Hz".into());
        }
        Ok(())
    }
}

/// `units` transfusion events spaced `span / units` apart from `start`.
pub fn inject_transfusion_run(
    patient_id: &str,
    start_time: f64,
    units: usize,
    span_hours: f64,
) -> Result<Vec<TherapyEvent>, SynthError> {
    if span_hours < 0.0 || span_hours.is_nan() {
        return Err(SynthError::NegativeSpan(span_hours));
    }
    let step = if units == 0 { 0.0 } else { span_hours * HOUR / units as f64 };
    Ok((0..units)
        .map(|i| TherapyEvent::new(patient_id, start_time + step * i as f64, TherapyKind::TransfusionUnit))
        .collect())
}

fn quantize(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("positive sd")
}

struct PatientOutput {
    record: PatientRecord,
    trace: Option<AccelTrace>,
    clinical: Vec<ClinicalEvent>,
    therapy: Vec<TherapyEvent>,
}

/// Generates a whole cohort in memory.
pub fn generate(config: &SynthConfig) -> Result<Cohort, SynthError> {
    config.validate()?;
    let n = config.n_patients;
    let patient_share = (2.0 * config.unstable_patient_fraction).min(0.9);
    let n_unstable = ((patient_share * n as f64).round() as usize).clamp(2, n - 2);
    let mut flags: Vec<bool> = (0..n).map(|i| i < n_unstable).collect();
    flags.shuffle(&mut rng_for(config.seed, "ever-unstable"));

    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n);
    let chunk = n.div_ceil(workers);
    let outputs: Vec<PatientOutput> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .collect::<Vec<_>>()
            .chunks(chunk)
            .map(|ids| {
                let ids = ids.to_vec();
                let flags = &flags;
                s.spawn(move || {
                    ids.into_iter()
                        .map(|i| generate_patient(config, i, flags[i]))
                        .collect::<Result<Vec<_>, SynthError>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("patient thread panicked"))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;

    let mut cohort = Cohort::default();
    for p in outputs {
        cohort.patients.push(p.record);
        cohort.traces.extend(p.trace);
        cohort.clinical.extend(p.clinical);
        cohort.therapy.extend(p.therapy);
    }
    Ok(cohort)
}

/// Generates a cohort and writes it in the on-disk cohort format.
pub fn generate_to_dir(config: &SynthConfig, dir: &Path) -> Result<Cohort, SynthError> {
    let cohort = generate(config)?;
    save_cohort(&cohort, dir)?;
    Ok(cohort)
}

fn patient_id(i: usize) -> String {
    format!("P{:04}", i + 1)
}

fn demographics<R: Rng>(rng: &mut R, id: String, ever_unstable: bool, es: f64) -> PatientRecord {
    let shift = if ever_unstable { es } else { 0.0 };
    let sex = if rng.random_bool(30.0 / 86.0) { Sex::Female } else { Sex::Male };
    let u: f64 = rng.random();
    let race = if u < 66.0 / 86.0 {
        Race::White
    } else if u < 78.0 / 86.0 {
        Race::AfricanAmerican
    } else {
        Race::Other
    };
    let ethnicity = if rng.random_bool(8.0 / 86.0) {
        Ethnicity::Hispanic
    } else {
        Ethnicity::NonHispanic
    };
    let age = (normal(57.0, 17.0).sample(rng) + 8.0 * shift).clamp(18.0, 95.0);
    let height_mean = if sex == Sex::Female { 165.0 } else { 176.0 };
    let height = normal(height_mean, 8.0).sample(rng).clamp(140.0, 205.0);
    let weight = (normal(86.0, 23.0).sample(rng) - 6.0 * shift).clamp(40.0, 200.0);
    let los = LogNormal::new(2.6 + 0.25 * shift, 0.8).expect("valid").sample(rng).clamp(0.5, 200.0);
    let prevalence = [
        (Comorbidity::Cancer, 5.0),
        (Comorbidity::CerebroVascular, 12.0),
        (Comorbidity::Dementia, 4.0),
        (Comorbidity::ParaplegiaHemiplegia, 10.0),
        (Comorbidity::CongestiveHeartFailure, 9.0),
        (Comorbidity::Copd, 7.0),
        (Comorbidity::Diabetes, 12.0),
        (Comorbidity::MetastaticCarcinoma, 0.0),
        (Comorbidity::Liver, 20.0),
        (Comorbidity::PepticUlcer, 3.0),
        (Comorbidity::Renal, 15.0),
    ];
    let comorbidities: BTreeSet<Comorbidity> = prevalence
        .into_iter()
        .filter(|&(_, count)| rng.random_bool(count / 86.0))
        .map(|(c, _)| c)
        .collect();
    PatientRecord {
        patient_id: id,
        age: quantize(age),
        sex,
        race,
        ethnicity,
        height_cm: quantize(height),
        weight_kg: quantize(weight),
        length_of_stay_days: quantize(los),
        comorbidities,
    }
}

/// Places therapy so that an episode of consecutive assessments is unstable
/// for ever-unstable patients, with sub-threshold transfusions sprinkled in
/// elsewhere.
fn therapy_events<R: Rng>(rng: &mut R, id: &str, assessments: &[f64], ever_unstable: bool) -> Result<Vec<TherapyEvent>, SynthError> {
    let mut events = Vec::new();
    let n = assessments.len();
    let mut episode = 0..0;
    if ever_unstable && n > 0 {
        let len = ((rng.random_range(0.3..0.7) * n as f64).round() as usize).clamp(1, n);
        let start = rng.random_range(0..=n - len);
        episode = start..start + len;
    }
    for (k, &a) in assessments.iter().enumerate() {
        if episode.contains(&k) {
            let kind = match rng.random_range(0..10) {
                0..=3 => TherapyKind::Vasopressor,
                4..=6 => TherapyKind::MechanicalVentilation,
                7..=8 => TherapyKind::Crrt,
                _ => {
                    let units = rng.random_range(10..=14);
                    events.extend(inject_transfusion_run(id, a - 3.5 * HOUR, units, 3.0)?);
                    continue;
                }
            };
            events.push(TherapyEvent::new(id, a - rng.random_range(0.25..3.75) * HOUR, kind));
        } else if rng.random_bool(0.03) && k + 1 < n {
            let units = rng.random_range(1..=9);
            events.extend(inject_transfusion_run(id, a - 3.5 * HOUR, units, 3.0)?);
        }
    }
    Ok(events)
}

/// One accelerometer window ending at `end`, appended to `out`.
#[allow(clippy::too_many_arguments)]
fn movement<R: Rng>(
    rng: &mut R,
    out: &mut Vec<AccelSample>,
    start: f64,
    end: f64,
    rate: f64,
    burst_rate_per_min: f64,
    gravity: [f64; 3],
) {
    let exp = Exp::new(burst_rate_per_min / 60.0).expect("positive rate");
    let mut bursts = Vec::new();
    let mut t = start + exp.sample(rng);
    while t < end {
        let axis: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        bursts.push((t, rng.random_range(3.0..15.0), rng.random_range(0.3..1.0), rng.random_range(0.1..0.6), axis));
        t += exp.sample(rng);
    }
    let noise = normal(0.0, 0.01);
    let tremor_phase = rng.random_range(0.0..2.0 * PI);
    let mut t = out.last().map_or(start, |s| s.t.max(start));
    if out.last().is_some_and(|s| s.t >= t) {
        t += 1.0 / rate;
    }
    let mut first = 0;
    while t < end {
        let mut v = gravity;
        let tremor = 0.01 * (2.0 * PI * 5.0 * t + tremor_phase).sin();
        while first < bursts.len() && bursts[first].0 + bursts[first].1 < t {
            first += 1;
        }
        for &(b0, dur, amp, freq, axis) in bursts[first..].iter().take_while(|b| b.0 <= t) {
            if t > b0 + dur {
                continue;
            }
            let envelope = (PI * (t - b0) / dur).sin().powi(2);
            let wave = amp * envelope * (2.0 * PI * freq * (t - b0)).sin();
            for c in 0..3 {
                v[c] += wave * axis[c];
            }
        }
        let tq = quantize(t);
        if out.last().is_none_or(|s| tq > s.t) {
            out.push(AccelSample {
                t: tq,
                x: quantize(v[0] + tremor + noise.sample(rng)),
                y: quantize(v[1] + tremor + noise.sample(rng)),
                z: quantize(v[2] + tremor + noise.sample(rng)),
            });
        }
        t += (1.0 + rng.random_range(-0.05..0.05)) / rate;
    }
}

fn generate_patient(config: &SynthConfig, index: usize, ever_unstable: bool) -> Result<PatientOutput, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(config.seed, "patient", index as u64));
    let es = config.effect_size;
    let id = patient_id(index);
    let record = demographics(&mut rng, id.clone(), ever_unstable, es);

    let period = config.assessment_period_hours * HOUR;
    let stay_end = (record.length_of_stay_days * DAY).min(config.max_days * DAY);
    let mut assessments = assessment_times(config.max_days * DAY, period);
    assessments.retain(|&a| a < stay_end);
    let mut therapy = therapy_events(&mut rng, &id, &assessments, ever_unstable)?;
    if record.length_of_stay_days * DAY < config.max_days * DAY {
        let kind = if ever_unstable && rng.random_bool(0.2) {
            TherapyKind::Death
        } else {
            TherapyKind::Discharge
        };
        therapy.push(TherapyEvent::new(&id, quantize(stay_end), kind));
    }
    for e in &mut therapy {
        e.time = quantize(e.time);
    }
    therapy.sort_by(|a, b| a.time.total_cmp(&b.time));

    let rules = PhenotypeRules::default();
    let labels: Vec<(f64, AcuityLabel)> = assessments
        .iter()
        .map(|&a| (a, rules.label_window(&therapy, a).label))
        .filter(|(_, l)| l.is_trainable())
        .collect();

    let severity = normal(0.0, 1.0).sample(&mut rng);
    for &(a, label) in &labels {
        let unstable = label == AcuityLabel::Unstable;
        if rng.random_bool(0.85) {
            let mean = 5.0 + 1.5 * severity + if unstable { 3.0 } else { 0.0 };
            let v = normal(mean, 2.5).sample(&mut rng).round().clamp(0.0, f64::from(MAX_SOFA));
            let t = quantize(a - rng.random_range(0.0..2.0) * HOUR);
            therapy.push(TherapyEvent::sofa(&id, t, v as u8));
        }
    }
    therapy.sort_by(|a, b| a.time.total_cmp(&b.time));

    let clinical = clinical_events(&mut rng, &id, &labels, period, es);

    let rate = config.nominal_rates[rng.random_range(0..config.nominal_rates.len())];
    let window = config.window_hours * HOUR;
    let pad = (0.05 * window).min(60.0);
    // Resting posture per patient, nudged a little for every window.
    let tilt = rng.random_range(0.0..PI / 3.0);
    let heading = rng.random_range(0.0..2.0 * PI);
    let mut samples = Vec::new();
    for &(a, label) in &labels {
        let burst_rate = if label == AcuityLabel::Unstable { BURSTS_PER_MINUTE * (-es).exp() } else { BURSTS_PER_MINUTE };
        let (t, h) = (tilt + rng.random_range(-0.1..0.1), heading + rng.random_range(-0.2..0.2));
        let gravity = [t.sin() * h.cos(), t.sin() * h.sin(), t.cos()];
        movement(&mut rng, &mut samples, a - window - pad, a, rate, burst_rate, gravity);
        // Occasional dropouts; a few long enough to reject the window.
        let gap_frac = match rng.random_range(0..100) {
            0..=2 => 0.6,
            3..=14 => rng.random_range(0.05..0.3),
            _ => 0.0,
        };
        if gap_frac > 0.0 {
            let g0 = a - window + rng.random_range(0.0..(1.0 - gap_frac)) * window;
            let g1 = g0 + gap_frac * window;
            samples.retain(|s| !(s.t >= g0 && s.t < g1));
        }
    }
    let trace = if samples.is_empty() {
        None
    } else {
        Some(AccelTrace::new(&id, samples)?)
    };
    Ok(PatientOutput {
        record,
        trace,
        clinical,
        therapy,
    })
}

fn clinical_events<R: Rng>(
    rng: &mut R,
    id: &str,
    labels: &[(f64, AcuityLabel)],
    period: f64,
    es: f64,
) -> Vec<ClinicalEvent> {
    let mut out = Vec::new();
    for &(a, label) in labels {
        let shift = if label == AcuityLabel::Unstable { es } else { 0.0 };
        let n = (period / HOUR).ceil().max(1.0) as usize;
        for j in 0..n {
            let t = quantize(a - period + (j as f64 + rng.random_range(0.1..0.9)) * period / n as f64);
            let numeric = [
                (ClinicalKind::BloodPressure, normal(85.0 - 4.0 * shift, 12.0).sample(rng).clamp(30.0, 160.0)),
                (ClinicalKind::HeartRate, normal(88.0 + 5.0 * shift, 15.0).sample(rng).clamp(30.0, 200.0)),
                (ClinicalKind::Spo2, normal(96.0 - 1.0 * shift, 2.0).sample(rng).clamp(70.0, 100.0)),
                (ClinicalKind::PainScore, normal(3.0, 2.5).sample(rng).round().clamp(0.0, 10.0)),
                (ClinicalKind::BradenScore, normal(15.0 - shift, 3.0).sample(rng).round().clamp(6.0, 23.0)),
            ];
            for (kind, v) in numeric {
                out.push(ClinicalEvent {
                    patient_id: id.to_string(),
                    time: t,
                    kind,
                    value: ClinicalValue::Numeric(quantize(v)),
                });
            }
        }
        let u: f64 = rng.random();
        let severe = 0.1 * (1.0 + shift);
        let status = if u < severe / 3.0 {
            CognitiveStatus::Coma
        } else if u < severe {
            CognitiveStatus::Delirium
        } else {
            CognitiveStatus::Normal
        };
        out.push(ClinicalEvent {
            patient_id: id.to_string(),
            time: quantize(a - rng.random_range(0.1..0.9) * period),
            kind: ClinicalKind::CognitiveStatus,
            value: ClinicalValue::Cognitive(status),
        });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}
