//! Fixed-length EHR feature vectors: encoded demographics and windowed
//! clinical aggregates.

use serde::{Deserialize, Serialize};

use crate::datamodel::{ClinicalEvent, ClinicalKind, ClinicalValue, CognitiveStatus, Ethnicity, PatientRecord, Race, Sex};
use crate::eval::DevSet;

pub const DEMOGRAPHIC_LEN: usize = 11;
pub const CLINICAL_LEN: usize = 8;
const NUMERIC_KINDS: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EhrError {
    #[error("degenerate scale for {feature}: min = max = {value}")]
    Degenerate { feature: &'static str, value: f64 },
    #[error("no development observations of {0}")]
    NoObservations(&'static str),
}

/// Min-max range fit on development data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn fit(feature: &'static str, values: impl IntoIterator<Item = f64>) -> Result<Self, EhrError> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if min > max {
            return Err(EhrError::NoObservations(feature));
        }
        Range::new(feature, min, max)
    }

    pub fn new(feature: &'static str, min: f64, max: f64) -> Result<Self, EhrError> {
        if max > min {
            Ok(Self { min, max })
        } else {
            Err(EhrError::Degenerate { feature, value: min })
        }
    }

    pub fn scale(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Ranges for age, height, weight and length of stay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemographicScale {
    pub age: Range,
    pub height: Range,
    pub weight: Range,
    pub length_of_stay: Range,
}

pub fn fit_demographics(dev: &DevSet<PatientRecord>) -> Result<DemographicScale, EhrError> {
    let p = dev.items();
    Ok(DemographicScale {
        age: Range::fit("age", p.iter().map(|r| r.age))?,
        height: Range::fit("height", p.iter().map(|r| r.height_cm))?,
        weight: Range::fit("weight", p.iter().map(|r| r.weight_kg))?,
        length_of_stay: Range::fit("length_of_stay", p.iter().map(|r| r.length_of_stay_days))?,
    })
}

/// Scaled age, height, weight, length of stay, then one-hot sex (female,
/// male), race (white, african american, other), ethnicity (hispanic, non
/// hispanic).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemographicVector(pub [f64; DEMOGRAPHIC_LEN]);

pub fn encode_demographics(p: &PatientRecord, scale: &DemographicScale) -> DemographicVector {
    let mut v = [0.0; DEMOGRAPHIC_LEN];
    v[0] = scale.age.scale(p.age);
    v[1] = scale.height.scale(p.height_cm);
    v[2] = scale.weight.scale(p.weight_kg);
    v[3] = scale.length_of_stay.scale(p.length_of_stay_days);
    v[4 + match p.sex {
        Sex::Female => 0,
        Sex::Male => 1,
    }] = 1.0;
    v[6 + match p.race {
        Race::White => 0,
        Race::AfricanAmerican => 1,
        Race::Other => 2,
    }] = 1.0;
    v[9 + match p.ethnicity {
        Ethnicity::Hispanic => 0,
        Ethnicity::NonHispanic => 1,
    }] = 1.0;
    DemographicVector(v)
}

/// Unscaled per-window aggregates; `None` where a kind was not observed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalSummary {
    pub means: [Option<f64>; NUMERIC_KINDS],
    pub cognitive: Option<CognitiveStatus>,
}

/// Majority vote; ties go to the more severe status.
pub fn majority_cognitive(votes: impl IntoIterator<Item = CognitiveStatus>) -> Option<CognitiveStatus> {
    let mut counts = [0usize; 3];
    for v in votes {
        counts[severity(v)] += 1;
    }
    let mut best: Option<(usize, CognitiveStatus)> = None;
    for status in CognitiveStatus::ALL {
        let n = counts[severity(*status)];
        if n > 0 && best.is_none_or(|(m, _)| n >= m) {
            best = Some((n, *status));
        }
    }
    best.map(|(_, s)| s)
}

fn severity(s: CognitiveStatus) -> usize {
    match s {
        CognitiveStatus::Normal => 0,
        CognitiveStatus::Delirium => 1,
        CognitiveStatus::Coma => 2,
    }
}

/// Aggregates the events falling in `[start, end)`. Means are summed in
/// sorted order so the result does not depend on event order.
pub fn summarize_clinical<'a>(
    events: impl IntoIterator<Item = &'a ClinicalEvent>,
    start: f64,
    end: f64,
) -> ClinicalSummary {
    let mut values: [Vec<f64>; NUMERIC_KINDS] = Default::default();
    let mut votes = Vec::new();
    for e in events.into_iter().filter(|e| e.time >= start && e.time < end) {
        match e.value {
            ClinicalValue::Cognitive(c) => votes.push(c),
            ClinicalValue::Numeric(v) => {
                if let Some(k) = ClinicalKind::NUMERIC.iter().position(|k| *k == e.kind) {
                    values[k].push(v);
                }
            }
        }
    }
    let means = values.map(|mut v| {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(v.iter().sum::<f64>() / v.len() as f64)
    });
    ClinicalSummary {
        means,
        cognitive: majority_cognitive(votes),
    }
}

/// Dev-split ranges and imputation defaults for the clinical vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalScale {
    pub ranges: [Range; NUMERIC_KINDS],
    /// Population means over development windows, used for missing kinds.
    pub means: [f64; NUMERIC_KINDS],
    /// Most common development status, used when no status was recorded.
    pub default_cognitive: CognitiveStatus,
}

const KIND_NAMES: [&str; NUMERIC_KINDS] = ["blood_pressure", "heart_rate", "spo2", "pain_score", "braden_score"];

pub fn fit_clinical(dev: &DevSet<ClinicalSummary>) -> Result<ClinicalScale, EhrError> {
    let s = dev.items();
    let mut ranges = Vec::with_capacity(NUMERIC_KINDS);
    let mut means = [0.0; NUMERIC_KINDS];
    for k in 0..NUMERIC_KINDS {
        let mut observed: Vec<f64> = s.iter().filter_map(|w| w.means[k]).collect();
        ranges.push(Range::fit(KIND_NAMES[k], observed.iter().copied())?);
        observed.sort_by(f64::total_cmp);
        means[k] = observed.iter().sum::<f64>() / observed.len() as f64;
    }
    let default_cognitive = majority_cognitive(s.iter().filter_map(|w| w.cognitive)).unwrap_or(CognitiveStatus::Normal);
    Ok(ClinicalScale {
        ranges: ranges.try_into().expect("five ranges"),
        means,
        default_cognitive,
    })
}

/// Scaled means of the five numeric kinds, then one-hot cognitive status
/// (normal, delirium, coma).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalVector(pub [f64; CLINICAL_LEN]);

pub fn encode_clinical(summary: &ClinicalSummary, scale: &ClinicalScale) -> ClinicalVector {
    let mut v = [0.0; CLINICAL_LEN];
    for (k, slot) in v.iter_mut().take(NUMERIC_KINDS).enumerate() {
        *slot = scale.ranges[k].scale(summary.means[k].unwrap_or(scale.means[k]));
    }
    v[NUMERIC_KINDS + severity(summary.cognitive.unwrap_or(scale.default_cognitive))] = 1.0;
    ClinicalVector(v)
}

/// Aggregates and encodes the events in `[start, end)`.
pub fn aggregate_clinical<'a>(
    events: impl IntoIterator<Item = &'a ClinicalEvent>,
    start: f64,
    end: f64,
    scale: &ClinicalScale,
) -> ClinicalVector {
    encode_clinical(&summarize_clinical(events, start, end), scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn patient(age: f64, sex: Sex, race: Race, ethnicity: Ethnicity) -> PatientRecord {
        PatientRecord {
            patient_id: format!("P{age}"),
            age,
            sex,
            race,
            ethnicity,
            height_cm: 150.0 + age,
            weight_kg: 60.0 + age / 2.0,
            length_of_stay_days: age / 10.0,
            comorbidities: BTreeSet::new(),
        }
    }

    fn event(time: f64, kind: ClinicalKind, value: ClinicalValue) -> ClinicalEvent {
        ClinicalEvent {
            patient_id: "P".into(),
            time,
            kind,
            value,
        }
    }

    fn scale() -> ClinicalScale {
        let r = |min, max| Range { min, max };
        ClinicalScale {
            ranges: [r(50.0, 130.0), r(40.0, 140.0), r(80.0, 100.0), r(0.0, 10.0), r(6.0, 23.0)],
            means: [85.0, 80.0, 95.0, 2.0, 16.0],
            default_cognitive: CognitiveStatus::Normal,
        }
    }

    #[test]
    fn demographics_encoding() {
        let dev = DevSet::whole(vec![
            patient(20.0, Sex::Male, Race::Other, Ethnicity::NonHispanic),
            patient(90.0, Sex::Female, Race::White, Ethnicity::Hispanic),
        ]);
        let s = fit_demographics(&dev).unwrap();
        let young = encode_demographics(&dev.items()[0], &s);
        assert_eq!(young.0[0], 0.0);
        let v = encode_demographics(&patient(53.88, Sex::Female, Race::White, Ethnicity::Hispanic), &s);
        assert!((v.0[0] - (53.88 - 20.0) / 70.0).abs() < 1e-12);
        assert!((v.0[0] - 0.484).abs() < 1e-3);
        assert_eq!(&v.0[4..], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn single_patient_dev_is_degenerate() {
        let dev = DevSet::whole(vec![patient(40.0, Sex::Male, Race::Other, Ethnicity::Hispanic)]);
        assert_eq!(
            fit_demographics(&dev).unwrap_err(),
            EhrError::Degenerate { feature: "age", value: 40.0 }
        );
    }

    #[test]
    fn heart_rate_mean_and_votes() {
        let events = [
            event(10.0, ClinicalKind::HeartRate, ClinicalValue::Numeric(60.0)),
            event(20.0, ClinicalKind::HeartRate, ClinicalValue::Numeric(80.0)),
            event(30.0, ClinicalKind::HeartRate, ClinicalValue::Numeric(500.0)),
        ];
        let s = summarize_clinical(&events, 0.0, 30.0);
        assert_eq!(s.means[1], Some(70.0));
        assert_eq!(s.means[0], None);
        use CognitiveStatus::*;
        assert_eq!(majority_cognitive([Delirium, Delirium, Normal]), Some(Delirium));
        assert_eq!(majority_cognitive([Coma, Normal]), Some(Coma));
        assert_eq!(majority_cognitive([]), None);
    }

    #[test]
    fn missing_kinds_are_imputed_with_fixed_length() {
        let v = aggregate_clinical(std::iter::empty(), 0.0, 1.0, &scale());
        assert_eq!(v.0.len(), CLINICAL_LEN);
        assert!((v.0[0] - (85.0 - 50.0) / 80.0).abs() < 1e-12);
        assert_eq!(&v.0[5..], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn fit_uses_dev_means_and_mode() {
        let w = |hr: Option<f64>, spo2: f64, c| ClinicalSummary {
            means: [Some(80.0 + spo2), hr, Some(spo2), Some(spo2 - 90.0), Some(spo2 - 80.0)],
            cognitive: c,
        };
        let dev = DevSet::whole(vec![
            w(Some(60.0), 92.0, Some(CognitiveStatus::Delirium)),
            w(Some(90.0), 98.0, Some(CognitiveStatus::Delirium)),
            w(None, 95.0, Some(CognitiveStatus::Normal)),
        ]);
        let s = fit_clinical(&dev).unwrap();
        assert_eq!(s.means[1], 75.0);
        assert_eq!(s.ranges[2], Range { min: 92.0, max: 98.0 });
        assert_eq!(s.default_cognitive, CognitiveStatus::Delirium);

        let flat = DevSet::whole(vec![w(Some(60.0), 97.0, None), w(Some(70.0), 97.0, None)]);
        assert_eq!(
            fit_clinical(&flat).unwrap_err(),
            EhrError::Degenerate { feature: "blood_pressure", value: 177.0 }
        );
    }

    fn arb_status() -> impl Strategy<Value = CognitiveStatus> {
        prop::sample::select(CognitiveStatus::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn aggregation_is_order_independent(
            raw in proptest::collection::vec((0.0f64..100.0, 0usize..6, 0.0f64..200.0, arb_status()), 0..40),
            seed in any::<u64>(),
        ) {
            let events: Vec<ClinicalEvent> = raw.iter().map(|&(t, k, v, c)| {
                let kind = ClinicalKind::ALL[k];
                let value = if kind == ClinicalKind::CognitiveStatus { ClinicalValue::Cognitive(c) } else { ClinicalValue::Numeric(v) };
                event(t, kind, value)
            }).collect();
            let mut shuffled = events.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = aggregate_clinical(&events, 10.0, 90.0, &scale());
            let b = aggregate_clinical(&shuffled, 10.0, 90.0, &scale());
            prop_assert_eq!(a, b);
            prop_assert!(a.0.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(a.0[5..].iter().sum::<f64>(), 1.0);
        }

        #[test]
        fn strict_majority_ignores_tie_break(
            winner in arb_status(),
            others in proptest::collection::vec(arb_status(), 0..10),
        ) {
            let rivals: Vec<_> = others.into_iter().filter(|s| *s != winner).collect();
            let mut votes = vec![winner; rivals.len() + 1];
            votes.extend(rivals);
            prop_assert_eq!(majority_cognitive(votes), Some(winner));
        }

        #[test]
        fn demographic_groups_are_one_hot(age in 1.0f64..120.0, s in 0usize..2, r in 0usize..3, e in 0usize..2) {
            let dev = DevSet::whole(vec![
                patient(20.0, Sex::Male, Race::Other, Ethnicity::Hispanic),
                patient(90.0, Sex::Male, Race::Other, Ethnicity::Hispanic),
            ]);
            let scale = fit_demographics(&dev).unwrap();
            let v = encode_demographics(&patient(age, Sex::ALL[s], Race::ALL[r], Ethnicity::ALL[e]), &scale).0;
            prop_assert!(v[..4].iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert_eq!(v[4] + v[5], 1.0);
            prop_assert_eq!(v[6] + v[7] + v[8], 1.0);
            prop_assert_eq!(v[9] + v[10], 1.0);
        }
    }
}
