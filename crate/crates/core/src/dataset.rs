//! Turns a cohort into labeled, scaled model inputs split by patient.
//!
//! For every patient, assessments fall every `assessment_period_hours` up to
//! the end of the recorded streams. Each assessment is labeled from therapy
//! events; trainable ones get an accelerometer window and a clinical summary.
//! Scale parameters for all three inputs are fit on development patients
//! only.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{read_checkpoint, write_checkpoint, ParamStore, Tensor};
use crate::datamodel::{AcuityLabel, Cohort, DataError, PatientRecord, PatientStreams, MAX_TRACE_SECONDS};
use crate::ehr::{
    encode_clinical, encode_demographics, fit_clinical, fit_demographics, summarize_clinical, ClinicalScale,
    ClinicalSummary, ClinicalVector, DemographicScale, DemographicVector, EhrError, CLINICAL_LEN, DEMOGRAPHIC_LEN,
};
use crate::eval::{make_split, Assignment, DevSet, EvalError, Holdout, PatientStratum, SplitPlan};
use crate::models::FusionInputs;
use crate::phenotype::{assessment_times, write_label_audit, LabelRecord, PhenotypeRules, HOUR};
use crate::signal::{
    apply_scale, cut_windows, decimate, fit_scale, RawWindow, RejectReason, SampleWindow, ScaleParams, SignalError,
    WindowRejection, CHANNELS,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Ehr(#[from] EhrError),
    #[error("no labeled windows survived preprocessing")]
    NoSamples,
    #[error("{file}: {reason}")]
    Artifact { file: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub window_hours: f64,
    pub assessment_period_hours: f64,
    /// Length of the clinical aggregation window before each assessment.
    pub clinical_window_hours: f64,
    pub dev_fraction: f64,
    pub folds: usize,
    pub stratify: bool,
    pub seed: u64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            window_hours: 4.0,
            assessment_period_hours: 4.0,
            clinical_window_hours: 4.0,
            dev_fraction: 0.7,
            folds: 3,
            stratify: true,
            seed: 0,
        }
    }
}

/// One model input: window, EHR vectors, label and SOFA.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub patient_id: String,
    pub assessment_time: f64,
    pub window: SampleWindow,
    pub demographics: DemographicVector,
    pub clinical: ClinicalVector,
    pub sofa: Option<u8>,
    pub unstable: bool,
}

impl LabeledSample {
    pub fn decimated(&self, factor: usize) -> Result<Self, SignalError> {
        Ok(Self {
            window: decimate(&self.window, factor)?,
            ..self.clone()
        })
    }

    /// Fused EHR block in demographics-then-clinical order.
    pub fn ehr(&self, fusion: FusionInputs) -> Vec<f64> {
        let mut v = Vec::with_capacity(fusion.len());
        if fusion.demographics {
            v.extend_from_slice(&self.demographics.0);
        }
        if fusion.clinical {
            v.extend_from_slice(&self.clinical.0);
        }
        v
    }
}

/// Stacks samples into `B×3×L` windows, a `B×E` EHR block (absent when no
/// fusion) and 0/1 targets.
pub fn batch(samples: &[&LabeledSample], fusion: FusionInputs) -> (Tensor, Option<Tensor>, Vec<f64>) {
    let b = samples.len();
    let len = samples.first().map_or(0, |s| s.window.len());
    let mut accel = Vec::with_capacity(b * CHANNELS * len);
    let mut ehr = Vec::with_capacity(b * fusion.len());
    let mut targets = Vec::with_capacity(b);
    for s in samples {
        assert_eq!(s.window.len(), len, "all windows in a batch share one length");
        accel.extend(s.window.data().iter().map(|&v| f64::from(v)));
        ehr.extend(s.ehr(fusion));
        targets.push(if s.unstable { 1.0 } else { 0.0 });
    }
    let accel = Tensor::new(vec![b, CHANNELS, len], accel).expect("batch shape");
    let ehr = (!fusion.is_empty()).then(|| Tensor::new(vec![b, fusion.len()], ehr).expect("ehr shape"));
    (accel, ehr, targets)
}

/// Development-fit parameters for every input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedScales {
    pub accel: ScaleParams,
    pub demographics: DemographicScale,
    pub clinical: ClinicalScale,
}

#[derive(Debug)]
pub struct Prepared {
    pub config: PrepareConfig,
    pub plan: SplitPlan,
    pub scales: FittedScales,
    pub dev: DevSet<LabeledSample>,
    pub holdout: Holdout<LabeledSample>,
    pub labels: Vec<LabelRecord>,
    pub rejections: Vec<WindowRejection>,
}

struct Candidate {
    patient: usize,
    patient_id: String,
    raw: RawWindow,
    summary: ClinicalSummary,
    sofa: Option<u8>,
    unstable: bool,
}

impl AsRef<RawWindow> for Candidate {
    fn as_ref(&self) -> &RawWindow {
        &self.raw
    }
}

/// Latest time seen in any of the patient's streams, capped at the longest
/// supported stay.
pub fn observation_horizon(s: &PatientStreams<'_>) -> f64 {
    let trace_end = s.trace.and_then(|t| t.samples().last()).map_or(0.0, |x| x.t);
    let clinical_end = s.clinical.iter().map(|e| e.time).fold(0.0, f64::max);
    let therapy_end = s.therapy.iter().map(|e| e.time).fold(0.0, f64::max);
    trace_end.max(clinical_end).max(therapy_end).min(MAX_TRACE_SECONDS)
}

/// Labels every assessment of every patient, in patient order.
pub fn label_cohort(cohort: &Cohort, assessment_period_hours: f64) -> Vec<LabelRecord> {
    let rules = PhenotypeRules::default();
    let mut out = Vec::new();
    for s in cohort.streams() {
        for a in assessment_times(observation_horizon(&s), assessment_period_hours * HOUR) {
            out.push(LabelRecord {
                patient_id: s.patient.patient_id.clone(),
                window: rules.label_window(&s.therapy, a),
            });
        }
    }
    out
}

pub fn prepare(cohort: &Cohort, config: &PrepareConfig) -> Result<Prepared, DatasetError> {
    cohort.validate()?;
    let rules = PhenotypeRules::default();
    let period = config.assessment_period_hours * HOUR;
    let clinical_span = config.clinical_window_hours * HOUR;
    let mut labels = Vec::new();
    let mut rejections = Vec::new();
    let mut candidates = Vec::new();

    for (pi, s) in cohort.streams().iter().enumerate() {
        let mut trainable = Vec::new();
        for a in assessment_times(observation_horizon(s), period) {
            let window = rules.label_window(&s.therapy, a);
            if window.label.is_trainable() {
                trainable.push((a, window.label == AcuityLabel::Unstable, window.sofa));
            }
            labels.push(LabelRecord {
                patient_id: s.patient.patient_id.clone(),
                window,
            });
        }
        let Some(trace) = s.trace else {
            rejections.extend(trainable.iter().map(|&(a, _, _)| WindowRejection {
                patient_id: s.patient.patient_id.clone(),
                assessment_time: a,
                reason: RejectReason::NoSamples,
            }));
            continue;
        };
        let times: Vec<f64> = trainable.iter().map(|t| t.0).collect();
        let cut = cut_windows(trace, &times, config.window_hours);
        rejections.extend(cut.rejected);
        let info: BTreeMap<u64, (bool, Option<u8>)> =
            trainable.iter().map(|&(a, u, sofa)| (a.to_bits(), (u, sofa))).collect();
        for raw in cut.accepted {
            let a = raw.assessment_time;
            let (unstable, sofa) = info[&a.to_bits()];
            candidates.push(Candidate {
                patient: pi,
                patient_id: s.patient.patient_id.clone(),
                summary: summarize_clinical(s.clinical.iter().copied(), a - clinical_span, a),
                raw,
                sofa,
                unstable,
            });
        }
    }
    if candidates.is_empty() {
        return Err(DatasetError::NoSamples);
    }

    let mut strata: BTreeMap<&str, bool> = BTreeMap::new();
    for c in &candidates {
        *strata.entry(c.patient_id.as_str()).or_default() |= c.unstable;
    }
    let strata: Vec<PatientStratum> = strata
        .into_iter()
        .map(|(id, ever_unstable)| PatientStratum {
            patient_id: id.to_string(),
            ever_unstable,
        })
        .collect();
    let plan = make_split(&strata, config.seed, config.dev_fraction, config.folds, config.stratify)?;

    let (dev, holdout) = plan.partition(candidates, |c| c.patient_id.as_str())?;
    let dev_patients: Vec<PatientRecord> = cohort
        .patients
        .iter()
        .filter(|p| matches!(plan.assignment(&p.patient_id), Some(Assignment::Development { .. })))
        .cloned()
        .collect();
    let scales = FittedScales {
        accel: fit_scale(&dev)?,
        demographics: fit_demographics(&DevSet::whole(dev_patients))?,
        clinical: fit_clinical(&dev.map_ref(|c| c.summary))?,
    };
    let finish = |c: Candidate| {
        let patient = &cohort.patients[c.patient];
        LabeledSample {
            patient_id: patient.patient_id.clone(),
            assessment_time: c.raw.assessment_time,
            window: apply_scale(&c.raw, &scales.accel),
            demographics: encode_demographics(patient, &scales.demographics),
            clinical: encode_clinical(&c.summary, &scales.clinical),
            sofa: c.sofa,
            unstable: c.unstable,
        }
    };
    Ok(Prepared {
        config: config.clone(),
        dev: dev.map(finish),
        holdout: holdout.map(finish),
        plan,
        scales,
        labels,
        rejections,
    })
}

pub const SAMPLES_FILE: &str = "samples.csv";
pub const WINDOWS_FILE: &str = "windows.bin";
pub const SPLIT_FILE: &str = "split.json";
pub const SCALES_FILE: &str = "scales.json";
pub const PREPARE_CONFIG_FILE: &str = "prepare.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const REJECTIONS_FILE: &str = "rejections.csv";

fn sample_header() -> Vec<String> {
    let mut h: Vec<String> = ["index", "patient_id", "assessment_time", "label", "sofa", "partition", "fold"]
        .map(String::from)
        .to_vec();
    h.extend((0..DEMOGRAPHIC_LEN).map(|i| format!("demo_{i}")));
    h.extend((0..CLINICAL_LEN).map(|i| format!("clinical_{i}")));
    h
}

fn artifact(file: &str, reason: impl ToString) -> DatasetError {
    DatasetError::Artifact {
        file: file.to_string(),
        reason: reason.to_string(),
    }
}

fn write_json<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(value).map_err(DataError::from)?;
    text.push('\n');
    std::fs::write(dir.join(file), text).map_err(|e| artifact(file, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, file: &str) -> Result<T, DatasetError> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(DataError::MissingFile(path).into());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| artifact(file, e))?;
    serde_json::from_str(&text).map_err(|e| artifact(file, e))
}

/// Writes the prepared dataset into `dir`. Holdout rows are written without
/// counting as an access.
pub fn save_prepared(p: &Prepared, dir: &Path) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| artifact(&dir.display().to_string(), e))?;
    write_json(dir, PREPARE_CONFIG_FILE, &p.config)?;
    write_json(dir, SPLIT_FILE, &p.plan)?;
    write_json(dir, SCALES_FILE, &p.scales)?;

    let mut w = csv::Writer::from_path(dir.join(SAMPLES_FILE)).map_err(|e| artifact(SAMPLES_FILE, e))?;
    w.write_record(sample_header()).map_err(|e| artifact(SAMPLES_FILE, e))?;
    let mut windows = ParamStore::new();
    let dev = p.dev.items().iter().enumerate().map(|(i, s)| (s, Some(p.dev.fold_of(i))));
    let holdout = p.holdout.map_ref(|s| s.clone());
    let holdout_rows: Vec<LabeledSample> = holdout.open().to_vec();
    for (index, (s, fold)) in dev.chain(holdout_rows.iter().map(|s| (s, None))).enumerate() {
        let mut rec = vec![
            index.to_string(),
            s.patient_id.clone(),
            s.assessment_time.to_string(),
            if s.unstable { "unstable" } else { "stable" }.to_string(),
            s.sofa.map(|v| v.to_string()).unwrap_or_default(),
            if fold.is_some() { "dev" } else { "holdout" }.to_string(),
            fold.map(|f| f.to_string()).unwrap_or_default(),
        ];
        rec.extend(s.demographics.0.iter().map(|v| v.to_string()));
        rec.extend(s.clinical.0.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| artifact(SAMPLES_FILE, e))?;
        let data = s.window.data().iter().map(|&v| f64::from(v)).collect();
        windows.register(
            format!("window{index}"),
            Tensor::new(vec![CHANNELS, s.window.len()], data).expect("window shape"),
        );
    }
    w.flush().map_err(|e| artifact(SAMPLES_FILE, e))?;
    let file = std::fs::File::create(dir.join(WINDOWS_FILE)).map_err(|e| artifact(WINDOWS_FILE, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_checkpoint(&windows, &mut out).map_err(|e| artifact(WINDOWS_FILE, e))?;
    std::io::Write::flush(&mut out).map_err(|e| artifact(WINDOWS_FILE, e))?;

    let labels = std::fs::File::create(dir.join(LABELS_FILE)).map_err(|e| artifact(LABELS_FILE, e))?;
    write_label_audit(&p.labels, labels).map_err(|e| artifact(LABELS_FILE, e))?;

    let mut w = csv::Writer::from_path(dir.join(REJECTIONS_FILE)).map_err(|e| artifact(REJECTIONS_FILE, e))?;
    w.write_record(["patient_id", "assessment_time", "reason", "coverage"])
        .map_err(|e| artifact(REJECTIONS_FILE, e))?;
    for r in &p.rejections {
        let (reason, coverage) = match r.reason {
            RejectReason::InsufficientHistory => ("insufficient_history", String::new()),
            RejectReason::InsufficientCoverage { coverage } => ("insufficient_coverage", coverage.to_string()),
            RejectReason::NoSamples => ("no_samples", String::new()),
        };
        w.write_record([r.patient_id.as_str(), &r.assessment_time.to_string(), reason, &coverage])
            .map_err(|e| artifact(REJECTIONS_FILE, e))?;
    }
    w.flush().map_err(|e| artifact(REJECTIONS_FILE, e))?;
    Ok(())
}

/// Reads a directory written by [`save_prepared`]. Label and rejection
/// audits are not reloaded.
pub fn load_prepared(dir: &Path) -> Result<Prepared, DatasetError> {
    let config: PrepareConfig = read_json(dir, PREPARE_CONFIG_FILE)?;
    let plan: SplitPlan = read_json(dir, SPLIT_FILE)?;
    let scales: FittedScales = read_json(dir, SCALES_FILE)?;
    let wpath = dir.join(WINDOWS_FILE);
    if !wpath.is_file() {
        return Err(DataError::MissingFile(wpath).into());
    }
    let file = std::fs::File::open(&wpath).map_err(|e| artifact(WINDOWS_FILE, e))?;
    let windows = read_checkpoint(std::io::BufReader::new(file)).map_err(|e| artifact(WINDOWS_FILE, e))?;

    let spath = dir.join(SAMPLES_FILE);
    if !spath.is_file() {
        return Err(DataError::MissingFile(spath).into());
    }
    let mut reader = csv::Reader::from_path(&spath).map_err(|e| artifact(SAMPLES_FILE, e))?;
    let mut samples = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| artifact(SAMPLES_FILE, e))?;
        let bad = |what: &str| artifact(SAMPLES_FILE, format!("line {}: bad {what}", row + 2));
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let index: usize = rec[0].parse().map_err(|_| bad("index"))?;
        let window = windows
            .by_name(&format!("window{index}"))
            .ok_or_else(|| bad("window reference"))?;
        let data: Vec<f32> = window.data().iter().map(|&v| v as f32).collect();
        let assessment_time = num(2, "assessment_time")?;
        let mut demographics = [0.0; DEMOGRAPHIC_LEN];
        for (k, d) in demographics.iter_mut().enumerate() {
            *d = num(7 + k, "demographics")?;
        }
        let mut clinical = [0.0; CLINICAL_LEN];
        for (k, c) in clinical.iter_mut().enumerate() {
            *c = num(7 + DEMOGRAPHIC_LEN + k, "clinical")?;
        }
        samples.push(LabeledSample {
            patient_id: rec[1].to_string(),
            assessment_time,
            window: SampleWindow::new(&rec[1], assessment_time, 1, data),
            demographics: DemographicVector(demographics),
            clinical: ClinicalVector(clinical),
            sofa: match &rec[4] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("sofa"))?),
            },
            unstable: match &rec[3] {
                "unstable" => true,
                "stable" => false,
                _ => return Err(bad("label")),
            },
        });
    }
    let (dev, holdout) = plan.partition(samples, |s| s.patient_id.as_str())?;
    Ok(Prepared {
        config,
        plan,
        scales,
        dev,
        holdout,
        labels: Vec::new(),
        rejections: Vec::new(),
    })
}
