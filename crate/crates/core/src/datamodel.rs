//! Domain types and the on-disk cohort format.
//!
//! A cohort directory holds four comma-delimited files with header rows:
//!
//! | file           | columns |
//! |----------------|---------|
//! | `patients.csv` | `patient_id,age,sex,race,ethnicity,height_cm,weight_kg,los_days,<11 disease flags>` |
//! | `accel.csv`    | `patient_id,t_sec,x_g,y_g,z_g` |
//! | `clinical.csv` | `patient_id,t_sec,kind,value` |
//! | `therapy.csv`  | `patient_id,t_sec,kind,value` |
//!
//! Times are seconds since enrollment. Unknown `kind` strings are errors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::eval::EvalReport;

/// Longest accelerometer recording accepted, in seconds (7 days).
pub const MAX_TRACE_SECONDS: f64 = 7.0 * 86_400.0;
pub const MAX_SOFA: u8 = 24;

pub const PATIENTS_FILE: &str = "patients.csv";
pub const ACCEL_FILE: &str = "accel.csv";
pub const CLINICAL_FILE: &str = "clinical.csv";
pub const THERAPY_FILE: &str = "therapy.csv";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: field `{field}`: {reason}")]
    Malformed {
        file: String,
        line: u64,
        field: String,
        reason: String,
    },
    #[error("{file}:{line}: unknown patient_id `{patient_id}`")]
    UnknownPatient {
        file: String,
        line: u64,
        patient_id: String,
    },
    #[error("{file}: header mismatch, expected `{expected}`")]
    Header { file: String, expected: String },
    #[error("invalid {what}: {reason}")]
    Invariant { what: &'static str, reason: String },
    #[error("incomplete report: {0}")]
    IncompleteReport(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{}`", stringify!($name), other)),
                }
            }
        }
    };
}

string_enum!(Sex { Female => "female", Male => "male" });
string_enum!(Race {
    White => "white",
    AfricanAmerican => "african_american",
    Other => "other",
});
string_enum!(Ethnicity {
    Hispanic => "hispanic",
    NonHispanic => "non_hispanic",
});
string_enum!(
    /// The eleven comorbidity flags tracked per patient.
    Comorbidity {
        Cancer => "cancer",
        CerebroVascular => "cerebrovascular",
        Dementia => "dementia",
        ParaplegiaHemiplegia => "paraplegia_hemiplegia",
        CongestiveHeartFailure => "congestive_heart_failure",
        Copd => "copd",
        Diabetes => "diabetes",
        MetastaticCarcinoma => "metastatic_carcinoma",
        Liver => "liver",
        PepticUlcer => "peptic_ulcer",
        Renal => "renal",
    }
);
string_enum!(ClinicalKind {
    BloodPressure => "blood_pressure",
    HeartRate => "heart_rate",
    Spo2 => "spo2",
    PainScore => "pain_score",
    BradenScore => "braden_score",
    CognitiveStatus => "cognitive_status",
});
string_enum!(
    /// Cognitive status, ordered by increasing severity.
    CognitiveStatus {
        Normal => "normal",
        Delirium => "delirium",
        Coma => "coma",
    }
);
string_enum!(TherapyKind {
    Vasopressor => "vasopressor",
    MechanicalVentilation => "mechanical_ventilation",
    Crrt => "crrt",
    TransfusionUnit => "transfusion_unit",
    SofaObservation => "sofa_observation",
    Death => "death",
    Discharge => "discharge",
});
string_enum!(AcuityLabel {
    Stable => "stable",
    Unstable => "unstable",
    ExcludedDead => "excluded_dead",
    ExcludedDischarged => "excluded_discharged",
});

impl AcuityLabel {
    /// Only stable and unstable windows enter model training.
    pub fn is_trainable(self) -> bool {
        matches!(self, AcuityLabel::Stable | AcuityLabel::Unstable)
    }
}

impl ClinicalKind {
    /// Kinds carrying a numeric value, in feature order.
    pub const NUMERIC: [ClinicalKind; 5] = [
        ClinicalKind::BloodPressure,
        ClinicalKind::HeartRate,
        ClinicalKind::Spo2,
        ClinicalKind::PainScore,
        ClinicalKind::BradenScore,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: f64,
    pub sex: Sex,
    pub race: Race,
    pub ethnicity: Ethnicity,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub length_of_stay_days: f64,
    pub comorbidities: BTreeSet<Comorbidity>,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.patient_id.is_empty() {
            return Err("patient_id is empty".into());
        }
        for (name, v, strict) in [
            ("age", self.age, true),
            ("height_cm", self.height_cm, true),
            ("weight_kg", self.weight_kg, true),
            ("los_days", self.length_of_stay_days, false),
        ] {
            if !v.is_finite() || (strict && v <= 0.0) || (!strict && v < 0.0) {
                return Err(format!("{name} = {v} out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccelSample {
    pub fn channel(&self, c: usize) -> f64 {
        match c {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

/// Raw tri-axial accelerometer stream of one patient, in g.
#[derive(Clone, Debug, PartialEq)]
pub struct AccelTrace {
    patient_id: String,
    samples: Vec<AccelSample>,
    device_rate_hint: f64,
}

impl AccelTrace {
    /// Validates ordering and duration; the rate hint is the mean sampling
    /// rate of the stream.
    pub fn new(patient_id: impl Into<String>, samples: Vec<AccelSample>) -> Result<Self, DataError> {
        let patient_id = patient_id.into();
        if let Some(pos) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(DataError::Invariant {
                what: "accelerometer trace",
                reason: format!(
                    "{patient_id}: timestamps not strictly increasing at sample {} ({} after {})",
                    pos + 1,
                    samples[pos + 1].t,
                    samples[pos].t
                ),
            });
        }
        if let Some(s) = samples.iter().find(|s| !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite() && s.z.is_finite())) {
            return Err(DataError::Invariant {
                what: "accelerometer trace",
                reason: format!("{patient_id}: non-finite sample at t={}", s.t),
            });
        }
        let duration = match (samples.first(), samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        };
        if duration > MAX_TRACE_SECONDS {
            return Err(DataError::Invariant {
                what: "accelerometer trace",
                reason: format!("{patient_id}: duration {duration} s exceeds 7 days"),
            });
        }
        let device_rate_hint = if duration > 0.0 {
            (samples.len() - 1) as f64 / duration
        } else {
            0.0
        };
        Ok(Self {
            patient_id,
            samples,
            device_rate_hint,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn samples(&self) -> &[AccelSample] {
        &self.samples
    }

    pub fn device_rate_hint(&self) -> f64 {
        self.device_rate_hint
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClinicalValue {
    Numeric(f64),
    Cognitive(CognitiveStatus),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClinicalEvent {
    pub patient_id: String,
    pub time: f64,
    pub kind: ClinicalKind,
    pub value: ClinicalValue,
}

impl ClinicalEvent {
    pub fn validate(&self) -> Result<(), String> {
        if !self.time.is_finite() {
            return Err("non-finite time".into());
        }
        match (self.kind, self.value) {
            (ClinicalKind::CognitiveStatus, ClinicalValue::Cognitive(_)) => Ok(()),
            (ClinicalKind::CognitiveStatus, ClinicalValue::Numeric(_)) => {
                Err("cognitive_status requires a categorical value".into())
            }
            (_, ClinicalValue::Numeric(v)) if v.is_finite() => Ok(()),
            (kind, _) => Err(format!("{kind} requires a finite numeric value")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TherapyEvent {
    pub patient_id: String,
    pub time: f64,
    pub kind: TherapyKind,
    pub sofa_value: Option<u8>,
}

impl TherapyEvent {
    pub fn new(patient_id: impl Into<String>, time: f64, kind: TherapyKind) -> Self {
        Self {
            patient_id: patient_id.into(),
            time,
            kind,
            sofa_value: None,
        }
    }

    pub fn sofa(patient_id: impl Into<String>, time: f64, value: u8) -> Self {
        Self {
            patient_id: patient_id.into(),
            time,
            kind: TherapyKind::SofaObservation,
            sofa_value: Some(value),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.time.is_finite() {
            return Err("non-finite time".into());
        }
        match (self.kind, self.sofa_value) {
            (TherapyKind::SofaObservation, Some(v)) if v <= MAX_SOFA => Ok(()),
            (TherapyKind::SofaObservation, Some(v)) => Err(format!("sofa value {v} outside 0-24")),
            (TherapyKind::SofaObservation, None) => Err("sofa_observation requires a value".into()),
            (_, Some(_)) => Err(format!("{} takes no value", self.kind)),
            (_, None) => Ok(()),
        }
    }
}

/// Everything known about one cohort, as loaded from disk or synthesized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    pub traces: Vec<AccelTrace>,
    pub clinical: Vec<ClinicalEvent>,
    pub therapy: Vec<TherapyEvent>,
}

/// Per-patient view into a [`Cohort`], with events sorted by time.
#[derive(Clone, Debug)]
pub struct PatientStreams<'a> {
    pub patient: &'a PatientRecord,
    pub trace: Option<&'a AccelTrace>,
    pub clinical: Vec<&'a ClinicalEvent>,
    pub therapy: Vec<TherapyEvent>,
}

impl Cohort {
    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    /// Checks patient-id uniqueness, record invariants, and that every
    /// stream references a known patient.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for p in &self.patients {
            p.validate().map_err(|reason| DataError::Invariant { what: "patient", reason })?;
            if !seen.insert(p.patient_id.as_str()) {
                return Err(DataError::Invariant {
                    what: "patient",
                    reason: format!("duplicate patient_id {}", p.patient_id),
                });
            }
        }
        let known = |id: &str, what: &'static str| {
            if seen.contains(id) {
                Ok(())
            } else {
                Err(DataError::Invariant {
                    what,
                    reason: format!("unknown patient_id {id}"),
                })
            }
        };
        for t in &self.traces {
            known(t.patient_id(), "accelerometer trace")?;
        }
        for e in &self.clinical {
            known(&e.patient_id, "clinical event")?;
            e.validate().map_err(|reason| DataError::Invariant { what: "clinical event", reason })?;
        }
        for e in &self.therapy {
            known(&e.patient_id, "therapy event")?;
            e.validate().map_err(|reason| DataError::Invariant { what: "therapy event", reason })?;
        }
        Ok(())
    }

    /// Groups streams by patient, in patient order.
    pub fn streams(&self) -> Vec<PatientStreams<'_>> {
        let mut clinical: HashMap<&str, Vec<&ClinicalEvent>> = HashMap::new();
        for e in &self.clinical {
            clinical.entry(e.patient_id.as_str()).or_default().push(e);
        }
        let mut therapy: HashMap<&str, Vec<TherapyEvent>> = HashMap::new();
        for e in &self.therapy {
            therapy.entry(e.patient_id.as_str()).or_default().push(e.clone());
        }
        self.patients
            .iter()
            .map(|p| {
                let id = p.patient_id.as_str();
                let mut c = clinical.remove(id).unwrap_or_default();
                c.sort_by(|a, b| a.time.total_cmp(&b.time));
                let mut t = therapy.remove(id).unwrap_or_default();
                t.sort_by(|a, b| a.time.total_cmp(&b.time));
                PatientStreams {
                    patient: p,
                    trace: self.traces.iter().find(|tr| tr.patient_id() == id),
                    clinical: c,
                    therapy: t,
                }
            })
            .collect()
    }
}

fn open_reader(dir: &Path, name: &str, header: &[&str]) -> Result<csv::Reader<std::fs::File>, DataError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(DataError::MissingFile(path));
    }
    let file = std::fs::File::open(&path).map_err(io_err(&path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let found = reader.headers().map_err(|source| DataError::Csv {
        file: name.to_string(),
        source,
    })?;
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(DataError::Header {
            file: name.to_string(),
            expected: header.join(","),
        });
    }
    Ok(reader)
}

struct Row<'a> {
    file: &'static str,
    line: u64,
    record: &'a csv::StringRecord,
    header: &'a [&'a str],
}

impl Row<'_> {
    fn malformed(&self, field: usize, reason: impl Into<String>) -> DataError {
        DataError::Malformed {
            file: self.file.to_string(),
            line: self.line,
            field: self.header[field].to_string(),
            reason: reason.into(),
        }
    }

    fn text(&self, field: usize) -> Result<&str, DataError> {
        self.record
            .get(field)
            .map(str::trim)
            .ok_or_else(|| self.malformed(field, "missing column"))
    }

    fn parse<T: FromStr>(&self, field: usize) -> Result<T, DataError>
    where
        T::Err: fmt::Display,
    {
        let s = self.text(field)?;
        s.parse::<T>()
            .map_err(|e| self.malformed(field, format!("cannot parse `{s}`: {e}")))
    }

    fn number(&self, field: usize) -> Result<f64, DataError> {
        let v: f64 = self.parse(field)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.malformed(field, "not a finite number"))
        }
    }
}

fn for_each_row(
    reader: &mut csv::Reader<std::fs::File>,
    file: &'static str,
    header: &[&str],
    mut f: impl FnMut(&Row<'_>) -> Result<(), DataError>,
) -> Result<(), DataError> {
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|source| DataError::Csv {
            file: file.to_string(),
            source,
        })?;
        if !more {
            return Ok(());
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(DataError::Malformed {
                file: file.to_string(),
                line,
                field: "*".into(),
                reason: format!("expected {} columns, found {}", header.len(), record.len()),
            });
        }
        f(&Row {
            file,
            line,
            record: &record,
            header,
        })?;
    }
}

fn patients_header() -> Vec<&'static str> {
    let mut h = vec![
        "patient_id",
        "age",
        "sex",
        "race",
        "ethnicity",
        "height_cm",
        "weight_kg",
        "los_days",
    ];
    h.extend(Comorbidity::ALL.iter().map(|c| c.as_str()));
    h
}

const ACCEL_HEADER: [&str; 5] = ["patient_id", "t_sec", "x_g", "y_g", "z_g"];
const EVENT_HEADER: [&str; 4] = ["patient_id", "t_sec", "kind", "value"];

/// Reads a cohort directory, enforcing type invariants and referential
/// integrity. Errors name the offending file, line and field.
pub fn load_cohort(dir: &Path) -> Result<Cohort, DataError> {
    let pheader = patients_header();
    let mut reader = open_reader(dir, PATIENTS_FILE, &pheader)?;
    let mut patients = Vec::new();
    let mut ids: BTreeSet<String> = BTreeSet::new();
    for_each_row(&mut reader, PATIENTS_FILE, &pheader, |row| {
        let mut comorbidities = BTreeSet::new();
        for (i, c) in Comorbidity::ALL.iter().enumerate() {
            match row.text(8 + i)? {
                "1" => {
                    comorbidities.insert(*c);
                }
                "0" => {}
                other => return Err(row.malformed(8 + i, format!("expected 0 or 1, found `{other}`"))),
            }
        }
        let record = PatientRecord {
            patient_id: row.text(0)?.to_string(),
            age: row.number(1)?,
            sex: row.parse(2)?,
            race: row.parse(3)?,
            ethnicity: row.parse(4)?,
            height_cm: row.number(5)?,
            weight_kg: row.number(6)?,
            length_of_stay_days: row.number(7)?,
            comorbidities,
        };
        record.validate().map_err(|reason| row.malformed(0, reason))?;
        if !ids.insert(record.patient_id.clone()) {
            return Err(row.malformed(0, format!("duplicate patient_id {}", record.patient_id)));
        }
        patients.push(record);
        Ok(())
    })?;

    let unknown = |row: &Row<'_>, id: &str| DataError::UnknownPatient {
        file: row.file.to_string(),
        line: row.line,
        patient_id: id.to_string(),
    };

    let mut reader = open_reader(dir, ACCEL_FILE, &ACCEL_HEADER)?;
    let mut accel: BTreeMap<String, Vec<AccelSample>> = BTreeMap::new();
    for_each_row(&mut reader, ACCEL_FILE, &ACCEL_HEADER, |row| {
        let id = row.text(0)?;
        if !ids.contains(id) {
            return Err(unknown(row, id));
        }
        let sample = AccelSample {
            t: row.number(1)?,
            x: row.number(2)?,
            y: row.number(3)?,
            z: row.number(4)?,
        };
        let samples = accel.entry(id.to_string()).or_default();
        if let Some(prev) = samples.last() {
            if sample.t <= prev.t {
                return Err(row.malformed(1, format!("timestamp {} not after previous {}", sample.t, prev.t)));
            }
        }
        samples.push(sample);
        Ok(())
    })?;
    let mut traces = Vec::new();
    for p in &patients {
        if let Some(samples) = accel.remove(&p.patient_id) {
            traces.push(AccelTrace::new(p.patient_id.clone(), samples)?);
        }
    }

    let mut reader = open_reader(dir, CLINICAL_FILE, &EVENT_HEADER)?;
    let mut clinical = Vec::new();
    for_each_row(&mut reader, CLINICAL_FILE, &EVENT_HEADER, |row| {
        let id = row.text(0)?;
        if !ids.contains(id) {
            return Err(unknown(row, id));
        }
        let kind: ClinicalKind = row.parse(2)?;
        let value = if kind == ClinicalKind::CognitiveStatus {
            ClinicalValue::Cognitive(row.parse(3)?)
        } else {
            ClinicalValue::Numeric(row.number(3)?)
        };
        let event = ClinicalEvent {
            patient_id: id.to_string(),
            time: row.number(1)?,
            kind,
            value,
        };
        event.validate().map_err(|reason| row.malformed(3, reason))?;
        clinical.push(event);
        Ok(())
    })?;

    let mut reader = open_reader(dir, THERAPY_FILE, &EVENT_HEADER)?;
    let mut therapy = Vec::new();
    for_each_row(&mut reader, THERAPY_FILE, &EVENT_HEADER, |row| {
        let id = row.text(0)?;
        if !ids.contains(id) {
            return Err(unknown(row, id));
        }
        let kind: TherapyKind = row.parse(2)?;
        let sofa_value = match row.text(3)? {
            "" => None,
            _ => Some(row.parse::<u8>(3)?),
        };
        let event = TherapyEvent {
            patient_id: id.to_string(),
            time: row.number(1)?,
            kind,
            sofa_value,
        };
        event.validate().map_err(|reason| row.malformed(3, reason))?;
        therapy.push(event);
        Ok(())
    })?;

    Ok(Cohort {
        patients,
        traces,
        clinical,
        therapy,
    })
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>, DataError> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

fn csv_err(file: &str) -> impl FnOnce(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv {
        file: file.to_string(),
        source,
    }
}

/// Writes a cohort in the four-file format. Output bytes depend only on the
/// cohort contents.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<(), DataError> {
    cohort.validate()?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut w = csv_writer(dir, PATIENTS_FILE)?;
    w.write_record(patients_header()).map_err(csv_err(PATIENTS_FILE))?;
    for p in &cohort.patients {
        let mut rec = vec![
            p.patient_id.clone(),
            p.age.to_string(),
            p.sex.to_string(),
            p.race.to_string(),
            p.ethnicity.to_string(),
            p.height_cm.to_string(),
            p.weight_kg.to_string(),
            p.length_of_stay_days.to_string(),
        ];
        rec.extend(
            Comorbidity::ALL
                .iter()
                .map(|c| if p.comorbidities.contains(c) { "1" } else { "0" }.to_string()),
        );
        w.write_record(&rec).map_err(csv_err(PATIENTS_FILE))?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv_writer(dir, ACCEL_FILE)?;
    w.write_record(ACCEL_HEADER).map_err(csv_err(ACCEL_FILE))?;
    for trace in &cohort.traces {
        for s in trace.samples() {
            w.write_record([
                trace.patient_id(),
                &s.t.to_string(),
                &s.x.to_string(),
                &s.y.to_string(),
                &s.z.to_string(),
            ])
            .map_err(csv_err(ACCEL_FILE))?;
        }
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv_writer(dir, CLINICAL_FILE)?;
    w.write_record(EVENT_HEADER).map_err(csv_err(CLINICAL_FILE))?;
    for e in &cohort.clinical {
        let value = match e.value {
            ClinicalValue::Numeric(v) => v.to_string(),
            ClinicalValue::Cognitive(c) => c.to_string(),
        };
        w.write_record([e.patient_id.as_str(), &e.time.to_string(), e.kind.as_str(), &value])
            .map_err(csv_err(CLINICAL_FILE))?;
    }
    w.flush().map_err(io_err(dir))?;

    let mut w = csv_writer(dir, THERAPY_FILE)?;
    w.write_record(EVENT_HEADER).map_err(csv_err(THERAPY_FILE))?;
    for e in &cohort.therapy {
        let value = e.sofa_value.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([e.patient_id.as_str(), &e.time.to_string(), e.kind.as_str(), &value])
            .map_err(csv_err(THERAPY_FILE))?;
    }
    w.flush().map_err(io_err(dir))?;
    Ok(())
}

/// Serializes a complete report as pretty JSON with a trailing newline.
pub fn report_to_json(report: &EvalReport) -> Result<String, DataError> {
    report.check_complete().map_err(DataError::IncompleteReport)?;
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn save_report(report: &EvalReport, path: &Path) -> Result<(), DataError> {
    let json = report_to_json(report)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, json).map_err(io_err(path))
}

pub fn load_report(path: &Path) -> Result<EvalReport, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let report: EvalReport = serde_json::from_str(&text)?;
    report.check_complete().map_err(DataError::IncompleteReport)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let flags = "0,0,0,0,0,0,0,0,1,0,0";
        std::fs::write(
            dir.path().join(PATIENTS_FILE),
            format!(
                "{}\nP1,64,female,white,hispanic,170,80,12,{flags}\nP2,41.5,male,other,non_hispanic,182.5,95,3,{flags}\n",
                patients_header().join(",")
            ),
        )
        .unwrap();
        std::fs::write(
            dir.path().join(ACCEL_FILE),
            "patient_id,t_sec,x_g,y_g,z_g\nP1,0,0,0,1\nP1,0.1,0,0.01,1\nP2,5,0.2,0,0.98\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join(CLINICAL_FILE),
            "patient_id,t_sec,kind,value\nP1,100,heart_rate,72\nP2,50,cognitive_status,delirium\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join(THERAPY_FILE),
            "patient_id,t_sec,kind,value\nP1,3600,vasopressor,\nP2,7200,sofa_observation,9\n",
        )
        .unwrap();
        dir
    }

    #[test]
    fn loads_two_patient_fixture_with_linked_streams() {
        let dir = fixture_dir();
        let cohort = load_cohort(dir.path()).unwrap();
        assert_eq!(cohort.patients.len(), 2);
        assert_eq!(cohort.traces.len(), 2);
        assert_eq!(cohort.patients[0].comorbidities, BTreeSet::from([Comorbidity::Liver]));
        assert_eq!(cohort.traces[0].samples().len(), 2);
        assert_eq!(
            cohort.clinical[1].value,
            ClinicalValue::Cognitive(CognitiveStatus::Delirium)
        );
        assert_eq!(cohort.therapy[1].sofa_value, Some(9));
        cohort.validate().unwrap();

        let out = tempfile::tempdir().unwrap();
        save_cohort(&cohort, out.path()).unwrap();
        assert_eq!(load_cohort(out.path()).unwrap(), cohort);
    }

    #[test]
    fn sofa_out_of_range_names_the_row() {
        let dir = fixture_dir();
        std::fs::write(
            dir.path().join(THERAPY_FILE),
            "patient_id,t_sec,kind,value\nP1,3600,vasopressor,\nP2,7200,sofa_observation,25\n",
        )
        .unwrap();
        match load_cohort(dir.path()).unwrap_err() {
            DataError::Malformed { file, line, field, .. } => {
                assert_eq!(file, THERAPY_FILE);
                assert_eq!(line, 3);
                assert_eq!(field, "value");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_increasing_timestamps_are_rejected() {
        let dir = fixture_dir();
        std::fs::write(
            dir.path().join(ACCEL_FILE),
            "patient_id,t_sec,x_g,y_g,z_g\nP1,0,0,0,1\nP1,0,0,0,1\n",
        )
        .unwrap();
        let err = load_cohort(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 3, ref field, .. } if field == "t_sec"), "{err}");
    }

    #[test]
    fn unknown_patient_and_unknown_kind_are_errors() {
        let dir = fixture_dir();
        std::fs::write(
            dir.path().join(CLINICAL_FILE),
            "patient_id,t_sec,kind,value\nP9,100,heart_rate,72\n",
        )
        .unwrap();
        assert!(matches!(load_cohort(dir.path()).unwrap_err(), DataError::UnknownPatient { .. }));
        std::fs::write(
            dir.path().join(CLINICAL_FILE),
            "patient_id,t_sec,kind,value\nP1,100,resp_rate,12\n",
        )
        .unwrap();
        let err = load_cohort(dir.path()).unwrap_err();
        assert!(err.to_string().contains("resp_rate"), "{err}");
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = fixture_dir();
        std::fs::remove_file(dir.path().join(THERAPY_FILE)).unwrap();
        assert!(matches!(load_cohort(dir.path()).unwrap_err(), DataError::MissingFile(p) if p.ends_with(THERAPY_FILE)));
    }

    #[test]
    fn categorical_value_on_numeric_kind_is_rejected() {
        let event = ClinicalEvent {
            patient_id: "P".into(),
            time: 0.0,
            kind: ClinicalKind::CognitiveStatus,
            value: ClinicalValue::Numeric(1.0),
        };
        assert!(event.validate().is_err());
    }

    #[test]
    fn trace_longer_than_seven_days_is_rejected() {
        let samples = vec![
            AccelSample { t: 0.0, x: 0.0, y: 0.0, z: 1.0 },
            AccelSample { t: MAX_TRACE_SECONDS + 1.0, x: 0.0, y: 0.0, z: 1.0 },
        ];
        assert!(AccelTrace::new("P", samples).is_err());
    }
}
