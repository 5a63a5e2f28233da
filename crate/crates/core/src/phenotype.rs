//! Rule-based acuity phenotyping of assessment windows.
//!
//! A window ending at assessment time `a` is unstable when a vasopressor,
//! mechanical ventilation, or CRRT event falls in `[a − 4h, a)`, or when at
//! least ten transfusion units were given in `[a − 24h, a]`. Patients who died
//! or were discharged at or before `a` are excluded regardless of therapy.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::{AcuityLabel, TherapyEvent, TherapyKind};

pub const HOUR: f64 = 3600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Vasopressor,
    Ventilation,
    Crrt,
    MassiveTransfusion,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Vasopressor => "vasopressor",
            Trigger::Ventilation => "ventilation",
            Trigger::Crrt => "crrt",
            Trigger::MassiveTransfusion => "massive_transfusion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLabel {
    pub assessment_time: f64,
    pub label: AcuityLabel,
    pub triggers: BTreeSet<Trigger>,
    pub sofa: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeRules {
    /// Look-back for vasopressor / ventilation / CRRT, half-open at `a`.
    pub therapy_window_secs: f64,
    /// Look-back for counting transfusion units, closed at `a`.
    pub transfusion_lookback_secs: f64,
    pub massive_transfusion_units: usize,
    /// Look-back for the latest SOFA observation, closed at `a`.
    pub sofa_lookback_secs: f64,
}

impl Default for PhenotypeRules {
    fn default() -> Self {
        Self {
            therapy_window_secs: 4.0 * HOUR,
            transfusion_lookback_secs: 24.0 * HOUR,
            massive_transfusion_units: 10,
            sofa_lookback_secs: 24.0 * HOUR,
        }
    }
}

impl PhenotypeRules {
    pub fn label_window(&self, events: &[TherapyEvent], assessment_time: f64) -> WindowLabel {
        let a = assessment_time;
        let sofa = self.sofa_at(events, a);
        let exit = events
            .iter()
            .filter(|e| matches!(e.kind, TherapyKind::Death | TherapyKind::Discharge) && e.time <= a)
            .min_by(|x, y| {
                x.time
                    .total_cmp(&y.time)
                    .then_with(|| (x.kind != TherapyKind::Death).cmp(&(y.kind != TherapyKind::Death)))
            });
        if let Some(exit) = exit {
            let label = if exit.kind == TherapyKind::Death {
                AcuityLabel::ExcludedDead
            } else {
                AcuityLabel::ExcludedDischarged
            };
            return WindowLabel {
                assessment_time: a,
                label,
                triggers: BTreeSet::new(),
                sofa,
            };
        }

        let window_start = a - self.therapy_window_secs;
        let transfusion_start = a - self.transfusion_lookback_secs;
        let mut triggers = BTreeSet::new();
        let mut units = 0usize;
        for e in events {
            let in_window = e.time >= window_start && e.time < a;
            match e.kind {
                TherapyKind::Vasopressor if in_window => {
                    triggers.insert(Trigger::Vasopressor);
                }
                TherapyKind::MechanicalVentilation if in_window => {
                    triggers.insert(Trigger::Ventilation);
                }
                TherapyKind::Crrt if in_window => {
                    triggers.insert(Trigger::Crrt);
                }
                TherapyKind::TransfusionUnit if e.time >= transfusion_start && e.time <= a => units += 1,
                _ => {}
            }
        }
        if units >= self.massive_transfusion_units {
            triggers.insert(Trigger::MassiveTransfusion);
        }
        let label = if triggers.is_empty() {
            AcuityLabel::Stable
        } else {
            AcuityLabel::Unstable
        };
        WindowLabel {
            assessment_time: a,
            label,
            triggers,
            sofa,
        }
    }

    /// Latest SOFA observation in `[a − lookback, a]`; later list entries win
    /// ties on time.
    pub fn sofa_at(&self, events: &[TherapyEvent], assessment_time: f64) -> Option<u8> {
        let start = assessment_time - self.sofa_lookback_secs;
        events
            .iter()
            .filter(|e| e.kind == TherapyKind::SofaObservation && e.time >= start && e.time <= assessment_time)
            .max_by(|x, y| x.time.total_cmp(&y.time))
            .and_then(|e| e.sofa_value)
    }
}

/// Labels one window with the default rules.
pub fn label_window(events: &[TherapyEvent], assessment_time: f64) -> WindowLabel {
    PhenotypeRules::default().label_window(events, assessment_time)
}

pub fn sofa_at(events: &[TherapyEvent], assessment_time: f64) -> Option<u8> {
    PhenotypeRules::default().sofa_at(events, assessment_time)
}

/// Assessment times `period, 2·period, …` up to and including `horizon`.
pub fn assessment_times(horizon_secs: f64, period_secs: f64) -> Vec<f64> {
    if period_secs <= 0.0 || horizon_secs < period_secs {
        return Vec::new();
    }
    let n = (horizon_secs / period_secs + 1e-9).floor() as usize;
    (1..=n).map(|k| k as f64 * period_secs).collect()
}

/// One row of the label audit file.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRecord {
    pub patient_id: String,
    pub window: WindowLabel,
}

pub const LABEL_AUDIT_HEADER: [&str; 5] = ["patient_id", "assessment_time", "label", "triggers", "sofa"];

/// Writes the audit CSV; triggers are `;`-joined.
pub fn write_label_audit<W: Write>(records: &[LabelRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABEL_AUDIT_HEADER)?;
    for r in records {
        let triggers: Vec<&str> = r.window.triggers.iter().map(|t| t.as_str()).collect();
        w.write_record([
            r.patient_id.as_str(),
            &r.window.assessment_time.to_string(),
            r.window.label.as_str(),
            &triggers.join(";"),
            &r.window.sofa.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_label_audit<R: std::io::Read>(input: R) -> Result<Vec<LabelRecord>, String> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(LABEL_AUDIT_HEADER.iter().copied()) {
        return Err(format!("label audit header mismatch, expected `{}`", LABEL_AUDIT_HEADER.join(",")));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = i + 2;
        let bad = |what: &str| format!("labels line {line}: bad {what}");
        let triggers = rec[3]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| match s {
                "vasopressor" => Ok(Trigger::Vasopressor),
                "ventilation" => Ok(Trigger::Ventilation),
                "crrt" => Ok(Trigger::Crrt),
                "massive_transfusion" => Ok(Trigger::MassiveTransfusion),
                _ => Err(bad("trigger")),
            })
            .collect::<Result<BTreeSet<_>, _>>()?;
        out.push(LabelRecord {
            patient_id: rec[0].to_string(),
            window: WindowLabel {
                assessment_time: rec[1].parse().map_err(|_| bad("assessment_time"))?,
                label: rec[2].parse().map_err(|_| bad("label"))?,
                triggers,
                sofa: match &rec[4] {
                    "" => None,
                    s => Some(s.parse().map_err(|_| bad("sofa"))?),
                },
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: f64, kind: TherapyKind) -> TherapyEvent {
        TherapyEvent::new("P", t, kind)
    }

    const A: f64 = 48.0 * HOUR;

    #[test]
    fn vasopressor_within_window_is_unstable() {
        let w = label_window(&[ev(A - HOUR, TherapyKind::Vasopressor)], A);
        assert_eq!(w.label, AcuityLabel::Unstable);
        assert_eq!(w.triggers, BTreeSet::from([Trigger::Vasopressor]));
    }

    #[test]
    fn ten_units_in_prior_day_is_massive_transfusion() {
        let events: Vec<_> = (0..10)
            .map(|i| ev(A - 23.0 * HOUR + i as f64 * HOUR, TherapyKind::TransfusionUnit))
            .collect();
        assert!(events.iter().all(|e| e.time < A - 4.0 * HOUR));
        let w = label_window(&events, A);
        assert_eq!(w.label, AcuityLabel::Unstable);
        assert_eq!(w.triggers, BTreeSet::from([Trigger::MassiveTransfusion]));
        assert_eq!(label_window(&events[..9], A).label, AcuityLabel::Stable);
    }

    #[test]
    fn no_events_is_stable() {
        let w = label_window(&[], A);
        assert_eq!(w.label, AcuityLabel::Stable);
        assert!(w.triggers.is_empty());
        assert_eq!(w.sofa, None);
    }

    #[test]
    fn death_before_assessment_excludes_even_with_therapy() {
        let events = [ev(A - HOUR, TherapyKind::Vasopressor), ev(A - 600.0, TherapyKind::Death)];
        let w = label_window(&events, A);
        assert_eq!(w.label, AcuityLabel::ExcludedDead);
        assert!(w.triggers.is_empty());
        let w = label_window(&[ev(A, TherapyKind::Discharge)], A);
        assert_eq!(w.label, AcuityLabel::ExcludedDischarged);
    }

    #[test]
    fn therapy_window_is_half_open() {
        assert_eq!(label_window(&[ev(A, TherapyKind::Crrt)], A).label, AcuityLabel::Stable);
        assert_eq!(
            label_window(&[ev(A - 4.0 * HOUR, TherapyKind::Crrt)], A).label,
            AcuityLabel::Unstable
        );
    }

    #[test]
    fn sofa_latest_wins_and_is_closed_at_assessment() {
        let events = [
            TherapyEvent::sofa("P", A - 6.0 * HOUR, 7),
            TherapyEvent::sofa("P", A - HOUR, 9),
        ];
        assert_eq!(sofa_at(&events, A), Some(9));
        assert_eq!(sofa_at(&[TherapyEvent::sofa("P", A - 25.0 * HOUR, 3)], A), None);
        assert_eq!(sofa_at(&[TherapyEvent::sofa("P", A, 4)], A), Some(4));
    }

    #[test]
    fn assessment_grid() {
        assert_eq!(assessment_times(13.0 * HOUR, 4.0 * HOUR), vec![4.0 * HOUR, 8.0 * HOUR, 12.0 * HOUR]);
        assert!(assessment_times(HOUR, 4.0 * HOUR).is_empty());
        assert_eq!(assessment_times(7.0 * 24.0 * HOUR, 4.0 * HOUR).len(), 42);
    }

    #[test]
    fn audit_round_trip() {
        let records = vec![
            LabelRecord {
                patient_id: "P1".into(),
                window: label_window(&[ev(A - HOUR, TherapyKind::Vasopressor), ev(A - HOUR, TherapyKind::Crrt)], A),
            },
            LabelRecord {
                patient_id: "P2".into(),
                window: label_window(&[TherapyEvent::sofa("P2", A - HOUR, 11)], A),
            },
        ];
        let mut buf = Vec::new();
        write_label_audit(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("vasopressor;crrt"));
        assert_eq!(read_label_audit(buf.as_slice()).unwrap(), records);
    }
}
