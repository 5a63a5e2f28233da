//! Patient-grouped holdout and k-fold assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::seed::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Development { fold: usize },
    Holdout,
}

/// Per-patient holdout and fold assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub dev_fraction: f64,
    pub folds: usize,
    pub stratified: bool,
    assignments: BTreeMap<String, Assignment>,
}

/// One patient as seen by the splitter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientStratum {
    pub patient_id: String,
    pub ever_unstable: bool,
}

/// Splits patients into development and holdout sets, then deals development
/// patients into `folds` folds.
///
/// With `stratify`, each ever-unstable stratum is shuffled separately, the
/// development count is apportioned across strata by largest remainder, and
/// fold dealing continues round-robin across strata so fold sizes differ by at
/// most one patient.
pub fn make_split(
    patients: &[PatientStratum],
    seed: u64,
    dev_fraction: f64,
    folds: usize,
    stratify: bool,
) -> Result<SplitPlan, EvalError> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(EvalError::InvalidSplit(format!("dev_fraction {dev_fraction} outside (0, 1)")));
    }
    if folds < 2 {
        return Err(EvalError::InvalidSplit(format!("need at least 2 folds, got {folds}")));
    }
    let unique: BTreeSet<&str> = patients.iter().map(|p| p.patient_id.as_str()).collect();
    if unique.len() != patients.len() {
        return Err(EvalError::InvalidSplit("duplicate patient_id".into()));
    }

    let mut sorted: Vec<&PatientStratum> = patients.iter().collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let strata: Vec<Vec<&PatientStratum>> = if stratify {
        let (unstable, stable): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|p| p.ever_unstable);
        for (name, s) in [("ever-unstable", &unstable), ("never-unstable", &stable)] {
            if s.len() < folds {
                return Err(EvalError::InvalidSplit(format!(
                    "{name} stratum has {} patients, need at least {folds}",
                    s.len()
                )));
            }
        }
        vec![unstable, stable]
    } else {
        vec![sorted]
    };

    let n = patients.len();
    let n_dev = (dev_fraction * n as f64).round() as usize;
    if n_dev < folds || n_dev >= n {
        return Err(EvalError::InvalidSplit(format!(
            "{n} patients give {n_dev} development patients; need between {folds} and {}",
            n.saturating_sub(1)
        )));
    }

    let quotas = apportion(&strata.iter().map(Vec::len).collect::<Vec<_>>(), n_dev);
    let mut rng = rng_for(seed, "split");
    let mut assignments = BTreeMap::new();
    let mut dealt = 0usize;
    for (mut stratum, quota) in strata.into_iter().zip(quotas) {
        stratum.shuffle(&mut rng);
        for (i, p) in stratum.into_iter().enumerate() {
            let a = if i < quota {
                let fold = dealt % folds;
                dealt += 1;
                Assignment::Development { fold }
            } else {
                Assignment::Holdout
            };
            assignments.insert(p.patient_id.clone(), a);
        }
    }
    Ok(SplitPlan {
        seed,
        dev_fraction,
        folds,
        stratified: stratify,
        assignments,
    })
}

/// Largest-remainder apportionment of `total` across groups proportional to
/// their sizes; ties go to the earlier group.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut remainders: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| (s * total % n, i)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - quotas.iter().sum::<usize>();
    for &(_, i) in remainders.iter().take(short) {
        quotas[i] += 1;
    }
    quotas
}

impl SplitPlan {
    pub fn assignment(&self, patient_id: &str) -> Option<Assignment> {
        self.assignments.get(patient_id).copied()
    }

    pub fn assignments(&self) -> impl Iterator<Item = (&str, Assignment)> {
        self.assignments.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn dev_patients(&self) -> Vec<&str> {
        self.assignments()
            .filter(|(_, a)| matches!(a, Assignment::Development { .. }))
            .map(|(p, _)| p)
            .collect()
    }

    pub fn holdout_patients(&self) -> Vec<&str> {
        self.assignments()
            .filter(|(_, a)| *a == Assignment::Holdout)
            .map(|(p, _)| p)
            .collect()
    }

    pub fn fold_patients(&self, fold: usize) -> Vec<&str> {
        self.assignments()
            .filter(|(_, a)| *a == Assignment::Development { fold })
            .map(|(p, _)| p)
            .collect()
    }

    /// Routes items to the development set (keeping fold indices) or the
    /// holdout by their patient.
    pub fn partition<T>(
        &self,
        items: Vec<T>,
        patient_of: impl Fn(&T) -> &str,
    ) -> Result<(DevSet<T>, Holdout<T>), EvalError> {
        let mut dev = Vec::new();
        let mut dev_folds = Vec::new();
        let mut holdout = Vec::new();
        for item in items {
            match self.assignment(patient_of(&item)) {
                Some(Assignment::Development { fold }) => {
                    dev.push(item);
                    dev_folds.push(fold);
                }
                Some(Assignment::Holdout) => holdout.push(item),
                None => return Err(EvalError::UnknownPatient(patient_of(&item).to_string())),
            }
        }
        Ok((
            DevSet {
                items: dev,
                folds: dev_folds,
                n_folds: self.folds,
            },
            Holdout::new(holdout),
        ))
    }
}

/// Panics unless the three patient sets are pairwise disjoint.
pub fn assert_no_leakage<'a>(
    train: impl IntoIterator<Item = &'a str>,
    validation: impl IntoIterator<Item = &'a str>,
    test: impl IntoIterator<Item = &'a str>,
) {
    let train: BTreeSet<&str> = train.into_iter().collect();
    let validation: BTreeSet<&str> = validation.into_iter().collect();
    let test: BTreeSet<&str> = test.into_iter().collect();
    let overlap = |a: &BTreeSet<&str>, b: &BTreeSet<&str>| a.intersection(b).next().map(|s| s.to_string());
    for (name, hit) in [
        ("train/validation", overlap(&train, &validation)),
        ("train/test", overlap(&train, &test)),
        ("validation/test", overlap(&validation, &test)),
    ] {
        if let Some(p) = hit {
            panic!("patient leakage across {name}: {p}");
        }
    }
}

/// Development-split data. Only this type is accepted by scale fitting, so
/// holdout items cannot reach it by accident.
#[derive(Clone, Debug, PartialEq)]
pub struct DevSet<T> {
    items: Vec<T>,
    folds: Vec<usize>,
    n_folds: usize,
}

impl<T> DevSet<T> {
    /// Declares a caller-assembled collection as development data, all in a
    /// single fold.
    pub fn whole(items: Vec<T>) -> Self {
        let folds = vec![0; items.len()];
        Self { items, folds, n_folds: 1 }
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn fold_of(&self, index: usize) -> usize {
        self.folds[index]
    }

    /// `(train, validation)` for one fold.
    pub fn fold(&self, fold: usize) -> (Vec<&T>, Vec<&T>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (item, &f) in self.items.iter().zip(&self.folds) {
            if f == fold {
                val.push(item);
            } else {
                train.push(item);
            }
        }
        (train, val)
    }

    pub fn map<U>(self, f: impl FnMut(T) -> U) -> DevSet<U> {
        DevSet {
            items: self.items.into_iter().map(f).collect(),
            folds: self.folds,
            n_folds: self.n_folds,
        }
    }

    pub fn try_map<U, E>(self, f: impl FnMut(T) -> Result<U, E>) -> Result<DevSet<U>, E> {
        Ok(DevSet {
            items: self.items.into_iter().map(f).collect::<Result<_, _>>()?,
            folds: self.folds,
            n_folds: self.n_folds,
        })
    }

    pub fn map_ref<U>(&self, f: impl FnMut(&T) -> U) -> DevSet<U> {
        DevSet {
            items: self.items.iter().map(f).collect(),
            folds: self.folds.clone(),
            n_folds: self.n_folds,
        }
    }
}

/// Holdout data with an access counter, so a protocol can prove the test set
/// was opened only once.
#[derive(Debug)]
pub struct Holdout<T> {
    items: Vec<T>,
    opened: AtomicUsize,
}

impl<T: Clone> Clone for Holdout<T> {
    fn clone(&self) -> Self {
        Self {
            items: self.items.clone(),
            opened: AtomicUsize::new(self.opened.load(Ordering::SeqCst)),
        }
    }
}

impl<T> Holdout<T> {
    pub fn new(items: Vec<T>) -> Self {
        Self {
            items,
            opened: AtomicUsize::new(0),
        }
    }

    /// Reads the holdout items, counting the access.
    pub fn open(&self) -> &[T] {
        self.opened.fetch_add(1, Ordering::SeqCst);
        &self.items
    }

    pub fn times_opened(&self) -> usize {
        self.opened.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Transforms items without counting as an access, for applying
    /// development-fit preprocessing.
    pub fn map<U>(self, f: impl FnMut(T) -> U) -> Holdout<U> {
        Holdout {
            items: self.items.into_iter().map(f).collect(),
            opened: self.opened,
        }
    }

    pub fn try_map<U, E>(self, f: impl FnMut(T) -> Result<U, E>) -> Result<Holdout<U>, E> {
        Ok(Holdout {
            items: self.items.into_iter().map(f).collect::<Result<_, _>>()?,
            opened: self.opened,
        })
    }

    pub fn map_ref<U>(&self, f: impl FnMut(&T) -> U) -> Holdout<U> {
        Holdout::new(self.items.iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cohort(n: usize, unstable_every: usize) -> Vec<PatientStratum> {
        (0..n)
            .map(|i| PatientStratum {
                patient_id: format!("P{i:03}"),
                ever_unstable: i % unstable_every == 0,
            })
            .collect()
    }

    #[test]
    fn eighty_six_patients_split_sixty_twenty_six() {
        let plan = make_split(&cohort(86, 3), 11, 0.7, 3, true).unwrap();
        assert_eq!(plan.dev_patients().len(), 60);
        assert_eq!(plan.holdout_patients().len(), 26);
        let sizes: Vec<usize> = (0..3).map(|f| plan.fold_patients(f).len()).collect();
        assert_eq!(sizes, vec![20, 20, 20]);
    }

    #[test]
    fn same_seed_same_plan_and_input_order_is_irrelevant() {
        let mut patients = cohort(40, 4);
        let a = make_split(&patients, 5, 0.7, 3, true).unwrap();
        patients.reverse();
        assert_eq!(a, make_split(&patients, 5, 0.7, 3, true).unwrap());
        assert_ne!(a, make_split(&patients, 6, 0.7, 3, true).unwrap());
    }

    #[test]
    fn stratification_needs_k_per_stratum() {
        let mut patients = cohort(20, 100);
        patients[1].ever_unstable = true;
        assert!(matches!(make_split(&patients, 1, 0.7, 3, true), Err(EvalError::InvalidSplit(_))));
        assert!(make_split(&patients, 1, 0.7, 3, false).is_ok());
    }

    #[test]
    fn partition_keeps_samples_with_their_patient() {
        let plan = make_split(&cohort(12, 2), 3, 0.7, 3, true).unwrap();
        let samples: Vec<(String, usize)> = (0..12).flat_map(|p| (0..4).map(move |w| (format!("P{p:03}"), w))).collect();
        let (dev, holdout) = plan.partition(samples, |s| &s.0).unwrap();
        assert_eq!(dev.len() + holdout.len(), 48);
        for (i, s) in dev.items().iter().enumerate() {
            assert_eq!(plan.assignment(&s.0), Some(Assignment::Development { fold: dev.fold_of(i) }));
        }
        assert_eq!(holdout.times_opened(), 0);
        assert!(holdout.open().iter().all(|s| plan.assignment(&s.0) == Some(Assignment::Holdout)));
        assert_eq!(holdout.times_opened(), 1);
        let (train, val) = dev.fold(0);
        assert_no_leakage(
            train.iter().map(|s| s.0.as_str()),
            val.iter().map(|s| s.0.as_str()),
            plan.holdout_patients(),
        );
    }

    #[test]
    #[should_panic(expected = "leakage")]
    fn leakage_assertion_fires() {
        assert_no_leakage(["a", "b"], ["c"], ["b"]);
    }

    #[test]
    fn apportion_sums_to_total() {
        assert_eq!(apportion(&[29, 57], 60), vec![20, 40]);
        assert_eq!(apportion(&[1, 1, 1], 2), vec![1, 1, 0]);
    }

    proptest! {
        #[test]
        fn folds_balanced_and_partitions_disjoint(
            n in 8usize..120,
            every in 2usize..5,
            seed in any::<u64>(),
            k in 2usize..5,
            stratify in any::<bool>(),
        ) {
            let patients = cohort(n, every);
            if let Ok(plan) = make_split(&patients, seed, 0.7, k, stratify) {
                let sizes: Vec<usize> = (0..k).map(|f| plan.fold_patients(f).len()).collect();
                let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
                prop_assert_eq!(plan.dev_patients().len() + plan.holdout_patients().len(), n);
                prop_assert_eq!(sizes.iter().sum::<usize>(), plan.dev_patients().len());
            }
        }
    }
}
