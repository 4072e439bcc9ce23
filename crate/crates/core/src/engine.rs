//! Suspiciousness scoring and ranking.
//!
//! Formulas are plain functions of [`SpectrumCounts`] held in a
//! [`FormulaRegistry`]; `ochiai` and `tarantula` are registered by default.
//! Other localization families can plug in through [`FaultLocalizer`].

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    compute_spectrum, CoverageMatrix, ModelError, Spectrum, SpectrumCounts, SuspiciousLocation,
    TestRecord,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("no failing tests: every suspiciousness score would be zero")]
    NoFailingTests,
    #[error("unknown formula {0:?}")]
    UnknownFormula(String),
    #[error("formula {0:?} is already registered")]
    DuplicateFormulaName(String),
    #[error("invalid formula name {0:?}: expected a lowercase token")]
    InvalidFormulaName(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Name of a registered formula, a lowercase token such as `ochiai`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FormulaId(String);

impl FormulaId {
    pub fn new(name: impl Into<String>) -> Result<Self, EngineError> {
        let name = name.into();
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
        if valid {
            Ok(FormulaId(name))
        } else {
            Err(EngineError::InvalidFormulaName(name))
        }
    }

    pub fn ochiai() -> Self {
        FormulaId("ochiai".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FormulaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type FormulaFn = Arc<dyn Fn(&SpectrumCounts) -> f64 + Send + Sync>;

/// ef / sqrt((ef + nf) * (ef + ep)), or 0 when ef or the denominator is 0.
///
/// Evaluated as sqrt(ef² / denominator) over exact integers, so spectra whose
/// scores are equal as real numbers get bit-identical scores and rank as
/// ties.
pub fn ochiai(c: &SpectrumCounts) -> f64 {
    let ef = u64::from(c.ef);
    let denom = (ef + u64::from(c.nf)) * (ef + u64::from(c.ep));
    if ef == 0 || denom == 0 {
        return 0.0;
    }
    ((ef * ef) as f64 / denom as f64).sqrt()
}

/// (ef/F) / (ef/F + ep/P) with F = ef + nf and P = ep + np, evaluated as
/// the single fraction ef·P / (ef·P + ep·F).
pub fn tarantula(c: &SpectrumCounts) -> f64 {
    let failing = u64::from(c.ef) + u64::from(c.nf);
    if failing == 0 || c.ef == 0 {
        return 0.0;
    }
    if c.ep == 0 {
        return 1.0;
    }
    // ep > 0 implies P > 0
    let passing = u64::from(c.ep) + u64::from(c.np);
    let num = u128::from(c.ef) * u128::from(passing);
    let other = u128::from(c.ep) * u128::from(failing);
    num as f64 / (num + other) as f64
}

#[derive(Clone)]
pub struct FormulaRegistry {
    formulas: BTreeMap<String, FormulaFn>,
}

impl fmt::Debug for FormulaRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.formulas.keys()).finish()
    }
}

impl Default for FormulaRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl FormulaRegistry {
    pub fn empty() -> Self {
        FormulaRegistry {
            formulas: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.formulas.insert("ochiai".into(), Arc::new(ochiai));
        r.formulas.insert("tarantula".into(), Arc::new(tarantula));
        r
    }

    pub fn register<F>(&mut self, name: &FormulaId, formula: F) -> Result<&mut Self, EngineError>
    where
        F: Fn(&SpectrumCounts) -> f64 + Send + Sync + 'static,
    {
        if self.formulas.contains_key(name.as_str()) {
            return Err(EngineError::DuplicateFormulaName(name.0.clone()));
        }
        self.formulas.insert(name.0.clone(), Arc::new(formula));
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Result<FormulaFn, EngineError> {
        self.formulas
            .get(name)
            .cloned()
            .ok_or_else(|| EngineError::UnknownFormula(name.to_string()))
    }

    pub fn list_formulas(&self) -> Vec<&str> {
        self.formulas.keys().map(String::as_str).collect()
    }
}

/// Rank order: score descending, then file ascending, then line ascending.
pub fn rank_order(a: &SuspiciousLocation, b: &SuspiciousLocation) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.location.cmp(&b.location))
}

/// Scores every line of a spectrum and keeps those strictly above
/// `threshold`, in rank order.
pub fn rank_spectrum(
    spectrum: &Spectrum,
    formula: &dyn Fn(&SpectrumCounts) -> f64,
    threshold: f64,
) -> Vec<SuspiciousLocation> {
    let mut ranked: Vec<SuspiciousLocation> = spectrum
        .iter()
        .filter_map(|(loc, counts)| {
            let score = formula(counts);
            (score > threshold).then(|| SuspiciousLocation {
                location: loc.clone(),
                score,
                counts: *counts,
            })
        })
        .collect();
    ranked.sort_by(rank_order);
    ranked
}

/// Builds the spectrum and ranks covered lines with the named formula.
pub fn localize(
    matrix: &CoverageMatrix,
    records: &[TestRecord],
    formula: &FormulaId,
    threshold: f64,
    registry: &FormulaRegistry,
) -> Result<Vec<SuspiciousLocation>, EngineError> {
    let f = registry.get(formula.as_str())?;
    SpectrumLocalizer::new(f, threshold).localize(matrix, records)
}

/// A fault-localization technique producing ranked locations from a run.
pub trait FaultLocalizer {
    fn localize(
        &self,
        matrix: &CoverageMatrix,
        records: &[TestRecord],
    ) -> Result<Vec<SuspiciousLocation>, EngineError>;
}

pub struct SpectrumLocalizer {
    formula: FormulaFn,
    threshold: f64,
}

impl SpectrumLocalizer {
    pub fn new(formula: FormulaFn, threshold: f64) -> Self {
        SpectrumLocalizer { formula, threshold }
    }
}

impl FaultLocalizer for SpectrumLocalizer {
    fn localize(
        &self,
        matrix: &CoverageMatrix,
        records: &[TestRecord],
    ) -> Result<Vec<SuspiciousLocation>, EngineError> {
        if !records.iter().any(|r| r.outcome.is_failing()) {
            return Err(EngineError::NoFailingTests);
        }
        let spectrum = compute_spectrum(matrix, records)?;
        Ok(rank_spectrum(&spectrum, self.formula.as_ref(), self.threshold))
    }
}
