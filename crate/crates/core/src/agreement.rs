//! Cohen's kappa, interpretation bands and confusion matrices.
//!
//! Confusion matrices are oriented rows = experts (first series),
//! columns = LLM (second series).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    aspect_consensus, llm_label, AnnotationStore, Consensus, HumanSource, LlmLabel, LlmSource,
};
use crate::criteria::{AnswerValue, Aspect, PromptVersion, RemapRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("EMPTY_SERIES: at least one pair is required")]
    EmptySeries,
    #[error("UNKNOWN_LABEL: '{0}' is not in the label set")]
    UnknownLabel(String),
    #[error("OUT_OF_RANGE: kappa {0} is outside [-1, 1]")]
    OutOfRange(f64),
    #[error("NO_CONSENSUS_CELLS: no article has both an expert consensus and an LLM answer for {aspect} ({version})")]
    NoConsensusCells { aspect: Aspect, version: PromptVersion },
    #[error("VERSION_MISSING: no {version} annotations for {aspect}")]
    VersionMissing { aspect: Aspect, version: PromptVersion },
    #[error("SCHEMA_MISMATCH: {0}")]
    SchemaMismatch(String),
}

impl AgreementError {
    pub fn code(&self) -> &'static str {
        match self {
            AgreementError::EmptySeries => "EMPTY_SERIES",
            AgreementError::UnknownLabel(_) => "UNKNOWN_LABEL",
            AgreementError::OutOfRange(_) => "OUT_OF_RANGE",
            AgreementError::NoConsensusCells { .. } => "NO_CONSENSUS_CELLS",
            AgreementError::VersionMissing { .. } => "VERSION_MISSING",
            AgreementError::SchemaMismatch(_) => "SCHEMA_MISMATCH",
        }
    }
}

pub type Result<T, E = AgreementError> = std::result::Result<T, E>;

/// Paired observations over a shared, ordered label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeries {
    pairs: Vec<(AnswerValue, AnswerValue)>,
    label_set: Vec<AnswerValue>,
}

impl LabelSeries {
    pub fn new(pairs: Vec<(AnswerValue, AnswerValue)>, label_set: Vec<AnswerValue>) -> Result<LabelSeries> {
        if pairs.is_empty() {
            return Err(AgreementError::EmptySeries);
        }
        let known: BTreeSet<&AnswerValue> = label_set.iter().collect();
        for (a, b) in &pairs {
            for label in [a, b] {
                if !known.contains(label) {
                    return Err(AgreementError::UnknownLabel(label.to_string()));
                }
            }
        }
        Ok(LabelSeries { pairs, label_set })
    }

    /// Builds a series whose label set is the sorted union of observed labels.
    pub fn from_pairs<S: Into<AnswerValue>>(pairs: impl IntoIterator<Item = (S, S)>) -> Result<LabelSeries> {
        let pairs: Vec<(AnswerValue, AnswerValue)> =
            pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        let labels: BTreeSet<AnswerValue> = pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
        LabelSeries::new(pairs, labels.into_iter().collect())
    }

    pub fn pairs(&self) -> &[(AnswerValue, AnswerValue)] {
        &self.pairs
    }

    pub fn label_set(&self) -> &[AnswerValue] {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn swap(&self) -> LabelSeries {
        LabelSeries {
            pairs: self.pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect(),
            label_set: self.label_set.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<AnswerValue>,
    /// `cells[row][col]`, rows = first series, columns = second series.
    pub cells: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<AnswerValue>, cells: Vec<Vec<u64>>) -> Result<ConfusionMatrix> {
        if cells.len() != labels.len() || cells.iter().any(|r| r.len() != labels.len()) {
            return Err(AgreementError::SchemaMismatch(format!(
                "matrix must be {0}x{0}",
                labels.len()
            )));
        }
        Ok(ConfusionMatrix { labels, cells })
    }

    pub fn from_series(series: &LabelSeries) -> ConfusionMatrix {
        let index: BTreeMap<&AnswerValue, usize> =
            series.label_set.iter().enumerate().map(|(i, l)| (l, i)).collect();
        let k = series.label_set.len();
        let mut cells = vec![vec![0u64; k]; k];
        for (a, b) in &series.pairs {
            cells[index[a]][index[b]] += 1;
        }
        ConfusionMatrix {
            labels: series.label_set.clone(),
            cells,
        }
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.cells.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.labels.len())
            .map(|c| self.cells.iter().map(|r| r[c]).sum())
            .collect()
    }

    pub fn get(&self, row: &str, col: &str) -> Option<u64> {
        let r = self.labels.iter().position(|l| l.as_str() == row)?;
        let c = self.labels.iter().position(|l| l.as_str() == col)?;
        Some(self.cells[r][c])
    }

    pub fn transpose(&self) -> ConfusionMatrix {
        let k = self.labels.len();
        ConfusionMatrix {
            labels: self.labels.clone(),
            cells: (0..k).map(|r| (0..k).map(|c| self.cells[c][r]).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    None,
    Minimal,
    Weak,
    Moderate,
    Strong,
    AlmostPerfect,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::None => "none",
            Band::Minimal => "minimal",
            Band::Weak => "weak",
            Band::Moderate => "moderate",
            Band::Strong => "strong",
            Band::AlmostPerfect => "almost_perfect",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholds are half-open and applied to the unrounded value.
pub fn interpret_kappa(k: f64) -> Result<Band> {
    if !(-1.0..=1.0).contains(&k) {
        return Err(AgreementError::OutOfRange(k));
    }
    Ok(if k < 0.21 {
        Band::None
    } else if k < 0.40 {
        Band::Minimal
    } else if k < 0.60 {
        Band::Weak
    } else if k < 0.80 {
        Band::Moderate
    } else if k <= 0.90 {
        Band::Strong
    } else {
        Band::AlmostPerfect
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: u64,
    /// Cells left out because the LLM gave no final answer.
    pub n_excluded: u64,
    pub p_o: f64,
    pub p_e: f64,
    pub kappa: f64,
    pub band: Band,
    /// Both series constant on the same label, so p_e = 1.
    pub degenerate: bool,
    pub confusion: ConfusionMatrix,
}

pub fn kappa_from_matrix(m: &ConfusionMatrix) -> Result<AgreementReport> {
    let n = m.total();
    if n == 0 {
        return Err(AgreementError::EmptySeries);
    }
    // integer numerators keep values like 0.40 exact
    let agree: u128 = (0..m.labels.len()).map(|i| u128::from(m.cells[i][i])).sum();
    let chance: u128 = m
        .row_sums()
        .iter()
        .zip(m.col_sums())
        .map(|(&r, c)| u128::from(r) * u128::from(c))
        .sum();
    let n2 = u128::from(n) * u128::from(n);
    let p_o = agree as f64 / n as f64;
    let p_e = chance as f64 / n2 as f64;
    let degenerate = chance == n2;
    let kappa = if degenerate {
        tracing::warn!("degenerate marginals: both series constant on one label");
        1.0
    } else {
        let num = (u128::from(n) * agree) as f64 - chance as f64;
        (num / (n2 - chance) as f64).clamp(-1.0, 1.0)
    };
    Ok(AgreementReport {
        n,
        n_excluded: 0,
        p_o,
        p_e,
        kappa,
        band: interpret_kappa(kappa)?,
        degenerate,
        confusion: m.clone(),
    })
}

pub fn cohen_kappa(series: &LabelSeries) -> Result<AgreementReport> {
    if series.is_empty() {
        return Err(AgreementError::EmptySeries);
    }
    kappa_from_matrix(&ConfusionMatrix::from_series(series))
}

/// Block-sums a matrix under a remap rule. Target labels keep the order in
/// which the rule first produces them.
pub fn matrix_collapse(m: &ConfusionMatrix, rule: &RemapRule) -> Result<ConfusionMatrix> {
    let mut targets: Vec<AnswerValue> = Vec::new();
    for entry in &rule.mapping {
        if !targets.contains(&entry.to) {
            targets.push(entry.to.clone());
        }
    }
    let position = |label: &AnswerValue| -> Result<usize> {
        let entry = rule
            .mapping
            .iter()
            .find(|e| &e.from == label)
            .ok_or_else(|| AgreementError::SchemaMismatch(format!("'{label}' is not covered by the {} rule", rule.criterion_id)))?;
        Ok(targets.iter().position(|t| t == &entry.to).expect("target collected above"))
    };
    let map: Vec<usize> = m.labels.iter().map(position).collect::<Result<_>>()?;
    let mut cells = vec![vec![0u64; targets.len()]; targets.len()];
    for (r, row) in m.cells.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            cells[map[r]][map[c]] += count;
        }
    }
    Ok(ConfusionMatrix { labels: targets, cells })
}

/// Where human and LLM labels are taken from for a comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewOptions {
    #[serde(default)]
    pub human: HumanSource,
    #[serde(default)]
    pub llm: LlmSource,
}

/// The series of (expert consensus, LLM final answer) for an aspect, plus the
/// number of consensus cells dropped for lack of an LLM final answer.
pub fn consensus_series(
    store: &AnnotationStore,
    aspect: Aspect,
    version: PromptVersion,
    options: ViewOptions,
) -> (Vec<(String, AnswerValue, AnswerValue)>, u64) {
    let articles = store.articles_for(aspect.criterion());
    let mut rows = Vec::new();
    let mut excluded = 0;
    for article in articles {
        let Ok(Consensus::Agreed(expert)) = aspect_consensus(store, article, aspect, version, options.human) else {
            continue;
        };
        match llm_label(store, article, aspect, version, options.llm) {
            LlmLabel::Final(llm) => rows.push((article.to_string(), expert, llm)),
            LlmLabel::NoFinal => excluded += 1,
            LlmLabel::Missing => {}
        }
    }
    (rows, excluded)
}

/// Kappa between expert consensus and the LLM, over the articles where the
/// two experts agree and the LLM gave a final answer.
pub fn consensus_vs_llm(
    store: &AnnotationStore,
    aspect: Aspect,
    version: PromptVersion,
    options: ViewOptions,
) -> Result<AgreementReport> {
    let (rows, excluded) = consensus_series(store, aspect, version, options);
    if rows.is_empty() {
        return Err(AgreementError::NoConsensusCells { aspect, version });
    }
    let labels = aspect.schema(store.registry(), version).labels();
    let pairs = rows.into_iter().map(|(_, e, l)| (e, l)).collect();
    let series = LabelSeries::new(pairs, labels).map_err(|e| AgreementError::SchemaMismatch(e.to_string()))?;
    let mut report = cohen_kappa(&series)?;
    report.n_excluded = excluded;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementGain {
    pub aspect: Aspect,
    pub initial: AgreementReport,
    pub refined: AgreementReport,
    pub delta: f64,
}

pub fn refinement_gain(store: &AnnotationStore, aspect: Aspect, options: ViewOptions) -> Result<RefinementGain> {
    let has = |version: PromptVersion| {
        store.annotations().iter().any(|a| {
            a.criterion_id == aspect.criterion()
                && a.prompt_version == version
                && store.kind_of(a) == Some(crate::annotations::AnnotatorKind::Llm)
        })
    };
    if !has(PromptVersion::Initial) {
        return Err(AgreementError::VersionMissing { aspect, version: PromptVersion::Initial });
    }
    if options.llm == LlmSource::Runs && !has(PromptVersion::Refined) {
        return Err(AgreementError::VersionMissing { aspect, version: PromptVersion::Refined });
    }
    let initial = consensus_vs_llm(store, aspect, PromptVersion::Initial, options)?;
    let refined = consensus_vs_llm(store, aspect, PromptVersion::Refined, options)?;
    Ok(RefinementGain {
        aspect,
        delta: refined.kappa - initial.kappa,
        initial,
        refined,
    })
}

/// Fixed-width rendering of one report with its confusion matrix.
pub fn render_report(title: &str, report: &AgreementReport) -> String {
    let mut out = format!("{title}\n");
    out.push_str(&format!(
        "n={}  excluded={}  p_o={:.4}  p_e={:.4}  kappa={:.4}  band={}{}\n",
        report.n,
        report.n_excluded,
        report.p_o,
        report.p_e,
        report.kappa,
        report.band,
        if report.degenerate { "  (degenerate marginals)" } else { "" }
    ));
    out.push_str(&render_matrix(&report.confusion));
    out
}

pub fn render_matrix(m: &ConfusionMatrix) -> String {
    let corner = "expert \\ LLM";
    let head = m
        .labels
        .iter()
        .map(|l| l.as_str().len())
        .chain([corner.len()])
        .max()
        .unwrap_or(0);
    let width = m
        .labels
        .iter()
        .map(|l| l.as_str().len())
        .chain(m.cells.iter().flatten().map(|c| c.to_string().len()))
        .max()
        .unwrap_or(1);
    let mut out = format!("{corner:<head$}");
    for label in &m.labels {
        out.push_str(&format!("  {:>width$}", label.as_str()));
    }
    out.push('\n');
    for (label, row) in m.labels.iter().zip(&m.cells) {
        out.push_str(&format!("{:<head$}", label.as_str()));
        for count in row {
            out.push_str(&format!("  {count:>width$}"));
        }
        out.push('\n');
    }
    out
}
