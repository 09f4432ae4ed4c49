//! Journalism criteria, their answer schemas and prompt versions.
//!
//! The registry is loaded from a JSON document (a default one ships with the
//! crate) and is immutable afterwards. Stored answers always use the canonical
//! option label; localized labels only matter when rendering prompts and
//! parsing model output.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_CONFIG: &str = include_str!("../data/criteria.json");

/// Languages every criterion must carry question text for.
pub const REQUIRED_LANGUAGES: [&str; 2] = ["it", "en"];

/// Identification label used when an annotator found no negative targeting.
pub const NO_ISSUE: &str = "None";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriteriaError {
    #[error("REGISTRY_INVALID: {0}")]
    RegistryInvalid(String),
    #[error("LANGUAGE_MISSING: no '{language}' text for {criterion} ({version})")]
    LanguageMissing {
        criterion: CriterionId,
        version: PromptVersion,
        language: String,
    },
    #[error("UNKNOWN_RANK: '{0}' is not an option of the source schema")]
    UnknownRank(String),
    #[error("SCHEMA_MISMATCH: {0}")]
    SchemaMismatch(String),
}

pub type Result<T, E = CriteriaError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CriterionId {
    HeadAcc,
    LedePres,
    NegTarg,
    ArtBias,
    SensLang,
    Type,
}

impl CriterionId {
    pub const ALL: [CriterionId; 6] = [
        CriterionId::HeadAcc,
        CriterionId::LedePres,
        CriterionId::NegTarg,
        CriterionId::ArtBias,
        CriterionId::SensLang,
        CriterionId::Type,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionId::HeadAcc => "HeadAcc",
            CriterionId::LedePres => "LedePres",
            CriterionId::NegTarg => "NegTarg",
            CriterionId::ArtBias => "ArtBias",
            CriterionId::SensLang => "SensLang",
            CriterionId::Type => "Type",
        }
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriterionId {
    type Err = CriteriaError;

    fn from_str(s: &str) -> Result<Self> {
        CriterionId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CriteriaError::SchemaMismatch(format!("unknown criterion '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVersion {
    Initial,
    Refined,
}

impl PromptVersion {
    pub const ALL: [PromptVersion; 2] = [PromptVersion::Initial, PromptVersion::Refined];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVersion::Initial => "initial",
            PromptVersion::Refined => "refined",
        }
    }
}

impl fmt::Display for PromptVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVersion {
    type Err = CriteriaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "initial" => Ok(PromptVersion::Initial),
            "refined" => Ok(PromptVersion::Refined),
            other => Err(CriteriaError::SchemaMismatch(format!(
                "unknown prompt version '{other}'"
            ))),
        }
    }
}

/// A canonical option label, e.g. `"Quite biased"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerValue(String);

impl AnswerValue {
    pub fn new(label: impl Into<String>) -> Self {
        AnswerValue(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AnswerValue {
    fn from(s: &str) -> Self {
        AnswerValue(s.to_string())
    }
}

impl From<String> for AnswerValue {
    fn from(s: String) -> Self {
        AnswerValue(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Binary,
    Ordinal4,
    Nominal,
    Compound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub rank: u32,
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub localized: BTreeMap<String, String>,
}

impl AnswerOption {
    /// Label shown to annotators in `language`, falling back to the canonical label.
    pub fn display_label(&self, language: &str) -> &str {
        self.localized
            .get(language)
            .map(String::as_str)
            .unwrap_or(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSchema {
    pub kind: SchemaKind,
    pub options: Vec<AnswerOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_schema: Option<Box<AnswerSchema>>,
}

impl AnswerSchema {
    pub fn option(&self, value: &AnswerValue) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.label == value.as_str())
    }

    pub fn contains(&self, value: &AnswerValue) -> bool {
        self.option(value).is_some()
    }

    pub fn rank_of(&self, value: &AnswerValue) -> Option<u32> {
        self.option(value).map(|o| o.rank)
    }

    pub fn labels(&self) -> Vec<AnswerValue> {
        self.options.iter().map(|o| AnswerValue::new(&o.label)).collect()
    }

    /// For compound schemas the label that opens the sub-question ("Yes").
    pub fn affirmative(&self) -> Option<AnswerValue> {
        match self.kind {
            SchemaKind::Compound | SchemaKind::Binary => self
                .options
                .iter()
                .find(|o| o.rank == 1)
                .map(|o| AnswerValue::new(&o.label)),
            _ => None,
        }
    }

    fn validate(&self, context: &str) -> Result<(), String> {
        let mut seen: Vec<String> = Vec::new();
        for option in &self.options {
            let folded = option.label.to_lowercase();
            if option.label.trim().is_empty() {
                return Err(format!("{context}: empty option label"));
            }
            if seen.contains(&folded) {
                return Err(format!("{context}: duplicate option label '{}'", option.label));
            }
            seen.push(folded);
        }
        let ranks: Vec<u32> = self.options.iter().map(|o| o.rank).collect();
        let consecutive = ranks.iter().enumerate().all(|(i, r)| *r == i as u32 + 1);
        match self.kind {
            SchemaKind::Ordinal4 => {
                if self.options.len() != 4 || !consecutive {
                    return Err(format!("{context}: ordinal4 needs exactly ranks 1..4"));
                }
            }
            SchemaKind::Binary => {
                if self.options.len() != 2 || !consecutive {
                    return Err(format!("{context}: binary needs exactly ranks 1..2"));
                }
            }
            SchemaKind::Nominal => {
                if self.options.len() < 2 || !consecutive {
                    return Err(format!("{context}: nominal needs at least two options"));
                }
            }
            SchemaKind::Compound => {
                if self.options.len() != 2 || !consecutive {
                    return Err(format!("{context}: compound head must be binary"));
                }
                match &self.sub_schema {
                    Some(sub) if sub.kind == SchemaKind::Nominal => {
                        sub.validate(&format!("{context} sub-schema"))?
                    }
                    _ => return Err(format!("{context}: compound needs a nominal sub_schema")),
                }
            }
        }
        if self.kind != SchemaKind::Compound && self.sub_schema.is_some() {
            return Err(format!("{context}: only compound schemas carry a sub_schema"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: CriterionId,
    pub name: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub meta: bool,
    pub question: BTreeMap<PromptVersion, BTreeMap<String, String>>,
    pub schema: BTreeMap<PromptVersion, AnswerSchema>,
}

impl Criterion {
    pub fn schema(&self, version: PromptVersion) -> &AnswerSchema {
        // registry validation guarantees both versions are present
        &self.schema[&version]
    }

    pub fn question(&self, version: PromptVersion, language: &str) -> Result<&str> {
        self.question
            .get(&version)
            .and_then(|q| q.get(language))
            .map(String::as_str)
            .ok_or_else(|| CriteriaError::LanguageMissing {
                criterion: self.id,
                version,
                language: language.to_string(),
            })
    }
}

/// The validated set of six criteria.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    criteria: Vec<Criterion>,
}

impl Registry {
    /// Parses and validates a criteria config document.
    pub fn load(config: &str) -> Result<Registry> {
        let registry: Registry = serde_json::from_str(config)
            .map_err(|e| CriteriaError::RegistryInvalid(format!("malformed config: {e}")))?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn default_registry() -> Registry {
        Registry::load(DEFAULT_CONFIG).expect("shipped criteria config is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }

    pub fn get(&self, id: CriterionId) -> &Criterion {
        self.criteria
            .iter()
            .find(|c| c.id == id)
            .expect("registry holds all six criteria")
    }

    fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(CriteriaError::RegistryInvalid(msg));
        for id in CriterionId::ALL {
            match self.criteria.iter().filter(|c| c.id == id).count() {
                0 => return invalid(format!("criterion {id} is missing")),
                1 => {}
                _ => return invalid(format!("criterion {id} appears more than once")),
            }
        }
        for criterion in &self.criteria {
            let id = criterion.id;
            for version in PromptVersion::ALL {
                let Some(questions) = criterion.question.get(&version) else {
                    return invalid(format!("{id}: no {version} question"));
                };
                for language in REQUIRED_LANGUAGES {
                    if questions.get(language).is_none_or(|q| q.trim().is_empty()) {
                        return invalid(format!("{id}: no '{language}' {version} question"));
                    }
                }
                let Some(schema) = criterion.schema.get(&version) else {
                    return invalid(format!("{id}: no {version} schema"));
                };
                schema
                    .validate(&format!("{id} ({version})"))
                    .map_err(CriteriaError::RegistryInvalid)?;
            }
            if criterion.meta != (id == CriterionId::Type) {
                return invalid(format!("{id}: only Type is a meta-criterion"));
            }
            let initial = criterion.schema(PromptVersion::Initial);
            let refined = criterion.schema(PromptVersion::Refined);
            let shape_ok = match id {
                CriterionId::HeadAcc => {
                    initial.kind == SchemaKind::Ordinal4 && refined.kind == SchemaKind::Ordinal4
                }
                CriterionId::LedePres => {
                    initial.kind == SchemaKind::Binary && refined.kind == SchemaKind::Binary
                }
                CriterionId::ArtBias | CriterionId::SensLang => {
                    initial.kind == SchemaKind::Ordinal4 && refined.kind == SchemaKind::Binary
                }
                CriterionId::Type => {
                    initial.kind == SchemaKind::Nominal
                        && refined.kind == SchemaKind::Nominal
                        && initial.options.len() == refined.options.len()
                }
                CriterionId::NegTarg => {
                    initial.kind == SchemaKind::Compound
                        && initial == refined
                        && criterion.question[&PromptVersion::Initial]
                            == criterion.question[&PromptVersion::Refined]
                        && initial
                            .sub_schema
                            .as_ref()
                            .is_some_and(|s| s.options.len() == 4)
                }
            };
            if !shape_ok {
                return invalid(format!("{id}: schema shape does not match its criterion"));
            }
            if let Some(sub) = &initial.sub_schema {
                if sub.options.iter().any(|o| o.label == NO_ISSUE) {
                    return invalid(format!("{id}: '{NO_ISSUE}' is reserved"));
                }
            }
        }
        Ok(())
    }
}

fn headers(language: &str) -> (&'static str, &'static str) {
    match language {
        "it" => ("Opzioni di risposta:", "Se la risposta è Sì, indica il tema:"),
        _ => ("Answer options:", "If the answer is Yes, indicate the issue:"),
    }
}

/// Question text followed by the enumerated options in registry order.
pub fn render_question(
    criterion: &Criterion,
    version: PromptVersion,
    language: &str,
) -> Result<String> {
    let question = criterion.question(version, language)?;
    let schema = criterion.schema(version);
    let (options_header, issue_header) = headers(language);
    let mut out = format!("{question}\n{options_header}\n");
    for (i, option) in schema.options.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, option.display_label(language)));
    }
    if let Some(sub) = &schema.sub_schema {
        out.push_str(issue_header);
        out.push('\n');
        for option in &sub.options {
            out.push_str(&format!("- {}\n", option.display_label(language)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapEntry {
    pub rank: u32,
    pub from: AnswerValue,
    pub to: AnswerValue,
}

/// Maps answers given under one prompt version onto another version's schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapRule {
    pub criterion_id: CriterionId,
    pub mapping: Vec<RemapEntry>,
}

impl RemapRule {
    /// Ordinal4 to binary collapses ranks {1,2} and {3,4}; every other pair
    /// of schemas maps option to option by rank.
    pub fn between(criterion: &Criterion, from: PromptVersion, to: PromptVersion) -> RemapRule {
        let source = criterion.schema(from);
        let target = criterion.schema(to);
        let mapping = source
            .options
            .iter()
            .map(|option| {
                let target_rank = if source.kind == SchemaKind::Ordinal4
                    && target.kind == SchemaKind::Binary
                {
                    if option.rank <= 2 {
                        1
                    } else {
                        2
                    }
                } else {
                    option.rank
                };
                let to = target
                    .options
                    .iter()
                    .find(|o| o.rank == target_rank)
                    .expect("registry validation keeps rank sets aligned");
                RemapEntry {
                    rank: option.rank,
                    from: AnswerValue::new(&option.label),
                    to: AnswerValue::new(&to.label),
                }
            })
            .collect();
        RemapRule {
            criterion_id: criterion.id,
            mapping,
        }
    }

    /// The initial-to-`version` rule used for on-read views.
    pub fn to_version(criterion: &Criterion, version: PromptVersion) -> RemapRule {
        RemapRule::between(criterion, PromptVersion::Initial, version)
    }
}

pub fn remap_answer(answer: &AnswerValue, rule: &RemapRule) -> Result<AnswerValue> {
    rule.mapping
        .iter()
        .find(|e| &e.from == answer)
        .map(|e| e.to.clone())
        .ok_or_else(|| CriteriaError::UnknownRank(answer.to_string()))
}

/// Rank distance between two answers; `None` for nominal schemas.
pub fn separation(a: &AnswerValue, b: &AnswerValue, schema: &AnswerSchema) -> Result<Option<u32>> {
    let rank = |v: &AnswerValue| {
        schema
            .rank_of(v)
            .ok_or_else(|| CriteriaError::SchemaMismatch(format!("'{v}' is not in the schema")))
    };
    let (ra, rb) = (rank(a)?, rank(b)?);
    Ok(match schema.kind {
        SchemaKind::Nominal => None,
        _ => Some(ra.abs_diff(rb)),
    })
}

/// Whether a human-human conflict is worth adjudicating: any binary
/// difference, any nominal difference, or ordinal answers two or more
/// ranks apart.
pub fn is_relevant_disagreement(a: &AnswerValue, b: &AnswerValue, schema: &AnswerSchema) -> bool {
    if a == b {
        return false;
    }
    match schema.kind {
        SchemaKind::Binary | SchemaKind::Compound | SchemaKind::Nominal => true,
        SchemaKind::Ordinal4 => matches!(separation(a, b, schema), Ok(Some(d)) if d >= 2),
    }
}

/// A unit of comparison. NegTarg splits into detection (the Yes/No head)
/// and identification (the targeted issue).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aspect {
    HeadAcc,
    LedePres,
    NegTargDetection,
    NegTargIdentification,
    ArtBias,
    SensLang,
    Type,
}

impl Aspect {
    pub const ALL: [Aspect; 7] = [
        Aspect::HeadAcc,
        Aspect::LedePres,
        Aspect::NegTargDetection,
        Aspect::NegTargIdentification,
        Aspect::ArtBias,
        Aspect::SensLang,
        Aspect::Type,
    ];

    /// The rows of the disagreement summary table, in display order.
    pub const DISAGREEMENT_TABLE: [Aspect; 5] = [
        Aspect::ArtBias,
        Aspect::HeadAcc,
        Aspect::NegTargDetection,
        Aspect::NegTargIdentification,
        Aspect::SensLang,
    ];

    pub fn criterion(self) -> CriterionId {
        match self {
            Aspect::HeadAcc => CriterionId::HeadAcc,
            Aspect::LedePres => CriterionId::LedePres,
            Aspect::NegTargDetection | Aspect::NegTargIdentification => CriterionId::NegTarg,
            Aspect::ArtBias => CriterionId::ArtBias,
            Aspect::SensLang => CriterionId::SensLang,
            Aspect::Type => CriterionId::Type,
        }
    }

    /// The aspect a criterion is compared on by default.
    pub fn primary(criterion: CriterionId) -> Aspect {
        match criterion {
            CriterionId::HeadAcc => Aspect::HeadAcc,
            CriterionId::LedePres => Aspect::LedePres,
            CriterionId::NegTarg => Aspect::NegTargDetection,
            CriterionId::ArtBias => Aspect::ArtBias,
            CriterionId::SensLang => Aspect::SensLang,
            CriterionId::Type => Aspect::Type,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::HeadAcc => "HeadAcc",
            Aspect::LedePres => "LedePres",
            Aspect::NegTargDetection => "NegTargDetection",
            Aspect::NegTargIdentification => "NegTargIdentification",
            Aspect::ArtBias => "ArtBias",
            Aspect::SensLang => "SensLang",
            Aspect::Type => "Type",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Aspect::NegTargDetection => "NegTarg (Detection)",
            Aspect::NegTargIdentification => "NegTarg (Identification)",
            other => other.criterion().as_str(),
        }
    }

    /// Label schema the aspect's answers live in.
    pub fn schema(self, registry: &Registry, version: PromptVersion) -> AnswerSchema {
        let schema = registry.get(self.criterion()).schema(version);
        match self {
            Aspect::NegTargDetection => AnswerSchema {
                kind: SchemaKind::Binary,
                options: schema.options.clone(),
                sub_schema: None,
            },
            Aspect::NegTargIdentification => {
                let sub = schema
                    .sub_schema
                    .as_deref()
                    .expect("NegTarg is compound");
                let mut options = sub.options.clone();
                options.push(AnswerOption {
                    rank: options.len() as u32 + 1,
                    label: NO_ISSUE.to_string(),
                    localized: BTreeMap::new(),
                });
                AnswerSchema {
                    kind: SchemaKind::Nominal,
                    options,
                    sub_schema: None,
                }
            }
            _ => schema.clone(),
        }
    }

    /// Projects a stored (answer, sub_answer) pair onto this aspect.
    pub fn label_of(self, answer: &AnswerValue, sub_answer: Option<&AnswerValue>) -> AnswerValue {
        match self {
            Aspect::NegTargIdentification => sub_answer
                .cloned()
                .unwrap_or_else(|| AnswerValue::new(NO_ISSUE)),
            _ => answer.clone(),
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = CriteriaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(aspect) = Aspect::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s) || a.display_name().eq_ignore_ascii_case(s))
        {
            return Ok(aspect);
        }
        CriterionId::from_str(s).map(Aspect::primary)
    }
}
