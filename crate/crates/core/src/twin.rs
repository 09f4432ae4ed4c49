//! Seeded synthetic corpus and annotation store with known aggregate
//! statistics, for end-to-end checks without the original dataset.
//!
//! 34 publishers contribute 10 sanitized articles each. Three human
//! annotators cover every article in round-robin pairs, one LLM annotator
//! answers every criterion under both prompt versions, and an adjudicator
//! resolves the relevant disagreements. Which article carries which
//! confusion cell is decided by the seed; the counts are fixed.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use url::Url;

use crate::adjudication::case_id;
use crate::annotations::{
    AdjudicationRecord, Annotation, AnnotationError, AnnotationStore, Annotator, AnnotatorKind,
};
use crate::corpus::{article_id, Article, Publisher, Scope};
use crate::criteria::{
    remap_answer, AnswerValue, Aspect, CriterionId, PromptVersion, Registry, RemapRule,
};
use crate::llm::LlmAnnotationEvidence;

pub const HUMANS: [&str; 3] = ["expert-a", "expert-b", "expert-c"];
pub const LLM: &str = "gpt-4o";
pub const ADJUDICATOR: &str = "adjudicator";
pub const ARTICLES_PER_PUBLISHER: usize = 10;

/// (name, website, scope)
pub const PUBLISHERS: [(&str, &str, Scope); 34] = [
    ("Avvenire", "www.avvenire.it", Scope::National),
    ("Corriere Della Sera", "www.corriere.it", Scope::National),
    ("Domani", "www.editorialedomani.it", Scope::National),
    ("Il Gazzettino", "www.ilgazzettino.it", Scope::Local),
    ("Il Giornale Di Sicilia", "www.gds.it", Scope::Local),
    ("Il Giorno", "www.ilgiorno.it", Scope::Local),
    ("Il Mattino", "www.ilmattino.it", Scope::Local),
    ("Il Tirreno", "www.iltirreno.gelocal.it", Scope::Local),
    ("La Nazione", "www.lanazione.it", Scope::Local),
    ("La Repubblica", "www.repubblica.it", Scope::National),
    ("Libero", "www.liberoquotidiano.it", Scope::National),
    ("Open", "www.open.online", Scope::National),
    ("Il Corriere Del Giorno", "www.ilcorrieredelgiorno.it", Scope::Local),
    ("Il Fatto Quotidiano", "www.ilfattoquotidiano.it", Scope::National),
    ("Il Foglio", "www.ilfoglio.it", Scope::National),
    ("Il Giornale", "www.ilgiornale.it", Scope::National),
    ("Il Manifesto", "www.ilmanifesto.it", Scope::National),
    ("Il Messaggero", "www.ilmessaggero.it", Scope::National),
    ("La Gazzetta Del Mezzogiorno", "www.lagazzettadelmezzogiorno.it", Scope::Local),
    ("La Nuova Padania", "www.lanuovapadania.it", Scope::Local),
    ("La Stampa", "www.lastampa.it", Scope::National),
    ("Libertá", "www.liberta.it", Scope::Local),
    ("Stopcensura", "www.stopcensura.online", Scope::National),
    ("Il Piccolo", "www.ilpiccolo.gelocal.it", Scope::Local),
    ("Il Post", "www.ilpost.it", Scope::National),
    ("Il Primato Nazionale", "www.ilprimatonazionale.it", Scope::National),
    ("Il Quotidiano Del Molise", "www.quotidianomolise.com", Scope::Local),
    ("Il Resto Del Carlino", "www.ilrestodelcarlino.it", Scope::Local),
    ("Il Secolo D'italia", "www.secoloditalia.it", Scope::National),
    ("Il Sole 24 Ore", "www.ilsole24ore.com", Scope::National),
    ("La Nuova Ferrara", "www.lanuovaferrara.gelocal.it", Scope::Local),
    ("La Nuova Sardegna", "www.lanuovasardegna.it", Scope::Local),
    ("La Veritá", "www.laverita.info", Scope::National),
    ("L'unione Sarda", "www.unionesarda.it", Scope::Local),
];

#[derive(Debug, Clone)]
pub struct TwinConfig {
    pub seed: u64,
    pub created_at: DateTime<Utc>,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            seed: 2021,
            created_at: Utc.with_ymd_and_hms(2021, 11, 15, 9, 0, 0).unwrap(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Twin {
    pub publishers: Vec<Publisher>,
    pub corpus: Vec<Article>,
    pub annotators: Vec<Annotator>,
    pub annotations: Vec<Annotation>,
    pub adjudications: Vec<AdjudicationRecord>,
}

impl Twin {
    pub fn into_store(self, registry: Arc<Registry>) -> Result<AnnotationStore, AnnotationError> {
        let mut store = AnnotationStore::in_memory(registry);
        self.load_into(&mut store)?;
        Ok(store)
    }

    /// Registers the annotators and appends everything to `store`.
    pub fn load_into(&self, store: &mut AnnotationStore) -> Result<(), AnnotationError> {
        for annotator in &self.annotators {
            store.register_annotator(annotator.clone())?;
        }
        store.record_all(self.annotations.clone())?;
        for record in &self.adjudications {
            store.append_adjudication(record.clone())?;
        }
        Ok(())
    }
}

pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        match c {
            'a'..='z' | '0'..='9' => out.push(c),
            'A'..='Z' => out.push(c.to_ascii_lowercase()),
            'á' | 'Á' => out.push('a'),
            _ if !out.ends_with('-') && !out.is_empty() => out.push('-'),
            _ => {}
        }
    }
    out.trim_end_matches('-').to_string()
}

/// A label as stored: answer plus optional NegTarg issue.
#[derive(Debug, Clone, PartialEq, Eq)]
struct L {
    answer: &'static str,
    issue: Option<&'static str>,
}

const fn l(answer: &'static str) -> L {
    L { answer, issue: None }
}

const fn yes(issue: &'static str) -> L {
    L {
        answer: "Yes",
        issue: Some(issue),
    }
}

/// Everything generated for one (article slot, criterion).
#[derive(Debug, Clone)]
struct Cell {
    humans: [L; 2],
    llm: L,
    llm_refined: Option<L>,
}

/// Expected adjudication per slot; a `None` verdict is indeterminate.
type Verdicts = BTreeMap<(Aspect, usize), Option<AnswerValue>>;

const ISSUES: [&str; 4] = ["Politics", "Gender", "Religion", "Other"];

fn expand(matrix: &[&[usize]], labels: &[&'static str]) -> Vec<(&'static str, &'static str)> {
    let mut out = Vec::new();
    for (r, row) in matrix.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            out.extend(std::iter::repeat_n((labels[r], labels[c]), count));
        }
    }
    out
}

fn repeat(n: usize, a: &'static str, b: &'static str) -> impl Iterator<Item = (&'static str, &'static str)> {
    std::iter::repeat_n((a, b), n)
}

struct Builder<'r> {
    rng: ChaCha8Rng,
    registry: &'r Registry,
    /// Slot order: the first 226 slots are the articles with a disagreement.
    cells: BTreeMap<CriterionId, Vec<Option<Cell>>>,
    verdicts: Verdicts,
}

const SLOTS: usize = 340;

impl<'r> Builder<'r> {
    fn put(&mut self, criterion: CriterionId, slot: usize, cell: Cell) {
        let column = self.cells.entry(criterion).or_insert_with(|| vec![None; SLOTS]);
        assert!(column[slot].is_none(), "slot {slot} of {criterion} filled twice");
        column[slot] = Some(cell);
    }

    fn free_slots(&self, criterion: CriterionId) -> Vec<usize> {
        match self.cells.get(&criterion) {
            None => (0..SLOTS).collect(),
            Some(column) => (0..SLOTS).filter(|&s| column[s].is_none()).collect(),
        }
    }

    fn coin(&mut self) -> bool {
        self.rng.random_bool(0.5)
    }

    fn pair(&mut self, a: L, b: L) -> [L; 2] {
        if self.coin() {
            [a, b]
        } else {
            [b, a]
        }
    }

    /// Fills the remaining free slots with expert-agreeing cells.
    fn consensus(&mut self, criterion: CriterionId, mut cells: Vec<(&'static str, &'static str)>) {
        let slots = self.free_slots(criterion);
        assert_eq!(slots.len(), cells.len(), "{criterion} consensus size");
        cells.shuffle(&mut self.rng);
        for (slot, (expert, llm)) in slots.into_iter().zip(cells) {
            self.put(
                criterion,
                slot,
                Cell {
                    humans: [l(expert), l(expert)],
                    llm: l(llm),
                    llm_refined: None,
                },
            );
        }
    }

    /// Ordinal disagreements; relevant ones carry (llm, ground truth).
    fn ordinal_disagreements(
        &mut self,
        criterion: CriterionId,
        slots: &[usize],
        relevant: &[(&'static str, &'static str, &'static str, &'static str)],
        other: Vec<(&'static str, &'static str)>,
    ) {
        assert_eq!(slots.len(), relevant.len() + other.len());
        let aspect = Aspect::primary(criterion);
        for (&slot, &(a, b, llm, truth)) in slots.iter().zip(relevant) {
            let humans = self.pair(l(a), l(b));
            self.put(criterion, slot, Cell { humans, llm: l(llm), llm_refined: None });
            self.verdicts.insert((aspect, slot), Some(AnswerValue::new(truth)));
        }
        for (&slot, (a, b)) in slots[relevant.len()..].iter().zip(other) {
            let llm = if self.coin() { a } else { b };
            let humans = self.pair(l(a), l(b));
            self.put(criterion, slot, Cell { humans, llm: l(llm), llm_refined: None });
        }
    }

    /// Chooses refined-prompt LLM answers so that the expert-consensus cells
    /// after remapping reproduce `matrix` (rows experts, cols LLM).
    fn refined_binary(&mut self, criterion: CriterionId, matrix: [[usize; 2]; 2]) {
        let c = self.registry.get(criterion);
        let rule = RemapRule::to_version(c, PromptVersion::Refined);
        let labels: Vec<&'static str> = match criterion {
            CriterionId::ArtBias => vec!["Biased", "Unbiased"],
            CriterionId::SensLang => vec!["Sensational", "Neutral"],
            _ => unreachable!(),
        };
        let remap = |s: &str| remap_answer(&AnswerValue::new(s), &rule).expect("initial label");
        let column = self.cells.get_mut(&criterion).expect("criterion filled");
        for (row, label) in labels.iter().enumerate() {
            let mut members: Vec<usize> = (0..SLOTS)
                .filter(|&s| {
                    let cell = column[s].as_ref().unwrap();
                    let (a, b) = (remap(cell.humans[0].answer), remap(cell.humans[1].answer));
                    a == b && a.as_str() == *label
                })
                .collect();
            // prefer keeping the remapped initial answer where the counts allow
            members.sort_by_key(|&s| remap(column[s].as_ref().unwrap().llm.answer).as_str() != labels[0]);
            assert_eq!(members.len(), matrix[row][0] + matrix[row][1], "{criterion} refined row {label}");
            for (i, s) in members.into_iter().enumerate() {
                let pick = if i < matrix[row][0] { labels[0] } else { labels[1] };
                column[s].as_mut().unwrap().llm_refined = Some(l(pick));
            }
        }
        for cell in column.iter_mut().flatten() {
            if cell.llm_refined.is_none() {
                let mapped = remap(cell.llm.answer);
                let label = labels.iter().find(|l| **l == mapped.as_str()).unwrap();
                cell.llm_refined = Some(l(label));
            }
        }
    }
}

/// Slots of the 226 articles with at least one disagreement, by criterion.
mod layout {
    use std::ops::Range;

    pub const HEADACC: Range<usize> = 0..108;
    pub const ARTBIAS: Range<usize> = 108..187;
    pub const SENSLANG_A: Range<usize> = 187..226;
    pub const SENSLANG_B: Range<usize> = 0..33;
    pub const NEGTARG_DETECTION: Range<usize> = 50..80;
    pub const NEGTARG_ISSUE_ONLY: Range<usize> = 80..97;
    pub const LEDEPRES: Range<usize> = 120..145;
    pub const TYPE: Range<usize> = 150..180;
}

fn build_cells(registry: &Registry, seed: u64) -> Builder<'_> {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        registry,
        cells: BTreeMap::new(),
        verdicts: BTreeMap::new(),
    };

    // HeadAcc: 108 disagreements, 11 relevant (9 resolved by the LLM)
    let slots: Vec<usize> = layout::HEADACC.collect();
    let (i, qi, qa, a) = ("Inaccurate", "Quite inaccurate", "Quite accurate", "Accurate");
    let relevant = [
        (i, qa, qi, qi),
        (i, qa, qi, qi),
        (i, qa, qi, qi),
        (i, qa, qi, qi),
        (i, qa, qi, qi),
        (qi, a, qa, qa),
        (qi, a, qa, qa),
        (qi, a, qa, qa),
        (i, a, qi, qi),
        (qi, a, qa, a),
        (i, qa, qi, i),
    ];
    let other = repeat(10, i, qi).chain(repeat(30, qi, qa)).chain(repeat(57, qa, a)).collect();
    b.ordinal_disagreements(CriterionId::HeadAcc, &slots, &relevant, other);
    let labels = [i, qi, qa, a];
    b.consensus(
        CriterionId::HeadAcc,
        expand(&[&[10, 4, 2, 0], &[4, 12, 8, 2], &[2, 10, 40, 20], &[0, 4, 34, 80]], &labels),
    );

    // ArtBias: 79 disagreements, 4 relevant, all resolved by the central answer
    let slots: Vec<usize> = layout::ARTBIAS.collect();
    let (bi, qb, qu, u) = ("Biased", "Quite biased", "Quite unbiased", "Unbiased");
    let relevant = [(bi, qu, qb, qb), (bi, qu, qb, qb), (qb, u, qu, qu), (bi, u, qb, qb)];
    let other = repeat(8, bi, qb).chain(repeat(35, qb, qu)).chain(repeat(32, qu, u)).collect();
    b.ordinal_disagreements(CriterionId::ArtBias, &slots, &relevant, other);
    b.consensus(
        CriterionId::ArtBias,
        expand(
            &[&[12, 3, 2, 1], &[15, 27, 8, 10], &[6, 32, 34, 14], &[0, 19, 40, 38]],
            &[bi, qb, qu, u],
        ),
    );
    b.refined_binary(CriterionId::ArtBias, [[46, 40], [20, 195]]);

    // SensLang: 72 disagreements, 11 relevant (7 resolved by the LLM)
    let slots: Vec<usize> = layout::SENSLANG_A.chain(layout::SENSLANG_B).collect();
    let (s, qs, qn, n) = ("Sensational", "Quite sensational", "Quite neutral", "Neutral");
    let relevant = [
        (qs, n, qn, qn),
        (qs, n, qn, qn),
        (qs, n, qn, qn),
        (qs, n, qn, qn),
        (s, qn, qs, qs),
        (s, qn, qs, qs),
        (s, n, qs, qs),
        (qs, n, qn, n),
        (qs, n, qn, qs),
        (s, qn, qs, qn),
        (s, n, qs, n),
    ];
    let other = repeat(8, s, qs).chain(repeat(12, qs, qn)).chain(repeat(41, qn, n)).collect();
    b.ordinal_disagreements(CriterionId::SensLang, &slots, &relevant, other);
    b.consensus(
        CriterionId::SensLang,
        expand(
            &[&[11, 4, 2, 0], &[0, 9, 11, 0], &[5, 23, 13, 2], &[0, 10, 96, 82]],
            &[s, qs, qn, n],
        ),
    );
    b.refined_binary(CriterionId::SensLang, [[34, 11], [30, 242]]);

    // NegTarg: 30 detection disagreements (18 resolved, 12 borderline) and
    // 17 more issue disagreements among agreeing Yes pairs (14 resolved, 3 borderline)
    for (k, slot) in layout::NEGTARG_DETECTION.enumerate() {
        let issue = ISSUES[k % 4];
        let humans = b.pair(yes(issue), l("No"));
        let llm = if k % 2 == 0 { yes(issue) } else { l("No") };
        let truth = llm.issue.unwrap_or(crate::criteria::NO_ISSUE);
        let resolved = k < 18;
        b.verdicts.insert(
            (Aspect::NegTargDetection, slot),
            resolved.then(|| AnswerValue::new(llm.answer)),
        );
        b.verdicts.insert(
            (Aspect::NegTargIdentification, slot),
            resolved.then(|| AnswerValue::new(truth)),
        );
        b.put(CriterionId::NegTarg, slot, Cell { humans, llm, llm_refined: None });
    }
    for (k, slot) in layout::NEGTARG_ISSUE_ONLY.enumerate() {
        let (x, y) = (ISSUES[k % 4], ISSUES[(k + 1 + k / 4) % 4]);
        let y = if x == y { ISSUES[(k + 2) % 4] } else { y };
        let humans = b.pair(yes(x), yes(y));
        let llm = yes(x);
        b.verdicts.insert(
            (Aspect::NegTargIdentification, slot),
            (k < 14).then(|| AnswerValue::new(x)),
        );
        b.put(CriterionId::NegTarg, slot, Cell { humans, llm, llm_refined: None });
    }
    // detection consensus: [[50, 8], [22, 230]], 17 of the Yes/Yes cells used above
    let mut rest = expand(&[&[50 - 17, 8], &[22, 230]], &["Yes", "No"]);
    rest.shuffle(&mut b.rng);
    for (slot, (expert, llm)) in b.free_slots(CriterionId::NegTarg).into_iter().zip(rest) {
        let issue = ISSUES[b.rng.random_range(0..4)];
        let label = |answer: &'static str| if answer == "Yes" { yes(issue) } else { l("No") };
        let cell = Cell {
            humans: [label(expert), label(expert)],
            llm: label(llm),
            llm_refined: None,
        };
        b.put(CriterionId::NegTarg, slot, cell);
    }

    // LedePres: 25 disagreements
    for (k, slot) in layout::LEDEPRES.enumerate() {
        let humans = b.pair(l("Yes"), l("No"));
        let llm = l(if k % 3 == 0 { "No" } else { "Yes" });
        b.put(CriterionId::LedePres, slot, Cell { humans, llm, llm_refined: None });
    }
    b.consensus(CriterionId::LedePres, expand(&[&[196, 32], &[41, 46]], &["Yes", "No"]));

    // Type: 30 disagreements
    let (sn, ed, inv, sat, soft) = ("Straight news", "Editorial", "Investigation", "Satire", "Soft News");
    let pairs: Vec<_> = repeat(15, sn, soft).chain(repeat(10, sn, ed)).chain(repeat(5, ed, inv)).collect();
    for (slot, (x, y)) in layout::TYPE.zip(pairs) {
        let humans = b.pair(l(x), l(y));
        b.put(CriterionId::Type, slot, Cell { humans, llm: l(x), llm_refined: None });
    }
    b.consensus(
        CriterionId::Type,
        expand(
            &[
                &[150, 10, 5, 0, 15],
                &[8, 40, 2, 0, 3],
                &[4, 2, 10, 0, 1],
                &[0, 1, 0, 3, 0],
                &[12, 4, 1, 0, 39],
            ],
            &[sn, ed, inv, sat, soft],
        ),
    );
    b
}

fn italian_response(
    registry: &Registry,
    criterion: CriterionId,
    version: PromptVersion,
    answer: &str,
    issue: Option<&str>,
) -> String {
    let schema = registry.get(criterion).schema(version);
    let answer = schema
        .option(&AnswerValue::new(answer))
        .map(|o| o.display_label("it").to_string())
        .unwrap_or_else(|| answer.to_string());
    match (issue, schema.sub_schema.as_deref()) {
        (Some(issue), Some(sub)) => {
            let issue = sub
                .option(&AnswerValue::new(issue))
                .map(|o| o.display_label("it").to_string())
                .unwrap_or_else(|| issue.to_string());
            format!("{answer}. Tema: {issue}")
        }
        _ => answer,
    }
}

fn synthetic_text(rng: &mut ChaCha8Rng, n: usize) -> (String, String) {
    const SUBJECTS: [&str; 8] = [
        "Il consiglio comunale",
        "La regione",
        "Il ministero",
        "Un gruppo di cittadini",
        "La squadra locale",
        "L'azienda sanitaria",
        "Il sindacato",
        "La procura",
    ];
    const VERBS: [&str; 6] = ["ha annunciato", "ha approvato", "ha criticato", "ha presentato", "ha chiesto", "ha rinviato"];
    const OBJECTS: [&str; 7] = [
        "un nuovo piano per i trasporti",
        "le misure contro la pandemia",
        "il bilancio annuale",
        "un progetto di riqualificazione urbana",
        "la riforma della scuola",
        "un accordo sul lavoro",
        "le nuove regole per il turismo",
    ];
    let mut pick = |xs: &[&'static str]| xs[rng.random_range(0..xs.len())];
    let title = format!("{} {} {}", pick(&SUBJECTS), pick(&VERBS), pick(&OBJECTS));
    let paragraphs: Vec<String> = (0..3)
        .map(|p| {
            format!(
                "{} {} {}. Secondo [PUBLISHER] la decisione riguarda il caso {n}-{p}.",
                pick(&SUBJECTS),
                pick(&VERBS),
                pick(&OBJECTS)
            )
        })
        .collect();
    (title, format!("di [AUTHOR]\n{}", paragraphs.join("\n")))
}

/// Generates the twin deterministically from `config`.
pub fn generate(registry: &Registry, config: &TwinConfig) -> Twin {
    let mut builder = build_cells(registry, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7477_696e);

    let publishers: Vec<Publisher> = PUBLISHERS
        .iter()
        .map(|(name, site, scope)| Publisher {
            id: slug(name),
            name: name.to_string(),
            website: Url::parse(&format!("https://{site}/")).expect("static url"),
            scope: *scope,
            orientation: None,
            risk_score: None,
        })
        .collect();

    let window_start = NaiveDate::from_ymd_opt(2021, 4, 1).unwrap();
    let window_days = (NaiveDate::from_ymd_opt(2021, 10, 31).unwrap() - window_start).num_days();
    let mut corpus = Vec::with_capacity(SLOTS);
    for publisher in &publishers {
        for k in 0..ARTICLES_PER_PUBLISHER {
            let n = corpus.len();
            let published_at = window_start + Duration::days(rng.random_range(0..=window_days));
            let url = publisher
                .website
                .join(&format!("{}/articolo-{:03}", published_at.format("%Y/%m/%d"), k + 1))
                .expect("valid path");
            let (title, body) = synthetic_text(&mut rng, n);
            corpus.push(Article {
                id: article_id(&publisher.id, &url),
                publisher_id: publisher.id.clone(),
                url,
                title,
                body,
                published_at,
                fetched_at: config.created_at,
                sanitized: true,
            });
        }
    }
    corpus.sort_by(|a, b| (&a.publisher_id, a.published_at, &a.id).cmp(&(&b.publisher_id, b.published_at, &b.id)));

    // slot -> article
    let mut order: Vec<usize> = (0..SLOTS).collect();
    order.shuffle(&mut rng);
    let article_of = |slot: usize| &corpus[order[slot]];

    let mut annotators: Vec<Annotator> = HUMANS
        .iter()
        .map(|id| Annotator::new(*id, AnnotatorKind::Human))
        .collect();
    annotators.push(Annotator {
        id: LLM.into(),
        kind: AnnotatorKind::Llm,
        label: "GPT-4o".into(),
    });
    annotators.push(Annotator::new(ADJUDICATOR, AnnotatorKind::Adjudicator));

    let created_at = config.created_at;
    let mut annotations = Vec::new();
    for (slot, &position) in order.iter().enumerate().take(SLOTS) {
        let article = article_of(slot);
        let pair = [(0, 1), (1, 2), (0, 2)][position % 3];
        for criterion in CriterionId::ALL {
            let cell = builder.cells[&criterion][slot].clone().expect("every slot filled");
            for (who, label) in [HUMANS[pair.0], HUMANS[pair.1]].into_iter().zip(&cell.humans) {
                annotations.push(Annotation {
                    article_id: article.id.clone(),
                    criterion_id: criterion,
                    annotator_id: who.into(),
                    prompt_version: PromptVersion::Initial,
                    answer: Some(AnswerValue::new(label.answer)),
                    sub_answer: label.issue.map(AnswerValue::new),
                    evidence: None,
                    created_at,
                });
            }
            let refined_answer = match &cell.llm_refined {
                Some(label) => label.answer.to_string(),
                None => {
                    let rule = RemapRule::to_version(registry.get(criterion), PromptVersion::Refined);
                    remap_answer(&AnswerValue::new(cell.llm.answer), &rule)
                        .expect("initial label")
                        .as_str()
                        .to_string()
                }
            };
            let llm_answers = [
                (PromptVersion::Initial, cell.llm.answer.to_string()),
                (PromptVersion::Refined, refined_answer),
            ];
            for (version, answer) in llm_answers {
                let schema = registry.get(criterion).schema(version);
                let response = italian_response(registry, criterion, version, &answer, cell.llm.issue);
                let evidence = LlmAnnotationEvidence::from_responses(vec![response; 3], schema, "it");
                let parsed = evidence.final_answer.clone().expect("twin responses parse");
                debug_assert_eq!(parsed.answer.as_str(), answer);
                annotations.push(Annotation {
                    article_id: article.id.clone(),
                    criterion_id: criterion,
                    annotator_id: LLM.into(),
                    prompt_version: version,
                    answer: Some(parsed.answer),
                    sub_answer: parsed.sub_answer,
                    evidence: Some(evidence),
                    created_at,
                });
            }
        }
    }
    annotations.sort_by_key(Annotation::key);

    let mut adjudications: Vec<AdjudicationRecord> = std::mem::take(&mut builder.verdicts)
        .into_iter()
        .map(|((aspect, slot), ground_truth)| {
            let article = article_of(slot);
            AdjudicationRecord {
                case_id: case_id(aspect, &article.id),
                article_id: article.id.clone(),
                aspect,
                adjudicator_id: ADJUDICATOR.into(),
                ground_truth,
                created_at,
            }
        })
        .collect();
    adjudications.sort_by(|a, b| a.case_id.cmp(&b.case_id));

    Twin {
        publishers,
        corpus,
        annotators,
        annotations,
        adjudications,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn publishers_are_distinct() {
        let ids: std::collections::BTreeSet<String> = PUBLISHERS.iter().map(|p| slug(p.0)).collect();
        assert_eq!(ids.len(), 34);
        assert_eq!(slug("Il Secolo D'italia"), "il-secolo-d-italia");
        assert_eq!(slug("La Veritá"), "la-verita");
    }

    #[test]
    fn shape() {
        let registry = Registry::default_registry();
        let twin = generate(&registry, &TwinConfig::default());
        assert_eq!(twin.corpus.len(), 340);
        assert_eq!(twin.annotations.len(), 340 * 6 * 4);
        assert!(twin.corpus.iter().all(|a| a.sanitized));
    }
}
