//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per check.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use veritas_core::adjudication::summary_table;
use veritas_core::agreement::{
    cohen_kappa, consensus_vs_llm, interpret_kappa, kappa_from_matrix, matrix_collapse, ConfusionMatrix, LabelSeries,
    ViewOptions,
};
use veritas_core::annotations::{validate_coverage, AnnotationStore, AnnotatorKind};
use veritas_core::corpus::{sample_corpus, write_corpus, SamplingSpec};
use veritas_core::criteria::{
    is_relevant_disagreement, AnswerValue, Aspect, CriterionId, PromptVersion, Registry, RemapRule,
};
use veritas_core::llm::{classify, fixture_from_annotations, parse_response, Consistency, MockBackend, ParsedAnswer};
use veritas_core::pipeline::{cmd_annotate, cmd_report, cmd_twin, sha256_hex, RunConfig, Workspace};
use veritas_core::twin::{generate, TwinConfig};

type Check = Result<(), String>;
type NamedCheck = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

/// p_o from the diagonal, p_e by comparing every left label with every
/// right label.
fn oracle_kappa(pairs: &[(String, String)]) -> f64 {
    let n = pairs.len() as f64;
    let p_o = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let mut chance = 0usize;
    for (a, _) in pairs {
        for (_, b) in pairs {
            if a == b {
                chance += 1;
            }
        }
    }
    let p_e = chance as f64 / (n * n);
    if p_e == 1.0 {
        return 1.0;
    }
    (p_o - p_e) / (1.0 - p_e)
}

fn random_series(rng: &mut ChaCha8Rng, max_n: usize, max_labels: usize) -> Vec<(String, String)> {
    let n = rng.random_range(1..=max_n);
    let k = rng.random_range(1..=max_labels);
    let bias = rng.random_range(0.0..1.0);
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..k);
            let b = if rng.random_bool(bias) { a } else { rng.random_range(0..k) };
            (format!("L{a}"), format!("L{b}"))
        })
        .collect()
}

fn kappa(pairs: &[(String, String)]) -> Result<f64, String> {
    let series = LabelSeries::from_pairs(pairs.iter().cloned()).map_err(|e| e.to_string())?;
    Ok(cohen_kappa(&series).map_err(|e| e.to_string())?.kappa)
}

fn kappa_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for i in 0..200 {
        let pairs = random_series(&mut rng, 50, 5);
        let (got, want) = (kappa(&pairs)?, oracle_kappa(&pairs));
        ensure!((got - want).abs() <= 1e-12, "series {i}: {got} vs oracle {want}");
    }
    ensure!(started.elapsed() < Duration::from_secs(5), "took {:?}", started.elapsed());
    Ok(())
}

fn analytic_case() -> Check {
    let labels = vec![AnswerValue::new("Yes"), AnswerValue::new("No")];
    let m = ConfusionMatrix::from_counts(labels, vec![vec![20, 5], vec![10, 15]]).map_err(|e| e.to_string())?;
    let r = kappa_from_matrix(&m).map_err(|e| e.to_string())?;
    ensure!(r.kappa == 0.40, "kappa {}", r.kappa);
    ensure!((r.p_o - 0.70).abs() < 1e-15 && (r.p_e - 0.50).abs() < 1e-15, "p_o {} p_e {}", r.p_o, r.p_e);
    ensure!(r.band.as_str() == "weak", "band {}", r.band);
    Ok(())
}

fn kappa_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..150 {
        let pairs = random_series(&mut rng, 40, 5);
        let k = kappa(&pairs)?;
        ensure!((-1.0..=1.0).contains(&k), "series {i}: {k} out of bounds");

        let swapped: Vec<_> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        ensure!((kappa(&swapped)? - k).abs() < 1e-12, "series {i}: swap changed kappa");

        let mut names: Vec<String> = (0..5).map(|j| format!("P{j}")).collect();
        names.shuffle(&mut rng);
        let rename = |l: &String| names[l[1..].parse::<usize>().unwrap()].clone();
        let renamed: Vec<_> = pairs.iter().map(|(a, b)| (rename(a), rename(b))).collect();
        ensure!((kappa(&renamed)? - k).abs() < 1e-12, "series {i}: relabeling changed kappa");

        let perfect: Vec<_> = pairs.iter().map(|(a, _)| (a.clone(), a.clone())).collect();
        ensure!(kappa(&perfect)? == 1.0, "series {i}: perfect agreement is not 1");
    }
    Ok(())
}

fn band_table() -> Check {
    for (k, want) in [
        (0.7089, "moderate"),
        (0.35, "minimal"),
        (0.95, "almost_perfect"),
        (0.20, "none"),
        (0.21, "minimal"),
        (0.40, "weak"),
        (0.60, "moderate"),
        (0.80, "strong"),
        (0.90, "strong"),
        (-0.3, "none"),
    ] {
        let got = interpret_kappa(k).map_err(|e| e.to_string())?;
        ensure!(got.as_str() == want, "{k}: {got} instead of {want}");
    }
    ensure!(interpret_kappa(f64::NAN).is_err(), "NaN accepted");
    ensure!(interpret_kappa(1.5).is_err(), "1.5 accepted");
    Ok(())
}

fn remap_commutes_with_collapse() -> Check {
    let registry = Registry::default_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for id in [CriterionId::ArtBias, CriterionId::SensLang] {
        let criterion = registry.get(id);
        let rule = RemapRule::between(criterion, PromptVersion::Initial, PromptVersion::Refined);
        let initial = criterion.schema(PromptVersion::Initial).labels();
        let refined = criterion.schema(PromptVersion::Refined).labels();
        let remap = |v: &AnswerValue| rule.mapping.iter().find(|e| &e.from == v).unwrap().to.clone();
        for i in 0..50 {
            let n = rng.random_range(1..=60);
            let pairs: Vec<(AnswerValue, AnswerValue)> = (0..n)
                .map(|_| (initial[rng.random_range(0..4)].clone(), initial[rng.random_range(0..4)].clone()))
                .collect();
            let full = LabelSeries::new(pairs.clone(), initial.clone()).map_err(|e| e.to_string())?;
            let collapsed = matrix_collapse(&ConfusionMatrix::from_series(&full), &rule).map_err(|e| e.to_string())?;
            let remapped = LabelSeries::new(pairs.iter().map(|(a, b)| (remap(a), remap(b))).collect(), refined.clone())
                .map_err(|e| e.to_string())?;
            ensure!(
                collapsed == ConfusionMatrix::from_series(&remapped),
                "{id} series {i}: collapse and remap differ"
            );
        }
    }
    Ok(())
}

fn relevance_rule() -> Check {
    let registry = Registry::default_registry();
    let ordinal = registry.get(CriterionId::HeadAcc).schema(PromptVersion::Initial);
    let labels = ["Inaccurate", "Quite inaccurate", "Quite accurate", "Accurate"];
    let mut checked = 0;
    for (i, a) in labels.iter().enumerate() {
        for (j, b) in labels.iter().enumerate() {
            let want = i.abs_diff(j) >= 2;
            let got = is_relevant_disagreement(&AnswerValue::new(*a), &AnswerValue::new(*b), ordinal);
            ensure!(got == want, "{a} vs {b}: {got}");
            checked += 1;
        }
    }
    let binary = registry.get(CriterionId::LedePres).schema(PromptVersion::Initial);
    for a in ["Yes", "No"] {
        for b in ["Yes", "No"] {
            let got = is_relevant_disagreement(&AnswerValue::new(a), &AnswerValue::new(b), binary);
            ensure!(got == (a != b), "{a} vs {b}: {got}");
            checked += 1;
        }
    }
    ensure!(checked == 20, "{checked} pairs checked");
    ensure!(
        is_relevant_disagreement(&AnswerValue::new("Inaccurate"), &AnswerValue::new("Quite accurate"), ordinal),
        "Inaccurate vs Quite accurate should be relevant"
    );
    Ok(())
}

const REFERENCE_KAPPAS: [(Aspect, PromptVersion, f64); 5] = [
    (Aspect::NegTargDetection, PromptVersion::Initial, 0.7089),
    (Aspect::ArtBias, PromptVersion::Initial, 0.2064),
    (Aspect::SensLang, PromptVersion::Initial, 0.1732),
    (Aspect::ArtBias, PromptVersion::Refined, 0.4750),
    (Aspect::SensLang, PromptVersion::Refined, 0.5486),
];

const REFERENCE_TABLE: [(&str, usize, usize, usize, usize); 5] = [
    ("ArtBias", 79, 4, 4, 0),
    ("HeadAcc", 108, 11, 9, 0),
    ("NegTarg (Detection)", 30, 30, 18, 12),
    ("NegTarg (Identification)", 47, 47, 32, 15),
    ("SensLang", 72, 11, 7, 0),
];

fn twin_reproduction() -> Check {
    let started = Instant::now();
    let registry = Arc::new(Registry::default_registry());
    let twin = generate(&registry, &TwinConfig::default());
    let n_articles = twin.corpus.len();
    let store = twin.into_store(Arc::clone(&registry)).map_err(|e| e.to_string())?;
    for (aspect, version, want) in REFERENCE_KAPPAS {
        let got = consensus_vs_llm(&store, aspect, version, ViewOptions::default())
            .map_err(|e| e.to_string())?
            .kappa;
        let tolerance = if version == PromptVersion::Initial { 5e-5 } else { 0.005 };
        ensure!((got - want).abs() <= tolerance, "{aspect} {version}: {got:.4} vs {want}");
    }
    let rows = summary_table(&store, n_articles);
    ensure!(rows.len() == 5, "{} table rows", rows.len());
    for (row, (name, d, r, c, b)) in rows.iter().zip(REFERENCE_TABLE) {
        let got = (row.criterion_aspect.as_str(), row.no_disagreements, row.relevant_disagreements, row.llm_correct, row.borderline);
        ensure!(got == (name, d, r, c, b), "row {got:?} vs {:?}", (name, d, r, c, b));
        ensure!(row.no_articles == 340, "{name}: {} articles", row.no_articles);
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cmd_twin(dir.path(), &TwinConfig::default()).map_err(|e| e.to_string())?;
    let outcome = cmd_report(dir.path(), ViewOptions::default()).map_err(|e| e.to_string())?;
    for (aspect, version, want) in REFERENCE_KAPPAS {
        let got = outcome.report.kappa(aspect, version).ok_or(format!("report lacks {aspect} {version}"))?;
        ensure!((got - want).abs() <= 0.005, "report {aspect} {version}: {got}");
    }
    let text = fs::read_to_string(&outcome.text_path).map_err(|e| e.to_string())?;
    for needle in ["0.7089", "0.2064", "0.1732", "0.4750", "0.5486"] {
        ensure!(text.contains(needle), "report.txt lacks {needle}");
    }
    let report_rows: Vec<_> = outcome
        .report
        .table5
        .iter()
        .map(|r| (r.criterion_aspect.as_str(), r.no_disagreements, r.relevant_disagreements, r.llm_correct, r.borderline))
        .collect();
    ensure!(report_rows == REFERENCE_TABLE, "report table {report_rows:?}");
    ensure!(started.elapsed() < Duration::from_secs(30), "took {:?}", started.elapsed());
    Ok(())
}

fn coverage_arithmetic() -> Check {
    let registry = Arc::new(Registry::default_registry());
    let twin = generate(&registry, &TwinConfig::default());
    let corpus = twin.corpus.clone();
    let store = twin.into_store(registry).map_err(|e| e.to_string())?;
    let coverage = validate_coverage(&store, &corpus, PromptVersion::Initial);
    ensure!(coverage.total == 6120, "total {}", coverage.total);
    ensure!(coverage.total == 340 * 6 * 3, "total is not articles x criteria x 3");
    ensure!(coverage.violations.is_empty(), "{} violations", coverage.violations.len());
    Ok(())
}

fn repetition_protocol() -> Check {
    let options: Vec<Option<ParsedAnswer>> = ["A", "B", "C", "D"]
        .into_iter()
        .map(|l| {
            Some(ParsedAnswer {
                answer: AnswerValue::new(l),
                sub_answer: None,
            })
        })
        .chain([None])
        .collect();
    let mut multisets = 0;
    let mut parsed_only = 0;
    for i in 0..options.len() {
        for j in i..options.len() {
            for k in j..options.len() {
                multisets += 1;
                let picks = [&options[i], &options[j], &options[k]];
                if picks.iter().all(|p| p.is_some()) {
                    parsed_only += 1;
                }
                let mut counts: BTreeMap<&ParsedAnswer, usize> = BTreeMap::new();
                for p in picks.iter().copied().flatten() {
                    *counts.entry(p).or_default() += 1;
                }
                let top = counts.iter().max_by_key(|(_, c)| **c).map(|(a, c)| ((*a).clone(), *c));
                let want = match top {
                    Some((a, 3)) => (Consistency::Unanimous, Some(a)),
                    Some((a, 2)) => (Consistency::Majority, Some(a)),
                    _ => (Consistency::Inconsistent, None),
                };
                for order in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                    let answers: Vec<Option<ParsedAnswer>> = order.iter().map(|&o| picks[o].clone()).collect();
                    let got = classify(&answers);
                    ensure!(got == want, "{answers:?}: {got:?} instead of {want:?}");
                }
            }
        }
    }
    ensure!(parsed_only == 20 && multisets == 35, "{parsed_only}/{multisets} multisets");
    Ok(())
}

fn determinism_run(root: &Path, fixture_source: &AnnotationStore) -> Result<Vec<String>, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let registry = Arc::new(Registry::default_registry());
    let twin = generate(&registry, &TwinConfig::default());
    let spec = SamplingSpec {
        per_publisher: 2,
        window_start: chrono::NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
        window_end: chrono::NaiveDate::from_ymd_opt(2022, 1, 1).unwrap(),
    };
    let sample = sample_corpus(&twin.corpus, &spec, 42).map_err(|e| err(&e))?;
    let corpus_file = root.join("sample.jsonl");
    write_corpus(&corpus_file, &sample).map_err(|e| err(&e))?;

    let ws_dir = root.join("ws");
    let ws = Workspace::create(&ws_dir).map_err(|e| err(&e))?;
    let mut store = ws.open_store().map_err(|e| err(&e))?;
    let ids: std::collections::BTreeSet<&str> = sample.iter().map(|a| a.id.as_str()).collect();
    for annotator in fixture_source.annotators().filter(|a| a.kind == AnnotatorKind::Human) {
        store.register_annotator(annotator.clone()).map_err(|e| err(&e))?;
    }
    let humans: Vec<_> = fixture_source
        .annotations()
        .iter()
        .filter(|a| ids.contains(a.article_id.as_str()) && fixture_source.kind_of(a) == Some(AnnotatorKind::Human))
        .cloned()
        .collect();
    store.record_all(humans).map_err(|e| err(&e))?;

    let fixture = fixture_from_annotations(
        fixture_source
            .annotations()
            .iter()
            .filter(|a| ids.contains(a.article_id.as_str())),
    );
    let backend = MockBackend::new(fixture, None);
    let mut config = RunConfig::new(&ws_dir, veritas_core::llm::BackendKind::Mock);
    config.corpus = Some(corpus_file);
    config.versions = PromptVersion::ALL.to_vec();
    config.timestamp = Utc.with_ymd_and_hms(2021, 11, 20, 8, 0, 0).unwrap();
    config.seed = 42;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().map_err(|e| err(&e))?;
    let outcome = rt.block_on(cmd_annotate(&config, &backend)).map_err(|e| err(&e))?;
    ensure!(outcome.failures.is_empty(), "{} annotation failures", outcome.failures.len());
    ensure!(outcome.written == sample.len() * 6 * 2, "{} written", outcome.written);
    cmd_report(&ws_dir, ViewOptions::default()).map_err(|e| err(&e))?;

    let mut digests = Vec::new();
    for file in ["corpus.jsonl", "annotations.jsonl", "responses.jsonl", "reports/report.json", "reports/report.txt"] {
        let bytes = fs::read(ws_dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        digests.push(format!("{file} {}", sha256_hex(&bytes)));
    }
    let manifest = ws.manifest().map_err(|e| err(&e))?.ok_or("no manifest")?;
    digests.push(serde_json::to_string(&manifest.without_timestamps()).map_err(|e| err(&e))?);
    Ok(digests)
}

fn determinism_e2e() -> Check {
    let registry = Arc::new(Registry::default_registry());
    let source = generate(&registry, &TwinConfig::default())
        .into_store(registry)
        .map_err(|e| e.to_string())?;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = determinism_run(a.path(), &source)?;
    let second = determinism_run(b.path(), &source)?;
    for (x, y) in first.iter().zip(&second) {
        ensure!(x == y, "runs differ: {x} vs {y}");
    }
    Ok(())
}

#[derive(Deserialize)]
struct ParserCase {
    criterion: CriterionId,
    version: PromptVersion,
    response: String,
    answer: Option<String>,
    sub_answer: Option<String>,
    code: Option<String>,
}

#[derive(Deserialize)]
struct ParserFixture {
    labeled: Vec<ParserCase>,
    errors: Vec<ParserCase>,
}

fn parser_fixture() -> Check {
    let fixture: ParserFixture =
        serde_json::from_str(include_str!("fixtures/parser_it.json")).map_err(|e| e.to_string())?;
    let registry = Registry::default_registry();
    ensure!(fixture.labeled.len() == 20, "{} labeled responses", fixture.labeled.len());
    let mut exact = 0;
    for case in &fixture.labeled {
        let schema = registry.get(case.criterion).schema(case.version);
        match parse_response(&case.response, schema, "it") {
            Ok(p) if Some(p.answer.as_str()) == case.answer.as_deref()
                && p.sub_answer.as_ref().map(AnswerValue::as_str) == case.sub_answer.as_deref() =>
            {
                exact += 1
            }
            other => return Err(format!("{:?}: {other:?}", case.response)),
        }
    }
    ensure!(exact == 20, "{exact}/20 exact matches");
    for case in &fixture.errors {
        let schema = registry.get(case.criterion).schema(case.version);
        match parse_response(&case.response, schema, "it") {
            Err(e) if Some(e.code()) == case.code.as_deref() => {}
            other => return Err(format!("{:?}: {other:?}, expected {:?}", case.response, case.code)),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let checks: [NamedCheck; 11] = [
        ("kappa matches brute-force oracle on 200 random series", kappa_oracle),
        ("kappa of [[20,5],[10,15]] is exactly 0.40", analytic_case),
        ("kappa symmetry, relabeling invariance, bounds, perfect agreement", kappa_properties),
        ("kappa band thresholds", band_table),
        ("remapping labels commutes with collapsing the matrix", remap_commutes_with_collapse),
        ("relevant disagreement rule over all ordinal and binary pairs", relevance_rule),
        ("synthetic twin reproduces reference kappas and disagreement table", twin_reproduction),
        ("twin coverage totals 6120 annotations with no violations", coverage_arithmetic),
        ("repetition protocol over every multiset of three answers", repetition_protocol),
        ("two seeded end-to-end runs are byte-identical", determinism_e2e),
        ("Italian response fixture parses 20/20", parser_fixture),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        match std::panic::catch_unwind(check) {
            Ok(Ok(())) => println!("PASS  {name} ({:.2?})", started.elapsed()),
            Ok(Err(reason)) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
