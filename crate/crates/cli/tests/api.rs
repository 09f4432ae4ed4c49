use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use veritas_cli::api::{assigned_pair, router, AppState};
use veritas_core::annotations::{Annotation, AnnotationStore, Annotator, AnnotatorKind};
use veritas_core::corpus::Article;
use veritas_core::criteria::{AnswerValue, CriterionId, PromptVersion, Registry};
use veritas_core::twin::{generate, TwinConfig};

fn registry() -> Arc<Registry> {
    Arc::new(Registry::default_registry())
}

fn corpus(n: usize) -> Vec<Article> {
    generate(&registry(), &TwinConfig::default()).corpus[..n].to_vec()
}

fn fresh_state(n: usize) -> Arc<AppState> {
    let mut store = AnnotationStore::in_memory(registry());
    for (id, kind) in [
        ("alice", AnnotatorKind::Human),
        ("bob", AnnotatorKind::Human),
        ("carol", AnnotatorKind::Human),
        ("gpt-4o", AnnotatorKind::Llm),
        ("judge", AnnotatorKind::Adjudicator),
    ] {
        store.register_annotator(Annotator::new(id, kind)).unwrap();
    }
    let mut state = AppState::new(store, corpus(n));
    state.clock = Box::new(|| Utc.with_ymd_and_hms(2022, 1, 10, 12, 0, 0).unwrap());
    Arc::new(state)
}

fn twin_state() -> Arc<AppState> {
    let twin = generate(&registry(), &TwinConfig::default());
    let corpus = twin.corpus.clone();
    Arc::new(AppState::new(twin.into_store(registry()).unwrap(), corpus))
}

async fn call(state: &Arc<AppState>, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => request
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => request.body(Body::empty()).unwrap(),
    };
    let response = router(Arc::clone(state)).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn annotation(article: &str, annotator: &str, answer: &str) -> Value {
    json!({ "article_id": article, "criterion": "HeadAcc", "annotator_id": annotator, "answer": answer })
}

#[tokio::test]
async fn articles_hide_publisher_and_url() {
    let state = fresh_state(4);
    let (status, list) = call(&state, Method::GET, "/articles", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 4);
    let id = list[0]["id"].as_str().unwrap().to_string();
    let (status, article) = call(&state, Method::GET, &format!("/articles/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    for value in [&list[0], &article] {
        let object = value.as_object().unwrap();
        assert!(!object.contains_key("publisher_id"));
        assert!(!object.contains_key("url"));
    }
    assert!(article["body"].as_str().unwrap().len() > 20);

    let (status, err) = call(&state, Method::GET, "/articles/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "ARTICLE_NOT_FOUND");
}

#[tokio::test]
async fn posting_annotations_maps_errors_to_statuses() {
    let state = fresh_state(2);
    let article = state.corpus[0].id.clone();

    let (status, created) = call(&state, Method::POST, "/annotations", Some(annotation(&article, "alice", "Accurate"))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(created["created_at"], "2022-01-10T12:00:00Z");

    let cases = [
        (annotation(&article, "alice", "Inaccurate"), StatusCode::CONFLICT, "DUPLICATE_ANNOTATION"),
        (annotation(&article, "bob", "Maybe"), StatusCode::BAD_REQUEST, "SCHEMA_VIOLATION"),
        (annotation("missing", "bob", "Accurate"), StatusCode::NOT_FOUND, "ARTICLE_NOT_FOUND"),
        (annotation(&article, "dave", "Accurate"), StatusCode::NOT_FOUND, "ANNOTATOR_NOT_FOUND"),
        (
            json!({ "article_id": article, "criterion": "Nope", "annotator_id": "bob", "answer": "Yes" }),
            StatusCode::BAD_REQUEST,
            "INVALID_CRITERION",
        ),
        (
            json!({ "article_id": article, "criterion": "NegTarg", "annotator_id": "bob", "answer": "Yes" }),
            StatusCode::BAD_REQUEST,
            "SCHEMA_VIOLATION",
        ),
    ];
    for (body, expected, code) in cases {
        let (status, err) = call(&state, Method::POST, "/annotations", Some(body.clone())).await;
        assert_eq!(status, expected, "{body}");
        assert_eq!(err["error"], code, "{body}");
        assert!(err["message"].is_string());
    }

    let (status, list) = call(&state, Method::GET, &format!("/annotations?article={article}&criterion=HeadAcc"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    let (status, _) = call(&state, Method::GET, "/annotations?criterion=Bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn agreement_matches_twin_and_reports_missing_cells() {
    let state = twin_state();
    let (status, body) = call(&state, Method::GET, "/agreement?criterion=NegTargDetection&version=initial", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!((body["report"]["kappa"].as_f64().unwrap() - 0.7089).abs() < 5e-5);
    let (status, all) = call(&state, Method::GET, "/agreement?version=refined", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(all.as_array().unwrap().len(), 6);

    let empty = fresh_state(2);
    let (status, err) = call(&empty, Method::GET, "/agreement?criterion=ArtBias", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["error"], "NO_CONSENSUS_CELLS");
    let (status, _) = call(&empty, Method::GET, "/agreement?criterion=ArtBias&version=final", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn table5_endpoint_reproduces_twin_rows() {
    let state = twin_state();
    let (status, body) = call(&state, Method::GET, "/summary/table5", None).await;
    assert_eq!(status, StatusCode::OK);
    let rows = body["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[2]["criterion_aspect"], "NegTarg (Detection)");
    assert_eq!(rows[2]["relevant_disagreements"], 30);
    assert_eq!(rows[2]["llm_correct"], 18);
    assert_eq!(body["articles_with_disagreement"], 226);
    assert!(body["text"].as_str().unwrap().contains("HeadAcc"));

    let (status, queue) = call(&state, Method::GET, "/adjudication/queue", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(queue, json!([]));
}

fn llm(article: &str, answer: &str) -> Annotation {
    Annotation {
        article_id: article.into(),
        criterion_id: CriterionId::HeadAcc,
        annotator_id: "gpt-4o".into(),
        prompt_version: PromptVersion::Initial,
        answer: Some(AnswerValue::new(answer)),
        sub_answer: None,
        evidence: None,
        created_at: Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
    }
}

#[tokio::test]
async fn adjudication_hides_then_reveals_the_llm_answer() {
    let state = fresh_state(3);
    let (a0, a1) = (state.corpus[0].id.clone(), state.corpus[1].id.clone());
    for (article, who, answer) in [
        (&a0, "alice", "Accurate"),
        (&a0, "bob", "Inaccurate"),
        (&a1, "bob", "Accurate"),
        (&a1, "carol", "Quite inaccurate"),
    ] {
        let (status, _) = call(&state, Method::POST, "/annotations", Some(annotation(article, who, answer))).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    state.store.write().await.record(llm(&a0, "Accurate")).unwrap();

    let (status, queue) = call(&state, Method::GET, "/adjudication/queue", None).await;
    assert_eq!(status, StatusCode::OK);
    let queue = queue.as_array().unwrap();
    assert_eq!(queue.len(), 2);
    assert!(queue.iter().all(|item| item.get("llm_answer").is_none()));
    assert!(queue[0]["article"]["body"].is_string());

    let case_id = format!("HeadAcc:{a0}");
    let (status, err) = call(&state, Method::POST, "/adjudication/HeadAcc:nope", Some(json!({ "adjudicator_id": "judge", "ground_truth": "Accurate" }))).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::NOT_FOUND, Some("CASE_NOT_FOUND")));
    let (status, err) = call(
        &state,
        Method::POST,
        &format!("/adjudication/HeadAcc:{a1}"),
        Some(json!({ "adjudicator_id": "judge", "ground_truth": "Accurate" })),
    )
    .await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::CONFLICT, Some("NO_LLM_ANSWER")));
    let (status, _) = call(&state, Method::POST, &format!("/adjudication/{case_id}"), Some(json!({ "adjudicator_id": "alice", "ground_truth": "Accurate" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, err) = call(&state, Method::POST, &format!("/adjudication/{case_id}"), Some(json!({ "adjudicator_id": "judge", "ground_truth": "Sometimes" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");

    let (status, case) = call(&state, Method::POST, &format!("/adjudication/{case_id}"), Some(json!({ "adjudicator_id": "judge", "ground_truth": "Accurate" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(case["llm_answer"], "Accurate");
    assert_eq!(case["outcome"], "resolved_correct");

    let (status, case) = call(&state, Method::POST, &format!("/adjudication/HeadAcc:{a1}"), Some(json!({ "adjudicator_id": "judge", "ground_truth": null }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(case["outcome"], "borderline");

    let (_, queue) = call(&state, Method::GET, "/adjudication/queue", None).await;
    assert_eq!(queue, json!([]));
}

#[test]
fn pairs_rotate_over_three_annotators() {
    let humans: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let pairs: Vec<_> = (0..4).map(|i| assigned_pair(&humans, i).unwrap()).collect();
    assert_eq!(pairs, vec![["a", "b"], ["b", "c"], ["a", "c"], ["a", "b"]]);
    assert!(assigned_pair(&humans[..1], 0).is_none());
}

#[tokio::test]
async fn task_queue_walks_assigned_articles() {
    let state = fresh_state(3);
    // bob is paired on articles 0 and 1, carol on 1 and 2.
    let (status, task) = call(&state, Method::GET, "/tasks/bob/next", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(task["article"]["id"], state.corpus[0].id.as_str());
    assert_eq!(task["criterion"], "HeadAcc");
    assert_eq!(task["progress"], json!({ "done": 0, "total": 12 }));
    assert_eq!(task["options"].as_array().unwrap().len(), 4);
    assert!(task["question"].as_str().unwrap().contains("1."));

    let (_, task) = call(&state, Method::GET, "/tasks/carol/next", None).await;
    assert_eq!(task["article"]["id"], state.corpus[1].id.as_str());

    let answers = [
        ("HeadAcc", "Accurate", None),
        ("LedePres", "Yes", None),
        ("NegTarg", "Yes", Some("Politics")),
        ("ArtBias", "Unbiased", None),
        ("SensLang", "Neutral", None),
        ("Type", "Straight news", None),
    ];
    for article in [&state.corpus[0].id, &state.corpus[1].id] {
        for (criterion, answer, sub) in answers {
            let (_, task) = call(&state, Method::GET, "/tasks/bob/next", None).await;
            assert_eq!(task["criterion"], criterion);
            if criterion == "NegTarg" {
                assert!(!task["sub_options"].as_array().unwrap().is_empty());
                assert_eq!(task["sub_options_after"], "Yes");
            }
            let option = task["options"]
                .as_array()
                .unwrap()
                .iter()
                .find(|o| o["value"] == answer)
                .unwrap_or_else(|| panic!("{answer} not offered for {criterion}: {task}"));
            let sub_answer = sub.map(|s| {
                task["sub_options"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .find(|o| o["label"] == s || o["value"] == s)
                    .unwrap()["value"]
                    .clone()
            });
            let body = json!({
                "article_id": article, "criterion": criterion, "annotator_id": "bob",
                "answer": option["value"], "sub_answer": sub_answer,
            });
            let (status, err) = call(&state, Method::POST, "/annotations", Some(body)).await;
            assert_eq!(status, StatusCode::CREATED, "{err}");
        }
    }
    let (status, err) = call(&state, Method::GET, "/tasks/bob/next", None).await;
    assert_eq!((status, err["error"].as_str()), (StatusCode::NOT_FOUND, Some("QUEUE_EMPTY")));
    let (status, _) = call(&state, Method::GET, "/tasks/judge/next", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
