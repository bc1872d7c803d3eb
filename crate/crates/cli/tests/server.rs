use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use batchfix::corpus::{load_corpus, write_corpus};
use batchfix::correction::{ClusterStatus, SessionState};
use batchfix::lexicon::{build_dictionary, write_word_list};
use batchfix::pipeline::{run_pipeline, CLUSTERING_FILE};
use batchfix::synthgen::{generate_corpus, GeneratorConfig};
use batchfix::{
    ActionLog, Clustering, Corpus, CorrectionMode, CostReport, Dictionary, DictionaryMode, Method, PipelineConfig,
    Suggestion, WordInstance,
};
use batchfix_cli::review::{ClusterDetail, ClusterSummary, Review, ReviewConfig, SessionSnapshot, SESSION_LOG};
use batchfix_cli::server::{router, serve, ActionResponse, AppState, TOKEN_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

struct Fixture {
    _tmp: TempDir,
    run_dir: PathBuf,
}

fn pipeline_run(dir: &Path, corpus: &Corpus, dict: &Dictionary, mode: DictionaryMode) -> PathBuf {
    let corpus_path = dir.join("corpus.jsonl");
    let dict_path = dir.join("dict.txt");
    write_corpus(corpus, &corpus_path).unwrap();
    write_word_list(dict, &dict_path).unwrap();
    let run_dir = dir.join("run");
    let config = PipelineConfig {
        method: Method::Mst,
        mode: CorrectionMode::Oracle,
        dictionary_mode: mode,
        seed: 5,
        ..PipelineConfig::new(&corpus_path, vec![dict_path], &run_dir)
    };
    run_pipeline(&config).unwrap();
    run_dir
}

fn synthetic(mode: DictionaryMode) -> Fixture {
    let tmp = TempDir::new().unwrap();
    let s = generate_corpus(&GeneratorConfig {
        vocabulary_size: 60,
        total_words: 400,
        embedding_dim: 8,
        seed: 3,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let dict = Dictionary::from_words(&s.dictionary_words, DictionaryMode::Static);
    let run_dir = pipeline_run(tmp.path(), &s.corpus, &dict, mode);
    Fixture { _tmp: tmp, run_dir }
}

/// Clusters {mapel x4 (w0 has an image)}, {foox, fool}, {the}.
fn handmade(mode: DictionaryMode) -> Fixture {
    let tmp = TempDir::new().unwrap();
    let preds = ["mapel", "mapel", "mapel", "mapel", "foox", "fool", "the"];
    let truth = ["maple", "maple", "maple", "maple", "food", "fool", "the"];
    let instances = preds
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (p, t))| WordInstance {
            id: format!("w{i}"),
            book_id: "b".into(),
            page_id: 0,
            prediction: (*p).into(),
            ground_truth: Some(t.into()),
            image_ref: (i == 0).then(|| "img/w0.png".to_owned()),
            embedding_row: i,
        })
        .collect();
    let corpus = Corpus::new(instances).unwrap();
    std::fs::create_dir_all(tmp.path().join("img")).unwrap();
    std::fs::write(tmp.path().join("img/w0.png"), b"\x89PNG fake").unwrap();
    let dict = Dictionary::from_counts([("food", 5), ("fool", 3), ("the", 9)], DictionaryMode::Static);
    let run_dir = pipeline_run(tmp.path(), &corpus, &dict, mode);
    Fixture { _tmp: tmp, run_dir }
}

fn open(run_dir: &Path) -> Review {
    Review::open(&ReviewConfig::new(run_dir)).unwrap()
}

fn app(run_dir: &Path) -> (Arc<AppState>, Router) {
    let state = AppState::new(open(run_dir), None);
    (state.clone(), router(state))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get_json<T: serde::de::DeserializeOwned>(app: &Router, uri: &str) -> T {
    let (status, body) = call(app, "GET", uri, None).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

async fn post_raw(app: &Router, uri: &str, raw: &str) -> StatusCode {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(raw.to_owned()))
        .unwrap();
    app.clone().oneshot(req).await.unwrap().status()
}

#[tokio::test]
async fn fresh_queue_is_pending_and_largest_first() {
    let f = synthetic(DictionaryMode::Static);
    let (_, app) = app(&f.run_dir);
    let list: Vec<ClusterSummary> = get_json(&app, "/api/clusters").await;
    assert!(list.len() > 3);
    assert!(list.iter().all(|c| c.status == ClusterStatus::Pending));
    assert!(list.windows(2).all(|w| w[0].size >= w[1].size));
    assert!(list.iter().all(|c| c.flagged_count >= 1));

    let by_id: Vec<ClusterSummary> = get_json(&app, "/api/clusters?sort=id&status=pending").await;
    assert!(by_id.windows(2).all(|w| w[0].id < w[1].id));
    assert_eq!(by_id.len(), list.len());
    let resolved: Vec<ClusterSummary> = get_json(&app, "/api/clusters?status=resolved").await;
    assert!(resolved.is_empty());

    let snap: SessionSnapshot = get_json(&app, "/api/session").await;
    assert_eq!(snap.clusters_pending, list.len());
    assert_eq!(snap.clusters_resolved, 0);
    assert_eq!(snap.members, list.iter().map(|c| c.size).sum::<usize>());
    assert_eq!(snap.cost.absolute_seconds, 0.0);
    assert_eq!(snap.method_tag, "mst");
    assert!(!snap.complete);
}

#[tokio::test]
async fn type_action_resolves_and_counts() {
    let f = handmade(DictionaryMode::Growing);
    let (_, app) = app(&f.run_dir);
    let list: Vec<ClusterSummary> = get_json(&app, "/api/clusters").await;
    let big = &list[0];
    assert_eq!((big.size, big.modal_prediction.as_str()), (4, "mapel"));

    let before: SessionSnapshot = get_json(&app, "/api/session").await;
    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/clusters/{}/action", big.id),
        Some(json!({"kind": "type", "label": "maple"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let resp: ActionResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.snapshot.cost.breakdown.v_t, before.cost.breakdown.v_t + 1);
    assert_eq!(resp.snapshot.cost.absolute_seconds, 15.0);
    assert_eq!(resp.snapshot.dictionary_size, before.dictionary_size + 1);

    let detail: ClusterDetail = get_json(&app, &format!("/api/clusters/{}", big.id)).await;
    assert_eq!(detail.summary.status, ClusterStatus::Resolved);
    assert!(detail.members.iter().all(|m| m.final_label.as_deref() == Some("maple")));

    let resolved: Vec<ClusterSummary> = get_json(&app, "/api/clusters?status=resolved").await;
    assert_eq!(resolved.iter().map(|c| c.id).collect::<Vec<_>>(), vec![big.id]);

    // growing dictionary: the typed word is suggested immediately
    let s: Vec<Suggestion> = get_json(&app, "/api/suggest?q=mapl&k=3").await;
    assert_eq!(s[0].word, "maple");
    let cost: CostReport = get_json(&app, "/api/cost").await;
    assert_eq!(cost, resp.snapshot.cost);
}

#[tokio::test]
async fn detail_has_suggestions_and_images() {
    let f = handmade(DictionaryMode::Static);
    let (_, app) = app(&f.run_dir);
    let list: Vec<ClusterSummary> = get_json(&app, "/api/clusters?sort=id").await;
    let foo = list.iter().find(|c| c.size == 2).unwrap();
    let detail: ClusterDetail = get_json(&app, &format!("/api/clusters/{}", foo.id)).await;
    assert_eq!(detail.summary.modal_prediction, "fool");
    let words: Vec<&str> = detail.suggestions.iter().map(|s| s.word.as_str()).collect();
    assert_eq!(words, vec!["fool", "food"]);
    assert!(detail.members.iter().all(|m| m.image_url.is_none()));

    let big = list.iter().find(|c| c.size == 4).unwrap();
    let detail: ClusterDetail = get_json(&app, &format!("/api/clusters/{}", big.id)).await;
    let url = detail.members[0].image_url.clone().unwrap();
    let (status, bytes) = call(&app, "GET", &url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"\x89PNG fake");
    let (status, _) = call(&app, "GET", "/api/images/w1", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // select rank 2 on the foo cluster
    let (status, body) = call(
        &app,
        "POST",
        &format!("/api/clusters/{}/action", foo.id),
        Some(json!({"kind": "select", "label": "food", "suggestion_rank": 2})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let resp: ActionResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(resp.snapshot.cost.breakdown.v_d, 1);
}

#[tokio::test]
async fn error_statuses() {
    let f = handmade(DictionaryMode::Static);
    let (_, app) = app(&f.run_dir);
    let list: Vec<ClusterSummary> = get_json(&app, "/api/clusters").await;
    let id = list[0].id;
    let action = format!("/api/clusters/{id}/action");

    assert_eq!(call(&app, "GET", "/api/clusters/999", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/clusters/abc", None).await.0, StatusCode::NOT_FOUND);
    let typed = json!({"kind": "type", "label": "maple"});
    assert_eq!(
        call(&app, "POST", "/api/clusters/999/action", Some(typed.clone())).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        call(&app, "POST", "/api/members/nope/action", Some(typed.clone())).await.0,
        StatusCode::NOT_FOUND
    );

    assert_eq!(post_raw(&app, &action, "{not json").await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post_raw(&app, &action, r#"{"kind":"shout","label":"x"}"#).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post_raw(&app, &action, r#"{"kind":"select","label":"food"}"#).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post_raw(&app, &action, r#"{"kind":"type","label":"  "}"#).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post_raw(&app, &action, r#"{"kind":"type","label":"a","extra":1}"#).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "GET", "/api/clusters?status=maybe", None).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "GET", "/api/suggest", None).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(call(&app, "GET", "/api/suggest?q=x&k=-1", None).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    // a member override is allowed before the cluster action, not after
    let member = "/api/members/w1/action";
    assert_eq!(
        call(&app, "POST", member, Some(json!({"kind": "type", "label": "mapla"}))).await.0,
        StatusCode::OK
    );
    assert_eq!(call(&app, "POST", &action, Some(typed.clone())).await.0, StatusCode::OK);
    assert_eq!(call(&app, "POST", &action, Some(typed.clone())).await.0, StatusCode::CONFLICT);
    assert_eq!(
        call(&app, "POST", "/api/members/w2/action", Some(typed)).await.0,
        StatusCode::CONFLICT
    );

    let snap: SessionSnapshot = get_json(&app, "/api/session").await;
    assert_eq!(snap.cost.breakdown.v_t, 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_have_one_winner() {
    let f = synthetic(DictionaryMode::Static);
    let (state, app) = app(&f.run_dir);
    let list: Vec<ClusterSummary> = get_json(&app, "/api/clusters").await;
    for target in list.iter().take(5) {
        let uri = format!("/api/clusters/{}/action", target.id);
        let tasks: Vec<_> = (0..4)
            .map(|i| {
                let app = app.clone();
                let uri = uri.clone();
                tokio::spawn(async move {
                    call(&app, "POST", &uri, Some(json!({"kind": "type", "label": format!("word{i}")})))
                        .await
                        .0
                })
            })
            .collect();
        let mut statuses = Vec::new();
        for t in tasks {
            statuses.push(t.await.unwrap());
        }
        statuses.sort();
        assert_eq!(
            statuses,
            vec![StatusCode::OK, StatusCode::CONFLICT, StatusCode::CONFLICT, StatusCode::CONFLICT]
        );
    }
    let review = state.read().unwrap();
    assert_eq!(review.session().log().len(), 5);
    let lines = std::fs::read_to_string(review.state_dir().join(SESSION_LOG)).unwrap();
    assert_eq!(lines.lines().count(), 5);
}

async fn drive(app: &Router) {
    let list: Vec<ClusterSummary> = get_json(app, "/api/clusters?sort=id").await;
    for (n, c) in list.iter().enumerate() {
        let detail: ClusterDetail = get_json(app, &format!("/api/clusters/{}", c.id)).await;
        let body = match n % 3 {
            0 => json!({"kind": "verify"}),
            1 => match detail.suggestions.first() {
                Some(s) => json!({"kind": "select", "label": s.word, "suggestion_rank": 1}),
                None => json!({"kind": "type", "label": "x"}),
            },
            _ => {
                let m = &detail.members[0].id;
                let (s, _) = call(
                    app,
                    "POST",
                    &format!("/api/members/{m}/action"),
                    Some(json!({"kind": "type", "label": "override"})),
                )
                .await;
                assert_eq!(s, StatusCode::OK);
                json!({"kind": "type", "label": format!("fix{n}")})
            }
        };
        let (s, _) = call(app, "POST", &format!("/api/clusters/{}/action", c.id), Some(body)).await;
        assert!(s == StatusCode::OK || s == StatusCode::CONFLICT, "{s}");
    }
}

#[tokio::test]
async fn restart_replays_acknowledged_actions() {
    let f = synthetic(DictionaryMode::Growing);
    let (state, app) = app(&f.run_dir);
    drive(&app).await;
    let snap: SessionSnapshot = get_json(&app, "/api/session").await;
    assert!(snap.complete);
    let (_, export) = call(&app, "GET", "/api/export", None).await;
    let log_path = state.read().unwrap().state_dir().join(SESSION_LOG);
    drop((state, app));

    let (_, again) = self::app(&f.run_dir);
    let snap2: SessionSnapshot = get_json(&again, "/api/session").await;
    assert_eq!(snap2, snap);
    let (_, export2) = call(&again, "GET", "/api/export", None).await;
    assert_eq!(export2, export);

    // an unacknowledged partial record is dropped on restart
    let intact = std::fs::read(&log_path).unwrap();
    let mut torn = intact.clone();
    torn.extend_from_slice(br#"{"kind":"type","scope":{"clu"#);
    std::fs::write(&log_path, &torn).unwrap();
    let (_, third) = self::app(&f.run_dir);
    let snap3: SessionSnapshot = get_json(&third, "/api/session").await;
    assert_eq!(snap3, snap);
    assert_eq!(std::fs::read(&log_path).unwrap(), intact);
}

#[tokio::test]
async fn corrupt_log_is_rejected() {
    let f = handmade(DictionaryMode::Static);
    let state_dir = ReviewConfig::new(&f.run_dir).state_dir();
    std::fs::create_dir_all(&state_dir).unwrap();
    std::fs::write(state_dir.join(SESSION_LOG), "{\"garbage\": true}\n").unwrap();
    let err = Review::open(&ReviewConfig::new(&f.run_dir)).unwrap_err();
    assert!(format!("{err:#}").contains("corrupt record"), "{err:#}");
}

#[tokio::test]
async fn export_matches_offline_replay() {
    let f = synthetic(DictionaryMode::Growing);
    let (state, app) = app(&f.run_dir);
    drive(&app).await;
    let (status, export) = call(&app, "GET", "/api/export", None).await;
    assert_eq!(status, StatusCode::OK);

    // offline: rebuild the session from the artifacts and replay the log
    let log_path = state.read().unwrap().state_dir().join(SESSION_LOG);
    let log = ActionLog::read_jsonl(std::io::BufReader::new(std::fs::File::open(log_path).unwrap())).unwrap();
    let manifest = batchfix::pipeline::config_from_manifest(&f.run_dir.join("manifest.json"), &f.run_dir).unwrap();
    let corpus = load_corpus(&manifest.corpus).unwrap();
    let clustering = Clustering::read_jsonl(
        &corpus,
        std::io::BufReader::new(std::fs::File::open(f.run_dir.join(CLUSTERING_FILE)).unwrap()),
    )
    .unwrap();
    let dict = build_dictionary(&manifest.dictionaries, DictionaryMode::Growing).unwrap();
    let offline = SessionState::replay(
        Arc::new(corpus.clone()),
        Arc::new(clustering),
        dict,
        manifest.correction.suggest,
        log.actions(),
    )
    .unwrap();
    let mut expected = Vec::new();
    offline.result().write_corpus(&corpus, &mut expected).unwrap();
    assert_eq!(export, expected);
    assert_eq!(offline.log(), state.read().unwrap().session().log());
}

#[tokio::test]
async fn token_is_enforced_when_set() {
    let f = handmade(DictionaryMode::Static);
    let app = router(AppState::new(open(&f.run_dir), Some("s3cret".into())));
    assert_eq!(call(&app, "GET", "/api/session", None).await.0, StatusCode::UNAUTHORIZED);
    let req = |token: &str| {
        Request::builder()
            .uri("/api/session")
            .header(TOKEN_HEADER, token)
            .body(Body::empty())
            .unwrap()
    };
    assert_eq!(app.clone().oneshot(req("nope")).await.unwrap().status(), StatusCode::UNAUTHORIZED);
    assert_eq!(app.clone().oneshot(req("s3cret")).await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn shutdown_persists_session() {
    let f = handmade(DictionaryMode::Static);
    let state = AppState::new(open(&f.run_dir), None);
    let app = router(state.clone());
    let list: Vec<ClusterSummary> = get_json(&app, "/api/clusters").await;
    call(
        &app,
        "POST",
        &format!("/api/clusters/{}/action", list[0].id),
        Some(json!({"kind": "type", "label": "maple"})),
    )
    .await;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, state.clone(), async {
        let _ = rx.await;
    }));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();

    let dir = state.read().unwrap().state_dir().to_path_buf();
    let snap: SessionSnapshot = serde_json::from_slice(&std::fs::read(dir.join("session.json")).unwrap()).unwrap();
    assert_eq!(snap.clusters_resolved, 1);
    let exported = std::fs::read_to_string(dir.join("corrected.jsonl")).unwrap();
    assert_eq!(exported.lines().count(), 7);
    assert!(exported.lines().next().unwrap().contains("\"maple\""));
}
