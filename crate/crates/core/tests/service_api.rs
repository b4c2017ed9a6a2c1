mod common;

use std::fs;

use axum::http::StatusCode;
use axum::Router;
use common::{call, call_raw, service, switchable, Switchable};
use curate_core::{router, AblationMode};
use serde_json::{json, Value};
use tempfile::TempDir;

struct Harness {
    dir: TempDir,
    app: Router,
    provider: Switchable,
}

fn harness(mode: AblationMode, detect: &'static str, fork: &'static str) -> Harness {
    let dir = TempDir::new().unwrap();
    let provider = switchable(detect, fork);
    let app = router(service(dir.path(), mode, &provider.mock));
    Harness { dir, app, provider }
}

impl Harness {
    async fn create(&self, mode: &str) -> String {
        let (status, body) =
            call(&self.app, "POST", "/sessions", Some(json!({"goal": "Apply for a PhD in NLP", "mode": mode}))).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["session_id"].as_str().unwrap().to_owned()
    }

    async fn snapshot(&self, id: &str) -> (Value, Vec<u8>) {
        let (status, session) = call(&self.app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        (session, fs::read(self.dir.path().join(format!("{id}.json"))).unwrap())
    }

    /// Sends a request expected to fail and checks that neither the served
    /// session nor its file changed.
    async fn rejects(&self, id: &str, method: &str, uri: &str, body: Option<Value>, status: u16, code: &str) -> Value {
        let before = self.snapshot(id).await;
        let (got, err) = call(&self.app, method, uri, body).await;
        assert_eq!(got.as_u16(), status, "{method} {uri}: {err}");
        assert_eq!(err["code"], code, "{err}");
        assert!(err["message"].is_string());
        assert!(err.get("detail").is_some());
        assert_eq!(self.snapshot(id).await, before, "{method} {uri} changed state");
        err
    }

    async fn add_context(&self, id: &str, key: &str, value: &str) {
        let (status, body) =
            call(&self.app, "POST", &format!("/sessions/{id}/context"), Some(json!({"key": key, "value": value}))).await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
    }

    async fn decompose_root(&self, id: &str) -> Vec<Value> {
        let (status, body) = call(&self.app, "POST", &format!("/sessions/{id}/nodes/n0/decompose"), None).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body["children"].as_array().unwrap().clone()
    }
}

#[tokio::test]
async fn create_session_per_mode() {
    let h = harness(AblationMode::FullCuration, "No", "No");
    let (status, body) =
        call(&h.app, "POST", "/sessions", Some(json!({"goal": "Apply for a PhD in NLP", "mode": "full_curation"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["questions"].as_array().unwrap().len(), 2);
    assert_eq!(body["questions"][0]["expects_file"], true);

    let (status, body) =
        call(&h.app, "POST", "/sessions", Some(json!({"goal": "Apply for a PhD in NLP", "mode": "reuse_only"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["questions"], json!([]));
    assert_ne!(body["session_id"], "s1");

    let id = body["session_id"].as_str().unwrap();
    assert!(h.dir.path().join(format!("{id}.json")).exists());
}

#[tokio::test]
async fn create_session_rejects_bad_input() {
    let h = harness(AblationMode::FullCuration, "No", "No");
    for body in [json!({"goal": ""}), json!({"goal": "   "}), json!({"mode": "reuse_only"}), json!({"goal": "x", "mode": "turbo"})]
    {
        let (status, err) = call(&h.app, "POST", "/sessions", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["code"], "bad_request");
    }
    let (status, _) = call_raw(&h.app, "POST", "/sessions", "{not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(fs::read_dir(h.dir.path()).map(|d| d.count()).unwrap_or(0), 0);
}

#[tokio::test]
async fn provider_outage_on_create_registers_nothing() {
    let h = harness(AblationMode::FullCuration, "No", "No");
    h.provider.set_down(true);
    let (status, err) = call(&h.app, "POST", "/sessions", Some(json!({"goal": "Apply for a PhD in NLP"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(err["code"], "provider_unavailable");
    assert_eq!(err["detail"]["cause"], "provider_timeout");
    assert_eq!(fs::read_dir(h.dir.path()).map(|d| d.count()).unwrap_or(0), 0);
}

#[tokio::test]
async fn answers_commit_global_context() {
    let h = harness(AblationMode::FullCuration, "No", "No");
    let id = h.create("full_curation").await;
    let answers = json!({"answers": [
        {"question_id": "q1", "file_name": "john_cv.txt", "file_content": "John Doe. MSc in CS."},
        {"question_id": "q2", "skip": true}
    ]});
    let (status, body) = call(&h.app, "POST", &format!("/sessions/{id}/answers"), Some(answers)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let keys = body["global_context_keys"].as_array().unwrap();
    assert_eq!(keys.len(), 1);
    assert!(keys[0].as_str().unwrap().starts_with("What are your potential target schools?"));

    let (_, ctx) = call(&h.app, "GET", &format!("/sessions/{id}/context?scope=global"), None).await;
    let provenances: Vec<&str> = ctx["entries"].as_array().unwrap().iter().map(|e| e["provenance"].as_str().unwrap()).collect();
    assert_eq!(provenances, ["goal_statement", "uploaded_document"]);

    let (status, body) = call(&h.app, "POST", &format!("/sessions/{id}/answers"), Some(json!({"answers": []}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["global_context_keys"], json!([]));

    h.rejects(&id, "POST", &format!("/sessions/{id}/answers"), Some(json!({"answers": [{"question_id": "q9", "text": "x"}]})), 400, "unknown_question").await;
    h.rejects(&id, "POST", &format!("/sessions/{id}/answers"), Some(json!({"answers": "nope"})), 400, "bad_request").await;

    let (status, err) = call(&h.app, "POST", "/sessions/nope/answers", Some(json!({"answers": []}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
}

#[tokio::test]
async fn tree_grows_with_decomposition() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let id = h.create("reuse_only").await;
    let (status, body) = call(&h.app, "GET", &format!("/sessions/{id}/tree"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tree"]["nodes"].as_object().unwrap().len(), 1);

    let children = h.decompose_root(&id).await;
    assert_eq!(children.len(), 3);
    assert_eq!(children[0]["level"], 1);
    assert_eq!(children[0]["status"], "unexplored");

    let (_, body) = call(&h.app, "GET", &format!("/sessions/{id}/tree"), None).await;
    assert_eq!(body["tree"]["nodes"].as_object().unwrap().len(), 4);
    assert_eq!(body["tree"]["nodes"]["n0"]["decomposition"], "standard");
    assert!(body["outline"].as_str().unwrap().contains("Get Recommendation Letters"));

    h.rejects(&id, "POST", &format!("/sessions/{id}/nodes/n0/decompose"), None, 409, "already_decomposed").await;
    h.rejects(&id, "POST", &format!("/sessions/{id}/nodes/n99/decompose"), None, 404, "unknown_node").await;

    let (status, _) = call(&h.app, "GET", "/sessions/missing/tree", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&h.app, "GET", "/sessions/..%2Fetc/tree", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn detect_actionable_leaf() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let id = h.create("reuse_only").await;
    h.decompose_root(&id).await;
    let (status, body) = call(&h.app, "POST", &format!("/sessions/{id}/nodes/n1/detect"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["needs_decomposition"], false);
    assert_eq!(body["should_fork"], false);
    assert_eq!(body["fork_reasoning"], Value::Null);

    h.rejects(&id, "POST", &format!("/sessions/{id}/nodes/n1/detect"), Some(json!({"strategy": "psychic"})), 400, "bad_request").await;
    h.provider.set_down(true);
    let err = h.rejects(&id, "POST", &format!("/sessions/{id}/nodes/n2/detect"), None, 503, "provider_unavailable").await;
    assert_eq!(err["detail"]["cause"], "provider_timeout");
}

#[tokio::test]
async fn detect_and_fork_over_entities() {
    let h = harness(AblationMode::SelectionAndReuse, "Yes", "Yes");
    let id = h.create("selection_and_reuse").await;
    h.decompose_root(&id).await;

    // Forking needs local context to pick entities from.
    let uri = format!("/sessions/{id}/nodes/n2/context-selection");
    h.rejects(&id, "POST", &uri, Some(json!({"purpose": "forking"})), 409, "no_local_context").await;
    h.add_context(&id, "Recommenders", "Prof. Blake White, Prof. Julian Deng, Dr. Alice Feng").await;

    let decompose = format!("/sessions/{id}/nodes/n2/decompose");
    h.rejects(&id, "POST", &format!("/sessions/{id}/nodes/n2/draft"), Some(json!({"action": "save"})), 400, "invalid_request").await;

    let (status, body) = call(&h.app, "POST", &format!("/sessions/{id}/nodes/n2/detect"), Some(json!({"strategy": "few_shot_cot"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!((body["needs_decomposition"].clone(), body["should_fork"].clone()), (json!(true), json!(true)));

    let (status, body) = call(&h.app, "POST", &uri, Some(json!({"purpose": "forking"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["candidates"][0]["key"], "Recommenders");
    assert_eq!(body["candidates"][0]["accepted"], true);

    let (status, body) = call(&h.app, "POST", &decompose, Some(json!({"accepted_keys": ["Recommenders"]}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let titles: Vec<&str> = body["children"].as_array().unwrap().iter().map(|c| c["title"].as_str().unwrap()).collect();
    assert_eq!(
        titles,
        [
            "Get Recommendation Letters: Prof. Blake White",
            "Get Recommendation Letters: Prof. Julian Deng",
            "Get Recommendation Letters: Dr. Alice Feng"
        ]
    );
    let (_, tree) = call(&h.app, "GET", &format!("/sessions/{id}/tree"), None).await;
    assert_eq!(tree["tree"]["nodes"]["n2"]["decomposition"], "fork");
    h.rejects(&id, "POST", &decompose, Some(json!({"accepted_keys": ["Recommenders"]})), 409, "already_decomposed").await;
}

#[tokio::test]
async fn selection_is_gated_in_reuse_only() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let id = h.create("reuse_only").await;
    h.decompose_root(&id).await;
    h.add_context(&id, "CV", "John Doe").await;
    let uri = format!("/sessions/{id}/nodes/n1/context-selection");
    let err = h.rejects(&id, "POST", &uri, Some(json!({"purpose": "drafting"})), 409, "feature_disabled").await;
    assert_eq!(err["detail"]["mode"], "reuse_only");
    h.rejects(&id, "POST", &uri, Some(json!({"purpose": "sideways"})), 400, "bad_request").await;
}

#[tokio::test]
async fn draft_generate_iterate_save() {
    let h = harness(AblationMode::SelectionAndReuse, "No", "No");
    let id = h.create("selection_and_reuse").await;
    h.decompose_root(&id).await;
    h.add_context(&id, "CV", "John Doe").await;
    let uri = format!("/sessions/{id}/nodes/n1/draft");

    let (status, body) = call(&h.app, "POST", &format!("/sessions/{id}/nodes/n1/context-selection"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["candidates"][0]["key"], "CV");

    let (status, body) = call(&h.app, "POST", &uri, Some(json!({"action": "generate", "accepted_keys": ["CV"]}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["draft"]["revision"], 1);
    assert_eq!(body["draft"]["context_keys_used"], json!(["CV"]));

    let (_, body) = call(&h.app, "POST", &uri, Some(json!({"action": "regenerate"}))).await;
    assert_eq!(body["draft"]["revision"], 2);
    assert_eq!(body["draft"]["lineage"], "regenerated");
    assert_eq!(body["draft"]["context_keys_used"], json!(["CV"]));

    let (_, body) = call(&h.app, "POST", &uri, Some(json!({"action": "iterate", "instruction": "Shorter please."}))).await;
    assert_eq!(body["draft"]["revision"], 3);
    assert_eq!(body["draft"]["content"], "Iterated draft text.");

    h.rejects(&id, "POST", &uri, Some(json!({"action": "iterate", "instruction": " "})), 400, "bad_request").await;
    h.rejects(&id, "POST", &uri, Some(json!({"action": "iterate"})), 400, "bad_request").await;
    h.rejects(&id, "POST", &uri, Some(json!({"action": "elicit_and_regenerate"})), 409, "feature_disabled").await;
    h.rejects(&id, "POST", &uri, Some(json!({"action": "generate", "accepted_keys": ["Nope"]})), 400, "unknown_key").await;
    h.rejects(&id, "POST", &uri, Some(json!({"action": "save", "revision": 7})), 400, "invalid_request").await;
    h.rejects(&id, "POST", &uri, Some(json!({"action": "dance"})), 400, "bad_request").await;

    let (status, body) = call(&h.app, "POST", &uri, Some(json!({"action": "save", "revision": 1}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let key = body["saved_key"].as_str().unwrap();
    assert_eq!(key, "Identify Potential PhD Programs — draft");
    assert_eq!(body["node"]["status"], "completed");
    assert_eq!(body["node"]["draft_ref"], key);

    let (_, ctx) = call(&h.app, "GET", &format!("/sessions/{id}/context"), None).await;
    let entry = &ctx["entries"][1];
    assert_eq!((entry["key"].as_str().unwrap(), entry["provenance"].as_str().unwrap()), (key, "saved_draft"));
    assert_eq!(entry["source_node"], "n1");
}

#[tokio::test]
async fn draft_context_elicitation_round() {
    let h = harness(AblationMode::FullCuration, "No", "No");
    let id = h.create("full_curation").await;
    h.decompose_root(&id).await;
    let uri = format!("/sessions/{id}/nodes/n2/draft");
    h.rejects(&id, "POST", &uri, Some(json!({"action": "elicit_and_regenerate"})), 400, "invalid_request").await;

    call(&h.app, "POST", &uri, Some(json!({"action": "generate"}))).await;
    let (status, body) = call(&h.app, "POST", &uri, Some(json!({"action": "elicit_and_regenerate"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let questions = body["questions"].as_array().unwrap();
    assert_eq!(questions.len(), 2);
    assert_eq!(questions[0]["node"], "n2");
    let (q1, q2) = (questions[0]["id"].as_str().unwrap(), questions[1]["id"].as_str().unwrap());

    h.rejects(&id, "POST", &uri, Some(json!({"action": "elicit_and_regenerate", "answers": [{"question_id": "q1", "text": "x"}]})), 400, "unknown_question").await;

    let answers = json!([{"question_id": q1, "text": "The ACL workshop paper"}, {"question_id": q2, "skip": true}]);
    let (status, body) = call(&h.app, "POST", &uri, Some(json!({"action": "elicit_and_regenerate", "answers": answers}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["draft"]["lineage"], "regenerated_with_context");
    assert_eq!(body["draft"]["context_keys_used"], json!(["Which projects did you do together?"]));
}

#[tokio::test]
async fn context_listing_and_adding() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let id = h.create("reuse_only").await;
    let ctx = format!("/sessions/{id}/context");
    let (_, body) = call(&h.app, "GET", &ctx, None).await;
    assert_eq!(body["entries"], json!([]));
    let (_, body) = call(&h.app, "GET", &format!("{ctx}?scope=global"), None).await;
    assert_eq!(body["entries"][0]["key"], "Goal");

    let (status, body) =
        call(&h.app, "POST", &ctx, Some(json!({"key": "Location preference", "value": "I want schools in the Midwest of the US."}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["key"], "Location preference");
    let (_, body) = call(&h.app, "GET", &format!("{ctx}?scope=local"), None).await;
    assert_eq!(body["entries"], json!([{"key": "Location preference", "provenance": "user_added", "source_node": null}]));

    h.rejects(&id, "POST", &ctx, Some(json!({"key": "", "value": "x"})), 400, "invalid_entry").await;
    h.rejects(&id, "POST", &ctx, Some(json!({"key": "Big", "value": "x".repeat(64 * 1024 + 1)})), 400, "invalid_entry").await;
    h.rejects(&id, "POST", &ctx, Some(json!({"key": "k"})), 400, "bad_request").await;
    h.rejects(&id, "GET", &format!("{ctx}?scope=everywhere"), None, 400, "bad_request").await;
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let (status, body) = call(&h.app, "GET", "/health", None).await;
    assert_eq!((status, body), (StatusCode::OK, json!({"status": "ok"})));
    let (status, body) = call(&h.app, "GET", "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let id = h.create("reuse_only").await;
    h.decompose_root(&id).await;
    h.add_context(&id, "CV", "John Doe").await;
    let (_, before) = call(&h.app, "GET", &format!("/sessions/{id}"), None).await;

    let restarted = router(service(h.dir.path(), AblationMode::FullCuration, &h.provider.mock));
    let (status, after) = call(&restarted, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    assert_eq!(after["mode"], "reuse_only");

    // New ids skip the ones already on disk.
    let (_, body) = call(&restarted, "POST", "/sessions", Some(json!({"goal": "g", "mode": "reuse_only"}))).await;
    assert_ne!(body["session_id"], id.as_str());
}

#[tokio::test]
async fn locked_session_is_a_conflict() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let id = h.create("reuse_only").await;
    let lock = h.dir.path().join(format!("{id}.json.lock"));
    fs::write(&lock, "").unwrap();
    h.rejects(&id, "POST", &format!("/sessions/{id}/context"), Some(json!({"key": "k", "value": "v"})), 409, "session_locked").await;
    fs::remove_file(&lock).unwrap();
    h.add_context(&id, "k", "v").await;
}

#[tokio::test]
async fn corrupt_session_file_is_a_server_error() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    fs::write(h.dir.path().join("broken.json"), "{\"schema_version\": 1}").unwrap();
    let (status, err) = call(&h.app, "GET", "/sessions/broken", None).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(err["code"], "corrupt_session");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_on_one_session_serialize() {
    let h = harness(AblationMode::ReuseOnly, "No", "No");
    let id = h.create("reuse_only").await;
    let tasks: Vec<_> = (0..16)
        .map(|i| {
            let app = h.app.clone();
            let uri = format!("/sessions/{id}/context");
            tokio::spawn(async move { call(&app, "POST", &uri, Some(json!({"key": format!("k{i}"), "value": "v"}))).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    let (session, file) = h.snapshot(&id).await;
    assert_eq!(session["context"].as_array().unwrap().len(), 17);
    let seqs: Vec<u64> = session["events"].as_array().unwrap().iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>());
    assert_eq!(serde_json::from_slice::<Value>(&file).unwrap(), session);
}
