mod common;

use budget_mcts::drivers::client::{envelope, ChatClient, EndpointConfig};
use budget_mcts::drivers::fixture::{load_exchanges, reply, status, FixtureServer};
use budget_mcts::drivers::GenError;
use budget_mcts::lessons::LessonPool;
use budget_mcts::run::{execute, EXCHANGE_FILE};
use budget_mcts::trajectory::{EventKind, Trajectory};

fn client(server: &FixtureServer, retries: u32) -> ChatClient {
    ChatClient::new(EndpointConfig {
        base_url: server.base_url(),
        model: "fixture-model".into(),
        retry_cap: retries,
        backoff_ms: 1,
        timeout_secs: 5.0,
        ..EndpointConfig::default()
    })
}

#[test]
fn rate_limited_call_is_retried() {
    let server = FixtureServer::start(vec![status(429, "slow down"), reply("hello")]).unwrap();
    let done = client(&server, 3).complete("say hello").unwrap();
    assert_eq!(done.content, "hello");
    assert_eq!(done.attempts, 2);
    let received = server.received();
    assert_eq!(received.len(), 2);
    assert_eq!(received[0]["model"], "fixture-model");
    assert_eq!(received[0]["messages"][0]["content"], "say hello");
}

#[test]
fn retries_are_capped() {
    let server =
        FixtureServer::start(vec![status(500, "a"), status(503, "b"), status(502, "c")]).unwrap();
    let err = client(&server, 2).complete("x").unwrap_err();
    assert!(
        matches!(err, GenError::DriverUnavailable { attempts: 2, .. }),
        "{err:?}"
    );
    assert_eq!(server.received().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let server = FixtureServer::start(vec![status(400, "bad request"), reply("late")]).unwrap();
    assert!(client(&server, 5).complete("x").is_err());
    assert_eq!(server.received().len(), 1);
}

#[test]
fn malformed_envelope_is_a_protocol_error() {
    let server = FixtureServer::start(vec![status(200, "{\"choices\": []}")]).unwrap();
    let err = client(&server, 3).complete("x").unwrap_err();
    assert!(matches!(err, GenError::DriverProtocolError(_)), "{err:?}");
    assert!(envelope("hi").contains("\"hi\""));
}

/// Measured runtimes are the only wall-clock input to a prompt.
fn mask_timing(request: &str) -> String {
    let re = regex::Regex::new(r"Execution time: [0-9.]+").unwrap();
    re.replace_all(request, "Execution time: <t>").into_owned()
}

/// Model calls of one scripted cycle, run from a recording when given.
fn cycle(
    recording: Option<&std::path::Path>,
) -> (Vec<(String, String, String)>, tempfile::TempDir) {
    let server = match recording {
        Some(path) => FixtureServer::from_file(path).unwrap(),
        None => FixtureServer::start(common::scripted_cycle()).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::llm_cycle_config(server.base_url());
    let r = execute(
        &cfg,
        &Trajectory::in_memory(),
        &LessonPool::new(),
        Some(dir.path()),
    )
    .unwrap();
    let calls = r
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::ModelCall {
                purpose,
                request,
                response,
                ..
            } => Some((
                purpose.clone(),
                mask_timing(&request.to_string()),
                response.clone(),
            )),
            _ => None,
        })
        .collect();
    (calls, dir)
}

#[test]
fn recorded_cycle_replays_byte_for_byte() {
    let (first, dir) = cycle(None);
    let recording = dir.path().join(EXCHANGE_FILE);
    assert_eq!(load_exchanges(&recording).unwrap().len(), first.len());
    let (second, _) = cycle(Some(&recording));
    assert_eq!(first.len(), 11);
    assert_eq!(first, second);
}
