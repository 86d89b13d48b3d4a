use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use ados_core::prompt::PromptBundle;
use ados_gateway::mock::{MockResponse, MockServer};
use ados_gateway::{
    request_id, CompletionBackend, ExchangeStore, GatewayError, HttpGateway, ModelEndpoint, ReplayGateway,
};

fn bundle(user: &str) -> PromptBundle {
    PromptBundle {
        system_text: "system".into(),
        user_text: user.into(),
        token_estimate: 3,
    }
}

fn endpoint(server: &MockServer, key_var: &str) -> ModelEndpoint {
    // SAFETY: each test uses its own variable name.
    unsafe { std::env::set_var(key_var, "secret-key") };
    let mut ep = ModelEndpoint::new(&server.base_url(), "test-model", key_var);
    ep.backoff_base_ms = 10;
    ep.backoff_max_ms = 40;
    ep.timeout_s = 5.0;
    ep
}

#[test]
fn returns_fixture_text_on_first_attempt() {
    let server = MockServer::start(vec![], MockResponse::completion("A4: 1 — ok")).unwrap();
    let gw = HttpGateway::new(endpoint(&server, "ADOS_KEY_FIRST")).unwrap();
    let c = gw.complete("s1__only_scoring", &bundle("hello")).unwrap();
    assert_eq!(c.text, "A4: 1 — ok");
    let rec = c.record.unwrap();
    assert_eq!(rec.attempt_count, 1);
    assert_eq!(rec.request_id, "s1__only_scoring");
    assert_eq!(server.stats().auth_headers(), vec![Some("Bearer secret-key".into())]);
    let sent: serde_json::Value = serde_json::from_str(&server.stats().bodies()[0]).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["messages"][1]["content"], "hello");
    assert!(!server.stats().bodies()[0].contains("secret-key"));
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let script = vec![
        MockResponse::status(429, "{}"),
        MockResponse::status(429, "{}").with_header("Retry-After", "0"),
    ];
    let server = MockServer::start(script, MockResponse::completion("done")).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_429");
    ep.max_retries = 3;
    let gw = HttpGateway::new(ep).unwrap();
    let c = gw.complete("r", &bundle("x")).unwrap();
    assert_eq!(c.text, "done");
    let rec = c.record.unwrap();
    assert_eq!(rec.attempt_count, 3);
    let statuses: Vec<Option<u16>> = rec.attempts.iter().map(|a| a.status).collect();
    assert_eq!(statuses, vec![Some(429), Some(429), Some(200)]);
    assert_eq!(rec.attempts[0].backoff_ms, 10);
    assert_eq!(rec.attempts[1].backoff_ms, 0);
    assert_eq!(server.stats().requests(), 3);
}

#[test]
fn exhausts_rate_limit_retries() {
    let server = MockServer::start(vec![], MockResponse::status(429, "slow down")).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_EXHAUST");
    ep.max_retries = 2;
    let gw = HttpGateway::new(ep).unwrap();
    assert_eq!(
        gw.complete("r", &bundle("x")),
        Err(GatewayError::RateLimitedExhausted { attempts: 3 })
    );
    assert_eq!(server.stats().requests(), 3);
}

#[test]
fn backoff_grows_between_attempts() {
    let server = MockServer::start(vec![], MockResponse::status(503, "busy")).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_BACKOFF");
    ep.max_retries = 3;
    ep.backoff_base_ms = 40;
    ep.backoff_max_ms = 1000;
    let gw = HttpGateway::new(ep).unwrap();
    let start = Instant::now();
    let err = gw.complete("r", &bundle("x")).unwrap_err();
    assert_eq!(
        err,
        GatewayError::Protocol {
            status: 503,
            excerpt: "busy".into()
        }
    );
    assert!(start.elapsed() >= Duration::from_millis(40 + 80 + 160));
    let gaps: Vec<Duration> = server.stats().arrivals().windows(2).map(|w| w[1] - w[0]).collect();
    assert_eq!(gaps.len(), 3);
    assert!(gaps[0] >= Duration::from_millis(40));
    assert!(gaps[1] >= Duration::from_millis(80));
    assert!(gaps[2] >= Duration::from_millis(160));
}

#[test]
fn unauthorized_is_not_retried() {
    let server = MockServer::start(vec![], MockResponse::status(401, "bad key")).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_401");
    ep.max_retries = 5;
    let gw = HttpGateway::new(ep).unwrap();
    assert!(matches!(gw.complete("r", &bundle("x")), Err(GatewayError::Auth(_))));
    assert_eq!(server.stats().requests(), 1);
}

#[test]
fn other_client_errors_are_not_retried() {
    let server = MockServer::start(vec![], MockResponse::status(400, "bad request")).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_400");
    ep.max_retries = 5;
    let gw = HttpGateway::new(ep).unwrap();
    assert_eq!(
        gw.complete("r", &bundle("x")),
        Err(GatewayError::Protocol {
            status: 400,
            excerpt: "bad request".into()
        })
    );
    assert_eq!(server.stats().requests(), 1);
}

#[test]
fn malformed_success_body_is_a_protocol_error() {
    let server = MockServer::start(vec![], MockResponse::status(200, "{\"choices\": []}")).unwrap();
    let gw = HttpGateway::new(endpoint(&server, "ADOS_KEY_MALFORMED")).unwrap();
    assert!(matches!(
        gw.complete("r", &bundle("x")),
        Err(GatewayError::Protocol { status: 200, .. })
    ));
}

#[test]
fn timeouts_are_retried_then_reported() {
    let slow = MockResponse::completion("late").with_delay(Duration::from_millis(400));
    let server = MockServer::start(vec![], slow).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_TIMEOUT");
    ep.timeout_s = 0.1;
    ep.max_retries = 1;
    let gw = HttpGateway::new(ep).unwrap();
    assert_eq!(
        gw.complete("r", &bundle("x")),
        Err(GatewayError::TimeoutExhausted { attempts: 2 })
    );
    assert_eq!(server.stats().requests(), 2);
}

#[test]
fn missing_key_fails_before_any_request() {
    let server = MockServer::start(vec![], MockResponse::completion("x")).unwrap();
    let ep = ModelEndpoint::new(&server.base_url(), "m", "ADOS_KEY_DEFINITELY_UNSET");
    assert!(matches!(HttpGateway::new(ep), Err(GatewayError::Auth(_))));
    assert_eq!(server.stats().requests(), 0);
}

#[test]
fn concurrency_cap_holds_at_the_server() {
    let resp = MockResponse::completion("ok").with_delay(Duration::from_millis(60));
    let server = MockServer::start(vec![], resp).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_CONC");
    ep.max_concurrent = 2;
    ep.requests_per_minute = 1000;
    let gw = Arc::new(HttpGateway::new(ep).unwrap());
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let gw = gw.clone();
            thread::spawn(move || gw.complete(&format!("r{i}"), &bundle("x")).map(|c| c.text))
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap().unwrap(), "ok");
    }
    assert_eq!(server.stats().requests(), 8);
    assert_eq!(server.stats().peak_in_flight(), 2);
}

#[test]
fn rate_ceiling_holds_over_rolling_window() {
    let server = MockServer::start(vec![], MockResponse::completion("ok")).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_RATE");
    ep.max_concurrent = 4;
    ep.requests_per_minute = 3;
    ep.rate_window_ms = 250;
    let gw = Arc::new(HttpGateway::new(ep).unwrap());
    let start = Instant::now();
    let handles: Vec<_> = (0..7)
        .map(|i| {
            let gw = gw.clone();
            thread::spawn(move || gw.complete(&format!("r{i}"), &bundle("x")).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(server.stats().requests(), 7);
    // Arrival is stamped after connection setup, so allow for skew between
    // client-side issue time and server-side arrival.
    assert!(server.stats().max_in_window(Duration::from_millis(200)) <= 3);
    assert!(start.elapsed() >= Duration::from_millis(500));
}

#[test]
fn recorded_run_replays_without_network() {
    let dir = tempfile::tempdir().unwrap();
    let store = ExchangeStore::new(dir.path().join("raw_llm"));
    let script = vec![
        MockResponse::completion("first answer"),
        MockResponse::status(500, "oops"),
        MockResponse::completion("second answer"),
    ];
    let server = MockServer::start(script, MockResponse::status(500, "unexpected")).unwrap();
    let mut ep = endpoint(&server, "ADOS_KEY_REPLAY");
    ep.max_retries = 2;
    let gw = HttpGateway::new(ep).unwrap().with_store(store.clone());
    let ids = [request_id("s1", "only_scoring"), request_id("s2", "only_scoring")];
    let live: Vec<String> = ids
        .iter()
        .map(|id| gw.complete(id, &bundle(id)).unwrap().text)
        .collect();
    assert_eq!(live, vec!["first answer", "second answer"]);
    let rec = store.load(&ids[1]).unwrap().unwrap();
    assert_eq!(rec.attempt_count, 2);
    assert!(store.path_for(&ids[0]).exists());
    let before = server.stats().requests();
    drop(server);

    let replay = ReplayGateway::new(Some(store.clone()), None);
    let again: Vec<String> = ids
        .iter()
        .map(|id| replay.complete(id, &bundle(id)).unwrap().text)
        .collect();
    assert_eq!(again, live);
    assert_eq!(before, 3);
    assert!(matches!(
        replay.complete(&ids[0], &bundle("changed prompt")),
        Err(GatewayError::Store(_))
    ));
    assert_eq!(
        replay.complete("s9__only_scoring", &bundle("x")),
        Err(GatewayError::ReplayMissing("s9__only_scoring".into()))
    );
}

#[test]
fn replay_falls_back_to_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fixtures");
    std::fs::create_dir_all(fx.join("s1")).unwrap();
    std::fs::write(fx.join("s1").join("explain_B9.txt"), "SCORE: 1\n").unwrap();
    let replay = ReplayGateway::new(None, Some(fx));
    assert_eq!(replay.complete("s1__explain_B9", &bundle("x")).unwrap().text, "SCORE: 1\n");
}
