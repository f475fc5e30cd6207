use std::thread;

use specs_client::mock::{tokenize, Scenario};
use specs_client::wire::CompletionRequest;
use specs_client::{EndpointConfig, MockError, MockServer, RemoteGenerator, RemotePrm};
use specs_core::{Block, BlockTrace, GeneratorModel, ModelError, RewardModel, Token};

fn scenario(json: &str) -> Scenario {
    Scenario::from_json(json).expect("scenario parses")
}

fn cfg(server: &MockServer, model: &str) -> EndpointConfig {
    let mut cfg = EndpointConfig::new(server.base_url(), model);
    cfg.timeout_secs = 5.0;
    cfg.backoff_ms = 1;
    cfg
}

fn text_block(tokens: &[&str]) -> Block {
    Block::new(tokens.iter().map(|t| Token::Text(t.to_string())).collect(), false).unwrap()
}

const STEPS: &str = r#"{
  "models": {
    "m": {
      "completions": [
        { "text": "first step\n\nleftover" },
        { "text": "second" },
        { "text": "a b c d e f g h" }
      ],
      "token_logprobs": { "x": -0.5, "a": -0.1, " ": -0.2, "b": -0.3 }
    }
  },
  "prm": { "default": 0.25, "rules": [ { "contains": "second", "score": 0.9 } ] }
}"#;

#[test]
fn fixed_completion_is_repeated() {
    let server = MockServer::start(scenario(r#"{"models": {"m": {"completions": [{"text": "A"}]}}}"#)).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
    let blocks = generator.sample_blocks(&BlockTrace::new("Q"), 4, 16, None).unwrap();
    assert_eq!(blocks.len(), 4);
    for b in blocks {
        assert_eq!(b.text(), "A");
        assert!(b.terminal);
    }
}

#[test]
fn sequential_entries_are_consumed_in_order() {
    let server = MockServer::start(scenario(STEPS)).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
    let trace = BlockTrace::new("Q:\n\n");
    let texts: Vec<String> = (0..4)
        .map(|_| generator.sample_blocks(&trace, 1, 4, None).unwrap().remove(0).text())
        .collect();
    assert_eq!(texts, ["first step\n\n", "second", "a b ", "first step\n\n"]);
}

#[test]
fn blocks_respect_delimiter_and_cap() {
    let server = MockServer::start(scenario(STEPS)).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
    let blocks = generator.sample_blocks(&BlockTrace::new("Q"), 3, 5, None).unwrap();
    assert_eq!(blocks[0].text(), "first step\n\n");
    assert!(!blocks[0].terminal);
    assert!(blocks[1].terminal);
    assert_eq!(blocks[2].len(), 5);
    assert!(!blocks[2].terminal);
    for b in &blocks {
        assert!(b.len() <= 5);
        assert!(b.sampled_logprob().is_some());
    }
}

#[test]
fn echo_logprob_sums_block_tokens() {
    let server = MockServer::start(scenario(STEPS)).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
    let trace = BlockTrace::new("Question:\n\n");
    let one = generator.block_logprob(&trace, &text_block(&["x"])).unwrap();
    assert!((one - -0.5).abs() < 1e-12, "{one}");
    let three = generator.block_logprob(&trace, &text_block(&["a", " ", "b"])).unwrap();
    assert!((three - -0.6).abs() < 1e-12, "{three}");
}

#[test]
fn echo_disabled_is_reported() {
    let mut sc = scenario(STEPS);
    sc.echo = false;
    let server = MockServer::start(sc).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
    let err = generator.block_logprob(&BlockTrace::new("Q"), &text_block(&["x"])).unwrap_err();
    assert!(matches!(err, ModelError::EchoUnsupported), "{err:?}");

    let mut c = cfg(&server, "m");
    c.echo_logprobs = false;
    let generator = RemoteGenerator::new(c).unwrap();
    let err = generator.block_logprob(&BlockTrace::new("Q"), &text_block(&["x"])).unwrap_err();
    assert!(matches!(err, ModelError::EchoUnsupported));
}

#[test]
fn prm_uses_last_step_score() {
    let server = MockServer::start(scenario(STEPS)).unwrap();
    let prm = RemotePrm::new(cfg(&server, "prm")).unwrap();
    let mut trace = BlockTrace::new("Q");
    trace.push(text_block(&["second"]), specs_core::GenerationSource::Target).unwrap();
    assert_eq!(prm.score(&trace, &text_block(&["other"])).unwrap(), 0.25);
    assert_eq!(prm.score(&BlockTrace::new("Q"), &text_block(&["second"])).unwrap(), 0.9);
    let sent = server.requests();
    assert_eq!(sent[0]["steps"], serde_json::json!(["second", "other"]));
}

#[test]
fn requests_arrive_unchanged() {
    let server = MockServer::start(scenario(STEPS)).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
    let trace = BlockTrace::new("Solve 1+1.\n\n");
    let expected = generator.completion_request(&trace, 2, 7, Some(99));
    generator.sample_blocks(&trace, 2, 7, Some(99)).unwrap();
    let received: CompletionRequest = serde_json::from_value(server.requests().remove(0)).unwrap();
    assert_eq!(received, expected);
}

fn multiset(blocks: Vec<Vec<Block>>) -> Vec<String> {
    let mut out: Vec<String> = blocks.into_iter().flatten().map(|b| b.text()).collect();
    out.sort();
    out
}

#[test]
fn concurrent_calls_match_sequential_calls() {
    for order in ["sequential", "seeded"] {
        let json = STEPS.replace("\"completions\"", &format!("\"order\": \"{order}\", \"completions\""));
        let k = 8;
        let trace = BlockTrace::new("Q");

        let server = MockServer::start(scenario(&json)).unwrap();
        let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
        let sequential: Vec<_> = (0..k)
            .map(|i| generator.sample_blocks(&trace, 2, 4, Some(i)).unwrap())
            .collect();

        let server = MockServer::start(scenario(&json)).unwrap();
        let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
        let concurrent: Vec<_> = thread::scope(|s| {
            let handles: Vec<_> = (0..k)
                .map(|i| {
                    let (g, t) = (&generator, &trace);
                    s.spawn(move || g.sample_blocks(t, 2, 4, Some(i)).unwrap())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(multiset(sequential), multiset(concurrent), "order {order}");
    }
}

#[test]
fn unreachable_host_times_out_after_retries() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut c = EndpointConfig::new(format!("http://{addr}"), "m");
    c.timeout_secs = 1.0;
    c.max_retries = 2;
    c.backoff_ms = 1;
    let generator = RemoteGenerator::new(c).unwrap();
    let err = generator.sample_blocks(&BlockTrace::new("Q"), 1, 4, None).unwrap_err();
    assert!(matches!(err, ModelError::Timeout { attempts: 3 }), "{err:?}");
}

#[test]
fn server_errors_are_retried() {
    let mut sc = scenario(STEPS);
    sc.fail_first = 2;
    let server = MockServer::start(sc.clone()).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "m")).unwrap();
    assert_eq!(generator.sample_blocks(&BlockTrace::new("Q"), 1, 4, None).unwrap().len(), 1);
    assert_eq!(server.request_count(), 3);

    sc.fail_first = 10;
    let server = MockServer::start(sc).unwrap();
    let mut c = cfg(&server, "m");
    c.max_retries = 1;
    let generator = RemoteGenerator::new(c).unwrap();
    let err = generator.sample_blocks(&BlockTrace::new("Q"), 1, 4, None).unwrap_err();
    assert!(matches!(err, ModelError::HttpStatus(503)));
}

#[test]
fn unknown_model_is_not_retried() {
    let server = MockServer::start(scenario(STEPS)).unwrap();
    let generator = RemoteGenerator::new(cfg(&server, "nope")).unwrap();
    let err = generator.sample_blocks(&BlockTrace::new("Q"), 1, 4, None).unwrap_err();
    assert!(matches!(err, ModelError::HttpStatus(404)));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn malformed_scenario_fails_at_startup() {
    assert!(matches!(Scenario::from_json("{\"models\": 3}"), Err(MockError::ScenarioParse(_))));
    assert!(matches!(Scenario::from_json("not json"), Err(MockError::ScenarioParse(_))));
}

#[test]
fn bundled_scenarios_load() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/scenarios");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count > 0);
    assert_eq!(tokenize("a  b").len(), 3);
}
