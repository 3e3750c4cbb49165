use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use peirce::generation::*;
use peirce::http::ReqwestTransport;
use proptest::prelude::*;

/// Serves one canned (status, body) per connection and returns the request
/// bodies it saw.
fn mock_server(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push(String::from_utf8(buf).unwrap());
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        seen
    });
    (url, handle)
}

fn remote(url: &str, retry_limit: u32) -> RemoteChatModel {
    let config = RemoteConfig {
        base_url: url.to_string(),
        model: "test-model".to_string(),
        retry_limit,
        backoff_ms: 1,
        ..RemoteConfig::default()
    };
    let transport = ReqwestTransport::new(Duration::from_secs(5)).unwrap();
    RemoteChatModel::with_transport(config, "secret".into(), Box::new(transport))
}

#[test]
fn remote_client_speaks_chat_completions() {
    let ok = r#"{"choices":[{"message":{"role":"assistant","content":"little boy is a young child."}}]}"#;
    let (url, server) = mock_server(vec![(500, "boom".into()), (200, ok.into())]);
    let m = remote(&url, 3);
    let t = PromptTemplate::parse("Hypothesis: {hypothesis}").unwrap();
    let mut b = Bindings::new();
    b.insert("hypothesis".into(), "A boy plays.".into());
    let rec = generate(&m, &t, &b, None).unwrap();
    assert_eq!(rec.response, "little boy is a young child.");
    assert_eq!(rec.attempt, 2);
    assert_eq!(rec.model_name, "test-model");
    let seen = server.join().unwrap();
    let body: serde_json::Value = serde_json::from_str(&seen[1]).unwrap();
    assert_eq!(body["messages"][0]["content"], "Hypothesis: A boy plays.");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 1024);
}

#[test]
fn remote_client_gives_up_after_limit() {
    let (url, server) = mock_server(vec![(500, "a".into()), (500, "b".into())]);
    let m = remote(&url, 2);
    let err = m.complete("p", None).unwrap_err();
    match err {
        GenerationError::Transport { status, attempts, .. } => assert_eq!((status, attempts), (Some(500), 2)),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn remote_client_rejects_empty_content() {
    let (url, server) = mock_server(vec![(200, r#"{"choices":[{"message":{"content":"  "}}]}"#.into())]);
    assert!(matches!(remote(&url, 1).complete("p", None), Err(GenerationError::EmptyResponse(_))));
    server.join().unwrap();
}

#[test]
fn missing_credential_is_a_config_error() {
    let config = RemoteConfig {
        api_key_env: "PEIRCE_TEST_UNSET_KEY".into(),
        ..RemoteConfig::default()
    };
    assert!(matches!(RemoteChatModel::from_env(config), Err(GenerationError::Config(_))));
}

#[derive(Debug, Clone)]
enum Piece {
    Text(String),
    Var(String),
    Open,
    Close,
}

fn piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        "[a-z .,:\n]{0,8}".prop_map(Piece::Text),
        "[A-Za-z_][A-Za-z0-9_]{0,5}".prop_map(Piece::Var),
        Just(Piece::Open),
        Just(Piece::Close),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn variables_match_placeholder_grammar(pieces in prop::collection::vec(piece(), 0..12)) {
        let mut source = String::new();
        let mut expected = std::collections::BTreeSet::new();
        let mut rendered = String::new();
        let mut bindings = Bindings::new();
        for p in &pieces {
            match p {
                Piece::Text(t) => { source.push_str(t); rendered.push_str(t); }
                Piece::Var(v) => {
                    source.push_str(&format!("{{{v}}}"));
                    expected.insert(v.clone());
                    let value = format!("<{}>", v.len());
                    rendered.push_str(&value);
                    bindings.insert(v.clone(), value);
                }
                Piece::Open => { source.push_str("{{"); rendered.push('{'); }
                Piece::Close => { source.push_str("}}"); rendered.push('}'); }
            }
        }
        let t = PromptTemplate::parse(&source).unwrap();
        prop_assert_eq!(t.variables(), &expected);
        prop_assert_eq!(t.render(&bindings).unwrap(), rendered);
    }

    #[test]
    fn render_idempotent_without_placeholders(text in "[^{}]{0,40}") {
        let once = PromptTemplate::parse(&text).unwrap().render(&Bindings::new()).unwrap();
        let twice = PromptTemplate::parse(&once).unwrap().render(&Bindings::new()).unwrap();
        prop_assert_eq!(&once, &text);
        prop_assert_eq!(once, twice);
    }
}
