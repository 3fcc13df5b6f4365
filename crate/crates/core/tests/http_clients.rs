use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use chainshort_core::{AgentBackend, AgentRequest, ChatCompletionsClient, Embedder, Error, HttpEmbedder};

/// Serves one canned response per connection, in order, and forwards each
/// request body it saw.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line["authorization:".len()..].trim().to_string();
                }
            }
            let mut payload = vec![0u8; length];
            reader.read_exact(&mut payload).unwrap();
            tx.send((format!("{} {auth}", request_line.trim()), String::from_utf8(payload).unwrap()))
                .unwrap();
            let reason = if status == 200 { "OK" } else { "Error" };
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (addr, rx)
}

#[test]
fn chat_client_posts_and_reads_usage() {
    let (addr, rx) = serve(vec![(
        200,
        r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#.into(),
    )]);
    let client = ChatCompletionsClient::new(format!("{addr}/v1/"), "m-1", Some("secret".into())).unwrap();
    let reply = client
        .complete(&AgentRequest::new("programmer", "be brief", "say hi".into()))
        .unwrap();
    assert_eq!(reply.text, "hello");
    assert_eq!(reply.usage.tokens, 15);
    assert!(reply.usage.time_seconds >= 0.0);

    let (line, body) = rx.recv().unwrap();
    assert!(line.starts_with("POST /v1/chat/completions"));
    assert!(line.ends_with("Bearer secret"));
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["model"], "m-1");
    assert_eq!(v["messages"][0]["role"], "system");
    assert_eq!(v["messages"][1]["content"], "say hi");
}

#[test]
fn chat_client_falls_back_to_word_count_and_retries() {
    let (addr, _rx) = serve(vec![
        (500, r#"{"error":"busy"}"#.into()),
        (200, r#"{"choices":[{"message":{"content":"a b c"}}]}"#.into()),
    ]);
    let client = ChatCompletionsClient::new(addr, "m", None)
        .unwrap()
        .with_retry(3, Duration::from_millis(10));
    let req = AgentRequest::new("reviewer", "", "x y z".into());
    let reply = client.complete(&req).unwrap();
    // prompt "\nx y z" -> 3 words -> 4 tokens; reply 3 words -> 4 tokens
    assert_eq!(reply.usage.tokens, 8);
}

#[test]
fn chat_client_reports_provider_error_after_retries() {
    let (addr, _rx) = serve(vec![(503, "{}".into()), (503, "{}".into())]);
    let client = ChatCompletionsClient::new(addr, "m", None)
        .unwrap()
        .with_retry(2, Duration::from_millis(5));
    match client.complete(&AgentRequest::new("reviewer", "", "x".into())) {
        Err(Error::Provider { attempts, elapsed_seconds, .. }) => {
            assert_eq!(attempts, 2);
            assert!(elapsed_seconds > 0.0);
        }
        other => panic!("expected provider error, got {other:?}"),
    }
}

#[test]
fn embedder_normalizes_response() {
    let (addr, rx) = serve(vec![(200, r#"{"data":[{"embedding":[3.0,4.0]}]}"#.into())]);
    let e = HttpEmbedder::new(format!("{addr}/embeddings"), "emb", None).unwrap();
    let v = e.embed("some text").unwrap();
    assert_eq!(v.components, vec![0.6, 0.8]);
    let (_, body) = rx.recv().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(sent["input"], "some text");
    assert_eq!(sent["model"], "emb");
}

#[test]
fn embedder_rejects_malformed_payload() {
    let (addr, _rx) = serve(vec![(200, r#"{"data":[]}"#.into())]);
    let e = HttpEmbedder::new(addr, "emb", None)
        .unwrap()
        .with_retry(1, Duration::from_millis(1));
    assert!(matches!(e.embed("x"), Err(Error::Provider { .. })));
}
