//! Remote encoder and scorer against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use biasmap::cross_encoder::{AlignmentScorer, RemoteScorer};
use biasmap::encoder::{CachingEncoder, EncoderProvider, RemoteEncoder, TextItem};
use biasmap::Error;
use serde_json::Value;

/// Serves one canned response per entry of `replies`, forwarding each request
/// body to the returned channel.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(serde_json::from_slice(&buf).unwrap()).unwrap();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

const TIMEOUT: Duration = Duration::from_secs(10);

#[test]
fn remote_encoder_batches_and_normalizes() {
    let (url, rx) = serve(vec![(200, r#"{"vectors": [[3, 4], [0, 2]]}"#.into())]);
    let enc = RemoteEncoder::new(url, 2, TIMEOUT).unwrap();
    let vs = enc
        .encode_items(&[TextItem::new("a", "first text"), TextItem::new("b", "second")])
        .unwrap();
    assert_eq!(vs[0].as_slice(), &[0.6, 0.8]);
    assert_eq!(vs[1].as_slice(), &[0.0, 1.0]);
    let req = rx.recv().unwrap();
    assert_eq!(req, serde_json::json!({"texts": ["first text", "second"]}));
}

#[test]
fn remote_encoder_wrong_dim_is_rejected() {
    let (url, _rx) = serve(vec![(200, r#"{"vectors": [[1, 0, 0]]}"#.into())]);
    let enc = RemoteEncoder::new(url, 2, TIMEOUT).unwrap();
    assert!(matches!(
        enc.encode("x"),
        Err(Error::DimensionMismatch { expected: 2, got: 3 })
    ));
}

#[test]
fn server_errors_are_retriable_client_errors_are_not() {
    let (url, _rx) = serve(vec![(503, "{}".into()), (400, "{}".into()), (200, "not json".into())]);
    let enc = RemoteEncoder::new(url, 2, TIMEOUT).unwrap();
    let e = enc.encode("x").unwrap_err();
    assert!(e.is_retriable(), "{e}");
    let e = enc.encode("x").unwrap_err();
    assert!(matches!(e, Error::Provider { retriable: false, .. }), "{e}");
    let e = enc.encode("x").unwrap_err();
    assert!(matches!(e, Error::Provider { retriable: false, .. }), "{e}");
}

#[test]
fn unreachable_endpoint_is_retriable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let enc = RemoteEncoder::new(format!("http://127.0.0.1:{port}/"), 2, TIMEOUT).unwrap();
    assert!(enc.encode("x").unwrap_err().is_retriable());
}

#[test]
fn caching_encoder_sends_only_misses() {
    let (url, rx) = serve(vec![(200, r#"{"vectors": [[0, 1]]}"#.into())]);
    let enc = CachingEncoder::new(RemoteEncoder::new(url, 2, TIMEOUT).unwrap());
    enc.insert("known", biasmap::encoder::Vector::new(vec![1.0, 0.0]));
    let vs = enc
        .encode_items(&[TextItem::new("known", "cached"), TextItem::new("new", "fresh")])
        .unwrap();
    assert_eq!(vs[0].as_slice(), &[1.0, 0.0]);
    assert_eq!(vs[1].as_slice(), &[0.0, 1.0]);
    assert_eq!(rx.recv().unwrap(), serde_json::json!({"texts": ["fresh"]}));
    // both now cached: no further request (the server would not answer one)
    assert_eq!(enc.encode_item(TextItem::new("new", "fresh")).unwrap().as_slice(), &[0.0, 1.0]);
    assert_eq!(enc.cached(), 2);
}

#[test]
fn remote_scorer_roundtrip_and_range_check() {
    let (url, rx) = serve(vec![
        (200, r#"{"scores": [0.25, 0.75]}"#.into()),
        (200, r#"{"scores": [1.0]}"#.into()),
        (200, r#"{"scores": [0.5, 0.5]}"#.into()),
    ]);
    let s = RemoteScorer::new(url, TIMEOUT).unwrap();
    let a = TextItem::new("a", "article");
    let out = s
        .score_items(&[(a, TextItem::new("l", "left")), (a, TextItem::new("r", "right"))])
        .unwrap();
    assert_eq!(out, vec![0.25, 0.75]);
    assert_eq!(
        rx.recv().unwrap(),
        serde_json::json!({"pairs": [["article", "left"], ["article", "right"]]})
    );
    // a score of exactly 1 is outside the open interval
    assert!(s.score_item(a, TextItem::new("l", "left")).is_err());
    // count mismatch
    assert!(s.score_item(a, TextItem::new("l", "left")).is_err());
}
