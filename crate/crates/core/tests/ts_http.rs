use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use knobtune::env::{ts_query, HttpSource};
use knobtune::Error;

/// Serves one request with `status` and `body`; returns the request line and
/// the Authorization header it saw.
fn serve_once(status: &'static str, body: &'static str) -> (String, mpsc::Receiver<(String, Option<String>)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/query", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut auth = None;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("authorization") {
                    auth = Some(v.trim().to_string());
                }
            }
        }
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        tx.send((request_line.trim().to_string(), auth)).unwrap();
    });
    (url, rx)
}

fn source(url: &str, token: Option<&str>) -> HttpSource {
    let mut s = HttpSource::new(url);
    s.token = token.map(str::to_string);
    s
}

#[test]
fn averages_points_from_endpoint() {
    let (url, rx) = serve_once("200 OK", "throughput 4\nthroughput 6 1700000000\niops 100\nother 1\n");
    let snap = ts_query(&source(&url, Some("s3cret")), &["throughput", "iops"], 120.0).unwrap();
    assert_eq!(snap.values["throughput"], 5.0);
    assert_eq!(snap.values["iops"], 100.0);
    assert_eq!(snap.values.len(), 2);
    assert!((snap.window_end - snap.window_start - 120.0).abs() < 1e-9);
    let (line, auth) = rx.recv().unwrap();
    assert!(line.starts_with("GET /query?"), "{line}");
    assert!(line.contains("metrics=throughput%2Ciops") || line.contains("metrics=throughput,iops"), "{line}");
    assert!(line.contains("window=120"), "{line}");
    assert_eq!(auth.as_deref(), Some("Bearer s3cret"));
}

#[test]
fn unauthorized_maps_to_auth_error() {
    for status in ["401 Unauthorized", "403 Forbidden"] {
        let (url, _rx) = serve_once(status, "");
        let err = ts_query(&source(&url, Some("wrong")), &["throughput"], 60.0).unwrap_err();
        assert!(matches!(err, Error::Auth(_)), "{status}: {err}");
    }
}

#[test]
fn missing_series_and_server_errors() {
    let (url, _rx) = serve_once("200 OK", "throughput 1\n");
    match ts_query(&source(&url, None), &["throughput", "iops"], 60.0) {
        Err(Error::IncompleteSnapshot(m)) => assert_eq!(m, vec!["iops"]),
        other => panic!("{other:?}"),
    }
    let (url, rx) = serve_once("500 Internal Server Error", "boom");
    assert!(matches!(
        ts_query(&source(&url, None), &["throughput"], 60.0),
        Err(Error::Transport(_))
    ));
    assert_eq!(rx.recv().unwrap().1, None);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let url = format!("http://127.0.0.1:{port}/query");
    assert!(matches!(
        ts_query(&source(&url, None), &["throughput"], 60.0),
        Err(Error::Transport(_))
    ));
}
