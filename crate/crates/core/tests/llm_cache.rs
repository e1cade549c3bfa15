use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Barrier};

use causaldann::llm::{
    build_request, cached_call, request_hash, run_bounded, HttpClient, LlmClient, LlmSettings, MockClient,
    PromptTask, ResponseCache, RetryPolicy,
};

fn request(post: &str) -> causaldann::llm::LlmRequest {
    build_request(&LlmSettings::default(), PromptTask::Rephrasing, post, None).unwrap()
}

#[test]
fn concurrent_equal_requests_call_the_client_once() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ResponseCache::new(dir.path()).unwrap());
    let client = Arc::new(MockClient::constant("same answer"));
    let barrier = Arc::new(Barrier::new(8));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (cache, client, barrier) = (cache.clone(), client.clone(), barrier.clone());
            std::thread::spawn(move || {
                barrier.wait();
                cached_call(client.as_ref(), &request("a post"), Some(&cache), RetryPolicy::default()).unwrap()
            })
        })
        .collect();
    let answers: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(answers.iter().all(|a| a.text == "same answer"));
    assert_eq!(client.calls(), 1);
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1, "temp files must not linger");
}

#[test]
fn cache_file_is_keyed_by_request_hash_and_survives_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let req = request("p");
    {
        let cache = ResponseCache::new(dir.path()).unwrap();
        cached_call(&MockClient::constant("first"), &req, Some(&cache), RetryPolicy::default()).unwrap();
    }
    let path = dir.path().join(format!("{}.json", request_hash(&req)));
    let stored: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(stored["response"]["text"], "first");
    assert_eq!(stored["request"]["model_id"], "mock");

    let cache = ResponseCache::new(dir.path()).unwrap();
    let other = MockClient::constant("second");
    let r = cached_call(&other, &req, Some(&cache), RetryPolicy::default()).unwrap();
    assert_eq!(r.text, "first");
    assert_eq!(other.calls(), 0);

    std::fs::write(&path, "{ not json").unwrap();
    let r = cached_call(&other, &req, Some(&cache), RetryPolicy::default()).unwrap();
    assert_eq!(r.text, "second");
}

#[test]
fn request_hash_tracks_every_request_field() {
    let base = request("p");
    let mut hot = base.clone();
    hot.temperature = 0.5;
    let mut short = base.clone();
    short.max_tokens = 10;
    let hashes = [request_hash(&base), request_hash(&hot), request_hash(&short), request_hash(&request("q"))];
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            assert_ne!(hashes[i], hashes[j]);
        }
    }
    assert_eq!(request_hash(&base), request_hash(&request("p")));
}

#[test]
fn bounded_map_keeps_order() {
    let items: Vec<u32> = (0..100).collect();
    let out = run_bounded(&items, 3, |&x| Ok::<_, ()>(x * 2)).unwrap();
    assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    assert_eq!(run_bounded(&items, 2, |&x| if x == 50 { Err(x) } else { Ok(x) }), Err(50));
}

/// Serves `n` canned chat-completion responses and returns the request bodies.
fn serve(n: usize, status: &'static str, content: &'static str) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for stream in listener.incoming().take(n) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            bodies.push(String::from_utf8(body).unwrap());
            let payload = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
            write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

#[test]
fn http_adapter_speaks_chat_completions() {
    let (url, server) = serve(1, "200 OK", "rephrased text");
    let client = HttpClient::new(url, "secret").unwrap();
    let r = client.complete(&request("hello")).unwrap();
    assert_eq!(r.text, "rephrased text");
    assert!(!r.refused);
    let bodies = server.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["model"], "mock");
    assert_eq!(sent["max_tokens"], 1000);
    assert_eq!(sent["messages"][0]["role"], "user");
}

#[test]
fn http_errors_are_retried_then_reported() {
    let (url, server) = serve(2, "503 Service Unavailable", "");
    let client = HttpClient::new(url, "k").unwrap();
    let policy = RetryPolicy {
        attempts: 2,
        base_delay: std::time::Duration::from_millis(1),
    };
    match causaldann::llm::call_with_retry(&client, &request("x"), policy) {
        Err(causaldann::Error::Transport { attempts, message }) => {
            assert_eq!(attempts, 2);
            assert!(message.contains("503"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.join().unwrap().len(), 2);
}
