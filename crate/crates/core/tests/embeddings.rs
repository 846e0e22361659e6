mod common;

use emodetect_core::features::{EmbeddingClient, FeatureError, FeatureProvider, FeatureSpec};
use serde_json::{json, Value};

fn embedding_server(dim: usize, wrong_dim: bool) -> common::TestServer {
    common::serve(move |req| match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/capabilities") => (
            200,
            json!({"embedding_dim": dim, "model": "enc"}).to_string(),
        ),
        ("POST", "/v1/embeddings") => {
            let body: Value = serde_json::from_str(&req.body).unwrap();
            let data: Vec<Value> = body["input"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| {
                    let len = t.as_str().unwrap().len() as f64;
                    let n = if wrong_dim { dim + 1 } else { dim };
                    json!({"embedding": (0..n).map(|i| len + i as f64).collect::<Vec<_>>()})
                })
                .collect();
            (200, json!({"data": data}).to_string())
        }
        _ => (404, "{}".into()),
    })
}

#[test]
fn reads_advertised_dimension() {
    let server = embedding_server(4, false);
    let client = EmbeddingClient::connect(&format!("{}/v1", server.url())).unwrap();
    assert_eq!(client.dim(), 4);
    assert!(matches!(
        client.describe(),
        FeatureSpec::Embeddings { dim: 4, .. }
    ));

    let texts: Vec<String> = (0..70).map(|i| "x".repeat(i + 1)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vs = client.features_batch(&refs).unwrap();
    assert_eq!(vs.len(), 70);
    assert_eq!(vs[69].as_slice(), &[70.0, 71.0, 72.0, 73.0]);
    // 1 capabilities call plus two embedding batches
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn rejects_dimension_drift() {
    let server = embedding_server(3, true);
    let client = EmbeddingClient::connect(&server.url()).unwrap();
    assert!(matches!(
        client.features("hi"),
        Err(FeatureError::Dimension {
            expected: 3,
            found: 4
        })
    ));
}
