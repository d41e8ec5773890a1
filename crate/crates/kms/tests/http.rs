//! End-to-end tests of the key-delivery HTTP API on an ephemeral port.

use qspan_core::encryptor::KeySource;
use qspan_core::keystore::{Identities, KeyPool};
use qspan_kms::{HttpKeySource, KdClient, KmsState};
use serde_json::{json, Value};

fn test_identities() -> Identities {
    Identities {
        source_kme_id: "kms-1".into(),
        target_kme_id: "kms-2".into(),
        master_sae_id: "sae-alice".into(),
        slave_sae_id: "sae-bob".into(),
    }
}

fn filled_pool(keys: usize) -> KeyPool {
    let mut pool = KeyPool::seeded(99);
    for i in 0..keys {
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&(i as u64).to_be_bytes());
        bytes[31] = 0xA5;
        pool.push_key(&bytes).unwrap();
    }
    pool
}

async fn spawn_server(pool: KeyPool) -> (String, KmsState) {
    let state = KmsState::new(pool, test_identities());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(qspan_kms::serve(listener, state.clone()));
    (base, state)
}

#[tokio::test]
async fn status_uses_exact_wire_field_names() {
    let (base, _state) = spawn_server(filled_pool(5)).await;
    let body: Value = reqwest::get(format!("{base}/api/v1/keys/sae-bob/status"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let object = body.as_object().unwrap();
    let expected = [
        "source_KME_ID",
        "target_KME_ID",
        "master_SAE_ID",
        "slave_SAE_ID",
        "key_size",
        "stored_key_count",
        "max_key_count",
        "max_key_per_request",
        "max_key_size",
        "min_key_size",
        "max_SAE_ID_count",
    ];
    assert_eq!(object.len(), expected.len(), "{body}");
    for field in expected {
        assert!(object.contains_key(field), "missing {field} in {body}");
    }
    assert_eq!(body["source_KME_ID"], "kms-1");
    assert_eq!(body["slave_SAE_ID"], "sae-bob");
    assert_eq!(body["key_size"], 256);
    assert_eq!(body["stored_key_count"], 5);
    assert_eq!(body["max_key_count"], 1000);
    assert_eq!(body["max_key_per_request"], 1000);
    assert_eq!(body["max_key_size"], 1048576);
    assert_eq!(body["min_key_size"], 8);
    assert_eq!(body["max_SAE_ID_count"], 0);
}

#[tokio::test]
async fn enc_keys_defaults_to_one_256_bit_key() {
    let (base, _state) = spawn_server(filled_pool(5)).await;
    let http = reqwest::Client::new();
    let url = format!("{base}/api/v1/keys/sae-bob/enc_keys");

    // Empty body and explicit empty object behave the same.
    for request in [http.post(&url), http.post(&url).json(&json!({}))] {
        let body: Value = request.send().await.unwrap().json().await.unwrap();
        let keys = body["keys"].as_array().unwrap();
        assert_eq!(keys.len(), 1);
        let bytes = {
            use base64::prelude::*;
            BASE64_STANDARD.decode(keys[0]["key"].as_str().unwrap()).unwrap()
        };
        assert_eq!(bytes.len(), 32);
        uuid::Uuid::parse_str(keys[0]["key_ID"].as_str().unwrap()).unwrap();
    }
}

#[tokio::test]
async fn dec_keys_accepts_both_id_list_shapes() {
    let (base, _state) = spawn_server(filled_pool(6)).await;
    let http = reqwest::Client::new();
    let enc: Value = http
        .post(format!("{base}/api/v1/keys/sae-bob/enc_keys"))
        .json(&json!({ "number": 2 }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let keys = enc["keys"].as_array().unwrap();
    assert_eq!(keys.len(), 2);

    // First id as a bare string, second wrapped in an object.
    let dec: Value = http
        .post(format!("{base}/api/v1/keys/sae-alice/dec_keys"))
        .json(&json!({
            "key_IDs": [keys[0]["key_ID"], { "key_ID": keys[1]["key_ID"] }]
        }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(dec["keys"], enc["keys"], "slave must receive the exact master bytes");
}

#[tokio::test]
async fn second_pickup_of_the_same_id_is_refused() {
    let (base, _state) = spawn_server(filled_pool(3)).await;
    let http = reqwest::Client::new();
    let enc: Value = http
        .post(format!("{base}/api/v1/keys/sae-bob/enc_keys"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let ids = json!({ "key_IDs": [enc["keys"][0]["key_ID"]] });
    let url = format!("{base}/api/v1/keys/sae-alice/dec_keys");
    let first = http.post(&url).json(&ids).send().await.unwrap();
    assert_eq!(first.status(), 200);
    let second = http.post(&url).json(&ids).send().await.unwrap();
    assert_eq!(second.status(), 400);
    let message = second.json::<Value>().await.unwrap()["message"].to_string();
    assert!(message.contains("not reserved"), "{message}");
}

#[tokio::test]
async fn unknown_sae_paths_are_not_found() {
    let (base, _state) = spawn_server(filled_pool(3)).await;
    let http = reqwest::Client::new();
    let status = reqwest::get(format!("{base}/api/v1/keys/sae-nobody/status")).await.unwrap();
    assert_eq!(status.status(), 404);
    // enc_keys is addressed by slave SAE, dec_keys by master SAE; swapping
    // them must fail.
    let enc = http
        .post(format!("{base}/api/v1/keys/sae-alice/enc_keys"))
        .send()
        .await
        .unwrap();
    assert_eq!(enc.status(), 404);
    let dec = http
        .post(format!("{base}/api/v1/keys/sae-bob/dec_keys"))
        .json(&json!({ "key_IDs": [] }))
        .send()
        .await
        .unwrap();
    assert_eq!(dec.status(), 404);
}

#[tokio::test]
async fn exhausted_pool_is_service_unavailable() {
    let (base, _state) = spawn_server(filled_pool(2)).await;
    let http = reqwest::Client::new();
    let response = http
        .post(format!("{base}/api/v1/keys/sae-bob/enc_keys"))
        .json(&json!({ "number": 3 }))
        .send()
        .await
        .unwrap();
    assert_eq!(response.status(), 503);
    let message = response.json::<Value>().await.unwrap()["message"].to_string();
    assert!(message.contains("only 2 stored"), "{message}");
}

#[tokio::test]
async fn invalid_requests_are_bad_requests() {
    let (base, _state) = spawn_server(filled_pool(3)).await;
    let http = reqwest::Client::new();
    let enc_url = format!("{base}/api/v1/keys/sae-bob/enc_keys");
    let cases = [
        json!({ "number": 0 }),
        json!({ "number": 1001 }),
        json!({ "size": 512 }),
        json!({ "number": "three" }),
    ];
    for body in cases {
        let response = http.post(&enc_url).json(&body).send().await.unwrap();
        assert_eq!(response.status(), 400, "{body}");
    }
    let dec = http
        .post(format!("{base}/api/v1/keys/sae-alice/dec_keys"))
        .json(&json!({ "key_IDs": ["not-a-uuid"] }))
        .send()
        .await
        .unwrap();
    assert_eq!(dec.status(), 400);
}

#[tokio::test]
async fn scripted_pool_drawdown_matches_status_accounting() {
    let (base, _state) = spawn_server(filled_pool(1000)).await;
    let http = reqwest::Client::new();
    for _ in 0..177 {
        let response = http
            .post(format!("{base}/api/v1/keys/sae-bob/enc_keys"))
            .json(&json!({ "number": 1, "size": 256 }))
            .send()
            .await
            .unwrap();
        assert_eq!(response.status(), 200);
    }
    let status: Value = reqwest::get(format!("{base}/api/v1/keys/sae-bob/status"))
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(status["stored_key_count"], 823);
}

#[tokio::test]
async fn client_round_trip_preserves_key_bytes() {
    let (base, _state) = spawn_server(filled_pool(10)).await;
    let client = KdClient::new(&base);
    let status = client.get_status("sae-bob").await.unwrap();
    assert_eq!(status.stored_key_count, 10);

    let drawn = client.get_enc_keys("sae-bob", 3).await.unwrap();
    assert_eq!(drawn.len(), 3);
    let ids: Vec<_> = drawn.iter().map(|k| k.key_id).collect();
    let picked = client.get_dec_keys("sae-alice", &ids).await.unwrap();
    assert_eq!(picked, drawn);

    let err = client.get_enc_keys("sae-bob", 100).await.unwrap_err();
    assert!(matches!(err, qspan_kms::KdClientError::Api { status: 503, .. }), "{err}");
}

#[tokio::test]
async fn concurrent_draws_never_deliver_a_key_twice() {
    let (base, _state) = spawn_server(filled_pool(20)).await;
    let mut handles = Vec::new();
    for _ in 0..20 {
        let client = KdClient::new(&base);
        handles.push(tokio::spawn(async move {
            client.get_enc_keys("sae-bob", 1).await.unwrap()[0].key_id
        }));
    }
    let mut ids = Vec::new();
    for handle in handles {
        ids.push(handle.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 20, "every concurrent draw must get a distinct key");
    let status = KdClient::new(&base).get_status("sae-bob").await.unwrap();
    assert_eq!(status.stored_key_count, 0);
}

#[tokio::test]
async fn http_key_source_feeds_an_encryptor_rekey() {
    let (base, _state) = spawn_server(filled_pool(5)).await;
    let client = KdClient::new(&base);

    // The blocking adapter owns its own runtime, so it runs on a plain thread.
    let gks = tokio::task::spawn_blocking(move || {
        let mut source = HttpKeySource::new(&base, "sae-bob").unwrap();
        let a = source.deliver_gk().unwrap();
        let b = source.deliver_gk().unwrap();
        ((a.gk_id, *a.gk.expose_bytes()), (b.gk_id, *b.gk.expose_bytes()))
    })
    .await
    .unwrap();
    let ((id_a, gk_a), (id_b, gk_b)) = gks;
    assert_ne!(id_a, id_b);
    assert_ne!(gk_a, gk_b);

    // The slave side picks up the very same bytes by id.
    let picked = client.get_dec_keys("sae-alice", &[id_a, id_b]).await.unwrap();
    assert_eq!(picked[0].key_bytes, gk_a);
    assert_eq!(picked[1].key_bytes, gk_b);
}
