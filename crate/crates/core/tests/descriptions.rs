use std::path::{Path, PathBuf};

use dualpt_core::descriptions::{
    build_query, embed_descriptions, fetch_descriptions, mock_encode, ClientConfig,
    DescriptionCache, EmbeddingStore, MockEncoder, MockTransport, PANDA_PHRASES,
};
use dualpt_core::numerics::cosine;
use dualpt_core::Error;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn mock_fetch_fills_the_cache_with_panda_phrases() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let mock = MockTransport::new();
    let (cache, summary) = fetch_descriptions(
        &names(&["panda", "zebra"]),
        &ClientConfig::default(),
        &mock,
        &path,
    )
    .unwrap();
    assert_eq!(cache.phrases("panda").unwrap(), PANDA_PHRASES);
    assert!(!cache.phrases("zebra").unwrap().is_empty());
    assert_eq!((summary.fetched, summary.cached), (2, 0));
    assert_eq!(mock.calls(), 2);
    assert_eq!(DescriptionCache::load(&path).unwrap(), cache);
}

#[test]
fn warm_cache_makes_no_requests() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let classes = names(&["panda", "tiger", "panda"]);
    let cfg = ClientConfig::default();
    fetch_descriptions(&classes, &cfg, &MockTransport::new(), &path).unwrap();
    let before = std::fs::read(&path).unwrap();

    let mock = MockTransport::new();
    let (_, summary) = fetch_descriptions(&classes, &cfg, &mock, &path).unwrap();
    assert_eq!(mock.calls(), 0);
    assert_eq!((summary.fetched, summary.cached), (0, 2));
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn only_missing_classes_are_requested() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let cfg = ClientConfig::default();
    fetch_descriptions(&names(&["panda"]), &cfg, &MockTransport::new(), &path).unwrap();
    let mock = MockTransport::new();
    let (cache, summary) =
        fetch_descriptions(&names(&["panda", "otter"]), &cfg, &mock, &path).unwrap();
    assert_eq!(mock.calls(), 1);
    assert_eq!((summary.fetched, summary.cached), (1, 1));
    assert_eq!(cache.classes.len(), 2);
}

#[test]
fn server_errors_leave_the_cache_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let cfg = ClientConfig::default();
    fetch_descriptions(&names(&["panda"]), &cfg, &MockTransport::new(), &path).unwrap();
    let before = std::fs::read(&path).unwrap();

    let err = fetch_descriptions(
        &names(&["panda", "otter", "lynx"]),
        &cfg,
        &MockTransport::failing(500),
        &path,
    )
    .unwrap_err();
    match err {
        Error::Fetch { classes, .. } => assert_eq!(classes, names(&["otter", "lynx"])),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(std::fs::read(&path).unwrap(), before);

    let fresh = dir.path().join("fresh.json");
    assert!(fetch_descriptions(
        &names(&["otter"]),
        &cfg,
        &MockTransport::failing(500),
        &fresh
    )
    .is_err());
    assert!(!fresh.exists());
}

#[test]
fn empty_answers_are_protocol_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    let mock = MockTransport::new().with_answer("ghost", "\n\n");
    let err =
        fetch_descriptions(&names(&["ghost"]), &ClientConfig::default(), &mock, &path).unwrap_err();
    assert!(matches!(err, Error::Protocol { class, .. } if class == "ghost"));
    assert!(!path.exists());
}

#[test]
fn unreachable_endpoint_is_a_fetch_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ClientConfig {
        endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
        retry: false,
        timeout_secs: 2,
        ..ClientConfig::default()
    };
    let transport = dualpt_core::descriptions::HttpTransport::new(
        &cfg.endpoint,
        Some("token".into()),
        std::time::Duration::from_secs(2),
    );
    let err = fetch_descriptions(
        &names(&["panda"]),
        &cfg,
        &transport,
        &dir.path().join("c.json"),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Fetch { .. }));
}

#[test]
fn panda_query_is_byte_exact() {
    assert_eq!(
        build_query("panda").unwrap().as_bytes(),
        b"Q: What are the useful features for distinguishing a panda in a photo? Please just give me a list of short phrases. Answer: -"
    );
}

#[test]
fn mock_encoder_separates_unrelated_words() {
    let p = mock_encode("panda", 32, 7).unwrap();
    let t = mock_encode("tiger", 32, 7).unwrap();
    assert!(cosine(&p, &t).unwrap() < 0.5);
}

#[test]
fn panda_embeddings_match_the_golden_store() {
    let mut cache = DescriptionCache::new("mock", 0.7);
    cache.classes.insert(
        "panda".into(),
        PANDA_PHRASES.iter().map(|p| p.to_string()).collect(),
    );
    let store = embed_descriptions(&cache, &MockEncoder::new(16, 7).unwrap()).unwrap();
    assert_eq!(store.classes["panda"].descriptors.len(), 5);

    let path = fixture("panda_store.json");
    if std::env::var_os("DUALPT_BLESS").is_some() {
        store.save(&path).unwrap();
    }
    let golden = EmbeddingStore::load(&path).unwrap();
    assert_eq!(store, golden);
    assert_eq!(
        embed_descriptions(&cache, &MockEncoder::new(16, 7).unwrap()).unwrap(),
        store
    );
}
