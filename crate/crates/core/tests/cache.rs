mod common;

use std::fs;
use std::sync::Arc;

use common::cue_pairs;
use rumour_stance::encoder::{
    batch_encode, cache_key, encode_pair, prepare_input, EmbeddingCache, Encoder, PretrainedAdapter, ToyEncoder,
};

#[test]
fn deleting_the_cache_file_changes_nothing_but_speed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache").join("toy.bin");
    let enc = ToyEncoder::new(12);
    let pairs = cue_pairs(10, 1);
    let first = {
        let cache = EmbeddingCache::open(&path).unwrap();
        batch_encode(&enc, &pairs, Some(&cache)).unwrap()
    };
    let calls = enc.calls();
    let second = {
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 10);
        batch_encode(&enc, &pairs, Some(&cache)).unwrap()
    };
    assert_eq!(enc.calls(), calls, "second pass is served from the cache");
    assert_eq!(first, second);
    fs::remove_file(&path).unwrap();
    let third = {
        let cache = EmbeddingCache::open(&path).unwrap();
        batch_encode(&enc, &pairs, Some(&cache)).unwrap()
    };
    assert_eq!(first, third);
    for (p, v) in pairs.iter().zip(&first) {
        assert_eq!(&encode_pair(&enc, p).unwrap(), v);
    }
}

#[test]
fn corrupted_file_falls_back_to_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.bin");
    let enc = ToyEncoder::new(6);
    let pairs = cue_pairs(5, 2);
    let clean = {
        let cache = EmbeddingCache::open(&path).unwrap();
        batch_encode(&enc, &pairs, Some(&cache)).unwrap()
    };
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x55;
    bytes[40] ^= 0x01;
    fs::write(&path, bytes).unwrap();
    let cache = EmbeddingCache::open(&path).unwrap();
    assert!(cache.corrupt_records() >= 1);
    assert_eq!(batch_encode(&enc, &pairs, Some(&cache)).unwrap(), clean);
}

#[test]
fn externally_filled_cache_feeds_a_pretrained_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roberta.bin");
    let mut enc = PretrainedAdapter::new("roberta-large", 4);
    let pairs = cue_pairs(3, 3);
    {
        let cache = EmbeddingCache::open(&path).unwrap();
        for (i, p) in pairs.iter().enumerate() {
            let key = cache_key(&enc.cache_id(), &prepare_input(&enc, p));
            cache.insert(key, &[i as f32, 0.5, -0.25, 1.0]).unwrap();
        }
    }
    enc.attach_cache(Arc::new(EmbeddingCache::open(&path).unwrap()));
    let out = batch_encode(&enc, &pairs, None).unwrap();
    assert_eq!(out[2].values, vec![2.0, 0.5, -0.25, 1.0]);
}
