//! Replays the checked-in fuzz seeds through the same entry points the
//! fuzz targets use.

use std::fs;
use std::path::PathBuf;

use ios_fscil::datasets::{decode_embedding_set, decode_features, encode_features, TokenFile};
use ios_fscil::trainer::{parse_config, Checkpoint};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn features_blob_seeds() {
    for (name, bytes) in seeds("features_blob") {
        match decode_features(&bytes) {
            Ok((dim, records)) => assert_eq!(encode_features(dim, &records), bytes, "{name}"),
            Err(_) => assert_eq!(name, "header_only.bin"),
        }
    }
}

#[test]
fn emb_manifest_seeds() {
    for (name, bytes) in seeds("emb_manifest") {
        let cut = bytes[0] as usize;
        let text = std::str::from_utf8(&bytes[1..1 + cut]).unwrap();
        let set = decode_embedding_set(text, &bytes[1 + cut..]).unwrap_or_else(|e| panic!("{name}: {e}"));
        set.validate().unwrap();
    }
}

#[test]
fn tok_file_seeds() {
    for (name, bytes) in seeds("tok_file") {
        let tok = TokenFile::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(tok.encode(), bytes, "{name}");
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint") {
        let ckpt = Checkpoint::decode(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        ckpt.restore().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn run_config_seeds() {
    for (name, bytes) in seeds("run_config") {
        let cfg = parse_config(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }
}
