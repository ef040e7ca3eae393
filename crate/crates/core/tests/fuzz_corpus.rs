//! Replays the checked-in fuzz seeds through the fuzz targets' invariants.

use std::fs;
use std::path::PathBuf;

use terrace_core::config::PipelineConfig;
use terrace_core::image::{decode_pgm, decode_r32, decode_raster, encode_pgm, encode_r32};

fn corpus(target: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target)
}

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = corpus(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn pgm_seeds_round_trip() {
    let mut decoded = 0;
    for (name, bytes) in seeds("decode_pgm") {
        if let Ok(r) = decode_pgm(&bytes) {
            assert_eq!(decode_pgm(&encode_pgm(&r).unwrap()).unwrap(), r, "{name}");
            decoded += 1;
        }
    }
    assert!(decoded >= 4);
    assert!(decode_pgm(&fs::read(corpus("decode_pgm").join("truncated.pgm")).unwrap()).is_err());
}

#[test]
fn r32_seeds_round_trip() {
    for (name, bytes) in seeds("decode_r32") {
        match decode_r32(&bytes) {
            Ok(r) => assert_eq!(encode_r32(&r), bytes, "{name}"),
            Err(_) => assert_eq!(name, "truncated.r32"),
        }
    }
}

#[test]
fn raster_seeds_respect_ceiling() {
    for (name, bytes) in seeds("decode_raster") {
        if let Ok(r) = decode_raster(&bytes) {
            assert_eq!(r.data().len(), r.width() * r.height(), "{name}");
            assert!(r.data().iter().all(|&v| v <= r.max_value()), "{name}");
        }
    }
}

#[test]
fn config_seeds_round_trip() {
    for (name, bytes) in seeds("parse_config") {
        let config = PipelineConfig::from_toml(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(PipelineConfig::from_toml(&config.to_toml()).unwrap(), config, "{name}");
    }
}

#[test]
fn non_finite_parameters_rejected() {
    let base = fs::read_to_string(corpus("parse_config").join("small.toml")).unwrap();
    let bad = [
        "phantom.blur_deep=inf",
        "phantom.illumination.0=nan",
        "clustering.params.tol=inf",
        "clustering.params.bandwidth=-1.0",
    ];
    for o in bad {
        assert!(PipelineConfig::from_toml_with(&base, &[o.to_string()]).is_err(), "{o}");
    }
}
