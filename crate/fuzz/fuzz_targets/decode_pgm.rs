#![no_main]

use libfuzzer_sys::fuzz_target;
use terrace_core::image::{decode_pgm, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(raster) = decode_pgm(data) {
        let bytes = encode_pgm(&raster).expect("decoded raster re-encodes");
        let again = decode_pgm(&bytes).expect("encoded raster decodes");
        assert_eq!(again, raster);
    }
});
