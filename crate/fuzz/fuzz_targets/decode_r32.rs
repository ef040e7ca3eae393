#![no_main]

use libfuzzer_sys::fuzz_target;
use terrace_core::image::{decode_r32, encode_r32};

fuzz_target!(|data: &[u8]| {
    if let Ok(raster) = decode_r32(data) {
        assert_eq!(decode_r32(&encode_r32(&raster)).unwrap(), raster);
    }
});
