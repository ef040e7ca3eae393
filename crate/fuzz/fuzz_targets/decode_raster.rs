#![no_main]

use libfuzzer_sys::fuzz_target;
use terrace_core::image::decode_raster;

fuzz_target!(|data: &[u8]| {
    if let Ok(raster) = decode_raster(data) {
        assert_eq!(raster.data().len(), raster.width() * raster.height());
        assert!(raster.data().iter().all(|&v| v <= raster.max_value()));
    }
});
