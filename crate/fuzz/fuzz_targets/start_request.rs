#![no_main]
use libfuzzer_sys::fuzz_target;

use eq20::api::{decode_start_request, MAX_DESCRIPTION_BYTES};
use eq20_core::session::tokenize;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = decode_start_request(data) {
        assert!(req.description.len() <= MAX_DESCRIPTION_BYTES);
        let _ = tokenize(&req.description);
    }
});
