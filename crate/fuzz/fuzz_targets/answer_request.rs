#![no_main]
use libfuzzer_sys::fuzz_target;

use eq20::api::decode_answer_request;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = decode_answer_request(data) {
        assert!(!req.option_ids.is_empty());
    }
});
