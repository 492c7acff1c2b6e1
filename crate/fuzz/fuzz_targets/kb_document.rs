#![no_main]
use libfuzzer_sys::fuzz_target;

use eq20_core::kb::load_kb_bytes;

fuzz_target!(|data: &[u8]| {
    if let Ok(kb) = load_kb_bytes(data) {
        // anything accepted must survive a save/load cycle unchanged
        let again = load_kb_bytes(kb.to_document_string().as_bytes()).expect("saved document reloads");
        assert_eq!(kb, again);
        for cat in kb.categories() {
            let _ = kb.validate_identifiability(&cat.id);
        }
    }
});
