#![no_main]

use kernelcur::records::{parse_records, to_jsonl, ReadOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for approximate_tokens in [false, true] {
        if let Ok(records) = parse_records(text, ReadOptions { approximate_tokens }) {
            // whatever parses must survive a write/read cycle unchanged
            let again = parse_records(&to_jsonl(&records), ReadOptions::default()).expect("re-parse");
            assert_eq!(records, again);
        }
    }
});
