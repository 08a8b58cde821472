#![no_main]

use kernelcur::records::{parse_evals, to_jsonl};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(evals) = parse_evals(text) {
        for e in &evals {
            assert_eq!(e.speedup > 0.0, e.is_correct());
        }
        assert_eq!(parse_evals(&to_jsonl(&evals)).expect("re-parse"), evals);
    }
});
