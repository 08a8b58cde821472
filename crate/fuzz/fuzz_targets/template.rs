#![no_main]

use kernelcur::curation::PromptTemplate;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = PromptTemplate::new(text) {
        // substituted values are inserted verbatim, even when they look like placeholders
        let out = t.render("<<$code>>", "<<$ref_arch_torch>>", "<<$$>>");
        assert!(out.contains("<<$code>>") && out.contains("<<$ref_arch_torch>>") && out.contains("<<$$>>"));
    }
});
