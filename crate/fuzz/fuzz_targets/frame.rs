#![no_main]

use kernelcur::harness::protocol::decode_frame;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(frame) = decode_frame(line) {
        let encoded = frame.encode();
        assert!(!encoded.contains('\n'));
        assert_eq!(decode_frame(&encoded).expect("re-decode"), frame);
    }
});
