#![no_main]

use libfuzzer_sys::fuzz_target;
use phaseprobe::experiment::store::decode_entry;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(entry) = decode_entry(line) {
        // whatever decodes must re-encode and decode to the same kind
        let json = serde_json::to_string(&entry).unwrap();
        assert_eq!(decode_entry(&json).unwrap().kind(), entry.kind());
    }
});
