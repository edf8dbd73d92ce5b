#![no_main]

use libfuzzer_sys::fuzz_target;
use phaseprobe::providers::decode_response;

// First two bytes: big-endian status. Rest: body.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let status = u16::from_be_bytes([data[0], data[1]]);
    let Ok(body) = std::str::from_utf8(&data[2..]) else {
        return;
    };
    let _ = decode_response(status, body);
});
