#![no_main]

use libfuzzer_sys::fuzz_target;
use phaseprobe::experiment::{parse_pair, Metric};
use phaseprobe::providers::BackendSelector;
use phaseprobe::stats::{DfMode, Direction};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    let _ = s.parse::<BackendSelector>();
    let _ = s.parse::<Metric>();
    let _ = s.parse::<DfMode>();
    let _ = s.parse::<Direction>();
    if let Ok((a, b)) = parse_pair(s) {
        assert!(!a.is_empty() && !b.is_empty());
    }
});
