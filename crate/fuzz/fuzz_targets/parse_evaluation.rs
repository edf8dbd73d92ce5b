#![no_main]

use libfuzzer_sys::fuzz_target;
use phaseprobe::tqp::{parse_evaluation, ToneBand};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((eval, _)) = parse_evaluation(text) {
        assert!((0.0..=10.0).contains(&eval.tone_phase_score));
        assert!((0.0..=10.0).contains(&eval.tsundere_score));
        let _ = ToneBand::for_score(eval.tone_phase_score);
    }
});
