#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use phaseprobe::corpus::Corpus;
use phaseprobe::experiment::ExperimentManifest;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = ExperimentManifest::from_json(text, Path::new("/base")) {
        let _ = manifest.validate(&Corpus::builtin());
        assert!(manifest.output_dir.is_absolute());
    }
});
