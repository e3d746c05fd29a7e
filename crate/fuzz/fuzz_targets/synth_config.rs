#![no_main]

use libfuzzer_sys::fuzz_target;
use sclfish_cli::synth_from_text;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = synth_from_text(text) {
            let _ = cfg.validate();
        }
    }
});
