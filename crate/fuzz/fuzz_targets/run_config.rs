#![no_main]

use libfuzzer_sys::fuzz_target;
use sclfish_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_text(text) else {
        return;
    };
    if cfg.validate().is_ok() {
        assert_eq!(RunConfig::from_text(&cfg.render()).unwrap(), cfg);
    }
});
