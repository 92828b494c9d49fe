#![no_main]

use std::path::Path;

use evlab::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = ExperimentConfig::from_toml(text) else { return };
    // Anything that parses must survive a serialize and re-parse loop.
    let echoed = toml::to_string(&config).expect("parsed config must re-serialize");
    ExperimentConfig::from_toml(&echoed).expect("echoed config must re-parse");
    // Semantic validation may reject, but must never panic. The directory
    // does not exist, so custom adjuster paths fail cleanly instead of
    // touching the filesystem.
    let _ = config.build(Path::new("/nonexistent"));
});
