#![no_main]

use evlab::adjuster::{adjuster_validity, adjuster_value, AdjusterSpec, AdjusterTable};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(table) = AdjusterTable::parse(text) else { return };
    // A table that parses is structurally valid: evaluation must be total
    // and non-decreasing on [1, inf), and certification must terminate.
    let spec = AdjusterSpec::Custom(table);
    let mut last = adjuster_value(&spec, 1.0).expect("eval at 1");
    for i in 1..=16u32 {
        let x = 1.0 + f64::from(i * i);
        let value = adjuster_value(&spec, x).expect("eval on [1, inf)");
        assert!(value >= last, "table eval decreased from {last} to {value} at {x}");
        last = value;
    }
    adjuster_validity(&spec, 1e-6).expect("certification is total on parsed tables");
});
