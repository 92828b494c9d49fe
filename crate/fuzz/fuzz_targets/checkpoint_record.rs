#![no_main]

use evlab::eprocess::{checkpoint_record, parse_checkpoint_record};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok((family, state)) = parse_checkpoint_record(text) else { return };
    // Accepted records round-trip exactly: Display uses shortest
    // representations, so serialize, re-parse, serialize again is a fixed
    // point after one step.
    let line = checkpoint_record(family, &state).expect("parsed state must serialize");
    let (family2, state2) =
        parse_checkpoint_record(&line).expect("serialized record must re-parse");
    let line2 = checkpoint_record(family2, &state2).expect("round-tripped state must serialize");
    assert_eq!(line, line2, "checkpoint round-trip is not a fixed point");
});
