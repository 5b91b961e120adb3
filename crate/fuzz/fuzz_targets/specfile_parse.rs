//! Spec-document parser: must never panic on arbitrary text, and any
//! document it accepts must survive the emit -> parse round trip
//! unchanged.

#![no_main]

use dwx_core::specfile::{emit_spec, parse_spec};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = parse_spec(text) {
        let doc = emit_spec(&spec);
        let again = parse_spec(&doc).expect("emitted document must parse");
        assert_eq!(spec, again, "emit/parse round trip changed the spec");
    }
});
