//! Checkpoint decoder: must never panic on arbitrary bytes, and anything
//! it accepts must be finite and duplicate-free.

#![no_main]

use dwx_core::train::checkpoint_from_bytes;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = checkpoint_from_bytes(data) {
        let mut names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), entries.len(), "duplicate tensor names accepted");
        for (_, tensor) in &entries {
            assert!(tensor.data().iter().all(|v| v.is_finite()));
        }
    }
});
