#![no_main]

use libfuzzer_sys::fuzz_target;

// Parsing and validating a scenario config must never panic or blow up on
// arbitrary input.
fuzz_target!(|data: &[u8]| {
    let _ = agc_core::Scenario::from_toml_bytes(data);
});
