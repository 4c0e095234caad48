#![no_main]

use libfuzzer_sys::fuzz_target;

// The trace CSV reader must reject arbitrary bytes cleanly.
fuzz_target!(|data: &[u8]| {
    let _ = agc_core::SimTrace::from_csv_bytes(data);
});
