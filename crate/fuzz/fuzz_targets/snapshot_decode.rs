#![no_main]

use chcda::experiments::snapshot;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = snapshot::decode(data) {
        assert_eq!(snapshot::encode(s.step, s.t, &s.field), data);
    }
});
