#![no_main]

use chcda::experiments::RunManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Anything accepted must survive its own canonical form.
    if let Ok(m) = RunManifest::parse(text) {
        let back = RunManifest::parse(&m.to_config_string()).expect("canonical text reparses");
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
    }
});
