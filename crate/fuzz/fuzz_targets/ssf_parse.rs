#![no_main]

use libfuzzer_sys::fuzz_target;
use sentprobe::ssf;

fuzz_target!(|data: &[u8]| {
    if let Ok(doc) = ssf::parse_bytes(data) {
        for s in &doc.sentences {
            let _ = s.dependency_edges().map(|t| t.depth());
        }
    }
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ssf::validate(text);
    }
});
