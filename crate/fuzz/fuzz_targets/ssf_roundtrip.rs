#![no_main]

use libfuzzer_sys::fuzz_target;
use sentprobe::ssf;

fuzz_target!(|data: &[u8]| {
    let Ok(doc) = ssf::parse_bytes(data) else { return };
    let text = ssf::serialize(&doc);
    let again = ssf::parse_document(&text).expect("serialized output parses");
    assert_eq!(again.sentences, doc.sentences);
    assert_eq!(ssf::serialize(&again), text);
});
