#![no_main]

use libfuzzer_sys::fuzz_target;
use sentprobe::embedding;

fuzz_target!(|data: &[u8]| {
    let Ok(set) = embedding::decode(data) else { return };
    let bytes = embedding::encode(&set).expect("decoded sets re-encode");
    assert_eq!(embedding::decode(&bytes).expect("re-encoded bytes decode"), set);
});
