#![no_main]

use libfuzzer_sys::fuzz_target;
use sentprobe::labels;

fuzz_target!(|data: &[u8]| {
    let Ok(examples) = labels::read_jsonl(data) else { return };
    let mut out = Vec::new();
    labels::write_jsonl(&mut out, &examples).unwrap();
    assert_eq!(labels::read_jsonl(&out[..]).expect("written datasets read back"), examples);
});
