#![no_main]

use libfuzzer_sys::fuzz_target;
use sentprobe::probe;

fuzz_target!(|data: &[u8]| {
    let Ok(results) = probe::read_results_csv(data) else { return };
    let mut first = Vec::new();
    if probe::write_results_csv(&mut first, &results).is_err() {
        return;
    }
    let again = probe::read_results_csv(&first[..]).expect("written results read back");
    let mut second = Vec::new();
    probe::write_results_csv(&mut second, &again).unwrap();
    assert_eq!(first, second);
});
