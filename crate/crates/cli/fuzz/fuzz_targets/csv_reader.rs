#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| bkam_cli::fuzzing::csv_reader(data));
