#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| personaflow_fuzz::id_list(data));
