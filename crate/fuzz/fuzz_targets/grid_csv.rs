#![no_main]

use averaged_lorentz::io::read_grid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_grid(data);
});
