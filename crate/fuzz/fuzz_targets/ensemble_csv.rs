#![no_main]

use averaged_lorentz::io::{read_ensemble, write_ensemble};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ens) = read_ensemble(data) {
        let mut out = Vec::new();
        write_ensemble(&ens, &mut out).expect("write to memory");
        let back = read_ensemble(out.as_slice()).expect("written ensemble parses");
        assert_eq!(ens.particles, back.particles);
    }
});
