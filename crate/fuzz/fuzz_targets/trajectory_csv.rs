#![no_main]

use averaged_lorentz::io::{read_trajectory, write_trajectory};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(traj) = read_trajectory(data) {
        let mut out = Vec::new();
        write_trajectory(&traj, &mut out).expect("write to memory");
        let back = read_trajectory(out.as_slice()).expect("written trajectory parses");
        assert_eq!(traj.len(), back.len());
    }
});
