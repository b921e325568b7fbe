#![no_main]

use libfuzzer_sys::fuzz_target;
use sqconn::trace::Mix;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = s.parse::<Mix>() {
        let w = [m.insert, m.delete, m.query];
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
});
