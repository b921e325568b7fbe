#![no_main]

use libfuzzer_sys::fuzz_target;
use sqconn::replay::{replay_ops, ReplayOptions};
use sqconn::trace::parse_trace_bytes;

fuzz_target!(|data: &[u8]| {
    let Ok(mut ops) = parse_trace_bytes(data) else {
        return;
    };
    // Deep checks are quadratic; keep inputs small.
    ops.truncate(64);
    let opts = ReplayOptions {
        check: true,
        check_deep: true,
    };
    if let Ok(r) = replay_ops(&ops, opts) {
        assert!(r.mismatches.is_empty(), "{:?}", r.mismatches);
    }
});
