#![no_main]

use libfuzzer_sys::fuzz_target;
use sqconn::trace::{format_trace, parse_trace, parse_trace_bytes, TraceOp};

fuzz_target!(|data: &[u8]| {
    let Ok(ops) = parse_trace_bytes(data) else {
        return;
    };
    let ops: Vec<TraceOp> = ops.into_iter().map(|(_, op)| op).collect();
    let again: Vec<TraceOp> = parse_trace(&format_trace(&ops))
        .expect("formatted trace must parse")
        .into_iter()
        .map(|(_, op)| op)
        .collect();
    assert_eq!(ops, again);
});
