#![no_main]

use libfuzzer_sys::fuzz_target;
use nanosim::trace::Trace;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = Trace::read(data) {
        let stats = trace.activity().stats(trace.dt_s());
        assert!((0.0..=1.0).contains(&stats.on_fraction));
        let mut buf = Vec::new();
        trace.write(&mut buf).expect("write");
        let again = Trace::read(buf.as_slice()).expect("re-read");
        assert_eq!(again.states, trace.states);
    }
});
