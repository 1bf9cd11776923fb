#![no_main]

use cdcma_core::channel::DelayBuffer;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(buf) = DelayBuffer::restore(data) {
        let snap = buf.snapshot();
        let again = DelayBuffer::restore(&snap).expect("a fresh snapshot must restore");
        assert_eq!(again.snapshot(), snap);
    }
});
