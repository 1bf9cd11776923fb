#![no_main]

use cdcma_nn::Archive;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = Archive::decode(data) {
        let bytes = a.encode();
        let again = Archive::decode(&bytes).expect("re-encoded archive must decode");
        assert_eq!(again.encode(), bytes);
    }
});
